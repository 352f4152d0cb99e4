"""Bridge layer for host ML frameworks.

Exposes the exact count distribution and the four count losses with
gradients taken with respect to *probabilities*, since host frameworks hold
post-sigmoid values; the log-space chain rule d/dp = (d/dt) / p is applied
here. Arrays are copied on the way in and out: callers keep ownership of
their buffers, nothing is retained between calls, and concurrent calls
from multiple threads are safe.
"""

from __future__ import annotations

import numpy as np

from countsup.countdp import InstanceScores, count_distribution, interval_log_prob
from countsup.losses import llp_loss, mil_loss, pu_expect_loss, pu_kl_loss

__version__ = "0.1.0"

LOSS_KINDS = ("llp", "mil", "pu_kl", "pu_expect")


def _copy_in(probs) -> np.ndarray:
    arr = np.ascontiguousarray(probs, dtype=np.float64).copy()
    if arr.ndim != 1 or arr.size < 1:
        raise ValueError("probs must be a non-empty 1-D array")
    if np.any(~(arr > 0.0)) or np.any(~(arr < 1.0)):
        raise ValueError("probabilities must lie strictly inside (0, 1)")
    return arr


def bind_count_distribution(probs) -> np.ndarray:
    """Probabilities of every count 0..k for the given success probabilities."""
    p = _copy_in(probs)
    dist = count_distribution(InstanceScores.from_probabilities(p))
    return np.array(dist.probabilities(), copy=True)


def bind_interval_probability(probs, s1: int, s2: int) -> float:
    """Probability that the prediction sum lands in [s1, s2]."""
    p = _copy_in(probs)
    scores = InstanceScores.from_probabilities(p)
    return float(np.exp(interval_log_prob(scores, s1, s2)))


def bind_loss_and_grad(kind: str, probs, label=None, beta=None):
    """One count loss and its gradient with respect to the probabilities.

    ``kind`` selects the objective: "llp" needs ``label`` (the bag
    proportion), "mil" needs ``label`` (the bag presence bit), "pu_kl" and
    "pu_expect" need ``beta`` (the unlabeled positive rate). Returns
    (loss, gradient array); both are fresh copies.

    Raises:
        ValueError: for an unknown kind, a missing or out-of-range
            parameter, or probabilities outside (0, 1).
    """
    p = _copy_in(probs)
    scores = InstanceScores.from_probabilities(p)
    if kind == "llp":
        if label is None:
            raise ValueError("llp needs label = the bag proportion")
        value = llp_loss(scores, float(label))
    elif kind == "mil":
        if label is None:
            raise ValueError("mil needs label = the bag presence bit")
        value = mil_loss(scores, int(label))
    elif kind == "pu_kl":
        if beta is None:
            raise ValueError("pu_kl needs beta")
        value = pu_kl_loss(scores, float(beta))
    elif kind == "pu_expect":
        if beta is None:
            raise ValueError("pu_expect needs beta")
        value = pu_expect_loss(scores, float(beta))
    else:
        raise ValueError(f"unknown loss kind {kind!r}; expected one of {LOSS_KINDS}")
    # d loss / d p = (d loss / d t) / p for t = log p
    grad = value.grad.d_t / p
    return float(value.loss), grad


__all__ = [
    "bind_count_distribution",
    "bind_interval_probability",
    "bind_loss_and_grad",
    "LOSS_KINDS",
    "__version__",
]
