"""Brute-force references for the count kernel.

These deliberately avoid the DP: the distribution oracle enumerates all 2^k
labelings in plain probability space, and the gradient oracle uses central
finite differences. Tests and the ``verify`` CLI command compare the fast
implementations against these.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .countdp import InstanceScores, count_distribution

ENUMERATION_LIMIT = 20


def brute_force_count_distribution(probs) -> np.ndarray:
    """Exact count pmf by summing over every labeling, ascending bitmask order.

    Raises:
        ValueError: for k > 20; use countsup.countdp.count_distribution for
            larger inputs, that is what this oracle exists to check.
    """
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 1 or p.size < 1:
        raise ValueError("probs must be a non-empty 1-D vector")
    if np.any(~(p >= 0.0)) or np.any(~(p <= 1.0)):
        raise ValueError("probabilities must lie in [0, 1]")
    k = p.size
    if k > ENUMERATION_LIMIT:
        raise ValueError(
            f"enumeration over 2^{k} labelings refused (k > {ENUMERATION_LIMIT}); "
            "use countsup.countdp.count_distribution instead"
        )
    masks = np.arange(1 << k, dtype=np.uint32)
    bits = (masks[:, None] >> np.arange(k, dtype=np.uint32)) & 1
    weights = np.where(bits == 1, p, 1.0 - p).prod(axis=1)
    counts = bits.sum(axis=1)
    return np.bincount(counts, weights=weights, minlength=k + 1)


def finite_diff_gradient(
    fn: Callable[[InstanceScores], float], scores: InstanceScores, h: float
) -> np.ndarray:
    """Central differences of ``fn`` with respect to each t_i.

    The complement scores are recomputed from the perturbed t, matching the
    convention that t' is a function of t.

    Raises:
        ValueError: if h <= 0 or ``fn`` returns a non-finite value at a
            perturbed point.
    """
    if not h > 0.0:
        raise ValueError("step size h must be positive")
    t = scores.t.copy()
    grad = np.empty_like(t)
    for i in range(t.size):
        saved = t[i]
        t[i] = saved + h
        hi = fn(InstanceScores.from_log_probabilities(t))
        t[i] = saved - h
        lo = fn(InstanceScores.from_log_probabilities(t))
        t[i] = saved
        if not (math.isfinite(hi) and math.isfinite(lo)):
            raise ValueError(f"fn is non-finite near coordinate {i}: {hi!r}, {lo!r}")
        grad[i] = (hi - lo) / (2.0 * h)
    return grad


@dataclass(frozen=True)
class OracleReport:
    """Outcome of a randomized equivalence sweep against the enumeration oracle."""

    trials: int
    k_max: int
    tolerance: float
    max_abs_error: float
    max_rel_error: float
    worst_case_input: str

    @property
    def passed(self) -> bool:
        return self.max_abs_error <= self.tolerance

    def to_json(self) -> str:
        payload = {
            "trials": self.trials,
            "k_max": self.k_max,
            "tolerance": self.tolerance,
            "max_abs_error": self.max_abs_error,
            "max_rel_error": self.max_rel_error,
            "worst_case_input": json.loads(self.worst_case_input),
            "pass": self.passed,
        }
        return json.dumps(payload)


def run_verification(
    trials: int, k_max: int, tolerance: float, seed: int = 0
) -> OracleReport:
    """Compare count_distribution with brute force on random score vectors."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if not 1 <= k_max <= ENUMERATION_LIMIT:
        raise ValueError(f"k_max must lie in [1, {ENUMERATION_LIMIT}]")
    rng = np.random.default_rng(seed)
    worst_abs = 0.0
    worst_rel = 0.0
    worst_input: list = []
    for _ in range(trials):
        k = int(rng.integers(1, k_max + 1))
        p = rng.uniform(0.0, 1.0, size=k)
        p = np.clip(p, 1e-12, 1.0 - 1e-12)
        reference = brute_force_count_distribution(p)
        fast = count_distribution(InstanceScores.from_probabilities(p)).probabilities()
        abs_err = float(np.max(np.abs(fast - reference)))
        rel_err = float(np.max(np.abs(fast - reference) / np.maximum(reference, 1e-300)))
        if abs_err > worst_abs:
            worst_abs = abs_err
            worst_input = [float(x) for x in p]
        worst_rel = max(worst_rel, rel_err)
    return OracleReport(
        trials=trials,
        k_max=k_max,
        tolerance=tolerance,
        max_abs_error=worst_abs,
        max_rel_error=worst_rel,
        worst_case_input=json.dumps(worst_input),
    )
