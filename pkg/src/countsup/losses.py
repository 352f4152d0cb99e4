"""Count-based objectives for proportion, presence, and positive/unlabeled labels.

Every loss maps one bag of instance scores to a scalar and its exact
gradient with respect to the per-instance log probabilities t_i:

* proportion label: -log p(sum = round(k * proportion))
* presence label:   -label * log p(sum >= 1) - (1 - label) * log p(sum = 0)
* unlabeled bag:    KL(Binomial(k, beta) || predicted count distribution),
                    or the cheaper expectation form -log p(sum = round(k*beta))
* labeled positives: plain negative mean log probability

Counts with probability exactly zero would make a loss infinite; those are
capped at -log(1e-12), counted in a diagnostic tally, and reported through
:class:`CappedLossWarning`. Upstream scorers keep logits bounded, so the cap
only fires on saturated hand-built inputs.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .countdp import (
    NEG_INF,
    CountGradient,
    InstanceScores,
    backward_count,
    count_log_prob,
    forward_count,
    log1mexp,
)

LOSS_CAP_EPSILON = 1e-12
LOSS_CAP = -math.log(LOSS_CAP_EPSILON)

_capped_events = 0


class CappedLossWarning(RuntimeWarning):
    """A target count had probability zero; the loss was capped."""


def capped_loss_count() -> int:
    """Number of cap events since the last reset."""
    return _capped_events


def reset_capped_loss_count() -> None:
    global _capped_events
    _capped_events = 0


def _record_cap(context: str) -> None:
    global _capped_events
    _capped_events += 1
    warnings.warn(
        f"{context}: target count has probability 0; loss capped at {LOSS_CAP:.4f}",
        CappedLossWarning,
        stacklevel=3,
    )


@dataclass(frozen=True, eq=False)
class LossValue:
    """A non-negative scalar loss with its gradient d loss / d t_i."""

    loss: float
    grad: CountGradient

    def __post_init__(self):
        if not (math.isfinite(self.loss) and self.loss >= 0.0):
            raise ValueError(f"loss must be finite and non-negative, got {self.loss!r}")


@dataclass(frozen=True)
class MixtureEstimate:
    """Class prior alpha, label frequency c, and the implied unlabeled positive rate."""

    alpha: float
    c: float
    beta: float

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if not 0.0 < self.c <= 1.0:
            raise ValueError("c must lie in (0, 1]")
        expected = (1.0 - self.c) * self.alpha / (1.0 - self.alpha * self.c)
        if abs(self.beta - expected) > 1e-12:
            raise ValueError("beta is inconsistent with alpha and c")
        if not 0.0 <= self.beta < 1.0:
            raise ValueError("beta must lie in [0, 1)")


def _round_count(value: float, k: int) -> int:
    # banker's rounding, clamped into the valid count range
    s = int(round(value))
    return min(max(s, 0), k)


def llp_loss(scores: InstanceScores, proportion: float) -> LossValue:
    """Negative log probability that the prediction sum hits k * proportion.

    With a single instance this is exactly binary cross-entropy.

    Raises:
        ValueError: if the proportion is outside [0, 1] or k * proportion is
            more than 1e-6 away from an integer.
    """
    if not 0.0 <= proportion <= 1.0:
        raise ValueError(f"proportion must lie in [0, 1], got {proportion!r}")
    k = scores.k
    target = k * proportion
    s = _round_count(target, k)
    if abs(target - s) > 1e-6:
        raise ValueError(
            f"k * proportion = {target!r} is not within 1e-6 of an integer"
        )
    table = forward_count(scores, s)
    lp = float(table.a[k, s])
    if lp == NEG_INF:
        _record_cap("llp_loss")
        loss = LOSS_CAP
    else:
        loss = -lp
    seed = np.zeros(s + 1)
    seed[s] = -1.0
    return LossValue(loss, backward_count(table, scores, seed))


def mil_loss(
    scores: InstanceScores, bag_label: int, positive_weight: float = 1.0
) -> LossValue:
    """Cross-entropy on bag presence from a single s_max = 0 pass.

    The negative branch is -log p(sum = 0); the positive branch reuses the
    same cell through p(sum >= 1) = 1 - p(sum = 0). ``positive_weight``
    scales the positive-bag branch for class balancing.
    """
    if bag_label not in (0, 1):
        raise ValueError(f"bag_label must be 0 or 1, got {bag_label!r}")
    if not positive_weight > 0.0:
        raise ValueError("positive_weight must be positive")
    table = forward_count(scores, 0)
    l0 = float(table.a[scores.k, 0])
    if bag_label == 0:
        if l0 == NEG_INF:
            _record_cap("mil_loss negative bag")
            return LossValue(LOSS_CAP, backward_count(table, scores, [-1.0]))
        return LossValue(-l0, backward_count(table, scores, [-1.0]))
    if l0 == 0.0:
        # all-zero predictions make a positive bag impossible
        _record_cap("mil_loss positive bag")
        zero = CountGradient(np.zeros(scores.k))
        return LossValue(positive_weight * LOSS_CAP, zero)
    log_at_least_one = log1mexp(l0)
    loss = positive_weight * -log_at_least_one + 0.0
    d_l0 = positive_weight * math.exp(l0 - log_at_least_one)
    return LossValue(loss, backward_count(table, scores, [d_l0]))


def binomial_log_pmf(k: int, beta: float, s: int) -> float:
    """log C(k, s) + s log beta + (k - s) log(1 - beta), with 0 log 0 = 0."""
    if not 0 <= s <= k:
        raise ValueError(f"s must lie in [0, {k}], got {s}")
    if not 0.0 <= beta <= 1.0:
        raise ValueError("beta must lie in [0, 1]")
    if beta == 0.0:
        return 0.0 if s == 0 else NEG_INF
    if beta == 1.0:
        return 0.0 if s == k else NEG_INF
    log_choose = (
        math.lgamma(k + 1) - math.lgamma(s + 1) - math.lgamma(k - s + 1)
    )
    return log_choose + s * math.log(beta) + (k - s) * math.log1p(-beta)


def pu_kl_loss(scores: InstanceScores, beta: float) -> LossValue:
    """KL(Binomial(k, beta) || predicted count distribution) over one bag.

    Needs the full O(k^2) pass since every count appears in the sum. The
    gradient seeds the reverse sweep with -Binomial(s; k, beta) per count.
    """
    if not 0.0 < beta < 1.0:
        raise ValueError("beta must lie strictly inside (0, 1)")
    k = scores.k
    table = forward_count(scores, k)
    logp = table.a[k]
    loss = 0.0
    seed = np.zeros(k + 1)
    capped = False
    for s in range(k + 1):
        lb = binomial_log_pmf(k, beta, s)
        b = math.exp(lb)
        if b == 0.0:
            continue
        lp = float(logp[s])
        if lp == NEG_INF:
            lp = math.log(LOSS_CAP_EPSILON)
            capped = True
        loss += b * (lb - lp)
        seed[s] = -b
    if capped:
        _record_cap("pu_kl_loss")
    return LossValue(max(loss, 0.0), backward_count(table, scores, seed))


def pu_expect_loss(scores: InstanceScores, beta: float) -> LossValue:
    """Match only the mean of the binomial: -log p(sum = round(k * beta))."""
    if not 0.0 <= beta <= 1.0:
        raise ValueError("beta must lie in [0, 1]")
    k = scores.k
    s = _round_count(k * beta, k)
    table = forward_count(scores, s)
    lp = float(table.a[k, s])
    if lp == NEG_INF:
        _record_cap("pu_expect_loss")
        loss = LOSS_CAP
    else:
        loss = -lp
    seed = np.zeros(s + 1)
    seed[s] = -1.0
    return LossValue(loss, backward_count(table, scores, seed))


def positive_ce_loss(scores: InstanceScores) -> LossValue:
    """Cross-entropy over instances known to be positive: -(1/k) sum t_i."""
    k = scores.k
    loss = -float(np.sum(scores.t)) / k
    grad = np.full(k, -1.0 / k)
    return LossValue(loss, CountGradient(grad))


def estimate_mixture_proportion(alpha: float, labeled_fraction: float) -> MixtureEstimate:
    """Recover the unlabeled positive rate from the class prior.

    The label frequency is c = p(selected) / alpha, and the positive rate
    among unlabeled data follows as beta = (1 - c) alpha / (1 - alpha c).

    Raises:
        ValueError: if labeled_fraction exceeds alpha (more labeled
            positives than the prior allows) or arguments leave their ranges.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    if not labeled_fraction > 0.0:
        raise ValueError("labeled_fraction must be positive")
    if labeled_fraction > alpha:
        raise ValueError(
            f"labeled_fraction {labeled_fraction!r} exceeds the class prior {alpha!r}"
        )
    c = labeled_fraction / alpha
    c = min(c, 1.0)
    beta = (1.0 - c) * alpha / (1.0 - alpha * c)
    return MixtureEstimate(alpha=alpha, c=c, beta=beta)
