"""Exact log-space count distributions over independent Bernoulli predictions.

Given per-instance log success probabilities t_i = log p(y_i = 1), the
recurrence

    a[i][m] = logsumexp(a[i-1][m-1] + t_i,  a[i-1][m] + t'_i)

fills a lattice whose cell a[i][m] is the log probability that exactly m of
the first i predictions are positive. A single pass truncated at ``s_max``
costs O(k * s_max) cell updates; the full row at ``s_max = k`` yields the
whole Poisson-binomial distribution in O(k^2).

Everything here works on scalars in log space so that probabilities near 0
and 1 at large k stay representable. Probability zero is the IEEE -inf;
all operations treat it as an exact zero, including the reverse sweep in
:func:`backward_count`, where cells holding -inf contribute no adjoint.

All functions are pure; returned values are immutable and safe to share
across threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

NEG_INF = float("-inf")

_LN2 = 0.6931471805599453


def log1mexp(x: float) -> float:
    """Compute log(1 - exp(x)) for x < 0 without losing precision.

    Uses log(-expm1(x)) for x > -ln 2 and log1p(-exp(x)) otherwise; the
    branch point keeps both factors well conditioned. ``x = -inf`` maps to
    0.0 (the complement of probability zero is one).

    Raises:
        ValueError: if x >= 0; a probability of one or more has no
            complement in log space.
    """
    if x >= 0.0:
        raise ValueError(f"log1mexp requires x < 0, got {x!r}")
    if x == NEG_INF:
        return 0.0
    if x > -_LN2:
        return math.log(-math.expm1(x))
    return math.log1p(-math.exp(x))


def logsumexp2(a: float, b: float) -> float:
    """Compute log(exp(a) + exp(b)) stably; -inf arguments act as zeros."""
    if a == NEG_INF:
        return b
    if b == NEG_INF:
        return a
    m = a if a > b else b
    return m + math.log1p(math.exp(-abs(a - b)))


def _as_logprob_vector(values, name: str) -> np.ndarray:
    # copies so freezing the result never freezes a caller's buffer
    arr = np.array(values, dtype=np.float64)
    if arr.ndim != 1 or arr.size < 1:
        raise ValueError(f"{name} must be a non-empty 1-D vector")
    if np.any(np.isnan(arr)) or np.any(arr > 0.0) or np.any(arr == np.inf):
        raise ValueError(f"{name} entries must be log probabilities in [-inf, 0]")
    return arr


@dataclass(frozen=True, eq=False)
class InstanceScores:
    """Per-instance log success probabilities for one bag.

    ``t[i]`` is log p(y_i = 1) and ``t_complement[i]`` the cached
    log p(y_i = 0); the pair must describe one probability, i.e.
    exp(t) + exp(t_complement) = 1 within 1e-12.
    """

    t: np.ndarray
    t_complement: np.ndarray

    def __post_init__(self):
        t = _as_logprob_vector(self.t, "t")
        tc = _as_logprob_vector(self.t_complement, "t_complement")
        if t.shape != tc.shape:
            raise ValueError("t and t_complement must have equal length")
        total = np.exp(t) + np.exp(tc)
        if np.any(np.abs(total - 1.0) > 1e-12):
            worst = float(np.max(np.abs(total - 1.0)))
            raise ValueError(
                f"exp(t) + exp(t_complement) deviates from 1 by {worst:.3e}"
            )
        t.setflags(write=False)
        tc.setflags(write=False)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "t_complement", tc)

    @property
    def k(self) -> int:
        return self.t.shape[0]

    @classmethod
    def from_log_probabilities(cls, t) -> "InstanceScores":
        """Build scores from log success probabilities; complements via log1mexp."""
        arr = _as_logprob_vector(t, "t")
        if np.any(arr == 0.0):
            raise ValueError("t entries must be strictly negative (p < 1)")
        tc = np.array([log1mexp(float(x)) for x in arr], dtype=np.float64)
        return cls(arr, tc)

    @classmethod
    def from_probabilities(cls, probs) -> "InstanceScores":
        """Build scores from success probabilities in (0, 1)."""
        p = np.asarray(probs, dtype=np.float64)
        if p.ndim != 1 or p.size < 1:
            raise ValueError("probs must be a non-empty 1-D vector")
        if np.any(~(p > 0.0)) or np.any(~(p < 1.0)):
            raise ValueError("probabilities must lie strictly inside (0, 1)")
        return cls(np.log(p), np.log1p(-p))


@dataclass(frozen=True, eq=False)
class CountTable:
    """The filled DP lattice: ``a[i, m] = log p(sum of first i predictions = m)``."""

    a: np.ndarray
    k: int
    s_max: int

    def __post_init__(self):
        a = np.asarray(self.a, dtype=np.float64)
        if a.shape != (self.k + 1, self.s_max + 1):
            raise ValueError("table shape must be (k+1, s_max+1)")
        a.setflags(write=False)
        object.__setattr__(self, "a", a)


@dataclass(frozen=True, eq=False)
class CountDistribution:
    """Log probabilities of every count 0..k; entries logsumexp to 0 within 1e-9."""

    logp: np.ndarray

    def __post_init__(self):
        logp = _as_logprob_vector(self.logp, "logp")
        finite = logp[logp > NEG_INF]
        if finite.size == 0:
            raise ValueError("count distribution carries no probability mass")
        m = float(np.max(finite))
        total = m + math.log(float(np.sum(np.exp(finite - m))))
        if abs(total) > 1e-9:
            raise ValueError(f"count distribution is unnormalized: logsumexp={total:.3e}")
        logp.setflags(write=False)
        object.__setattr__(self, "logp", logp)

    @property
    def k(self) -> int:
        return self.logp.shape[0] - 1

    def probabilities(self) -> np.ndarray:
        return np.exp(self.logp)


@dataclass(frozen=True, eq=False)
class CountGradient:
    """Derivative of a designated scalar with respect to each t_i."""

    d_t: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.d_t, dtype=np.float64)
        if arr.ndim != 1:
            raise ValueError("d_t must be 1-D")
        if not np.all(np.isfinite(arr)):
            raise ValueError("gradient entries must be finite")
        arr.setflags(write=False)
        object.__setattr__(self, "d_t", arr)


def _forward_cells(t: list, tc: list, s_max: int) -> list:
    """Fill the flat (k+1) x (s_max+1) lattice, row-major, i then m ascending."""
    k = len(t)
    w = s_max + 1
    log1p = math.log1p
    exp = math.exp
    a = [NEG_INF] * ((k + 1) * w)
    a[0] = 0.0
    for i in range(1, k + 1):
        ti = t[i - 1]
        tci = tc[i - 1]
        prev = (i - 1) * w
        cur = i * w
        pm = a[prev]
        a[cur] = pm + tci if pm != NEG_INF else NEG_INF
        for m in range(1, w):
            x = a[prev + m - 1]
            y = a[prev + m]
            ap = x + ti if x != NEG_INF else NEG_INF
            am = y + tci if y != NEG_INF else NEG_INF
            if ap == NEG_INF:
                a[cur + m] = am
            elif am == NEG_INF:
                a[cur + m] = ap
            elif ap >= am:
                a[cur + m] = ap + log1p(exp(am - ap))
            else:
                a[cur + m] = am + log1p(exp(ap - am))
    return a


def forward_count(scores: InstanceScores, s_max: int) -> CountTable:
    """Run the forward pass, tracking counts 0..s_max.

    O(k * s_max) cell updates, filled in ascending (i, m) order so repeated
    runs are bit-identical.

    Raises:
        ValueError: if s_max is outside [0, k].
    """
    k = scores.k
    if not isinstance(s_max, (int, np.integer)) or isinstance(s_max, bool):
        raise ValueError("s_max must be an integer")
    if s_max < 0 or s_max > k:
        raise ValueError(f"s_max must lie in [0, {k}], got {s_max}")
    cells = _forward_cells(scores.t.tolist(), scores.t_complement.tolist(), int(s_max))
    table = np.asarray(cells, dtype=np.float64).reshape(k + 1, s_max + 1)
    return CountTable(table, k, int(s_max))


def count_log_prob(scores: InstanceScores, s: int) -> float:
    """Log probability that the prediction sum equals exactly s."""
    k = scores.k
    if not isinstance(s, (int, np.integer)) or isinstance(s, bool):
        raise ValueError("s must be an integer")
    if s < 0 or s > k:
        raise ValueError(f"count s must lie in [0, {k}], got {s}")
    table = forward_count(scores, int(s))
    return float(table.a[k, s])


def count_distribution(scores: InstanceScores) -> CountDistribution:
    """All k+1 count log probabilities from one O(k^2) pass."""
    table = forward_count(scores, scores.k)
    return CountDistribution(table.a[scores.k].copy())


def interval_log_prob(scores: InstanceScores, s1: int, s2: int) -> float:
    """Log probability that the prediction sum lands in [s1, s2]."""
    k = scores.k
    for name, v in (("s1", s1), ("s2", s2)):
        if not isinstance(v, (int, np.integer)) or isinstance(v, bool):
            raise ValueError(f"{name} must be an integer")
    if not (0 <= s1 <= s2 <= k):
        raise ValueError(f"require 0 <= s1 <= s2 <= {k}, got [{s1}, {s2}]")
    dist = count_distribution(scores)
    acc = NEG_INF
    for s in range(int(s1), int(s2) + 1):
        acc = logsumexp2(acc, float(dist.logp[s]))
    return min(acc, 0.0)


def backward_count(table: CountTable, scores: InstanceScores, seed) -> CountGradient:
    """Reverse sweep: gradient of sum_s seed[s] * a[k][s] with respect to t.

    Walks the recurrence backwards, splitting each cell's adjoint between
    its two parents with weights exp(parent_branch - cell). The complement
    score is a function of t, so its share is folded in through
    d t'_i / d t_i = -exp(t_i - t'_i). Cells holding -inf are exact zeros
    and contribute nothing. O(k * s_max), same as the forward pass.

    Raises:
        ValueError: if the seed length differs from s_max + 1.
    """
    seed_arr = np.asarray(seed, dtype=np.float64)
    if seed_arr.ndim != 1 or seed_arr.shape[0] != table.s_max + 1:
        raise ValueError(
            f"seed must have length s_max+1 = {table.s_max + 1}, got {seed_arr.shape}"
        )
    if not np.all(np.isfinite(seed_arr)):
        raise ValueError("seed entries must be finite")
    if table.k != scores.k:
        raise ValueError("table and scores disagree on instance count")

    k = table.k
    w = table.s_max + 1
    a = table.a.tolist()  # list of rows
    t = scores.t.tolist()
    tc = scores.t_complement.tolist()
    exp = math.exp

    adj = seed_arr.tolist()
    d_t = [0.0] * k
    for i in range(k, 0, -1):
        ti = t[i - 1]
        tci = tc[i - 1]
        row = a[i]
        prev = a[i - 1]
        adj_prev = [0.0] * w
        g_plus = 0.0
        g_stay = 0.0
        for m in range(w):
            g = adj[m]
            cell = row[m]
            if g == 0.0 or cell == NEG_INF:
                continue
            x = prev[m - 1] if m >= 1 else NEG_INF
            if x != NEG_INF:
                wp = exp(x + ti - cell)
                if wp != 0.0:
                    g_plus += g * wp
                    adj_prev[m - 1] += g * wp
            y = prev[m]
            if y != NEG_INF:
                ws = exp(y + tci - cell)
                if ws != 0.0:
                    g_stay += g * ws
                    adj_prev[m] += g * ws
        if g_stay != 0.0:
            # d t'_i / d t_i = -exp(t_i - t'_i); may overflow for saturated
            # scores, which CountGradient then rejects as non-finite
            diff = ti - tci
            scale = exp(diff) if diff < 709.0 else math.inf
            d_t[i - 1] = g_plus - g_stay * scale
        else:
            d_t[i - 1] = g_plus
        adj = adj_prev
    return CountGradient(np.asarray(d_t, dtype=np.float64))
