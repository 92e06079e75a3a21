"""Nonparametric hypothesis tests, implemented from first principles.

The Wilcoxon signed-rank test uses the exact null distribution of the
positive-rank sum for small samples (n <= 25), computed by dynamic
programming over the realized ranks rather than literal enumeration of the
2^n sign assignments; larger samples fall back to a tie-corrected normal
approximation with continuity correction. The Kruskal-Wallis H statistic is
tie-corrected and referred to a chi-squared upper tail evaluated through the
regularized incomplete gamma function.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal, Sequence

Alternative = Literal["two-sided", "less", "greater"]

#: Largest effective sample size for which the exact signed-rank
#: distribution is used (the rank-sum support stays tiny, so this is cheap).
EXACT_LIMIT = 25


class NoSignalError(ValueError):
    """Every paired difference is zero; the signed-rank statistic is undefined."""


class InsufficientPairsError(ValueError):
    """Fewer than three nonzero paired differences remain."""


@dataclass(frozen=True)
class PairedSamples:
    """Two measurement series aligned by label (one value per project)."""

    labels: tuple[str, ...]
    x: tuple[float, ...]
    y: tuple[float, ...]

    def __post_init__(self) -> None:
        if not (len(self.labels) == len(self.x) == len(self.y)):
            raise ValueError("labels, x and y must have equal lengths")
        if len(self.x) < 1:
            raise ValueError("need at least one pair")

    @classmethod
    def from_maps(cls, x: dict[str, float], y: dict[str, float], labels: Sequence[str]) -> "PairedSamples":
        return cls(tuple(labels), tuple(x[l] for l in labels), tuple(y[l] for l in labels))


@dataclass(frozen=True)
class TestResult:
    method: str
    statistic: float
    p_value: float
    alternative: str
    n_effective: int
    exact: bool


def _average_ranks(values: Sequence[float]) -> list[float]:
    """Ranks 1..n with tied values sharing the average of their positions."""
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        avg = (i + j) / 2.0 + 1.0
        for k in range(i, j + 1):
            ranks[order[k]] = avg
        i = j + 1
    return ranks


def _tie_groups(values: Sequence[float]) -> list[int]:
    counts: dict[float, int] = {}
    for v in values:
        counts[v] = counts.get(v, 0) + 1
    return [c for c in counts.values() if c > 1]


def _signed_rank_counts(doubled_ranks: Sequence[int]) -> list[int]:
    """Number of sign assignments realizing each value of 2*W+.

    Equivalent to expanding prod_i (1 + z^{d_i}) where d_i = 2*rank_i;
    doubling makes half-ranks from ties integral. Exact integer arithmetic.
    """
    total = sum(doubled_ranks)
    counts = [0] * (total + 1)
    counts[0] = 1
    for d in doubled_ranks:
        for s in range(total, d - 1, -1):
            if counts[s - d]:
                counts[s] += counts[s - d]
    return counts


def _normal_sf(z: float) -> float:
    return 0.5 * math.erfc(z / math.sqrt(2.0))


def wilcoxon_signed_rank(samples: PairedSamples, alternative: Alternative = "two-sided") -> TestResult:
    """Signed-rank test on paired samples; statistic is the positive-rank sum W+.

    Zero differences are dropped before ranking. "less" asks whether x is
    systematically below y (small W+), "greater" the reverse; the two-sided
    p doubles the smaller tail and is clipped at 1.
    """
    if alternative not in ("two-sided", "less", "greater"):
        raise ValueError(f"unknown alternative {alternative!r}")
    diffs = [xv - yv for xv, yv in zip(samples.x, samples.y) if xv - yv != 0.0]
    if not diffs:
        raise NoSignalError("all paired differences are zero")
    n = len(diffs)
    if n < 3:
        raise InsufficientPairsError(f"only {n} nonzero difference(s); need at least 3")

    abs_diffs = [abs(d) for d in diffs]
    ranks = _average_ranks(abs_diffs)
    w_plus = sum(r for r, d in zip(ranks, diffs) if d > 0)

    if n <= EXACT_LIMIT:
        doubled = [round(2 * r) for r in ranks]
        counts = _signed_rank_counts(doubled)
        w2 = round(2 * w_plus)
        denom = 2**n
        cdf = sum(counts[: w2 + 1]) / denom
        sf = sum(counts[w2:]) / denom
        if alternative == "less":
            p = cdf
        elif alternative == "greater":
            p = sf
        else:
            p = min(1.0, 2.0 * min(cdf, sf))
        return TestResult("wilcoxon-exact", w_plus, p, alternative, n, exact=True)

    mean = n * (n + 1) / 4.0
    tie_term = sum(t**3 - t for t in _tie_groups(abs_diffs))
    var = n * (n + 1) * (2 * n + 1) / 24.0 - tie_term / 48.0
    sd = math.sqrt(var)
    if alternative == "less":
        p = 1.0 - _normal_sf((w_plus - mean + 0.5) / sd)
    elif alternative == "greater":
        p = _normal_sf((w_plus - mean - 0.5) / sd)
    else:
        z = (abs(w_plus - mean) - 0.5) / sd
        p = min(1.0, 2.0 * _normal_sf(z))
    return TestResult("wilcoxon-normal", w_plus, p, alternative, n, exact=False)


def kruskal_wallis(groups: Sequence[Sequence[float]]) -> TestResult:
    """Tie-corrected H test over k independent groups; upper-tail chi-squared p."""
    if len(groups) < 2:
        raise ValueError("need at least two groups")
    for i, g in enumerate(groups):
        if len(g) == 0:
            raise ValueError(f"group {i} is empty")
    pooled = [v for g in groups for v in g]
    n_total = len(pooled)
    if n_total < 5:
        raise ValueError(f"need at least 5 values in total, have {n_total}")

    if len(set(pooled)) == 1:
        return TestResult("kruskal-wallis", 0.0, 1.0, "greater", n_total, exact=False)

    ranks = _average_ranks(pooled)
    h = 0.0
    offset = 0
    for g in groups:
        r_sum = sum(ranks[offset : offset + len(g)])
        h += r_sum * r_sum / len(g)
        offset += len(g)
    h = 12.0 / (n_total * (n_total + 1)) * h - 3.0 * (n_total + 1)

    tie_term = sum(t**3 - t for t in _tie_groups(pooled))
    correction = 1.0 - tie_term / (n_total**3 - n_total)
    h = max(h / correction, 0.0)
    p = chi_squared_sf(h, len(groups) - 1)
    return TestResult("kruskal-wallis", h, p, "greater", n_total, exact=False)


def chi_squared_sf(x: float, df: int) -> float:
    """Upper-tail probability of the chi-squared distribution, Q(df/2, x/2)."""
    if x < 0:
        raise ValueError("x must be nonnegative")
    if df < 1:
        raise ValueError("df must be a positive integer")
    return _regularized_gamma_q(df / 2.0, x / 2.0)


def _regularized_gamma_q(a: float, x: float) -> float:
    if x == 0.0:
        return 1.0
    if x < a + 1.0:
        return 1.0 - _gamma_p_series(a, x)
    return _gamma_q_contfrac(a, x)


def _gamma_p_series(a: float, x: float) -> float:
    """Lower regularized gamma P(a, x) by its power series (x < a + 1)."""
    term = 1.0 / a
    total = term
    denom = a
    for _ in range(10_000):
        denom += 1.0
        term *= x / denom
        total += term
        if abs(term) < abs(total) * 1e-17:
            break
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _gamma_q_contfrac(a: float, x: float) -> float:
    """Upper regularized gamma Q(a, x) by continued fraction (modified Lentz)."""
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, 10_000):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-16:
            break
    return math.exp(-x + a * math.log(x) - math.lgamma(a)) * h
