"""Significance machinery: two-sided Mann-Whitney U test and the
Benjamini/Hochberg false-discovery-rate procedure.

The U test switches between an exact null distribution (computed by
counting rank subsets, used for tie-free samples with n+m <= 16) and the
tie-corrected normal approximation with continuity correction.  Samples
with no variance at all yield p = 1.0 rather than an error so that batch
comparisons stay total.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import BadInput, EmptySample, UnknownBaseline

EXACT_LIMIT = 16


def _midranks(pooled: np.ndarray) -> np.ndarray:
    """Ranks 1..k with tied values sharing their average rank."""
    order = np.argsort(pooled, kind="stable")
    ranks = np.empty(len(pooled), dtype=np.float64)
    i = 0
    while i < len(pooled):
        j = i
        while j + 1 < len(pooled) and pooled[order[j + 1]] == pooled[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def _exact_u_counts(n: int, m: int) -> np.ndarray:
    """counts[u] = number of rank assignments giving U statistic u.

    Counts size-n subsets of ranks {1..n+m} by rank sum via dynamic
    programming, then shifts to U = R - n(n+1)/2.
    """
    total = n + m
    max_sum = total * (total + 1) // 2
    ways = np.zeros((n + 1, max_sum + 1), dtype=np.float64)
    ways[0, 0] = 1.0
    for rank in range(1, total + 1):
        for k in range(min(rank, n), 0, -1):
            ways[k, rank:] += ways[k - 1, :-rank or None]
    min_sum = n * (n + 1) // 2
    return ways[n, min_sum:min_sum + n * m + 1]


def _normal_sf(z: float) -> float:
    return 0.5 * math.erfc(z / math.sqrt(2.0))


def mann_whitney_u(sample_a, sample_b) -> tuple[float, float]:
    """Two-sided Mann-Whitney U test.

    Returns (U of sample_a, p).  Exact p by rank-subset counting when the
    pooled sample is tie-free and n+m <= 16; otherwise the normal
    approximation with tie-corrected variance and continuity correction.
    """
    a = np.asarray(sample_a, dtype=np.float64)
    b = np.asarray(sample_b, dtype=np.float64)
    if a.size == 0 or b.size == 0:
        raise EmptySample("both samples must be non-empty")
    n, m = a.size, b.size
    pooled = np.concatenate([a, b])
    ranks = _midranks(pooled)
    r_a = float(ranks[:n].sum())
    u_a = r_a - n * (n + 1) / 2.0

    _, tie_counts = np.unique(pooled, return_counts=True)
    tie_free = bool((tie_counts == 1).all())

    if tie_free and n + m <= EXACT_LIMIT:
        counts = _exact_u_counts(n, m)
        total = counts.sum()
        u_int = int(round(u_a))
        u_min = min(u_int, n * m - u_int)
        p = min(1.0, 2.0 * counts[: u_min + 1].sum() / total)
        return u_a, float(p)

    total_n = n + m
    tie_term = float(((tie_counts ** 3 - tie_counts).sum())) / (total_n * (total_n - 1))
    var = n * m / 12.0 * ((total_n + 1) - tie_term)
    if var <= 0.0:
        return u_a, 1.0
    z = max(0.0, abs(u_a - n * m / 2.0) - 0.5) / math.sqrt(var)
    return u_a, min(1.0, 2.0 * _normal_sf(z))


def benjamini_hochberg(p_values, fdr: float) -> list[bool]:
    """Step-up FDR control: flag the k smallest p-values where k is the
    largest index with p_(k) <= fdr*k/m.  Tied p-values share a fate;
    the output order matches the input order."""
    p = np.asarray(list(p_values), dtype=np.float64)
    if p.size and (p.min() < 0.0 or p.max() > 1.0):
        raise BadInput("p-values must lie in [0, 1]")
    if not (0.0 < fdr < 1.0):
        raise BadInput("fdr must lie in (0, 1)")
    m = p.size
    if m == 0:
        return []
    order = np.argsort(p, kind="stable")
    threshold = None
    for k in range(m, 0, -1):
        if p[order[k - 1]] <= fdr * k / m:
            threshold = p[order[k - 1]]
            break
    if threshold is None:
        return [False] * m
    return [bool(v <= threshold) for v in p]


@dataclass(frozen=True)
class MethodComparison:
    u_statistic: float
    p_value: float
    significant_after_bh: bool


@dataclass(frozen=True)
class ComparisonResult:
    baseline: str
    per_method: dict[str, MethodComparison]
    alpha: float
    fdr: float

    def to_json_dict(self) -> dict:
        return {
            "baseline": self.baseline,
            "alpha": self.alpha,
            "fdr": self.fdr,
            "results": {
                name: {
                    "u": mc.u_statistic,
                    "p": mc.p_value,
                    "significant": mc.significant_after_bh,
                }
                for name, mc in sorted(self.per_method.items())
            },
        }


def compare_methods(per_method_scores: dict[str, list], baseline: str,
                    alpha: float = 0.05, fdr: float = 0.05) -> ComparisonResult:
    """Test every method's scores against the baseline's and correct the
    whole family with Benjamini/Hochberg.  The baseline tested against
    itself appears in the results with p = 1."""
    if baseline not in per_method_scores:
        raise UnknownBaseline(f"baseline {baseline!r} not among methods")
    if len(per_method_scores) < 2:
        raise BadInput("need at least two methods to compare")
    names = sorted(per_method_scores)
    base = per_method_scores[baseline]
    tests = [mann_whitney_u(per_method_scores[name], base) for name in names]
    flags = benjamini_hochberg([p for _, p in tests], fdr)
    per_method = {
        name: MethodComparison(u, p, flag)
        for name, (u, p), flag in zip(names, tests, flags)
    }
    return ComparisonResult(baseline=baseline, per_method=per_method,
                            alpha=alpha, fdr=fdr)
