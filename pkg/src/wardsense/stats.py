"""Nonparametric cohort comparison: quantiles, Mann-Whitney U, proportion tests."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import kernels
from .errors import DataError

EXACT_MAX_N = 20
DEFAULT_ALPHA = 0.05
ANNOTATION_LEVELS = ((0.001, "***"), (0.01, "**"), (0.05, "*"))


def _norm_sf(z: float) -> float:
    return 0.5 * math.erfc(z / math.sqrt(2.0))


def quantile(values, q: float) -> float:
    """Linear interpolation between order statistics at 1-based position (n-1)q + 1."""
    x = np.sort(np.asarray(values, dtype=float).ravel())
    if x.size == 0:
        raise DataError("quantile of an empty sample")
    h = (x.size - 1) * q
    lo = int(math.floor(h))
    hi = min(lo + 1, x.size - 1)
    return float(x[lo] + (h - lo) * (x[hi] - x[lo]))


def median_iqr(values) -> tuple[float, float, float]:
    """``(q25, median, q75)``."""
    return quantile(values, 0.25), quantile(values, 0.5), quantile(values, 0.75)


def midranks(values) -> np.ndarray:
    x = np.asarray(values, dtype=float)
    order = np.argsort(x, kind="stable")
    ranks = np.empty(x.size)
    sx = x[order]
    i = 0
    while i < x.size:
        j = i
        while j + 1 < x.size and sx[j + 1] == sx[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


@dataclass(frozen=True)
class MannWhitneyResult:
    u: float
    p: float
    method: str
    degenerate: bool = False


def mann_whitney_u(a, b, method: str = "auto") -> MannWhitneyResult:
    """Two-sided rank-sum test; ``u`` counts pairs with a > b (ties count half).

    ``exact`` enumerates the permutation distribution of the mid-rank sum, so it
    stays exact with ties; it needs ``len(a) + len(b) <= 20``. ``normal`` uses
    the tie-corrected variance with a continuity correction. ``auto`` picks
    exact when allowed.
    """
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    na, nb = a.size, b.size
    if na == 0 or nb == 0:
        raise DataError("Mann-Whitney U needs two non-empty samples")
    if np.isnan(a).any() or np.isnan(b).any():
        raise DataError("Mann-Whitney U input contains NaN")
    n = na + nb
    if method == "auto":
        method = "exact" if n <= EXACT_MAX_N else "normal"
    if method not in ("exact", "normal"):
        raise ValueError("method must be 'exact', 'normal' or 'auto'")
    ranks = midranks(np.concatenate([a, b]))
    u = float(ranks[:na].sum() - na * (na + 1) / 2.0)
    if np.all(ranks == ranks[0]):
        return MannWhitneyResult(u, 1.0, method, degenerate=True)
    mu = na * nb / 2.0
    if method == "exact":
        if n > EXACT_MAX_N:
            raise ValueError(f"exact method limited to n_a + n_b <= {EXACT_MAX_N}")
        doubled = np.rint(2.0 * ranks).astype(np.int64)
        counts = kernels.rank_sum_counts(doubled, na)
        sums = np.arange(counts.size)
        # U in doubled units: 2U = S2 - na(na+1)
        dev = np.abs(sums - na * (na + 1) - 2.0 * mu)
        obs = abs(2.0 * u - 2.0 * mu)
        total = math.comb(n, na)
        p = float(counts[dev >= obs - 1e-9].sum()) / total
        return MannWhitneyResult(u, min(1.0, p), "exact")
    _, tie_counts = np.unique(ranks, return_counts=True)
    tie_term = float(np.sum(tie_counts ** 3 - tie_counts)) / (n * (n - 1))
    var = na * nb / 12.0 * ((n + 1) - tie_term)
    z = max(abs(u - mu) - 0.5, 0.0) / math.sqrt(var)
    return MannWhitneyResult(u, min(1.0, 2.0 * _norm_sf(z)), "normal")


def proportion_se(k: int, n: int) -> float:
    if n < 1:
        raise ValueError("n must be >= 1")
    if not 0 <= k <= n:
        raise ValueError(f"need 0 <= k <= n, got k={k}, n={n}")
    p = k / n
    return math.sqrt(p * (1 - p) / n)


def two_proportion_test(k1: int, n1: int, k2: int, n2: int) -> tuple[float, float]:
    """Pooled two-sided z-test; returns (z, p). A pooled share of 0 or 1 gives (0, 1)."""
    for k, n in ((k1, n1), (k2, n2)):
        if n < 1:
            raise ValueError("sample sizes must be >= 1")
        if not 0 <= k <= n:
            raise ValueError(f"need 0 <= k <= n, got k={k}, n={n}")
    pooled = (k1 + k2) / (n1 + n2)
    se = math.sqrt(pooled * (1 - pooled) * (1 / n1 + 1 / n2))
    if se == 0:
        return 0.0, 1.0
    z = (k1 / n1 - k2 / n2) / se
    return z, min(1.0, 2.0 * _norm_sf(abs(z)))


def annotate(p: float) -> str:
    for level, mark in ANNOTATION_LEVELS:
        if p < level:
            return mark
    return ""


@dataclass(frozen=True)
class GroupComparison:
    variable: str
    group_a: str
    group_b: str
    n_a: int
    n_b: int
    iqr_a: tuple
    iqr_b: tuple
    u: float
    p: float
    significant: bool
    method: str
    degenerate: bool = False

    @property
    def annotation(self) -> str:
        return annotate(self.p)


def format_iqr(q: tuple, digits: int = 1) -> str:
    q25, med, q75 = q
    return f"{med:.{digits}f} ({q25:.{digits}f}, {q75:.{digits}f})"


def cohort_compare(table: Mapping[str, Sequence[float]], groups: Sequence[str],
                   group_names: tuple[str, str] | None = None, alpha: float = DEFAULT_ALPHA,
                   method: str = "auto") -> list[GroupComparison]:
    """Compare every variable column between two groups.

    ``table`` maps variable -> one value per observation (NaN = undefined, which
    is dropped pairwise); ``groups`` labels each observation.
    """
    groups = list(groups)
    names = group_names or tuple(sorted(set(groups)))
    if len(names) != 2:
        raise DataError(f"need exactly two groups, got {names}")
    ga, gb = names
    labels = np.asarray(groups)
    for g in names:
        if not np.any(labels == g):
            raise DataError(f"group {g!r} has no observations")
    out = []
    for var, values in table.items():
        v = np.asarray(values, dtype=float)
        if v.size != labels.size:
            raise ValueError(f"column {var!r} has {v.size} values for {labels.size} labels")
        a = v[(labels == ga) & ~np.isnan(v)]
        b = v[(labels == gb) & ~np.isnan(v)]
        if a.size == 0 or b.size == 0:
            raise DataError(f"variable {var!r}: a group has no defined values")
        res = mann_whitney_u(a, b, method)
        out.append(GroupComparison(
            var, ga, gb, int(a.size), int(b.size), median_iqr(a), median_iqr(b),
            res.u, res.p, (not res.degenerate) and res.p < alpha, res.method, res.degenerate,
        ))
    return out
