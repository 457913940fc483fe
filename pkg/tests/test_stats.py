import itertools
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from wardsense import stats as S
from wardsense.errors import DataError

import oracles


# ------------------------------------------------------------------ quantiles

def test_median_iqr_examples():
    assert S.median_iqr([1, 2, 3, 4, 5]) == (2.0, 3.0, 4.0)
    assert S.median_iqr([7.5]) == (7.5, 7.5, 7.5)
    assert S.median_iqr([0.0, 19.5, 53.9, 161.6, 500.0]) == (19.5, 53.9, 161.6)
    with pytest.raises(DataError):
        S.median_iqr([])


def test_quantile_matches_numpy(rng):
    for n in (1, 2, 3, 7, 50):
        x = rng.normal(size=n)
        for q in (0.0, 0.1, 0.25, 0.5, 0.75, 0.9, 1.0):
            assert S.quantile(x, q) == pytest.approx(float(np.percentile(x, 100 * q)), rel=1e-12, abs=1e-15)


@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=30), st.floats(-100, 100))
def test_median_iqr_properties(values, c):
    q = S.median_iqr(values)
    assert q[0] <= q[1] <= q[2]
    assert S.median_iqr(list(reversed(values))) == q
    shifted = S.median_iqr([v + c for v in values])
    for a, b in zip(shifted, q):
        assert a == pytest.approx(b + c, abs=1e-6)


def test_format_iqr():
    assert S.format_iqr((19.5, 53.9, 161.6)) == "53.9 (19.5, 161.6)"


def test_midranks():
    assert S.midranks([10, 20, 20, 30]).tolist() == [1.0, 2.5, 2.5, 4.0]


# ------------------------------------------------------------------ Mann-Whitney

def test_mwu_small_example():
    r = S.mann_whitney_u([1, 2], [3, 4], "exact")
    assert r.u == 0.0
    assert r.p == pytest.approx(2 / 6, abs=1e-15)


def test_mwu_degenerate():
    r = S.mann_whitney_u([3, 3, 3], [3, 3])
    assert r.p == 1.0 and r.degenerate


def test_mwu_errors():
    with pytest.raises(DataError):
        S.mann_whitney_u([], [1])
    with pytest.raises(DataError):
        S.mann_whitney_u([np.nan], [1])
    with pytest.raises(ValueError):
        S.mann_whitney_u(range(11), range(11), "exact")
    with pytest.raises(ValueError):
        S.mann_whitney_u([1], [2], "bogus")


def test_auto_switches_at_twenty():
    assert S.mann_whitney_u(range(10), range(5, 15)).method == "exact"
    assert S.mann_whitney_u(range(11), range(5, 15)).method == "normal"


def test_exact_matches_enumeration_with_ties(rng):
    for _ in range(40):
        na, nb = (int(v) for v in rng.integers(1, 7, 2))
        a = rng.integers(0, 4, na).tolist()
        b = rng.integers(0, 4, nb).tolist()
        if len(set(a + b)) == 1:
            continue
        r = S.mann_whitney_u(a, b, "exact")
        assert r.u == oracles.u_statistic(a, b)
        assert r.p == pytest.approx(oracles.mwu_enumerate(a, b), abs=1e-12)


def tie_free_exact_table(na, nb):
    """Every achievable U with its enumerated two-sided p, plus one witness split."""
    n = na + nb
    dist = {}
    witness = {}
    for comb in itertools.combinations(range(1, n + 1), na):
        u = sum(comb) - na * (na + 1) // 2
        dist[u] = dist.get(u, 0) + 1
        witness.setdefault(u, comb)
    total = math.comb(n, na)
    mu = na * nb / 2
    out = []
    for u, comb in witness.items():
        p = sum(c for v, c in dist.items() if abs(v - mu) >= abs(u - mu)) / total
        a = list(comb)
        b = [r for r in range(1, n + 1) if r not in comb]
        out.append((u, p, a, b))
    return out


@pytest.mark.parametrize("na,nb", [(1, 1), (2, 3), (4, 4), (5, 3), (6, 6)])
def test_exact_matches_tie_free_enumeration(na, nb):
    for u, p, a, b in tie_free_exact_table(na, nb):
        r = S.mann_whitney_u(np.array(a) * 1.5, np.array(b) * 1.5, "exact")
        assert r.u == u
        assert abs(r.p - min(1.0, p)) <= 1e-12


def test_exact_matches_scipy(rng):
    from scipy.stats import mannwhitneyu

    for _ in range(30):
        na, nb = (int(v) for v in rng.integers(2, 10, 2))
        a, b = rng.normal(size=na), rng.normal(size=nb)
        ref = mannwhitneyu(a, b, alternative="two-sided", method="exact")
        r = S.mann_whitney_u(a, b, "exact")
        assert r.u == ref.statistic
        assert r.p == pytest.approx(ref.pvalue, abs=1e-12)


def test_normal_matches_scipy_with_ties(rng):
    from scipy.stats import mannwhitneyu

    for _ in range(30):
        a = rng.integers(0, 10, 25)
        b = rng.integers(2, 12, 30)
        ref = mannwhitneyu(a, b, alternative="two-sided", method="asymptotic", use_continuity=True)
        r = S.mann_whitney_u(a, b, "normal")
        assert r.u == ref.statistic
        assert r.p == pytest.approx(ref.pvalue, rel=1e-9)


def test_normal_close_to_exact_six_six(rng):
    worst = 0.0
    for _ in range(300):
        a, b = rng.normal(size=6), rng.normal(0.5, 1, size=6)
        worst = max(worst, abs(S.mann_whitney_u(a, b, "exact").p - S.mann_whitney_u(a, b, "normal").p))
    assert worst <= 0.02


@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=8, unique=True),
       st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=8, unique=True),
       st.floats(-50, 50), st.floats(0.1, 10))
def test_mwu_symmetry_and_invariance(a, b, shift, scale):
    if set(a) & set(b):
        return
    ab, ba = S.mann_whitney_u(a, b), S.mann_whitney_u(b, a)
    assert ab.u + ba.u == len(a) * len(b)
    assert ab.p == pytest.approx(ba.p, abs=1e-12)
    ta = [v * scale + shift for v in a]
    tb = [v * scale + shift for v in b]
    if len(set(ta + tb)) == len(a) + len(b):  # transformation kept values distinct
        moved = S.mann_whitney_u(ta, tb)
        assert moved.u == ab.u and moved.p == pytest.approx(ab.p, abs=1e-12)


# ------------------------------------------------------------------ proportions

def test_proportion_se():
    assert S.proportion_se(0, 100) == 0.0
    assert S.proportion_se(50, 100) == 0.05
    with pytest.raises(ValueError):
        S.proportion_se(101, 100)
    with pytest.raises(ValueError):
        S.proportion_se(0, 0)


def test_two_proportion_test():
    z, p = S.two_proportion_test(30, 100, 10, 100)
    assert z == pytest.approx(3.5355, abs=1e-4)
    assert p == pytest.approx(0.000407, abs=2e-5)
    assert S.two_proportion_test(0, 10, 0, 20) == (0.0, 1.0)
    with pytest.raises(ValueError):
        S.two_proportion_test(5, 4, 1, 2)


def test_two_proportion_against_binomial_simulation():
    rng = np.random.default_rng(11)
    pooled = 0.2
    z_obs, p = S.two_proportion_test(30, 100, 10, 100)
    k1 = rng.binomial(100, pooled, 200_000)
    k2 = rng.binomial(100, pooled, 200_000)
    pp = (k1 + k2) / 200
    se = np.sqrt(pp * (1 - pp) * 0.02)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se > 0, (k1 - k2) / 100 / se, 0.0)
    sim = float(np.mean(np.abs(z) >= z_obs - 1e-12))
    assert sim == pytest.approx(p, abs=5e-4)


def test_annotation_levels():
    assert [S.annotate(p) for p in (0.0005, 0.005, 0.03, 0.2)] == ["***", "**", "*", ""]


# ------------------------------------------------------------------ cohort compare

def test_identical_groups_all_p_one():
    table = {"x": [1.0, 2.0, 1.0, 2.0], "y": [5.0, 5.0, 5.0, 5.0]}
    rows = S.cohort_compare(table, ["a", "a", "b", "b"])
    assert all(r.p == 1.0 and not r.significant for r in rows)
    assert rows[1].degenerate


def test_toy_row_hand_assembled():
    table = {"x": [1.0, 2.0, np.nan, 10.0, 11.0, 12.0]}
    (row,) = S.cohort_compare(table, ["d", "d", "d", "n", "n", "n"], ("d", "n"))
    assert (row.n_a, row.n_b) == (2, 3)
    assert row.iqr_a == (1.25, 1.5, 1.75)
    assert row.iqr_b == (10.5, 11.0, 11.5)
    assert row.u == 0.0
    assert row.p == pytest.approx(2 / 10)
    assert not row.significant and row.method == "exact"


def test_shifted_group_significant(rng):
    a = rng.normal(0, 1, 10)
    b = rng.normal(3, 1, 10)
    (row,) = S.cohort_compare({"v": np.concatenate([a, b])}, ["A"] * 10 + ["B"] * 10, ("A", "B"))
    assert row.significant and row.p < 0.001 and row.annotation == "***"


def test_compare_errors():
    with pytest.raises(DataError):
        S.cohort_compare({"x": [1.0, 2.0]}, ["a", "a"])
    with pytest.raises(DataError):
        S.cohort_compare({"x": [1.0, np.nan]}, ["a", "b"])
    with pytest.raises(DataError):
        S.cohort_compare({"x": [1.0, 2.0]}, ["a", "b"], ("a", "c"))
    with pytest.raises(ValueError):
        S.cohort_compare({"x": [1.0]}, ["a", "b"])
