import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cortimorph import stats
from cortimorph.stats import (
    RatingsTable,
    bh_fdr,
    bland_altman,
    correlation_pvalue,
    icc_average_fixed_raters,
    load_region_mapping,
    pairwise_group_tests,
    partial_spearman,
    rank_sum_test,
    rescale_0_1000,
    significance_stars,
    spearman,
    standardize_minmax,
)
from cortimorph.morphometry import LANDMARK_NAMES

from oracles import (
    bh_formula,
    bland_altman_formula,
    icc_formula,
    midranks_brute,
    partial_formula,
    rank_sum_enumeration,
    spearman_formula,
)


def _tied_sample(rng, n):
    return rng.integers(0, 5, n).astype(float)


# --- correlation -------------------------------------------------------------


def test_midranks_match_counting_definition():
    rng = np.random.default_rng(0)
    for _ in range(20):
        x = _tied_sample(rng, 12)
        assert list(stats.mid_ranks(x)) == midranks_brute(x)


def test_spearman_with_ties_matches_formula():
    rng = np.random.default_rng(1)
    done = 0
    while done < 50:
        n = int(rng.integers(4, 15))
        x, y = _tied_sample(rng, n), _tied_sample(rng, n)
        if len(set(x)) < 2 or len(set(y)) < 2:
            continue
        assert spearman(x, y).rho == pytest.approx(spearman_formula(x, y), abs=1e-10)
        done += 1


def test_spearman_pvalue_formula():
    rng = np.random.default_rng(2)
    x, y = rng.normal(size=15), rng.normal(size=15)
    res = spearman(x, y, "less")
    t = res.rho * math.sqrt(13 / (1 - res.rho**2))
    from scipy.stats import t as tdist

    assert res.p == pytest.approx(tdist.cdf(t, 13), abs=1e-12)
    two = spearman(x, y, "two-sided").p
    assert two == pytest.approx(2 * min(res.p, 1 - res.p), abs=1e-12)


def test_spearman_drops_missing_and_checks_input():
    res = spearman([1, 2, None, 4, 5], [2, 1, 3, float("nan"), 5])
    assert res.n == 3
    with pytest.raises(ValueError):
        spearman([1, 1, 1, 1], [1, 2, 3, 4])
    with pytest.raises(ValueError):
        spearman([1, 2], [2, 1])
    with pytest.raises(ValueError):
        spearman([1, 2, 3], [1, 2, 3], alternative="up")


def test_spearman_exact_permutation():
    x = [1, 2, 3, 4, 5]
    res = spearman(x, [5, 4, 3, 2, 1], "less", method="exact")
    assert res.p == pytest.approx(1 / 120)
    with pytest.raises(ValueError):
        spearman(range(11), range(11), method="exact")


def test_partial_spearman_matches_formula():
    rng = np.random.default_rng(3)
    for _ in range(50):
        n = int(rng.integers(6, 20))
        x, y, z = (rng.normal(size=n) for _ in range(3))
        rxy, rxz, ryz = spearman_formula(x, y), spearman_formula(x, z), spearman_formula(y, z)
        res = partial_spearman(x, y, z, "two-sided", "icv")
        assert res.rho == pytest.approx(partial_formula(rxy, rxz, ryz), abs=1e-10)
        assert res.partialed_on == "icv"
        assert res.p == pytest.approx(correlation_pvalue(res.rho, n, "two-sided", 1), abs=1e-12)


def test_partial_spearman_degenerate_covariates():
    x, y = [1, 2, 3, 4, 5], [2, 1, 4, 3, 5]
    with pytest.warns(UserWarning):
        res = partial_spearman(x, y, [7] * 5)
    assert res.flag == "constant-covariate"
    assert res.rho == spearman(x, y).rho
    with pytest.raises(ValueError, match="collinear"):
        partial_spearman(x, y, [10, 20, 30, 40, 50])


def test_published_pvalues():
    # one-sided t approximation reproduces the published p-values
    assert 0.0002 <= correlation_pvalue(-0.66, 22, "less") <= 0.0006
    assert 0.002 <= correlation_pvalue(-0.44, 37, "less", n_covariates=1) <= 0.005


# --- agreement ---------------------------------------------------------------


def test_icc_matches_anova_formula():
    rng = np.random.default_rng(4)
    for _ in range(50):
        m = rng.normal(size=(int(rng.integers(3, 12)), int(rng.integers(2, 5))))
        assert icc_average_fixed_raters(m).icc == pytest.approx(icc_formula(m), abs=1e-10)


def test_icc_perfect_agreement_and_degenerate():
    m = np.column_stack([np.arange(5.0), np.arange(5.0) + 3])
    assert icc_average_fixed_raters(m).icc == 1.0
    with pytest.raises(ValueError):
        icc_average_fixed_raters(np.ones((4, 2)))


def test_bland_altman_matches_formula():
    rng = np.random.default_rng(5)
    for _ in range(50):
        n = int(rng.integers(2, 20))
        a, b = rng.normal(size=n), rng.normal(size=n)
        got = bland_altman(a, b)
        exp = bland_altman_formula(a, b)
        assert got.mean_difference == pytest.approx(exp[0], abs=1e-10)
        assert got.sd_difference == pytest.approx(exp[1], abs=1e-10)
        assert got.loa_low == pytest.approx(exp[2], abs=1e-10)
        assert got.loa_high == pytest.approx(exp[3], abs=1e-10)


# --- multiple testing --------------------------------------------------------


def test_bh_matches_formula():
    rng = np.random.default_rng(6)
    for _ in range(50):
        p = list(rng.uniform(0, 0.2, int(rng.integers(1, 30))))
        q = float(rng.uniform(0.01, 0.2))
        assert bh_fdr(p, q) == bh_formula(p, q)


def test_bh_step_up_example():
    # p_(3) passes even though p_(2) alone would not
    assert bh_fdr([0.01, 0.03, 0.036, 0.5], 0.05) == [True, True, True, False]
    with pytest.raises(ValueError):
        bh_fdr([], 0.05)
    with pytest.raises(ValueError):
        bh_fdr([0.1], 1.0)


@settings(max_examples=100, deadline=None)
@given(
    st.lists(st.floats(0, 1), min_size=1, max_size=25),
    st.floats(0.001, 0.5),
    st.floats(0.001, 0.5),
)
def test_bh_monotone_in_q(p, q1, q2):
    lo, hi = sorted((q1, q2))
    r_lo, r_hi = bh_fdr(p, lo), bh_fdr(p, hi)
    assert all(h or not l for l, h in zip(r_lo, r_hi))


# --- rank-sum ----------------------------------------------------------------


def test_rank_sum_exact_equals_enumeration():
    rng = np.random.default_rng(7)
    for n in range(2, 11):
        for n_a in range(1, n):
            vals = rng.permutation(n).astype(float)
            a, b = vals[:n_a], vals[n_a:]
            res = rank_sum_test(a, b)
            u, p = rank_sum_enumeration(a, b)
            assert res.method == "exact"
            assert res.u_statistic == u and res.p == p


def test_rank_sum_normal_with_ties():
    a = [1, 2, 2, 3, 3, 3, 4]
    b = [3, 4, 4, 5, 5, 6, 6, 7]
    res = rank_sum_test(a, b)
    assert res.method == "normal"
    from scipy.stats import mannwhitneyu

    ref = mannwhitneyu(a, b, alternative="two-sided", method="asymptotic", use_continuity=True)
    assert res.u_statistic == ref.statistic
    assert res.p == pytest.approx(ref.pvalue, rel=1e-12)


def test_stars_and_pairwise():
    assert [significance_stars(p) for p in (0.00005, 0.0005, 0.005, 0.05, 0.051)] == [
        "****", "***", "**", "*", "ns",
    ]  # fmt: skip
    rng = np.random.default_rng(8)
    groups = {"AD": rng.normal(0, 1, 15), "LBD": rng.normal(5, 1, 15), "FTLD": rng.normal(0.1, 1, 4)}
    out = pairwise_group_tests(groups, 0.05)
    assert [(c.group_a, c.group_b) for c in out] == [("AD", "LBD"), ("AD", "FTLD"), ("LBD", "FTLD")]
    ad_lbd = out[0]
    assert ad_lbd.bh_rejected and ad_lbd.stars != "ns"
    assert all(c.stars == "ns" for c in out if not c.bh_rejected)


# --- normalisation -----------------------------------------------------------


def test_intensity_normalisation():
    x = np.array([[[1.0, 3.0], [5.0, 9.0]]])
    s = standardize_minmax(x)
    assert s.min() == 0.0 and s.max() == 1.0
    assert np.allclose(s, (x - 1) / 8)
    r = rescale_0_1000(x)
    assert r.max() == 1000.0 and r[0, 0, 1] == 250.0
    with pytest.raises(ValueError):
        rescale_0_1000(np.ones((2, 2, 2)))


# --- ratings and mapping -----------------------------------------------------


def test_region_mapping_covers_landmarks():
    mapping = load_region_mapping()
    assert set(mapping) == set(LANDMARK_NAMES)
    assert mapping["midfrontal"] == ("Middle frontal gyrus", True)
    assert mapping["superior_parietal"][1] is False


def test_ratings_table(tmp_path):
    (tmp_path / "r.csv").write_text(
        "subject,region,ptau,abeta,tdp43,asyn,neuronloss\n"
        "S1,Occipital cortex,0.5,1,,0,3\n"
    )
    (tmp_path / "g.csv").write_text("subject,a_score,b_score,c_score,braak06\nS1,2,3,,6\n")
    t = RatingsTable.read(tmp_path / "r.csv", tmp_path / "g.csv")
    assert t.regional_value("S1", "Occipital cortex", "ptau") == 0.5
    assert t.regional_value("S1", "Occipital cortex", "tdp43") is None
    assert t.global_value("S1", "braak06") == 6
    (tmp_path / "bad.csv").write_text("subject,region,ptau,abeta,tdp43,asyn,neuronloss\nS1,X,1.5,1,1,1,1\n")
    with pytest.raises(ValueError):
        RatingsTable.read(tmp_path / "bad.csv")
    (tmp_path / "badg.csv").write_text("subject,a_score,b_score,c_score,braak06\nS1,4,0,0,0\n")
    with pytest.raises(ValueError):
        RatingsTable.read(globals_path=tmp_path / "badg.csv")


# --- invariances -------------------------------------------------------------


def test_spearman_monotone_invariance():
    rng = np.random.default_rng(9)
    for _ in range(30):
        x, y = rng.normal(size=12), rng.normal(size=12)
        base = spearman(x, y)
        for f in (np.exp, lambda v: v**3 + 2 * v, lambda v: 5 * v - 1):
            other = spearman(f(x), y)
            assert other.rho == base.rho and other.p == base.p


def test_icc_offset_invariance():
    rng = np.random.default_rng(10)
    for _ in range(30):
        m = rng.integers(0, 64, (8, 3)) / 8.0
        if np.ptp(m.mean(axis=1)) == 0:
            continue
        shifted = m + np.array([0.0, 2.5, -1.25])
        assert icc_average_fixed_raters(shifted).icc == icc_average_fixed_raters(m).icc
