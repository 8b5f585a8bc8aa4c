import json
import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats as ss
from scipy import special as sp

from wristemg.errors import StatsError
from wristemg.stats import (
    compare_conditions,
    one_way_anova,
    pearson_regression,
    shapiro_wilk,
    tukey_hsd,
)
from wristemg.stats.special import (
    betainc,
    f_sf,
    range_cdf_normal,
    studentized_range_cdf,
    studentized_range_ppf,
    t_ppf_two_sided,
    t_sf_two_sided,
)

mpmath.mp.dps = 40


def _mp_betainc(a, b, x):
    return float(mpmath.betainc(a, b, 0, x, regularized=True))


BETA_GRID = [(a, b, x) for a in (0.5, 1.0, 2.5, 10.0, 60.0) for b in (0.5, 1.0, 3.0, 25.0)
             for x in (1e-6, 0.01, 0.2, 0.5, 0.8, 0.99, 1 - 1e-6)]


@pytest.mark.parametrize("a,b,x", BETA_GRID)
def test_betainc_against_mpmath(a, b, x):
    assert abs(betainc(a, b, x) - _mp_betainc(a, b, x)) < 1e-10


def test_betainc_edges_and_errors():
    assert betainc(2, 3, 0.0) == 0.0 and betainc(2, 3, 1.0) == 1.0
    for args in ((0, 1, 0.5), (1, -1, 0.5), (1, 1, 1.5)):
        with pytest.raises(StatsError):
            betainc(*args)


@settings(max_examples=200, deadline=None)
@given(st.floats(0.1, 200), st.floats(0.1, 200), st.floats(0, 1))
def test_betainc_property_vs_scipy(a, b, x):
    assert abs(betainc(a, b, x) - sp.betainc(a, b, x)) < 1e-10


@pytest.mark.parametrize("f,d1,d2", [(3.0, 2, 3), (0.5, 4, 30), (12.0, 5, 54), (1e-3, 1, 1), (100.0, 3, 7)])
def test_f_sf(f, d1, d2):
    assert f_sf(f, d1, d2) == pytest.approx(ss.f.sf(f, d1, d2), abs=1e-12)


@pytest.mark.parametrize("t,df", [(0.0, 5), (1.3, 2), (-2.5, 10), (4.0, 97), (30.0, 3)])
def test_t_tails(t, df):
    assert t_sf_two_sided(t, df) == pytest.approx(2 * ss.t.sf(abs(t), df), abs=1e-12)


def test_t_ppf():
    for df in (1, 4, 27, 300):
        assert t_ppf_two_sided(0.05, df) == pytest.approx(ss.t.ppf(0.975, df), abs=1e-9)


def test_range_distribution_k2_closed_form():
    # range of two standard normals is |N(0, 2)|
    w = np.array([0.1, 1.0, 2.5, 5.0])
    np.testing.assert_allclose(range_cdf_normal(w, 2), 2 * ss.norm.cdf(w / math.sqrt(2)) - 1, atol=1e-10)
    assert range_cdf_normal(np.array([-1.0, 0.0]), 3).tolist() == [0.0, 0.0]


@pytest.mark.parametrize("q,k,df", [(3.5, 3, 10), (2.0, 5, 20), (4.2, 4, 54), (1.0, 2, 5), (6.0, 6, 9)])
def test_studentized_range_vs_scipy(q, k, df):
    assert studentized_range_cdf(q, k, df) == pytest.approx(ss.studentized_range.cdf(q, k, df), abs=1e-7)


def test_studentized_range_ppf():
    for k, df in ((3, 10), (4, 54), (6, 120)):
        assert studentized_range_ppf(0.95, k, df) == pytest.approx(ss.studentized_range.ppf(0.95, k, df), abs=1e-6)


SW_SAMPLES = [
    [2.1, 3.4, 1.9],
    [1.0, 2.0, 4.0, 8.0],
    [148, 154, 158, 160, 161, 162, 166, 170, 182, 195, 236],
    list(np.random.default_rng(0).standard_normal(10)),
    list(np.random.default_rng(1).standard_normal(30)),
    list(np.random.default_rng(2).exponential(size=50)),
    list(np.random.default_rng(3).uniform(size=200)),
]


@pytest.mark.parametrize("x", SW_SAMPLES)
def test_shapiro_vs_scipy(x):
    res = shapiro_wilk(x)
    ref = ss.shapiro(x)
    assert res.statistic == pytest.approx(ref.statistic, abs=1e-6)
    assert res.p_value == pytest.approx(ref.pvalue, abs=1e-3)


def test_shapiro_errors():
    with pytest.raises(StatsError):
        shapiro_wilk([1.0, 2.0])
    with pytest.raises(StatsError):
        shapiro_wilk([3.0, 3.0, 3.0, 3.0])


def test_anova_hand_fixture():
    res = one_way_anova([[1, 2, 3], [3, 4, 5]])
    # grand mean 3, SSB = 3*1 + 3*1 = 6, SSW = 2 + 2 = 4, F = 6 / (4/4) = 6
    assert res.statistic == pytest.approx(6.0, abs=1e-12)
    res = one_way_anova([[1, 3], [2, 4], [5, 7]])
    # group means 2, 3, 6; grand 11/3; SSB = 2*(25/9 + 4/9 + 49/9) = 52/3; SSW = 6; F = (26/3)/2
    assert res.statistic == pytest.approx(13 / 3, abs=1e-12)
    res = one_way_anova([[0, 2], [1, 3], [4, 6]])
    assert res.statistic == pytest.approx(ss.f_oneway([0, 2], [1, 3], [4, 6]).statistic, abs=1e-12)


def test_anova_f3_fixture():
    groups = [[1, 2, 3], [2, 3, 4], [3, 4, 5]]
    res = one_way_anova(groups)
    assert res.statistic == pytest.approx(3.0, abs=1e-12)
    assert res.p_value == pytest.approx(0.125, abs=1e-12)
    assert res.extras["df_between"] == 2 and res.extras["df_within"] == 6


@pytest.mark.parametrize("seed", range(5))
def test_anova_vs_scipy(seed):
    rng = np.random.default_rng(seed)
    groups = [rng.normal(loc, 1, size) for loc, size in zip((0, 0.5, 1.2, 0.3), (5, 8, 6, 10))]
    res = one_way_anova(groups)
    ref = ss.f_oneway(*groups)
    assert res.statistic == pytest.approx(ref.statistic, abs=1e-6)
    assert res.p_value == pytest.approx(ref.pvalue, abs=1e-6)


def test_anova_degenerate():
    res = one_way_anova([[1, 1], [2, 2]])
    assert math.isinf(res.statistic) and res.p_value == 0.0 and res.warnings
    with pytest.raises(StatsError):
        one_way_anova([[1, 1], [1, 1]])
    with pytest.raises(StatsError):
        one_way_anova([[1, 2, 3]])
    with pytest.raises(StatsError):
        one_way_anova([[1, 2], [3]])


@pytest.mark.parametrize("seed", range(3))
def test_tukey_vs_scipy(seed):
    rng = np.random.default_rng(seed)
    groups = [rng.normal(loc, 1, size) for loc, size in zip((0, 1.0, 1.5), (7, 9, 8))]
    res = tukey_hsd(groups)
    ref = ss.tukey_hsd(*groups)
    ci = ref.confidence_interval(0.95)
    for pr in res.extras["pairs"]:
        i, j = int(pr["group_a"]), int(pr["group_b"])
        assert pr["p"] == pytest.approx(ref.pvalue[i, j], abs=1e-3)
        assert pr["mean_diff"] == pytest.approx(ref.statistic[i, j], abs=1e-12)
        assert pr["ci_low"] == pytest.approx(ci.low[i, j], abs=1e-6)
        assert pr["ci_high"] == pytest.approx(ci.high[i, j], abs=1e-6)
        t = ss.ttest_ind(groups[i], groups[j])
        # plain t uses the pooled within-group variance of all groups, so only check sign and ordering
        assert np.sign(pr["mean_diff"]) == np.sign(t.statistic)
        assert pr["t_ci_low"] < pr["mean_diff"] < pr["t_ci_high"]


def test_tukey_labels_and_alpha():
    res = tukey_hsd([[1, 2, 3], [5, 6, 7], [1.5, 2.5, 3.5]], alpha=0.01, labels=["A", "B", "C"])
    names = [(p["group_a"], p["group_b"]) for p in res.extras["pairs"]]
    assert names == [("A", "B"), ("A", "C"), ("B", "C")]
    assert res.extras["alpha"] == 0.01
    assert res.extras["pairs"][0]["reject"] and not res.extras["pairs"][1]["reject"]


@pytest.mark.parametrize("seed", range(5))
def test_regression_vs_scipy(seed):
    rng = np.random.default_rng(seed)
    x = rng.uniform(0, 5, 25)
    y = 0.3 * x + rng.normal(0, 1, 25)
    res = pearson_regression(x, y)
    ref = ss.linregress(x, y)
    assert res.extras["slope"] == pytest.approx(ref.slope, abs=1e-6)
    assert res.extras["intercept"] == pytest.approx(ref.intercept, abs=1e-6)
    assert res.extras["R"] == pytest.approx(ref.rvalue, abs=1e-6)
    assert res.p_value == pytest.approx(ref.pvalue, abs=1e-6)


def test_regression_edges():
    res = pearson_regression([1, 2, 3, 4], [2, 4, 6, 8])
    assert res.extras["R"] == 1.0 and res.p_value == 0.0 and res.extras["p_below_floor"]
    res = pearson_regression([1, 2, 3], [5, 5, 5])
    assert res.extras["R"] == 0.0 and res.p_value == 1.0 and res.warnings
    with pytest.raises(StatsError):
        pearson_regression([2, 2, 2], [1, 2, 3])
    with pytest.raises(StatsError):
        pearson_regression([1, 2], [1, 2])


def test_result_serialization_and_provenance():
    a = one_way_anova([[1, 2, 3], [2, 3, 4], [3, 4, 5]])
    b = one_way_anova([[1, 2, 3], [2, 3, 4], [3, 4, 5]])
    c = one_way_anova([[1, 2, 3], [2, 3, 4], [3, 4, 6]])
    assert a.provenance["inputs_digest"] == b.provenance["inputs_digest"] != c.provenance["inputs_digest"]
    doc = json.loads(a.to_json())
    assert doc["test"] == "one_way_anova" and doc["statistic"] == 3.0


def test_compare_conditions():
    rng = np.random.default_rng(0)
    groups = {"All": list(rng.normal(0.9, 0.02, 10)), "Ext.": list(rng.normal(0.8, 0.02, 10)),
              "Fle.": list(rng.exponential(0.05, 10) + 0.7)}
    out = compare_conditions(groups)
    assert out["conditions"] == ["All", "Ext.", "Fle."]
    assert set(out["normality"]) == set(groups)
    assert out["anova"]["p_value"] < 1e-6
    assert [p["group_a"] for p in out["tukey"]["extras"]["pairs"]] == ["All", "All", "Ext."]
    out = compare_conditions({"a": [1, 1], "b": [1, 1]})
    assert "error" in out["anova"]
