import csv
import json
import logging
import math
from pathlib import Path

import numpy as np
import pytest
import scipy.stats
from hypothesis import given
from hypothesis import strategies as st

from oracles import holm_naive
from phenoglrm.dataset import ColumnKind, ColumnMeta, Dataset, finalize
from phenoglrm.errors import ConfigError, ShapeError
from phenoglrm.stats import (
    Method, chi_squared_cdf_complement, holm_adjust, kruskal_wallis, mann_whitney_u,
    pearson_chi_squared, profile_clusters, quartiles, write_profile,
)

FROZEN = json.loads((Path(__file__).parent / "data" / "frozen.json").read_text())


# --------------------------------------------------------------------------
# chi-squared tail

def test_tail_examples():
    assert chi_squared_cdf_complement(0.0, 3) == 1.0
    assert chi_squared_cdf_complement(2 * math.log(2), 2) == pytest.approx(0.5, abs=1e-12)
    assert chi_squared_cdf_complement(3.841, 1) == pytest.approx(0.05, abs=1e-4)
    assert chi_squared_cdf_complement(3.841, 1) == pytest.approx(math.erfc(math.sqrt(3.841 / 2)), abs=1e-12)


def test_tail_errors():
    with pytest.raises(ConfigError):
        chi_squared_cdf_complement(1.0, 0.0)
    with pytest.raises(ConfigError):
        chi_squared_cdf_complement(-1.0, 2.0)


@pytest.mark.parametrize("case", FROZEN["chi2"], ids=lambda c: f"x{c['x']}-df{c['df']}")
def test_tail_frozen(case):
    assert abs(chi_squared_cdf_complement(case["x"], case["df"]) - case["q"]) <= 1e-10


@given(st.floats(0, 50))
def test_tail_df2_closed_form(x):
    assert abs(chi_squared_cdf_complement(x, 2) - math.exp(-x / 2)) <= 1e-10


# --------------------------------------------------------------------------
# Kruskal-Wallis

def test_kw_examples():
    r = kruskal_wallis([[1, 2, 3], [4, 5, 6], [7, 8, 9]])
    assert r.statistic == pytest.approx(7.2, abs=1e-12) and r.df == 2
    assert r.method is Method.KRUSKAL_WALLIS
    assert kruskal_wallis([[1, 2], [1, 2]]).p_value > 0.05
    tied = kruskal_wallis([[3, 3], [3, 3, 3]])
    assert (tied.statistic, tied.p_value) == (0.0, 1.0)


def test_kw_errors():
    with pytest.raises(ConfigError):
        kruskal_wallis([[1, 2], []])
    with pytest.raises(ConfigError):
        kruskal_wallis([[1, 2, 3]])
    with pytest.raises(ConfigError):
        kruskal_wallis([[1], [2]])


@pytest.mark.parametrize("case", FROZEN["kruskal"], ids=lambda c: str(len(c["groups"])))
def test_kw_frozen(case):
    r = kruskal_wallis(case["groups"])
    assert r.statistic == pytest.approx(case["H"], rel=1e-12)
    assert r.p_value == pytest.approx(case["p"], abs=1e-10)


@given(st.lists(st.lists(st.integers(-5, 5), min_size=1, max_size=8), min_size=2, max_size=4))
def test_kw_monotone_invariance(groups):
    if sum(len(g) for g in groups) < 3:
        return
    a = kruskal_wallis(groups)
    b = kruskal_wallis([[math.exp(x / 3.0) * 7 - 2 for x in g] for g in groups])
    assert abs(a.statistic - b.statistic) <= 1e-12
    assert a.statistic >= 0 and 0 <= a.p_value <= 1


# --------------------------------------------------------------------------
# Pearson chi-squared

def test_pearson_examples():
    r = pearson_chi_squared([[10, 10], [10, 10]])
    assert (r.statistic, r.p_value) == (0.0, 1.0)
    r = pearson_chi_squared([[20, 0], [0, 20]])
    assert r.statistic == pytest.approx(40.0) and r.df == 1
    assert r.method is Method.CHI_SQUARED


def test_pearson_matches_scipy():
    table = np.array([[12, 30], [25, 14], [8, 20], [30, 2]])
    r = pearson_chi_squared(table)
    ref = scipy.stats.chi2_contingency(table, correction=False)
    assert r.statistic == pytest.approx(ref[0], rel=1e-12)
    assert r.p_value == pytest.approx(ref[1], abs=1e-12)
    assert r.df == ref[2]


def test_pearson_errors_and_warning(caplog):
    with pytest.raises(ConfigError):
        pearson_chi_squared([[0, 0], [1, 2]])
    with pytest.raises(ConfigError):
        pearson_chi_squared([[-1, 2], [1, 2]])
    with pytest.raises(ShapeError):
        pearson_chi_squared([[1, 2]])
    with caplog.at_level(logging.WARNING):
        pearson_chi_squared([[1, 2], [3, 1]])
    assert "small_expected_count" in caplog.text


@given(st.integers(0, 2**31 - 1))
def test_pearson_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    table = rng.integers(1, 30, size=(int(rng.integers(2, 5)), int(rng.integers(2, 4))))
    a = pearson_chi_squared(table)
    b = pearson_chi_squared(table[rng.permutation(table.shape[0])][:, rng.permutation(table.shape[1])])
    assert a.statistic == pytest.approx(b.statistic, rel=1e-12)


# --------------------------------------------------------------------------
# Mann-Whitney

def test_mw_examples():
    r = mann_whitney_u([1, 2], [3, 4])
    assert r.statistic == 0.0 and r.method is Method.MANN_WHITNEY
    # z = (|0 - 2| - 0.5) / sqrt(4 * 5 / 12)
    assert r.p_value == pytest.approx(math.erfc(1.5 / math.sqrt(20 / 12) / math.sqrt(2)))
    same = mann_whitney_u([1, 5, 3], [3, 1, 5])
    assert same.statistic == 4.5 and same.p_value == pytest.approx(1.0)
    rng = np.random.default_rng(0)
    b = rng.normal(size=50)
    assert mann_whitney_u(b + 5.0, b).p_value < 0.001


@given(st.lists(st.integers(0, 6), min_size=1, max_size=12),
       st.lists(st.integers(0, 6), min_size=1, max_size=12))
def test_mw_matches_scipy_asymptotic(a, b):
    r = mann_whitney_u(a, b)
    if len(set(a + b)) == 1:
        assert r.p_value == 1.0
        return
    ref = scipy.stats.mannwhitneyu(a, b, alternative="two-sided", method="asymptotic", use_continuity=True)
    assert r.statistic == ref.statistic
    assert r.p_value == pytest.approx(ref.pvalue, abs=1e-12)


def test_mw_errors():
    with pytest.raises(ConfigError):
        mann_whitney_u([], [1.0])


# --------------------------------------------------------------------------
# Holm

def test_holm_examples():
    assert holm_adjust([0.01, 0.04, 0.03]) == pytest.approx([0.03, 0.06, 0.06])
    assert holm_adjust([0.2]) == [0.2]
    assert holm_adjust([1.0, 1.0]) == [1.0, 1.0]
    with pytest.raises(ConfigError):
        holm_adjust([0.5, 1.5])


@given(st.lists(st.floats(0, 1), min_size=1, max_size=15))
def test_holm_properties(p):
    adj = holm_adjust(p)
    assert adj == pytest.approx(holm_naive(p), abs=1e-15)
    assert all(a >= x for a, x in zip(adj, p))
    order = np.argsort(p, kind="stable")
    assert np.all(np.diff(np.asarray(adj)[order]) >= 0)


@given(st.lists(st.floats(0, 1), min_size=1, max_size=15))
def test_holm_saturated_list_is_fixed_point(p):
    # re-adjusting multiplies again, so only lists saturated at the cap are fixed points
    adj = holm_adjust(p)
    if all(a == 1.0 for a in adj):
        assert holm_adjust(adj) == adj


# --------------------------------------------------------------------------
# profiles

def test_quartiles():
    assert quartiles([1, 2, 3, 4]) == (1.75, 2.5, 3.25)


def _profile_data():
    rng = np.random.default_rng(5)
    labels = np.repeat([0, 1, 2, 3], 25)
    num = rng.normal(size=100) + 3.0 * labels
    noise = rng.normal(size=100)
    binary = (labels % 2).astype(float)
    binary[:25] = 0.0
    values = np.column_stack([num, noise, binary])
    cols = [ColumnMeta("num", ColumnKind.NUMERIC, "num"), ColumnMeta("noise", ColumnKind.NUMERIC, "noise"),
            ColumnMeta("flag", ColumnKind.BINARY, "flag")]
    ds = finalize(Dataset([str(i) for i in range(100)], cols, values, np.zeros(values.shape, dtype=bool)))
    return ds, labels


def test_profile_clusters(tmp_path):
    ds, labels = _profile_data()
    prof = profile_clusters(ds, labels)
    assert prof.clusters == [0, 1, 2, 3] and prof.sizes == [25] * 4
    num, noise, flag = prof.features
    assert num.test.p_value < 0.001 and len(num.posthoc) == 6
    assert all(p <= 1 for p in num.posthoc.values())
    assert noise.test.p_value > 0.05 and noise.posthoc == {}
    assert flag.kind == "binary" and flag.test.p_value < 0.001
    assert flag.cells[0] == (0.0, 0.0)
    assert sum(c for _, c in flag.cells) == ds.values[:, 2].sum()
    for fp in (num, noise):
        assert all(iqr >= 0 for _, iqr in fp.cells)
    assert all(0 <= pct <= 100 for pct, _ in flag.cells)
    write_profile(prof, tmp_path / "p.csv")
    rows = list(csv.reader(open(tmp_path / "p.csv")))
    assert rows[0][:4] == ["feature", "kind", "summary", "cluster_0 (n=25)"]
    assert [r[0] for r in rows[1:]] == ["num", "noise", "flag"]


def test_profile_errors():
    ds, labels = _profile_data()
    with pytest.raises(ShapeError):
        profile_clusters(ds, labels[:10])
    with pytest.raises(ConfigError):
        profile_clusters(ds, np.zeros(100, dtype=int))
