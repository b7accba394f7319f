"""Rank tests, chi-squared tests, Holm adjustment and per-cluster profile tables."""
from __future__ import annotations

import csv
import enum
import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .dataset import Dataset
from .errors import ConfigError, ShapeError

log = logging.getLogger(__name__)

_EPS = 1e-16
_TINY = 1e-300
_MAX_TERMS = 10_000


class Method(str, enum.Enum):
    KRUSKAL_WALLIS = "kruskal_wallis"
    CHI_SQUARED = "chi_squared"
    MANN_WHITNEY = "mann_whitney"


@dataclass(frozen=True)
class StatResult:
    statistic: float
    df: float
    p_value: float
    method: Method


def _tie_term(ranks_source: np.ndarray) -> float:
    """Sum of t^3 - t over tie groups."""
    _, counts = np.unique(ranks_source, return_counts=True)
    counts = counts.astype(np.float64)
    return float(np.sum(counts ** 3 - counts))


# --------------------------------------------------------------------------
# chi-squared tail

def _lower_series(a: float, x: float) -> float:
    """Regularized lower incomplete gamma P(a, x) by its power series."""
    term = 1.0 / a
    total = term
    ap = a
    for _ in range(_MAX_TERMS):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _EPS:
            break
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _upper_fraction(a: float, x: float) -> float:
    """Regularized upper incomplete gamma Q(a, x) by Lentz's continued fraction."""
    b = x + 1.0 - a
    c = 1.0 / _TINY
    d = 1.0 / b
    h = d
    for i in range(1, _MAX_TERMS):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < _TINY:
            d = _TINY
        c = b + an / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            break
    return h * math.exp(-x + a * math.log(x) - math.lgamma(a))


def chi_squared_cdf_complement(x: float, df: float) -> float:
    """P(chi2_df > x) = Q(df/2, x/2)."""
    if not df > 0:
        raise ConfigError("df must be > 0")
    if not x >= 0:
        raise ConfigError("x must be >= 0")
    if x == 0:
        return 1.0
    a, h = df / 2.0, x / 2.0
    if x < df + 1.0:
        q = 1.0 - _lower_series(a, h)
    else:
        q = _upper_fraction(a, h)
    return min(max(q, 0.0), 1.0)


# --------------------------------------------------------------------------
# tests

def kruskal_wallis(groups) -> StatResult:
    """Kruskal-Wallis H on mid-ranks with the tie correction; all-tied data gives H=0, p=1."""
    groups = [np.asarray(g, dtype=np.float64).ravel() for g in groups]
    if len(groups) < 2:
        raise ConfigError("need at least 2 groups")
    if any(g.size == 0 for g in groups):
        raise ConfigError("every group must be nonempty")
    pooled = np.concatenate(groups)
    N = pooled.size
    if N < 3:
        raise ConfigError("need at least 3 observations in total")
    df = len(groups) - 1
    correction = 1.0 - _tie_term(pooled) / (N ** 3 - N)
    if correction <= 0.0:
        return StatResult(0.0, df, 1.0, Method.KRUSKAL_WALLIS)
    ranks = rankdata(pooled)
    bounds = np.cumsum([0] + [g.size for g in groups])
    rank_term = sum(ranks[lo:hi].sum() ** 2 / (hi - lo) for lo, hi in zip(bounds[:-1], bounds[1:]))
    H = 12.0 / (N * (N + 1)) * rank_term - 3.0 * (N + 1)
    H = max(float(H) / correction, 0.0)
    return StatResult(H, df, chi_squared_cdf_complement(H, df), Method.KRUSKAL_WALLIS)


def pearson_chi_squared(contingency) -> StatResult:
    """Pearson X^2 for independence, no continuity correction."""
    O = np.asarray(contingency, dtype=np.float64)
    if O.ndim != 2 or min(O.shape) < 2:
        raise ShapeError(f"contingency table must be at least 2x2, got {O.shape}")
    if np.any(O < 0) or np.any(O != np.round(O)):
        raise ConfigError("contingency counts must be nonnegative integers")
    rows, cols = O.sum(axis=1), O.sum(axis=0)
    if np.any(rows == 0) or np.any(cols == 0):
        raise ConfigError("contingency table has an empty row or column")
    E = np.outer(rows, cols) / O.sum()
    if np.any(E < 5):
        log.warning(json.dumps({"event": "small_expected_count", "min_expected": float(E.min())}))
    X2 = float(np.sum((O - E) ** 2 / E))
    df = (O.shape[0] - 1) * (O.shape[1] - 1)
    return StatResult(X2, df, chi_squared_cdf_complement(X2, df), Method.CHI_SQUARED)


def mann_whitney_u(a, b) -> StatResult:
    """Two-sided Mann-Whitney U test by normal approximation.

    The statistic is U of ``a``. The variance is tie-corrected and a continuity
    correction of 0.5 is applied.
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    na, nb = a.size, b.size
    if na == 0 or nb == 0:
        raise ConfigError("both samples must be nonempty")
    pooled = np.concatenate([a, b])
    N = na + nb
    U = float(rankdata(pooled)[:na].sum() - na * (na + 1) / 2.0)
    mu = na * nb / 2.0
    var = na * nb / 12.0 * ((N + 1) - _tie_term(pooled) / (N * (N - 1)))
    if var <= 0.0:
        return StatResult(U, 1, 1.0, Method.MANN_WHITNEY)
    z = max(abs(U - mu) - 0.5, 0.0) / math.sqrt(var)
    return StatResult(U, 1, min(math.erfc(z / math.sqrt(2.0)), 1.0), Method.MANN_WHITNEY)


def holm_adjust(p_values) -> list[float]:
    """Holm step-down adjusted p-values, in the input order."""
    p = np.asarray(p_values, dtype=np.float64)
    if np.any((p < 0) | (p > 1)) or np.any(np.isnan(p)):
        raise ConfigError("p-values must lie in [0, 1]")
    n = p.size
    order = np.argsort(p, kind="stable")
    adj = np.minimum(np.maximum.accumulate((n - np.arange(n)) * p[order]), 1.0)
    out = np.empty(n)
    out[order] = adj
    return out.tolist()


# --------------------------------------------------------------------------
# profiles

@dataclass
class FeatureProfile:
    feature: str
    kind: str
    # one entry per cluster: (median, iqr) for numeric, (percent, count) for binary
    cells: list[tuple[float, float]]
    test: StatResult
    posthoc: dict[tuple, float] = field(default_factory=dict)


@dataclass
class ClusterProfile:
    clusters: list
    sizes: list[int]
    features: list[FeatureProfile]


def quartiles(values) -> tuple[float, float, float]:
    """25th, 50th and 75th percentiles by linear interpolation between order statistics."""
    q1, q2, q3 = np.percentile(np.asarray(values, dtype=np.float64), [25, 50, 75], method="linear")
    return float(q1), float(q2), float(q3)


def profile_clusters(data: Dataset, labels, features=None, alpha: float = 0.05) -> ClusterProfile:
    """Per-cluster summaries and between-cluster tests for each feature.

    Numeric features get median/IQR, Kruskal-Wallis and, when it is
    significant at ``alpha``, Holm-adjusted pairwise Mann-Whitney tests. Binary
    features get percent/count and a Pearson chi-squared test.
    """
    labels = np.asarray(labels)
    if labels.shape != (data.m,):
        raise ShapeError("labels must cover every row")
    clusters = sorted(set(labels.tolist()))
    if len(clusters) < 2:
        raise ConfigError("profiling needs at least 2 clusters")
    masks = [labels == c for c in clusters]
    feats = range(data.n) if features is None else sorted(int(f) for f in features)
    out = []
    for f in feats:
        meta = data.columns[f]
        col = data.values[:, f]
        groups = [col[mk] for mk in masks]
        if meta.is_binary:
            counts = [int(np.count_nonzero(g == 1.0)) for g in groups]
            cells = [(100.0 * c / g.size, float(c)) for c, g in zip(counts, groups)]
            table = np.array([[g.size - c, c] for c, g in zip(counts, groups)])
            keep = table.sum(axis=0) > 0
            if keep.sum() < 2:
                test = StatResult(0.0, len(clusters) - 1, 1.0, Method.CHI_SQUARED)
            else:
                test = pearson_chi_squared(table)
            out.append(FeatureProfile(meta.name, "binary", cells, test))
            continue
        cells = []
        for g in groups:
            q1, q2, q3 = quartiles(g)
            cells.append((q2, q3 - q1))
        test = kruskal_wallis(groups)
        posthoc = {}
        if test.p_value < alpha:
            pairs = [(i, j) for i in range(len(clusters)) for j in range(i + 1, len(clusters))]
            raw = [mann_whitney_u(groups[i], groups[j]).p_value for i, j in pairs]
            posthoc = {(clusters[i], clusters[j]): p for (i, j), p in zip(pairs, holm_adjust(raw))}
        out.append(FeatureProfile(meta.name, "numeric", cells, test, posthoc))
    return ClusterProfile(clusters, [int(mk.sum()) for mk in masks], out)


def write_profile(profile: ClusterProfile, path) -> None:
    """One row per feature: per-cluster ``median|iqr`` or ``percent|count`` cells, test and post-hoc p."""
    header = ["feature", "kind", "summary"]
    header += [f"cluster_{c} (n={n})" for c, n in zip(profile.clusters, profile.sizes)]
    header += ["test", "statistic", "df", "p_value", "posthoc_holm"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for fp in profile.features:
            summary = "median|iqr" if fp.kind == "numeric" else "percent|count"
            cells = [f"{a:.6g}|{b:.6g}" if fp.kind == "numeric" else f"{a:.4g}|{int(b)}"
                     for a, b in fp.cells]
            posthoc = ";".join(f"{i}-{j}:{p:.6g}" for (i, j), p in fp.posthoc.items())
            w.writerow([fp.feature, fp.kind, summary, *cells, fp.test.method.value,
                        f"{fp.test.statistic:.17g}", f"{fp.test.df:g}",
                        f"{fp.test.p_value:.17g}", posthoc])
