"""Weighted Gower dissimilarity over a feature subset.

Numeric differences are divided by the column range stored in the dataset
metadata (the range over all rows of the finalized table, not over whatever
subset is being compared). Binary features count a mismatch as 1; a 0/0 match
counts as agreement.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .dataset import ColumnMeta, Dataset
from .errors import ConfigError


@dataclass
class DissimilarityMatrix:
    values: np.ndarray

    @property
    def size(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class FeatureWeights:
    features: tuple[int, ...]
    weights: tuple[float, ...]

    def __post_init__(self):
        if len(self.features) != len(self.weights):
            raise ConfigError("one weight per feature is required")
        w = np.asarray(self.weights, dtype=np.float64)
        if w.size and not (np.all(np.isfinite(w)) and np.all(w > 0)):
            raise ConfigError("feature weights must be finite and positive")

    def as_array(self) -> np.ndarray:
        return np.asarray(self.weights, dtype=np.float64)

    def of(self, feature: int) -> float:
        return self.weights[self.features.index(feature)]


def _feature_list(features) -> list[int]:
    feats = sorted(int(f) for f in features)
    if not feats:
        raise ConfigError("feature set is empty")
    return feats


def _ranges(metas: list[ColumnMeta]) -> np.ndarray:
    r = np.array([1.0 if c.is_binary else c.range for c in metas])
    for c, v in zip(metas, r):
        if not v > 0:
            raise ConfigError(f"numeric column {c.name!r} has zero range")
    return r


def gower_pair(row_a, row_b, metas, weights) -> float:
    """Gower dissimilarity of two rows that are already restricted to ``metas``."""
    a = np.asarray(row_a, dtype=np.float64)
    b = np.asarray(row_b, dtype=np.float64)
    w = weights.as_array() if isinstance(weights, FeatureWeights) else np.asarray(weights, float)
    if not (a.shape == b.shape == w.shape == (len(metas),)):
        raise ConfigError("rows, metadata and weights must have the same length")
    ranges = _ranges(metas)
    binary = np.array([c.is_binary for c in metas], dtype=bool)
    d = np.where(binary, (a != b).astype(np.float64), np.abs(a - b) / ranges)
    return float(min(np.dot(w, d) / w.sum(), 1.0))


def mean_pair_dissimilarity(col: np.ndarray, meta: ColumnMeta) -> float:
    """Mean of d_f over all unordered row pairs, computed exactly in O(m log m)."""
    m = col.shape[0]
    npairs = m * (m - 1) / 2.0
    if meta.is_binary:
        ones = float(np.count_nonzero(col == 1.0))
        return ones * (m - ones) / npairs
    x = np.sort(col)
    # sum_{i<j} (x_j - x_i) = sum_j x_j * (2j - m + 1)
    coef = 2.0 * np.arange(m) - m + 1.0
    return float(np.dot(coef, x)) / meta.range / npairs


def balanced_weights(data: Dataset, features) -> FeatureWeights:
    """Numeric weights 1; binary weights D_num / D_bin so both blocks contribute equally on average."""
    feats = _feature_list(features)
    metas = [data.columns[f] for f in feats]
    _ranges(metas)
    binary = [c.is_binary for c in metas]
    if all(binary) or not any(binary):
        return FeatureWeights(tuple(feats), (1.0,) * len(feats))
    means = np.array([mean_pair_dissimilarity(data.values[:, f], data.columns[f]) for f in feats])
    binary = np.array(binary)
    d_num = means[~binary].mean()
    d_bin = means[binary].mean()
    w_b = d_num / d_bin if d_bin > 0 and d_num > 0 else 1.0
    return FeatureWeights(tuple(feats), tuple(np.where(binary, w_b, 1.0).tolist()))


def gower_matrix(data: Dataset, features, weights: FeatureWeights | None = None,
                 kernel=None) -> DissimilarityMatrix:
    """Pairwise weighted Gower dissimilarities of the rows of ``data``."""
    feats = _feature_list(features)
    if data.m < 2:
        raise ConfigError("need at least 2 rows")
    if weights is None:
        weights = balanced_weights(data, feats)
    if sorted(weights.features) != feats:
        raise ConfigError("weights do not cover the requested features")
    metas = [data.columns[f] for f in feats]
    w = np.array([weights.of(f) for f in feats])
    values = np.ascontiguousarray(data.values[:, feats])
    is_binary = np.array([c.is_binary for c in metas], dtype=np.bool_)
    kernel = kernel or _kernels.gower_kernel
    return DissimilarityMatrix(kernel(values, is_binary, _ranges(metas), w))


def write_matrix(d: DissimilarityMatrix, path) -> None:
    """Dense row-major text, 17 significant digits."""
    np.savetxt(path, d.values, fmt="%.17g")


def read_matrix(path) -> DissimilarityMatrix:
    return DissimilarityMatrix(np.atleast_2d(np.loadtxt(path, dtype=np.float64)))
