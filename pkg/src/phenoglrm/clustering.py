"""PAM k-medoids and silhouette scoring on a dissimilarity matrix."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .dissimilarity import DissimilarityMatrix
from .errors import ConfigError

SWAP_MAX_ITER = 10_000


@dataclass
class ClusterAssignment:
    """Labels are numbered by ascending medoid row: cluster c has medoid ``medoids[c]``."""

    labels: np.ndarray
    medoids: np.ndarray
    n_clusters: int
    silhouette: float
    cost: float


def _matrix(d) -> np.ndarray:
    values = d.values if isinstance(d, DissimilarityMatrix) else np.asarray(d, dtype=np.float64)
    if values.ndim != 2 or values.shape[0] != values.shape[1]:
        raise ConfigError(f"dissimilarity matrix must be square, got {values.shape}")
    return np.ascontiguousarray(values, dtype=np.float64)


def assign(dist: np.ndarray, medoids) -> tuple[np.ndarray, np.ndarray, float]:
    """Attach each row to its nearest medoid (ties to the lowest medoid row).

    Returns labels, sorted medoids and the total cost.
    """
    medoids = np.sort(np.asarray(medoids, dtype=np.int64))
    sub = dist[:, medoids]
    labels = np.argmin(sub, axis=1).astype(np.int64)
    # a medoid always belongs to its own cluster, even at distance ties
    labels[medoids] = np.arange(medoids.size)
    cost = float(sub[np.arange(dist.shape[0]), labels].sum())
    return labels, medoids, cost


def silhouette_samples(d, labels) -> np.ndarray:
    dist = _matrix(d)
    labels = np.asarray(labels)
    if labels.shape != (dist.shape[0],):
        raise ConfigError("one label per row is required")
    _, codes = np.unique(labels, return_inverse=True)
    codes = codes.astype(np.int64)
    n_labels = int(codes.max()) + 1 if codes.size else 0
    if n_labels < 2:
        raise ConfigError("silhouette needs at least 2 clusters")
    return _kernels.silhouette_kernel(dist, codes, n_labels)


def silhouette(d, labels) -> float:
    """Mean silhouette; rows alone in their cluster score 0."""
    return float(np.mean(silhouette_samples(d, labels)))


def pam(d, n_clusters: int) -> ClusterAssignment:
    """Classic PAM: greedy BUILD then best-improvement SWAP until no swap lowers the cost."""
    dist = _matrix(d)
    m = dist.shape[0]
    if not 2 <= n_clusters <= m:
        raise ConfigError(f"n_clusters={n_clusters} must lie in [2, m={m}]")
    medoids = _kernels.build_kernel(dist, n_clusters)
    medoids, _ = _kernels.swap_kernel(dist, medoids, SWAP_MAX_ITER)
    labels, medoids, cost = assign(dist, medoids)
    score = float(np.mean(_kernels.silhouette_kernel(dist, labels, n_clusters)))
    return ClusterAssignment(labels, medoids, n_clusters, score, cost)


def best_clustering(d, n_min: int, n_max: int) -> ClusterAssignment:
    """PAM for every n_c in [n_min, n_max]; highest silhouette wins, ties to the smaller n_c."""
    dist = _matrix(d)
    if not 2 <= n_min <= n_max <= dist.shape[0]:
        raise ConfigError(
            f"need 2 <= n_min <= n_max <= m, got n_min={n_min}, n_max={n_max}, m={dist.shape[0]}"
        )
    best = None
    for nc in range(n_min, n_max + 1):
        fit = pam(dist, nc)
        if best is None or fit.silhouette > best.silhouette:
            best = fit
    return best


def write_labels(assignment: ClusterAssignment, row_ids, path) -> None:
    medoid_rows = set(int(i) for i in assignment.medoids)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row_id", "cluster_label", "is_medoid"])
        for i, (rid, lab) in enumerate(zip(row_ids, assignment.labels)):
            w.writerow([rid, int(lab), int(i in medoid_rows)])


def read_labels(path) -> tuple[list[str], np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [r["row_id"] for r in rows], np.array([int(r["cluster_label"]) for r in rows])
