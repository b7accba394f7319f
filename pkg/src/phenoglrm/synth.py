"""Planted-structure generators used as ground truth for the pipeline.

Every random draw is a pure function of ``(seed, row, column, stream)`` via a
SplitMix64 hash, so a cell's value does not depend on generation order,
platform, or how rows are split across workers.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .dataset import ColumnKind, ColumnMeta, Dataset, finalize, schema_of, write_csv, write_schema
from .errors import ConfigError

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)

# stream ids
_LABELS, _COLUMN_ORDER, _NOISE, _BERNOULLI, _RATE, _LOC, _SCALE, _MASK = range(8)


def _mix(z):
    with np.errstate(over="ignore"):
        z = z + _GOLDEN
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
        return z ^ (z >> np.uint64(31))


def counter_hash(seed, row, col, stream) -> np.ndarray:
    """64-bit hash of the broadcast counters ``(seed, row, col, stream)``."""
    seed, row, col, stream = np.broadcast_arrays(*(np.asarray(a, dtype=np.int64) for a in
                                                   (seed, row, col, stream)))
    h = _mix(seed.astype(np.uint64))
    for part in (row, col, stream):
        h = _mix(h ^ part.astype(np.uint64))
    return h


def uniform(seed, row, col, stream) -> np.ndarray:
    """Uniform draws in the open interval (0, 1)."""
    h = counter_hash(seed, row, col, stream)
    return ((h >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0 ** -53


def normal(seed, row, col, stream) -> np.ndarray:
    """Standard normal draws by Box-Muller on two counter streams."""
    u1 = uniform(seed, row, col, 2 * stream)
    u2 = uniform(seed, row, col, 2 * stream + 1)
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


@dataclass(frozen=True)
class PlantSpec:
    m: int = 400
    n_informative: int = 5
    n_noise: int = 20
    n_clusters: int = 4
    separation: float = 6.0
    binary_fraction: float = 0.3
    seed: int = 0

    def __post_init__(self):
        if self.n_informative < 1:
            raise ConfigError("n_informative must be >= 1")
        if self.n_noise < 0 or self.n_clusters < 2 or self.m < self.n_clusters:
            raise ConfigError("need n_noise >= 0, n_clusters >= 2 and m >= n_clusters")
        if not self.separation >= 0:
            raise ConfigError("separation must be >= 0")
        if not 0.0 <= self.binary_fraction <= 1.0:
            raise ConfigError("binary_fraction must lie in [0, 1]")


@dataclass
class Planted:
    dataset: Dataset
    true_labels: np.ndarray
    informative: frozenset[int]
    spec: PlantSpec
    # per informative column: planted cluster means (numeric) or rates (binary)
    centers: dict[int, np.ndarray] = field(default_factory=dict)


def cluster_positions(n_clusters: int, separation: float = 1.0) -> np.ndarray:
    """Cluster centers in the plane on a regular polygon with side ``separation``.

    Two clusters sit on a line at distance ``separation``.
    """
    if n_clusters == 2:
        return np.array([[-0.5], [0.5]]) * separation
    radius = separation / (2.0 * np.sin(np.pi / n_clusters))
    phi = 2.0 * np.pi * np.arange(n_clusters) / n_clusters
    return radius * np.column_stack([np.cos(phi), np.sin(phi)])


def feature_directions(n_features: int, n_clusters: int) -> np.ndarray:
    """Unit directions, one row per informative feature.

    Projections of the polygon onto a direction at a multiple of pi/K collapse
    pairs of centers; directions halfway between those angles keep all K
    centers apart, so every informative feature separates every cluster.
    """
    if n_clusters == 2:
        return np.ones((n_features, 1))
    theta = np.pi / (2 * n_clusters) + np.pi * np.arange(n_features) / n_clusters
    return np.column_stack([np.cos(theta), np.sin(theta)])


def planted_labels(m: int, n_clusters: int, seed: int) -> np.ndarray:
    rows = np.arange(m)
    order = np.argsort(uniform(seed, rows, 0, _LABELS), kind="stable")
    labels = np.empty(m, dtype=np.int64)
    labels[order] = rows % n_clusters
    return labels


def binary_rates(centers: np.ndarray, ordinal: int) -> np.ndarray:
    """Per-cluster rates of the ``ordinal``-th informative binary feature.

    The feature is a noisy indicator of which side of a line through the
    origin a cluster center lies on: rate 0.9 on the positive side, 0.1 on the
    negative side, 0.5 on the line. Successive binary features alternate
    between two perpendicular lines at 45 and 135 degrees, so the indicators
    stay inside the plane of the numeric signal and, for four clusters, two of
    them give every cluster its own pattern.
    """
    if centers.shape[1] == 1:
        proj = centers[:, 0]
    else:
        theta = np.pi / 4 + (ordinal % 2) * np.pi / 2
        proj = centers @ np.array([np.cos(theta), np.sin(theta)])
    proj = np.where(np.abs(proj) < 1e-12 * max(np.abs(centers).max(), 1.0), 0.0, proj)
    return 0.5 + 0.4 * np.sign(proj)


def generate_planted(spec: PlantSpec) -> Planted:
    """Data with ``n_clusters`` planted groups, informative and noise features.

    Cluster centers form a regular polygon in the plane whose neighbouring
    vertices are ``separation`` apart (in units of the within-cluster sd). Each
    informative numeric feature is the projection of its cluster's center on
    its own direction plus unit Gaussian noise, so the numeric signal has rank
    2 (rank 1 for two clusters). Informative binary features have per-cluster
    rates of 0.1 or 0.9 (see :func:`binary_rates`). Noise features ignore the
    cluster. Every numeric feature gets its own location and scale.

    ``binary_fraction`` applies to the informative and the noise features
    separately, rounded to the nearest count.
    """
    s, m, K = spec.seed, spec.m, spec.n_clusters
    rows = np.arange(m)
    labels = planted_labels(m, K, s)
    centers = cluster_positions(K, spec.separation)
    n_bin_inf = int(round(spec.binary_fraction * spec.n_informative))
    n_bin_noise = int(round(spec.binary_fraction * spec.n_noise))
    n_num_inf = spec.n_informative - n_bin_inf
    kinds = (["num_inf"] * n_num_inf + ["bin_inf"] * n_bin_inf
             + ["num_noise"] * (spec.n_noise - n_bin_noise) + ["bin_noise"] * n_bin_noise)
    n = len(kinds)
    # column position is a seeded shuffle so informative features are not all first
    pos = np.argsort(uniform(s, 0, np.arange(n), _COLUMN_ORDER), kind="stable")
    directions = feature_directions(n_num_inf, K)

    values = np.empty((m, n))
    binary = np.zeros(n, dtype=bool)
    informative = {}
    for src, kind in enumerate(kinds):
        j = int(pos[src])
        col = np.full(m, j)
        if kind.startswith("num"):
            loc = 20.0 * (uniform(s, 0, j, _LOC)[()] - 0.5)
            scale = 0.5 + 2.0 * uniform(s, 0, j, _SCALE)[()]
            shift = centers @ directions[src] if kind == "num_inf" else np.zeros(K)
            values[:, j] = loc + scale * (normal(s, rows, col, _NOISE) + shift[labels])
            center = loc + scale * shift
        else:
            if kind == "bin_inf":
                center = binary_rates(centers, src - n_num_inf)
            else:
                center = np.full(K, 0.3 + 0.4 * uniform(s, 0, j, _RATE)[()])
            values[:, j] = (uniform(s, rows, col, _BERNOULLI) < center[labels]).astype(np.float64)
            binary[j] = True
        if kind.endswith("inf"):
            informative[j] = center

    columns = [
        ColumnMeta(name=f"x{j:02d}", kind=ColumnKind.BINARY if binary[j] else ColumnKind.NUMERIC,
                   origin=f"x{j:02d}")
        for j in range(n)
    ]
    raw = Dataset([f"r{i:04d}" for i in range(m)], columns, values, np.zeros((m, n), dtype=bool))
    ds = finalize(raw)
    keep = {name: jj for jj, name in enumerate(ds.names)}
    names = {j: f"x{j:02d}" for j in informative}
    centers_out = {keep[names[j]]: c for j, c in informative.items() if names[j] in keep}
    return Planted(ds, labels, frozenset(centers_out), spec, centers_out)


def mask_uniform(ds: Dataset, rate: float, seed: int) -> Dataset:
    """Independently mark each cell missing with probability ``rate``."""
    rows = np.arange(ds.m)[:, None]
    cols = np.arange(ds.n)[None, :]
    miss = uniform(seed, rows, cols, _MASK) < rate
    values = ds.values.copy()
    values[miss] = np.nan
    return Dataset(list(ds.row_ids), list(ds.columns), values, miss | ds.missing_mask)


def write_planted(planted: Planted, out_dir) -> dict:
    """Write ``data.csv``, ``schema.yaml`` and ``truth.json``; return the file paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"data": out / "data.csv", "schema": out / "schema.yaml", "truth": out / "truth.json"}
    write_csv(planted.dataset, paths["data"])
    write_schema(schema_of(planted.dataset), paths["schema"])
    truth = {
        "spec": asdict(planted.spec),
        "informative": sorted(planted.dataset.names[j] for j in planted.informative),
        "labels": {rid: int(c) for rid, c in zip(planted.dataset.row_ids, planted.true_labels)},
    }
    with open(paths["truth"], "w") as fh:
        json.dump(truth, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return paths
