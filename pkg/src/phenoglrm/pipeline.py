"""Cross-validated feature selection, necessity testing and stability.

The selection loop per fold: sweep gamma upward on the training rows, keeping
the gamma whose selected features give the best silhouette over a range of
cluster counts; refit on the validation rows at that gamma; intersect the
validation feature sets across folds.
"""
from __future__ import annotations

import csv
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from ._accel import backend
from .clustering import ClusterAssignment, best_clustering, pam, write_labels
from .dataset import Dataset
from .dissimilarity import balanced_weights, gower_matrix, write_matrix
from .errors import ConfigError, EmptyIntersectionError, PhenoError, SweepError
from .glrm import FitOptions, GlrmModel, fit_glrm, selected_features, targets
from .stats import profile_clusters, write_profile

log = logging.getLogger(__name__)

MAX_SWEEP_STEPS = 1000


# --------------------------------------------------------------------------
# folds

@dataclass(frozen=True)
class FoldSpec:
    K: int
    assignment: np.ndarray
    seed: int

    def rows(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == fold)

    def train_rows(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignment != fold)


def make_folds(m: int, K: int, seed: int) -> FoldSpec:
    """Seeded permutation of the rows dealt round-robin into K folds."""
    if not 2 <= K <= m:
        raise ConfigError(f"K={K} must satisfy 2 <= K <= m={m}")
    perm = np.random.default_rng(seed).permutation(m)
    assignment = np.empty(m, dtype=np.int64)
    assignment[perm] = np.arange(m) % K
    return FoldSpec(K, assignment, seed)


# --------------------------------------------------------------------------
# pair counting

def _check_pair(a, b):
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape or a.ndim != 1:
        raise ConfigError(f"labelings must have equal length, got {a.shape} and {b.shape}")
    if a.size < 2:
        raise ConfigError("need at least 2 rows")
    return a, b


def _pair_counts(a, b) -> tuple[float, float, float]:
    """Co-clustered pair counts: in A, in B, in both."""
    _, ia = np.unique(a, return_inverse=True)
    _, ib = np.unique(b, return_inverse=True)
    table = np.zeros((ia.max() + 1, ib.max() + 1))
    np.add.at(table, (ia, ib), 1.0)

    def pairs(x):
        return float(np.sum(x * (x - 1.0) / 2.0))

    return pairs(table.sum(axis=1)), pairs(table.sum(axis=0)), pairs(table)


def pairwise_similarity_index(labels_a, labels_b) -> float:
    """Fraction of all row pairs that are co-clustered in both labelings."""
    a, b = _check_pair(labels_a, labels_b)
    m = a.size
    return _pair_counts(a, b)[2] / (m * (m - 1) / 2.0)


def jaccard_coclustering(labels_a, labels_b) -> float:
    """Intersection over union of the co-clustered pair sets; 1 when both are empty."""
    a, b = _check_pair(labels_a, labels_b)
    na, nb, both = _pair_counts(a, b)
    union = na + nb - both
    return 1.0 if union == 0 else both / union


def relative_psi(labels, reference) -> float:
    """PSI scaled by the reference's self-PSI: the share of its co-clustered pairs kept."""
    own = pairwise_similarity_index(reference, reference)
    return 0.0 if own == 0 else pairwise_similarity_index(labels, reference) / own


def stability(fold_labels, full_labels, rows=None) -> float:
    """PSI of a fold's clustering against the full clustering restricted to the fold.

    ``full_labels`` is indexed by ``rows`` when given; otherwise it must already
    be restricted to the fold.
    """
    full = np.asarray(full_labels)
    if rows is not None:
        rows = np.asarray(rows, dtype=np.int64)
        if rows.size and (rows.min() < 0 or rows.max() >= full.size):
            raise ConfigError("fold rows fall outside the full labeling")
        full = full[rows]
    if np.asarray(fold_labels).shape != full.shape:
        raise ConfigError("fold labeling and restricted full labeling cover different rows")
    return pairwise_similarity_index(fold_labels, full)


# --------------------------------------------------------------------------
# gamma sweep and cross-validation

@dataclass
class SweepResult:
    best_gamma: float
    best_score: float
    best_n_c: int
    features: frozenset
    best_step: int = 0
    # (gamma, n_selected, best silhouette or None when < 2 features) per visited gamma
    trace: list = field(default_factory=list)


def cluster_features(data: Dataset, features, n_min: int, n_max: int) -> ClusterAssignment:
    """Best PAM clustering of ``data`` on ``features`` with balanced Gower weights."""
    d = gower_matrix(data, features, balanced_weights(data, features))
    return best_clustering(d, n_min, min(n_max, data.m))


def default_gamma_step(data: Dataset) -> float:
    """One tenth of the zero-model objective per row and per column.

    The zero model (X = 0, Y = 0) costs roughly one unit per cell, so this is
    about 0.1 whatever the size of the table.
    """
    T, hinge = targets(data)
    zero_fit = float(np.sum(T[:, ~hinge] ** 2)) + float(hinge.sum() * data.m)
    return zero_fit / (10.0 * data.n * data.m)


def fit_path(data: Dataset, k: int, gamma0: float, gamma_step: float, n_steps: int,
             opts: FitOptions = FitOptions(), fit=fit_glrm) -> GlrmModel:
    """Fit at ``gamma0 + n_steps * gamma_step`` by warm starts along the sweep grid."""
    model = None
    for step in range(n_steps + 1):
        model = fit(data, k, gamma0 + step * gamma_step, opts, init=model)
    return model


def gamma_sweep(train: Dataset, gamma0: float, gamma_step: float, n_min: int, n_max: int,
                k: int = 2, opts: FitOptions = FitOptions(), fit=fit_glrm) -> SweepResult:
    """Increase gamma from ``gamma0`` while the best silhouette keeps improving.

    Each gamma is fitted warm from the previous one. The sweep ends at the first
    gamma whose best silhouette over n_c in [n_min, n_max] does not beat the
    running best (an unchanged feature set reproduces the same score, so a
    plateau ends it too), or when fewer than 2 features survive.
    """
    if not gamma_step > 0:
        raise ConfigError("gamma_step must be > 0")
    if gamma0 < 0:
        raise ConfigError("gamma0 must be >= 0")
    best = SweepResult(gamma0, -1.0, 0, frozenset())
    model: GlrmModel | None = None
    for step in range(MAX_SWEEP_STEPS):
        gamma = gamma0 + step * gamma_step
        model = fit(train, k, gamma, opts, init=model)
        feats = selected_features(model)
        if step == 0 and not feats:
            raise SweepError(f"no features selected at gamma0={gamma0}; lower gamma0")
        if len(feats) < 2:
            best.trace.append((gamma, len(feats), None))
            break
        clus = cluster_features(train, feats, n_min, n_max)
        best.trace.append((gamma, len(feats), clus.silhouette))
        if clus.silhouette > best.best_score:
            best.best_gamma, best.best_score = gamma, clus.silhouette
            best.best_n_c, best.features, best.best_step = clus.n_clusters, feats, step
        else:
            break
    if not best.features:
        raise SweepError(f"sweep from gamma0={gamma0} never selected 2 or more features")
    return best


@dataclass
class FoldRecord:
    fold: int
    best_gamma: float
    best_score: float
    best_n_c: int
    train_features: frozenset
    validation_features: frozenset
    validation_score: float
    validation_n_c: int
    rows: np.ndarray
    labels: np.ndarray
    sweep: list


@dataclass
class SelectionResult:
    per_fold: list[FoldRecord]
    final_features: frozenset


def _run_fold(data, folds, fold, gamma0, gamma_step, n_min, n_max, k, opts, fit):
    train = data.subset(folds.train_rows(fold))
    sw = gamma_sweep(train, gamma0, gamma_step, n_min, n_max, k, opts, fit)
    rows = folds.rows(fold)
    valid = data.subset(rows)
    if k >= valid.n:
        raise ConfigError(f"rank k={k} needs more than {valid.n} columns")
    # same gamma as the training optimum, reached along the same warm-started grid
    vfeats = selected_features(fit_path(valid, k, gamma0, gamma_step, sw.best_step, opts, fit))
    if vfeats:
        clus = cluster_features(valid, vfeats, n_min, n_max)
        score, nc, labels = clus.silhouette, clus.n_clusters, clus.labels
    else:
        score, nc, labels = float("nan"), 0, np.zeros(rows.size, dtype=np.int64)
    return FoldRecord(fold, sw.best_gamma, sw.best_score, sw.best_n_c, sw.features,
                      vfeats, score, nc, rows, labels, sw.trace)


def cv_feature_selection(data: Dataset, folds: FoldSpec, gamma0: float = 0.0,
                         gamma_step: float | None = None, n_min: int = 2, n_max: int = 8,
                         k: int = 2, opts: FitOptions = FitOptions(), n_jobs: int = 1,
                         fit=fit_glrm) -> SelectionResult:
    """K-fold selection; the final set is the intersection of the validation sets."""
    if folds.assignment.shape != (data.m,):
        raise ConfigError("fold assignment does not match the number of rows")
    if gamma_step is None:
        gamma_step = default_gamma_step(data)

    def task(fold):
        return _run_fold(data, folds, fold, gamma0, gamma_step, n_min, n_max, k, opts, fit)

    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            records = list(pool.map(task, range(folds.K)))
    else:
        records = [task(f) for f in range(folds.K)]
    final = frozenset.intersection(*(r.validation_features for r in records))
    if not final:
        raise EmptyIntersectionError(
            "validation feature sets have an empty intersection; try a smaller gamma0 or gamma_step"
        )
    return SelectionResult(records, final)


# --------------------------------------------------------------------------
# necessity

@dataclass
class FeatureNecessity:
    feature: int
    jaccard_samples: np.ndarray
    psi_samples: np.ndarray
    relative_psi_samples: np.ndarray
    necessary: bool

    @property
    def median_psi(self) -> float:
        return float(np.median(self.psi_samples))

    @property
    def median_relative_psi(self) -> float:
        return float(np.median(self.relative_psi_samples))

    @property
    def median_jaccard(self) -> float:
        return float(np.median(self.jaccard_samples))


@dataclass
class NecessityReport:
    features: list[FeatureNecessity]
    baseline_self_psi: float
    threshold: float

    @property
    def unnecessary(self) -> frozenset:
        return frozenset(f.feature for f in self.features if not f.necessary)


def shuffle_permutation(m: int, seed: int, feature: int, repeat: int) -> np.ndarray:
    return np.random.default_rng([seed, feature, repeat]).permutation(m)


def shuffle_necessity_test(data: Dataset, features, baseline: ClusterAssignment,
                           repeats: int = 500, seed: int = 0, threshold: float = 0.9,
                           n_jobs: int = 1) -> NecessityReport:
    """Shuffle one feature at a time and measure how much the clustering moves.

    Each repeat permutes the feature's column across rows, recomputes weights,
    Gower dissimilarities and PAM at the baseline cluster count, and compares
    the labels with the baseline by co-clustering Jaccard and PSI. A feature
    is flagged unnecessary when the median PSI, divided by the baseline's
    self-PSI, is at least ``threshold``: shuffling it leaves that share of the
    baseline's co-clustered pairs intact.
    """
    if repeats < 1:
        raise ConfigError("repeats must be >= 1")
    feats = sorted(int(f) for f in features)
    base = np.asarray(baseline.labels)
    if base.shape != (data.m,):
        raise ConfigError("baseline labels do not cover the dataset rows")
    own = pairwise_similarity_index(base, base)
    nc = baseline.n_clusters

    def one(job):
        f, r = job
        perm = shuffle_permutation(data.m, seed, f, r)
        shuffled = data.with_column(f, data.values[perm, f])
        d = gower_matrix(shuffled, feats, balanced_weights(shuffled, feats))
        labels = pam(d, nc).labels
        return jaccard_coclustering(labels, base), pairwise_similarity_index(labels, base)

    jobs = [(f, r) for f in feats for r in range(repeats)]
    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(one, jobs))
    else:
        results = [one(j) for j in jobs]
    out = []
    for i, f in enumerate(feats):
        block = np.array(results[i * repeats:(i + 1) * repeats])
        psi = block[:, 1]
        rel = psi / own if own > 0 else np.zeros_like(psi)
        necessary = not float(np.median(rel)) >= threshold
        out.append(FeatureNecessity(f, block[:, 0], psi, rel, necessary))
    return NecessityReport(out, own, threshold)


# --------------------------------------------------------------------------
# full run

@dataclass(frozen=True)
class PipelineConfig:
    K: int = 5
    gamma0: float = 0.0
    gamma_step: float | None = None
    n_min: int = 2
    n_max: int = 8
    k: int = 2
    repeats: int = 500
    necessity_threshold: float = 0.9
    alpha: float = 0.05
    seed: int = 0
    n_jobs: int = 1
    max_iters: int = 1000
    rel_tol: float = 1e-7

    def __post_init__(self):
        if self.K < 2:
            raise ConfigError("K must be >= 2")
        if self.gamma0 < 0 or (self.gamma_step is not None and not self.gamma_step > 0):
            raise ConfigError("need gamma0 >= 0 and gamma_step > 0")
        if not 2 <= self.n_min <= self.n_max:
            raise ConfigError("need 2 <= n_min <= n_max")
        if self.k < 1 or self.repeats < 1 or self.n_jobs < 1:
            raise ConfigError("k, repeats and n_jobs must be >= 1")
        if not 0 < self.alpha < 1:
            raise ConfigError("alpha must lie in (0, 1)")

    @classmethod
    def from_mapping(cls, mapping: dict | None) -> "PipelineConfig":
        mapping = dict(mapping or {})
        known = {f.name: f for f in fields(cls)}
        unknown = sorted(set(mapping) - set(known))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        kw = {}
        for key, value in mapping.items():
            if value is None:
                continue
            kind = int if key in ("K", "n_min", "n_max", "k", "repeats", "seed", "n_jobs",
                                  "max_iters") else float
            try:
                if kind is int and float(value) != int(value):
                    raise ValueError
                kw[key] = kind(value)
            except (TypeError, ValueError):
                raise ConfigError(f"config key {key!r}: {value!r} is not a valid {kind.__name__}") from None
        return cls(**kw)

    def to_mapping(self) -> dict:
        return asdict(self)

    @property
    def fit_options(self) -> FitOptions:
        return FitOptions(max_iters=self.max_iters, rel_tol=self.rel_tol, seed=self.seed)


def load_config(path) -> PipelineConfig:
    try:
        with open(path) as fh:
            mapping = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from None
    if mapping is not None and not isinstance(mapping, dict):
        raise ConfigError(f"config {path} is not a mapping")
    return PipelineConfig.from_mapping(mapping)


@dataclass
class PipelineResult:
    config: PipelineConfig
    gamma_step: float
    selection: SelectionResult
    necessity: NecessityReport
    baseline: ClusterAssignment
    features: frozenset
    final: ClusterAssignment
    stability: list[dict]
    timings: dict = field(default_factory=dict)


@contextmanager
def _stage(name: str, timings: dict):
    t0 = time.perf_counter()
    try:
        yield
    except PhenoError as exc:
        if exc.stage is None:
            exc.stage = name
        raise
    timings[name] = time.perf_counter() - t0


def run_full_pipeline(data: Dataset, config: PipelineConfig, out_dir=None,
                      timings: bool = False) -> PipelineResult:
    """Selection, necessity, drop-and-recluster, stability; optionally write every artifact.

    Stage timings go into the manifest only when ``timings`` is set, since
    they would make otherwise identical runs differ byte for byte.
    """
    clock: dict = {}
    cfg = config
    with _stage("select", clock):
        step = cfg.gamma_step if cfg.gamma_step is not None else default_gamma_step(data)
        folds = make_folds(data.m, cfg.K, cfg.seed)
        selection = cv_feature_selection(data, folds, cfg.gamma0, step, cfg.n_min, cfg.n_max,
                                         cfg.k, cfg.fit_options, cfg.n_jobs)
    with _stage("necessity", clock):
        feats = selection.final_features
        baseline = cluster_features(data, feats, cfg.n_min, cfg.n_max)
        necessity = shuffle_necessity_test(data, feats, baseline, cfg.repeats, cfg.seed,
                                           cfg.necessity_threshold, cfg.n_jobs)
    with _stage("cluster", clock):
        kept = feats - necessity.unnecessary
        if not kept:
            log.warning(json.dumps({"event": "all_features_unnecessary",
                                    "action": "keeping the selected features"}))
            kept = feats
        final = baseline if kept == feats else cluster_features(data, kept, cfg.n_min, cfg.n_max)
    with _stage("stability", clock):
        stab = []
        for rec in selection.per_fold:
            restricted = final.labels[rec.rows]
            own = pairwise_similarity_index(restricted, restricted)
            psi = stability(rec.labels, final.labels, rec.rows)
            stab.append({"fold": rec.fold, "n_rows": int(rec.rows.size), "psi": psi,
                         "self_psi": own, "relative_psi": psi / own if own > 0 else 0.0})
    result = PipelineResult(cfg, step, selection, necessity, baseline, kept, final, stab,
                            clock if timings else {})
    if out_dir is not None:
        with _stage("write", clock):
            write_outputs(result, data, out_dir)
    return result


# --------------------------------------------------------------------------
# outputs

def _names(data: Dataset, feats) -> list[str]:
    return [data.columns[f].name for f in sorted(feats)]


def selection_report(result: PipelineResult, data: Dataset) -> dict:
    sel = result.selection
    return {
        "gamma_step": result.gamma_step,
        "final_features": _names(data, sel.final_features),
        "per_fold": [
            {
                "fold": r.fold,
                "best_gamma": r.best_gamma,
                "best_score": r.best_score,
                "best_n_c": r.best_n_c,
                "train_features": _names(data, r.train_features),
                "validation_features": _names(data, r.validation_features),
                "validation_score": None if np.isnan(r.validation_score) else r.validation_score,
                "validation_n_c": r.validation_n_c,
                "sweep": [{"gamma": g, "n_features": n, "silhouette": s} for g, n, s in r.sweep],
            }
            for r in sel.per_fold
        ],
        "unnecessary_features": _names(data, result.necessity.unnecessary),
        "clustering_features": _names(data, result.features),
        "n_clusters": result.final.n_clusters,
        "silhouette": result.final.silhouette,
    }


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _g(x: float) -> str:
    return format(float(x), ".17g")


def write_necessity(report: NecessityReport, data: Dataset, out: Path) -> None:
    _write_csv(out / "necessity.csv",
               ["feature", "median_psi", "median_relative_psi", "median_jaccard", "necessary"],
               [[data.columns[f.feature].name, _g(f.median_psi), _g(f.median_relative_psi),
                 _g(f.median_jaccard), int(f.necessary)] for f in report.features])
    _write_csv(out / "necessity_samples.csv", ["feature", "repeat", "psi", "relative_psi", "jaccard"],
               [[data.columns[f.feature].name, r, _g(f.psi_samples[r]),
                 _g(f.relative_psi_samples[r]), _g(f.jaccard_samples[r])]
                for f in report.features for r in range(f.psi_samples.size)])


def write_outputs(result: PipelineResult, data: Dataset, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "config.yaml", "w") as fh:
        yaml.safe_dump(result.config.to_mapping(), fh, sort_keys=True)
    with open(out / "selection.json", "w") as fh:
        json.dump(selection_report(result, data), fh, indent=1, sort_keys=True)
        fh.write("\n")
    write_labels(result.final, data.row_ids, out / "labels.csv")
    write_necessity(result.necessity, data, out)
    _write_csv(out / "stability.csv", ["fold", "n_rows", "psi", "self_psi", "relative_psi"],
               [[s["fold"], s["n_rows"], _g(s["psi"]), _g(s["self_psi"]), _g(s["relative_psi"])]
                for s in result.stability])
    write_profile(profile_clusters(data, result.final.labels, result.features, result.config.alpha),
                  out / "profile.csv")
    d = gower_matrix(data, result.features, balanced_weights(data, result.features))
    write_matrix(d, out / "dissimilarity.txt")
    manifest = {
        "package": "phenoglrm",
        "version": __version__,
        "backend": backend(),
        "numpy": np.__version__,
        "seed": result.config.seed,
        "config": result.config.to_mapping(),
        "n_rows": data.m,
        "n_columns": data.n,
        "files": sorted(p.name for p in out.iterdir() if p.name != "manifest.json"),
    }
    if result.timings:
        manifest["timings_seconds"] = result.timings
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")
