"""``phenoglrm`` command line.

Subcommands mirror the stages of the workflow: ``preprocess``, ``select``,
``cluster``, ``necessity`` and ``run-all``; ``synth`` writes a planted dataset.
Every failure prints one JSON object on stderr and exits with 2 (configuration),
3 (data) or 4 (numerical).
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .clustering import ClusterAssignment, best_clustering, write_labels
from .dataset import Dataset, column_report, load_csv, load_schema, preprocess, schema_of, write_csv, write_schema
from .dissimilarity import balanced_weights, gower_matrix, write_matrix
from .errors import ConfigError, DataError, PhenoError
from .pipeline import (
    PipelineConfig,
    cv_feature_selection,
    default_gamma_step,
    load_config,
    make_folds,
    pairwise_similarity_index,
    run_full_pipeline,
    selection_report,
    shuffle_necessity_test,
    write_necessity,
)
from .stats import profile_clusters, write_profile
from .synth import PlantSpec, generate_planted, write_planted

log = logging.getLogger("phenoglrm")

_CONFIG_FLAGS = {
    "K": int, "gamma0": float, "gamma_step": float, "n_min": int, "n_max": int, "k": int,
    "repeats": int, "necessity_threshold": float, "alpha": float, "seed": int, "n_jobs": int,
    "max_iters": int, "rel_tol": float,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}")


# --------------------------------------------------------------------------
# helpers

def _load(args) -> Dataset:
    schema = load_schema(args.schema)
    try:
        raw = load_csv(args.input, schema, aggregate_duplicates=getattr(args, "aggregate_duplicates", False))
    except FileNotFoundError as exc:
        raise DataError(f"cannot read {exc.filename}") from None
    return preprocess(raw, getattr(args, "max_categories", 3))


def _config(args) -> PipelineConfig:
    base = {}
    if getattr(args, "config", None):
        base = load_config(args.config).to_mapping()
    for key in _CONFIG_FLAGS:
        value = getattr(args, key, None)
        if value is not None:
            base[key] = value
    return PipelineConfig.from_mapping(base)


def _out(args) -> Path:
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_config(cfg: PipelineConfig, out: Path) -> None:
    with open(out / "config.yaml", "w") as fh:
        yaml.safe_dump(cfg.to_mapping(), fh, sort_keys=True)


def _write_json(obj, path) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _feature_indices(ds: Dataset, spec: str) -> list[int]:
    """Comma-separated names, a text file with one name per line, or a selection.json."""
    path = Path(spec)
    if path.is_file():
        text = path.read_text()
        if path.suffix == ".json":
            doc = json.loads(text)
            names = doc.get("clustering_features") or doc["final_features"]
        else:
            names = [ln.strip() for ln in text.splitlines() if ln.strip()]
    else:
        names = [s.strip() for s in spec.split(",") if s.strip()]
    if not names:
        raise ConfigError("no features given")
    return [ds.index_of(n) for n in names]


def _raw_column(args, column: str, row_ids) -> np.ndarray:
    """Values of a column of the input CSV for the given row ids (as text)."""
    schema = load_schema(args.schema)
    with open(args.input, newline="") as fh:
        reader = csv.DictReader(fh)
        if column not in (reader.fieldnames or []):
            raise ConfigError(f"column {column!r} not present in {args.input}")
        by_id = {}
        for i, row in enumerate(reader):
            rid = row[schema.id_column].strip() if schema.id_column else str(i + 1)
            by_id[rid] = row[column].strip()
    return np.array([by_id[r] for r in row_ids])


# --------------------------------------------------------------------------
# commands

def cmd_preprocess(args) -> int:
    ds = _load(args)
    out = _out(args)
    write_csv(ds, out / "data.csv")
    write_schema(schema_of(ds), out / "schema.yaml")
    _write_json({"n_rows": ds.m, "n_columns": ds.n, "columns": column_report(ds),
                 "events": ds.events}, out / "report.json")
    return 0


def cmd_select(args) -> int:
    ds = _load(args)
    cfg = _config(args)
    out = _out(args)
    step = cfg.gamma_step if cfg.gamma_step is not None else default_gamma_step(ds)
    sel = cv_feature_selection(ds, make_folds(ds.m, cfg.K, cfg.seed), cfg.gamma0, step,
                               cfg.n_min, cfg.n_max, cfg.k, cfg.fit_options, cfg.n_jobs)
    report = {
        "gamma_step": step,
        "final_features": [ds.columns[f].name for f in sorted(sel.final_features)],
        "per_fold": [
            {"fold": r.fold, "best_gamma": r.best_gamma, "best_score": r.best_score,
             "best_n_c": r.best_n_c,
             "train_features": [ds.columns[f].name for f in sorted(r.train_features)],
             "validation_features": [ds.columns[f].name for f in sorted(r.validation_features)]}
            for r in sel.per_fold
        ],
    }
    _write_json(report, out / "selection.json")
    (out / "features.txt").write_text("".join(n + "\n" for n in report["final_features"]))
    _write_config(cfg, out)
    return 0


def cmd_cluster(args) -> int:
    ds = _load(args)
    cfg = _config(args)
    out = _out(args)
    feats = _feature_indices(ds, args.features)
    d = gower_matrix(ds, feats, balanced_weights(ds, feats))
    clus = best_clustering(d, cfg.n_min, min(cfg.n_max, ds.m))
    write_labels(clus, ds.row_ids, out / "labels.csv")
    write_matrix(d, out / "dissimilarity.txt")
    profiled = list(feats)
    if args.outcomes:
        profiled += [ds.index_of(n.strip()) for n in args.outcomes.split(",") if n.strip()]
    write_profile(profile_clusters(ds, clus.labels, profiled, cfg.alpha), out / "profile.csv")
    summary = {"n_clusters": clus.n_clusters, "silhouette": clus.silhouette, "cost": clus.cost,
               "sizes": np.bincount(clus.labels, minlength=clus.n_clusters).tolist(),
               "medoids": [ds.row_ids[i] for i in clus.medoids]}
    if args.group_by:
        groups = _raw_column(args, args.group_by, ds.row_ids)
        write_profile(profile_clusters(ds, groups, profiled, cfg.alpha),
                      out / f"profile_by_{args.group_by}.csv")
        _, codes = np.unique(groups, return_inverse=True)
        summary["psi_vs_" + args.group_by] = pairwise_similarity_index(clus.labels, codes)
    _write_json(summary, out / "cluster.json")
    _write_config(cfg, out)
    return 0


def cmd_necessity(args) -> int:
    ds = _load(args)
    cfg = _config(args)
    out = _out(args)
    feats = _feature_indices(ds, args.features)
    with open(args.labels, newline="") as fh:
        rows = {r["row_id"]: int(r["cluster_label"]) for r in csv.DictReader(fh)}
    missing = [r for r in ds.row_ids if r not in rows]
    if missing:
        raise DataError(f"labels file lacks {len(missing)} rows, e.g. {missing[0]!r}")
    labels = np.array([rows[r] for r in ds.row_ids])
    _, codes = np.unique(labels, return_inverse=True)
    nc = int(codes.max()) + 1
    if nc < 2:
        raise ConfigError("labels must contain at least 2 clusters")
    baseline = ClusterAssignment(codes, np.array([], dtype=np.int64), nc, float("nan"), float("nan"))
    if cfg.repeats == 1:
        log.warning(json.dumps({"event": "single_repeat", "detail": "one shuffle per feature"}))
    report = shuffle_necessity_test(ds, feats, baseline, cfg.repeats, cfg.seed,
                                    cfg.necessity_threshold, cfg.n_jobs)
    write_necessity(report, ds, out)
    _write_config(cfg, out)
    return 0


def cmd_run_all(args) -> int:
    ds = _load(args)
    cfg = _config(args)
    run_full_pipeline(ds, cfg, out_dir=_out(args), timings=args.timings)
    return 0


def cmd_synth(args) -> int:
    spec = PlantSpec(m=args.m, n_informative=args.n_informative, n_noise=args.n_noise,
                     n_clusters=args.n_clusters, separation=args.separation,
                     binary_fraction=args.binary_fraction, seed=args.seed)
    write_planted(generate_planted(spec), _out(args))
    return 0


# --------------------------------------------------------------------------
# parser

def _data_args(p):
    p.add_argument("--input", required=True, help="input CSV")
    p.add_argument("--schema", required=True, help="YAML schema mapping column -> kind")
    p.add_argument("--output", required=True, help="output directory")
    p.add_argument("--max-categories", type=int, default=3)
    p.add_argument("--aggregate-duplicates", action="store_true",
                   help="average repeated records sharing the schema's id_column")


def _config_args(p, seed_required=False):
    p.add_argument("--config", help="YAML file with pipeline parameters")
    for key, kind in _CONFIG_FLAGS.items():
        flag = "--" + key.replace("_", "-")
        p.add_argument(flag, dest=key, type=kind, default=None,
                       required=seed_required and key == "seed")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="phenoglrm", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("preprocess", help="consolidate, dummy-code, drop incomplete rows")
    _data_args(p)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("select", help="cross-validated GLRM feature selection")
    _data_args(p)
    _config_args(p)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("cluster", help="PAM clustering and profile tables")
    _data_args(p)
    _config_args(p)
    p.add_argument("--features", required=True,
                   help="comma-separated names, a file with one per line, or selection.json")
    p.add_argument("--outcomes", help="extra comma-separated columns to profile")
    p.add_argument("--group-by", help="also profile by this input column")
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("necessity", help="feature-shuffle necessity test")
    _data_args(p)
    _config_args(p)
    p.add_argument("--features", required=True)
    p.add_argument("--labels", required=True, help="labels.csv from the cluster command")
    p.set_defaults(func=cmd_necessity)

    p = sub.add_parser("run-all", help="selection, necessity, clustering and stability")
    _data_args(p)
    _config_args(p, seed_required=True)
    p.add_argument("--timings", action="store_true", help="record stage timings in the manifest")
    p.set_defaults(func=cmd_run_all)

    p = sub.add_parser("synth", help="write a planted synthetic dataset")
    p.add_argument("--output", required=True)
    for f in fields(PlantSpec):
        p.add_argument("--" + f.name.replace("_", "-"), dest=f.name, type=type(f.default),
                       default=f.default)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(message)s", stream=sys.stderr)
    try:
        args = build_parser().parse_args(argv)
        if args.verbose:
            logging.getLogger().setLevel(logging.INFO)
        return args.func(args)
    except PhenoError as exc:
        err = {"error": type(exc).__name__, "message": str(exc), "exit_code": exc.exit_code}
        if exc.stage:
            err["stage"] = exc.stage
        print(json.dumps(err), file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc), "exit_code": 3}),
              file=sys.stderr)
        return 3
    except (FloatingPointError, np.linalg.LinAlgError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc), "exit_code": 4}),
              file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
