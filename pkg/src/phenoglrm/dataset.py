"""Ingestion and preprocessing of mixed-type tables.

The working representation is a dense float matrix. Numeric and binary columns
hold their values directly; categorical columns hold integer level codes into
``ColumnMeta.levels`` until :func:`dummy_encode` replaces them. Missing cells
are NaN and flagged in ``missing_mask``.
"""
from __future__ import annotations

import csv
import enum
import json
import logging
import re
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from .errors import ConfigError, DataError, EmptyDatasetError, IngestionError, SchemaError

log = logging.getLogger(__name__)

MISSING_TOKENS = frozenset({"", "na", "nan"})
OTHER_LEVEL = "other"
_NUMBER = re.compile(r"[+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?")


class ColumnKind(str, enum.Enum):
    NUMERIC = "numeric"
    BINARY = "binary"
    CATEGORICAL = "categorical"


@dataclass(frozen=True)
class ColumnMeta:
    name: str
    kind: ColumnKind
    origin: str
    mean: float = float("nan")
    variance: float = 0.0
    min: float = float("nan")
    max: float = float("nan")
    range: float = 0.0
    levels: tuple[str, ...] = ()

    @property
    def is_binary(self) -> bool:
        return self.kind is ColumnKind.BINARY


@dataclass
class Dataset:
    row_ids: list[str]
    columns: list[ColumnMeta]
    values: np.ndarray
    missing_mask: np.ndarray
    events: list[dict] = field(default_factory=list)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.missing_mask = np.asarray(self.missing_mask, dtype=bool)
        m, n = len(self.row_ids), len(self.columns)
        if self.values.shape != (m, n) or self.missing_mask.shape != (m, n):
            raise ConfigError(
                f"values {self.values.shape} / mask {self.missing_mask.shape} do not match "
                f"{m} rows x {n} columns"
            )

    @property
    def m(self) -> int:
        return len(self.row_ids)

    @property
    def n(self) -> int:
        return len(self.columns)

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.columns]

    @property
    def binary_mask(self) -> np.ndarray:
        return np.array([c.is_binary for c in self.columns], dtype=bool)

    def index_of(self, name: str) -> int:
        for j, c in enumerate(self.columns):
            if c.name == name:
                return j
        raise ConfigError(f"unknown column {name!r}")

    def subset(self, rows) -> "Dataset":
        """Row subset. Column metadata (variances, ranges) is kept from the parent."""
        rows = np.asarray(rows, dtype=np.int64)
        return Dataset(
            row_ids=[self.row_ids[i] for i in rows],
            columns=list(self.columns),
            values=self.values[rows],
            missing_mask=self.missing_mask[rows],
        )

    def with_column(self, j: int, column_values) -> "Dataset":
        values = self.values.copy()
        values[:, j] = column_values
        return Dataset(list(self.row_ids), list(self.columns), values, self.missing_mask.copy())

    def select_columns(self, cols) -> "Dataset":
        cols = list(cols)
        return Dataset(
            list(self.row_ids),
            [self.columns[j] for j in cols],
            self.values[:, cols],
            self.missing_mask[:, cols],
            list(self.events),
        )


# --------------------------------------------------------------------------
# statistics

def _describe(meta: ColumnMeta, col: np.ndarray) -> ColumnMeta:
    if meta.kind is ColumnKind.CATEGORICAL:
        return meta
    obs = col[~np.isnan(col)]
    if obs.size == 0:
        return replace(meta, mean=float("nan"), variance=0.0, min=float("nan"),
                       max=float("nan"), range=0.0)
    lo, hi = float(obs.min()), float(obs.max())
    var = float(obs.var(ddof=1)) if obs.size > 1 else 0.0
    return replace(meta, mean=float(obs.mean()), variance=var, min=lo, max=hi, range=hi - lo)


def _redescribe(columns, values):
    return [_describe(c, values[:, j]) for j, c in enumerate(columns)]


# --------------------------------------------------------------------------
# schema + CSV

@dataclass(frozen=True)
class Schema:
    columns: dict[str, ColumnKind]
    id_column: str | None = None

    @classmethod
    def from_mapping(cls, mapping: dict) -> "Schema":
        if "columns" in mapping:
            cols, id_column = mapping["columns"], mapping.get("id_column")
        else:
            cols, id_column = mapping, None
        if not isinstance(cols, dict) or not cols:
            raise SchemaError("schema must map column names to kinds")
        kinds = {}
        for name, kind in cols.items():
            try:
                kinds[str(name)] = ColumnKind(str(kind).strip().lower())
            except ValueError:
                raise SchemaError(
                    f"column {name!r}: kind {kind!r} is not one of numeric, categorical, binary"
                ) from None
        return cls(kinds, id_column)

    def to_mapping(self) -> dict:
        out = {"columns": {k: v.value for k, v in self.columns.items()}}
        if self.id_column is not None:
            out = {"id_column": self.id_column, **out}
        return out


def load_schema(path) -> Schema:
    try:
        with open(path) as fh:
            mapping = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise SchemaError(f"cannot parse schema {path}: {exc}") from None
    if not isinstance(mapping, dict):
        raise SchemaError(f"schema {path} is not a mapping")
    return Schema.from_mapping(mapping)


def write_schema(schema: Schema, path) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(schema.to_mapping(), fh, sort_keys=False)


def _is_missing(token: str) -> bool:
    return token.strip().lower() in MISSING_TOKENS


def _parse_number(token: str, row: int, column: str) -> float:
    tok = token.strip()
    if not _NUMBER.fullmatch(tok):
        raise IngestionError(f"column {column!r}: {token!r} is not a number", row)
    return float(tok)


def load_csv(path, schema, aggregate_duplicates: bool = False) -> Dataset:
    """Read a CSV into a :class:`Dataset`.

    Columns absent from ``schema`` are ignored. With ``aggregate_duplicates``,
    records sharing the schema's ``id_column`` are merged: numeric cells are
    averaged over the non-missing records; binary and categorical cells must
    agree.
    """
    if not isinstance(schema, Schema):
        schema = load_schema(schema) if isinstance(schema, (str, Path)) else Schema.from_mapping(schema)
    if aggregate_duplicates and schema.id_column is None:
        raise SchemaError("aggregate_duplicates needs an id_column in the schema")

    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise IngestionError("file is empty (no header row)") from None
        for name in list(schema.columns) + ([schema.id_column] if schema.id_column else []):
            if name not in header:
                raise SchemaError(f"schema column {name!r} not present in {path}")
        pos = {name: header.index(name) for name in schema.columns}
        id_pos = header.index(schema.id_column) if schema.id_column else None
        records = []
        for row in reader:
            if not row:
                continue
            if len(row) != len(header):
                raise IngestionError(
                    f"expected {len(header)} fields, found {len(row)}", reader.line_num
                )
            records.append((reader.line_num, row))

    names = list(schema.columns)
    m, n = len(records), len(names)
    values = np.full((m, n), np.nan)
    level_maps: dict[str, dict[str, int]] = {nm: {} for nm in names}
    row_ids = []
    for i, (line, row) in enumerate(records):
        row_ids.append(row[id_pos].strip() if id_pos is not None else str(i + 1))
        for j, name in enumerate(names):
            token = row[pos[name]]
            if _is_missing(token):
                continue
            kind = schema.columns[name]
            if kind is ColumnKind.CATEGORICAL:
                levels = level_maps[name]
                values[i, j] = levels.setdefault(token.strip(), len(levels))
            else:
                x = _parse_number(token, line, name)
                if kind is ColumnKind.BINARY and x not in (0.0, 1.0):
                    raise IngestionError(f"binary column {name!r} has value {token!r}", line)
                values[i, j] = x

    columns = []
    for j, name in enumerate(names):
        kind = schema.columns[name]
        levels = tuple(level_maps[name]) if kind is ColumnKind.CATEGORICAL else ()
        columns.append(ColumnMeta(name=name, kind=kind, origin=name, levels=levels))

    if aggregate_duplicates:
        row_ids, values = _aggregate(row_ids, values, columns)
    ds = Dataset(row_ids, _redescribe(columns, values), values, np.isnan(values))
    if ds.m == 0:
        raise EmptyDatasetError(f"{path} has no data rows")
    return ds


def _aggregate(row_ids, values, columns):
    order: dict[str, list[int]] = {}
    for i, rid in enumerate(row_ids):
        order.setdefault(rid, []).append(i)
    out = np.full((len(order), values.shape[1]), np.nan)
    for r, (rid, idx) in enumerate(order.items()):
        block = values[idx]
        for j, meta in enumerate(columns):
            obs = block[:, j][~np.isnan(block[:, j])]
            if obs.size == 0:
                continue
            if meta.kind is ColumnKind.NUMERIC:
                out[r, j] = obs.mean()
            elif np.all(obs == obs[0]):
                out[r, j] = obs[0]
            else:
                raise IngestionError(
                    f"id {rid!r}: conflicting values for non-numeric column {meta.name!r}"
                )
    return list(order), out


def write_csv(ds: Dataset, path, id_column: str = "row_id") -> None:
    """Write values with 17 significant digits; binary columns as 0/1."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([id_column] + ds.names)
        for i, rid in enumerate(ds.row_ids):
            cells = [rid]
            for j, meta in enumerate(ds.columns):
                x = ds.values[i, j]
                if ds.missing_mask[i, j]:
                    cells.append("")
                elif meta.kind is ColumnKind.CATEGORICAL:
                    cells.append(meta.levels[int(x)])
                elif meta.is_binary:
                    cells.append(str(int(x)))
                else:
                    cells.append(format(x, ".17g"))
            w.writerow(cells)


def schema_of(ds: Dataset, id_column: str = "row_id") -> Schema:
    return Schema({c.name: c.kind for c in ds.columns}, id_column)


# --------------------------------------------------------------------------
# preprocessing

def _level_order(meta: ColumnMeta, col: np.ndarray) -> list[int]:
    """Level codes sorted by descending frequency, ties by level name."""
    obs = col[~np.isnan(col)].astype(np.int64)
    counts = np.bincount(obs, minlength=len(meta.levels))
    return sorted(range(len(meta.levels)), key=lambda c: (-counts[c], meta.levels[c]))


def consolidate_categories(dataset: Dataset, column: str, max_categories: int = 3) -> Dataset:
    """Keep the ``max_categories - 1`` most frequent levels and merge the rest."""
    if max_categories < 2:
        raise ConfigError("max_categories must be >= 2")
    j = dataset.index_of(column)
    meta = dataset.columns[j]
    if meta.kind is not ColumnKind.CATEGORICAL:
        raise ConfigError(f"column {column!r} is {meta.kind.value}, not categorical")
    if len(meta.levels) <= max_categories:
        return dataset
    order = _level_order(meta, dataset.values[:, j])
    kept = [meta.levels[c] for c in order[: max_categories - 1]]
    other = OTHER_LEVEL
    while other in kept:
        other += "_"
    new_levels = tuple(kept) + (other,)
    remap = np.full(len(meta.levels), len(kept), dtype=np.float64)
    for new_code, old_code in enumerate(order[: max_categories - 1]):
        remap[old_code] = new_code
    col = dataset.values[:, j]
    new_col = np.where(np.isnan(col), np.nan, remap[np.nan_to_num(col).astype(np.int64)])
    columns = list(dataset.columns)
    columns[j] = replace(meta, levels=new_levels)
    values = dataset.values.copy()
    values[:, j] = new_col
    merged = [meta.levels[c] for c in order[max_categories - 1:]]
    events = dataset.events + [
        {"event": "levels_merged", "column": column, "into": other, "levels": merged}
    ]
    return Dataset(list(dataset.row_ids), columns, values, dataset.missing_mask.copy(), events)


def consolidate_all(dataset: Dataset, max_categories: int = 3) -> Dataset:
    for meta in list(dataset.columns):
        if meta.kind is ColumnKind.CATEGORICAL:
            dataset = consolidate_categories(dataset, meta.name, max_categories)
    return dataset


def dummy_encode(dataset: Dataset) -> Dataset:
    """Replace each L-level categorical column by L-1 binary columns.

    The most frequent level is the reference and gets no column. Missing
    categorical cells become missing in every derived column.
    """
    columns, blocks, masks = [], [], []
    for j, meta in enumerate(dataset.columns):
        col = dataset.values[:, j]
        miss = dataset.missing_mask[:, j]
        if meta.kind is not ColumnKind.CATEGORICAL:
            columns.append(meta)
            blocks.append(col[:, None])
            masks.append(miss[:, None])
            continue
        order = _level_order(meta, col)
        for code in order[1:]:
            dummy = np.where(miss, np.nan, (col == code).astype(np.float64))
            columns.append(ColumnMeta(
                name=f"{meta.name}={meta.levels[code]}", kind=ColumnKind.BINARY, origin=meta.origin
            ))
            blocks.append(dummy[:, None])
            masks.append(miss[:, None])
    m = dataset.m
    values = np.hstack(blocks) if blocks else np.empty((m, 0))
    mask = np.hstack(masks) if masks else np.empty((m, 0), dtype=bool)
    return Dataset(list(dataset.row_ids), _redescribe(columns, values), values, mask,
                   list(dataset.events))


def drop_incomplete_rows(dataset: Dataset) -> Dataset:
    keep = ~dataset.missing_mask.any(axis=1)
    if not keep.any():
        raise EmptyDatasetError("every row has at least one missing value")
    if keep.all():
        return dataset
    dropped = [rid for rid, k in zip(dataset.row_ids, keep) if not k]
    out = dataset.subset(np.flatnonzero(keep))
    out.columns = _redescribe(out.columns, out.values)
    out.events = dataset.events + [{"event": "rows_dropped", "reason": "missing", "rows": dropped}]
    return out


def finalize(dataset: Dataset) -> Dataset:
    """Compute column statistics and drop zero-variance columns."""
    if dataset.missing_mask.any():
        raise DataError("dataset still has missing cells; drop incomplete rows first")
    for meta in dataset.columns:
        if meta.kind is ColumnKind.CATEGORICAL:
            raise ConfigError(f"column {meta.name!r} is still categorical; dummy-encode first")
    if dataset.m < 2:
        raise DataError(f"need at least 2 rows, have {dataset.m}")
    columns = _redescribe(dataset.columns, dataset.values)
    keep, events = [], list(dataset.events)
    for j, meta in enumerate(columns):
        if meta.variance > 0.0:
            keep.append(j)
            continue
        record = {"event": "column_dropped", "column": meta.name, "reason": "zero_variance"}
        log.warning(json.dumps(record))
        events.append(record)
    if not keep:
        raise EmptyDatasetError("every column has zero variance")
    return Dataset(list(dataset.row_ids), [columns[j] for j in keep],
                   dataset.values[:, keep], dataset.missing_mask[:, keep], events)


def preprocess(dataset: Dataset, max_categories: int = 3) -> Dataset:
    """consolidate -> dummy-code -> complete cases -> finalize."""
    return finalize(drop_incomplete_rows(dummy_encode(consolidate_all(dataset, max_categories))))


def column_report(ds: Dataset) -> list[dict]:
    return [
        {"name": c.name, "kind": c.kind.value, "origin": c.origin, "mean": c.mean,
         "variance": c.variance, "min": c.min, "max": c.max, "range": c.range}
        for c in ds.columns
    ]
