import json
import logging

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from phenoglrm.dataset import (
    ColumnKind, ColumnMeta, Dataset, Schema, consolidate_categories, drop_incomplete_rows,
    dummy_encode, finalize, load_csv, load_schema, preprocess, write_csv, write_schema,
)
from phenoglrm.errors import ConfigError, DataError, EmptyDatasetError, IngestionError, SchemaError


def _csv(tmp_path, text, name="data.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_load_csv_mean(tmp_path):
    ds = load_csv(_csv(tmp_path, "hr\n80\n90\n100\n"), {"hr": "numeric"})
    assert (ds.m, ds.n) == (3, 1)
    assert ds.columns[0].mean == 90.0


@pytest.mark.parametrize("token", ["", "NA", "na", "NaN", "nan"])
def test_missing_tokens(tmp_path, token):
    ds = load_csv(_csv(tmp_path, f"a,b\n1,{token}\n2,3\n"), {"a": "numeric", "b": "numeric"})
    assert ds.missing_mask.tolist() == [[False, True], [False, False]]


def test_quoted_fields_and_categorical(tmp_path):
    ds = load_csv(_csv(tmp_path, 'id,c\n1,"a,b"\n2,x\n'), {"c": "categorical"})
    assert ds.columns[0].levels == ("a,b", "x")


def test_row_width_error_reports_row(tmp_path):
    p = _csv(tmp_path, "a,b\n1,2\n3\n")
    with pytest.raises(IngestionError, match="row 3"):
        load_csv(p, {"a": "numeric", "b": "numeric"})


def test_non_numeric_token(tmp_path):
    # header is row 1
    with pytest.raises(IngestionError, match="row 3"):
        load_csv(_csv(tmp_path, "a\n1\nabc\n"), {"a": "numeric"})


def test_bad_binary_value(tmp_path):
    with pytest.raises(IngestionError):
        load_csv(_csv(tmp_path, "a\n0\n2\n"), {"a": "binary"})


def test_unknown_schema_column(tmp_path):
    with pytest.raises(SchemaError):
        load_csv(_csv(tmp_path, "a\n1\n"), {"zzz": "numeric"})


def test_bad_kind():
    with pytest.raises(SchemaError):
        Schema.from_mapping({"a": "ordinal"})


def test_schema_roundtrip(tmp_path):
    s = Schema({"a": ColumnKind.NUMERIC, "b": ColumnKind.BINARY}, "id")
    write_schema(s, tmp_path / "s.yaml")
    assert load_schema(tmp_path / "s.yaml") == s


def test_large_shape(tmp_path):
    rng = np.random.default_rng(0)
    header = ",".join(f"c{j}" for j in range(98))
    body = "\n".join(",".join(f"{x:.3f}" for x in row) for row in rng.normal(size=(1213, 98)))
    ds = load_csv(_csv(tmp_path, header + "\n" + body + "\n"), {f"c{j}": "numeric" for j in range(98)})
    assert (ds.m, ds.n) == (1213, 98)


def test_aggregate_duplicates(tmp_path):
    p = _csv(tmp_path, "id,hr,sex\np1,80,1\np1,100,1\np2,70,0\n")
    ds = load_csv(p, {"id_column": "id", "columns": {"hr": "numeric", "sex": "binary"}},
                  aggregate_duplicates=True)
    assert ds.row_ids == ["p1", "p2"]
    assert ds.values[:, 0].tolist() == [90.0, 70.0]
    bad = _csv(tmp_path, "id,hr,sex\np1,80,1\np1,100,0\n", "bad.csv")
    with pytest.raises(IngestionError):
        load_csv(bad, {"id_column": "id", "columns": {"hr": "numeric", "sex": "binary"}},
                 aggregate_duplicates=True)


def _categorical(counts):
    levels = tuple(counts)
    codes = np.concatenate([np.full(c, i, dtype=float) for i, c in enumerate(counts.values())])
    cols = [ColumnMeta("c", ColumnKind.CATEGORICAL, "c", levels=levels)]
    return Dataset([str(i) for i in range(codes.size)], cols, codes[:, None],
                   np.zeros((codes.size, 1), dtype=bool))


def _level_counts(ds):
    meta = ds.columns[0]
    codes = ds.values[:, 0].astype(int)
    return {meta.levels[c]: int(n) for c, n in enumerate(np.bincount(codes, minlength=len(meta.levels)))}


def test_consolidate_frequency():
    out = consolidate_categories(_categorical({"a": 50, "b": 30, "c": 10, "d": 5}), "c", 3)
    assert _level_counts(out) == {"a": 50, "b": 30, "other": 15}


def test_consolidate_noop():
    ds = _categorical({"a": 10, "b": 10})
    assert consolidate_categories(ds, "c", 3) is ds


def test_consolidate_lexicographic_ties():
    out = consolidate_categories(_categorical({"c": 5, "b": 5, "a": 5}), "c", 2)
    assert _level_counts(out) == {"a": 5, "other": 10}


def test_consolidate_not_categorical(small_mixed):
    with pytest.raises(ConfigError):
        consolidate_categories(small_mixed, "n0")
    with pytest.raises(ConfigError):
        consolidate_categories(_categorical({"a": 1, "b": 1}), "c", 1)


def test_dummy_encode():
    ds = dummy_encode(_categorical({"x": 5, "y": 3, "z": 2}))
    assert ds.names == ["c=y", "c=z"]
    assert all(c.origin == "c" and c.is_binary for c in ds.columns)
    assert ds.values[0].tolist() == [0.0, 0.0]  # reference level x
    assert dummy_encode(_categorical({"yes": 4, "no": 2})).n == 1


def test_drop_incomplete_rows():
    v = np.arange(10.0).reshape(5, 2)
    mask = np.zeros((5, 2), dtype=bool)
    mask[1, 0] = mask[3, 1] = True
    v[mask] = np.nan
    cols = [ColumnMeta("a", ColumnKind.NUMERIC, "a"), ColumnMeta("b", ColumnKind.NUMERIC, "b")]
    ds = Dataset(list("abcde"), cols, v, mask)
    out = drop_incomplete_rows(ds)
    assert out.row_ids == ["a", "c", "e"]
    assert drop_incomplete_rows(out) is out
    with pytest.raises(EmptyDatasetError):
        drop_incomplete_rows(Dataset(["a"], cols[:1], [[np.nan]], [[True]]))


def test_finalize_stats(caplog):
    cols = [ColumnMeta("a", ColumnKind.NUMERIC, "a"), ColumnMeta("k", ColumnKind.NUMERIC, "k"),
            ColumnMeta("b", ColumnKind.BINARY, "b")]
    v = np.array([[2.0, 7, 0], [4.0, 7, 1], [2.0, 7, 1], [4.0, 7, 1]])
    with caplog.at_level(logging.WARNING):
        out = finalize(Dataset(list("wxyz"), cols, v, np.zeros(v.shape, dtype=bool)))
    assert out.names == ["a", "b"]
    record = json.loads(caplog.records[-1].getMessage())
    assert record["column"] == "k" and record["reason"] == "zero_variance"
    b = out.columns[1]
    assert b.variance == pytest.approx(0.25) and b.range == 1.0
    two = finalize(Dataset(["p", "q"], cols[:1], [[2.0], [4.0]], np.zeros((2, 1), dtype=bool)))
    assert (two.columns[0].mean, two.columns[0].variance, two.columns[0].range) == (3.0, 2.0, 2.0)


def test_finalize_errors():
    cols = [ColumnMeta("a", ColumnKind.NUMERIC, "a")]
    with pytest.raises(DataError):
        finalize(Dataset(["p"], cols, [[1.0]], [[False]]))
    with pytest.raises(DataError):
        finalize(Dataset(["p", "q"], cols, [[1.0], [np.nan]], [[False], [True]]))


def test_preprocess_and_write_roundtrip(tmp_path):
    p = _csv(tmp_path, "id,x,g,s\n1,1.5,a,1\n2,,b,0\n3,2.5,c,0\n4,0.1,a,1\n5,3,d,0\n")
    schema = Schema({"x": ColumnKind.NUMERIC, "g": ColumnKind.CATEGORICAL, "s": ColumnKind.BINARY}, "id")
    ds = preprocess(load_csv(p, schema))
    assert ds.row_ids == ["1", "3", "4", "5"]
    assert not ds.missing_mask.any()
    write_csv(ds, tmp_path / "out.csv")
    write_schema(Schema({c.name: c.kind for c in ds.columns}, "row_id"), tmp_path / "out.yaml")
    again = load_csv(tmp_path / "out.csv", load_schema(tmp_path / "out.yaml"))
    np.testing.assert_array_equal(again.values, ds.values)


@given(st.integers(3, 40), st.integers(0, 2**31 - 1))
def test_variance_matches_values(m, seed):
    from conftest import mixed_dataset
    ds = mixed_dataset(m, 3, 2, seed)
    for j, c in enumerate(ds.columns):
        assert c.variance == pytest.approx(float(np.var(ds.values[:, j], ddof=1)), rel=1e-12)
        assert c.range == c.max - c.min and c.variance >= 0


@given(st.lists(st.sampled_from("abcde"), min_size=2, max_size=40))
def test_dummy_rows_sum_at_most_one(levels):
    names = sorted(set(levels))
    codes = np.array([names.index(x) for x in levels], dtype=float)
    cols = [ColumnMeta("c", ColumnKind.CATEGORICAL, "c", levels=tuple(names))]
    ds = dummy_encode(Dataset([str(i) for i in range(len(levels))], cols, codes[:, None],
                              np.zeros((len(levels), 1), dtype=bool)))
    if ds.n:
        assert ds.values.sum(axis=1).max() <= 1


@given(st.integers(0, 2**31 - 1))
def test_drop_incomplete_idempotent(seed):
    rng = np.random.default_rng(seed)
    v = rng.normal(size=(12, 3))
    mask = rng.random((12, 3)) < 0.1
    mask[0] = False
    v[mask] = np.nan
    cols = [ColumnMeta(f"c{j}", ColumnKind.NUMERIC, f"c{j}") for j in range(3)]
    once = drop_incomplete_rows(Dataset([str(i) for i in range(12)], cols, v, mask))
    twice = drop_incomplete_rows(once)
    assert twice.row_ids == once.row_ids
    np.testing.assert_array_equal(twice.values, once.values)
