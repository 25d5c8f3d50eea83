"""Dataset container: masks, sentinels, CSV round-trip, derived columns."""

from __future__ import annotations

import numpy as np
import pytest

from rfimp.data import (
    ColumnKind,
    ColumnSpec,
    CsvParseError,
    Dataset,
    add_product_column,
    feature_matrix,
    infer_specs,
    read_csv,
    write_csv,
)
from conftest import assert_datasets_equal

CONT = ColumnKind.CONTINUOUS
CAT = ColumnKind.CATEGORICAL


def _mixed_dataset() -> Dataset:
    specs = [
        ColumnSpec("a", CONT),
        ColumnSpec("g", CAT, ("low", "mid", "high")),
    ]
    a = np.array([1.5, np.nan, -3.25, 4.0])
    g = np.array([0, 2, -1, 1], dtype=np.int32)
    return Dataset(specs, [a, g])


def test_column_spec_validation():
    with pytest.raises(ValueError):
        ColumnSpec("g", CAT)  # no levels
    with pytest.raises(ValueError):
        ColumnSpec("g", CAT, ("x", "x"))  # duplicate levels
    with pytest.raises(ValueError):
        ColumnSpec("a", CONT, ("x",))  # continuous with levels


def test_constructor_derives_missing_from_sentinels():
    ds = _mixed_dataset()
    assert ds.n_rows == 4
    assert np.array_equal(ds.missing("a"), [False, True, False, False])
    assert np.array_equal(ds.missing("g"), [False, False, True, False])
    assert ds.n_missing() == 2
    assert not ds.is_complete()
    assert ds.incomplete_columns() == ("a", "g")


def test_constructor_forces_sentinels_at_masked_cells():
    spec = [ColumnSpec("a", CONT)]
    ds = Dataset(spec, [np.array([1.0, 2.0])], [np.array([False, True])])
    vals = ds.column("a")
    assert vals[0] == 1.0
    assert np.isnan(vals[1])


def test_cell_access():
    ds = _mixed_dataset()
    assert ds.cell(0, "a") == 1.5
    assert ds.cell(1, "a") is None
    assert ds.cell(1, "g") == "high"
    assert ds.cell(2, "g") is None


def test_missing_mask_and_values_never_disagree():
    ds = _mixed_dataset()
    for name in ds.names:
        miss = ds.missing(name)
        for r in range(ds.n_rows):
            if miss[r]:
                assert ds.cell(r, name) is None
            else:
                assert ds.cell(r, name) is not None


def test_values_are_read_only():
    ds = _mixed_dataset()
    with pytest.raises(ValueError):
        ds.column("a")[0] = 9.0
    with pytest.raises(ValueError):
        ds.missing("a")[0] = True


def test_duplicate_names_rejected():
    with pytest.raises(ValueError):
        Dataset([ColumnSpec("a", CONT), ColumnSpec("a", CONT)],
                [np.zeros(2), np.zeros(2)])


def test_level_index_out_of_range_rejected():
    with pytest.raises(ValueError):
        Dataset([ColumnSpec("g", CAT, ("x", "y"))],
                [np.array([0, 2], dtype=np.int32)])


def test_take_and_complete_case_mask():
    ds = _mixed_dataset()
    mask = ds.complete_case_mask()
    assert np.array_equal(mask, [True, False, False, True])
    sub = ds.take(mask)
    assert sub.n_rows == 2
    assert sub.is_complete()
    assert sub.cell(1, "a") == 4.0


def test_with_values_replaces_column():
    ds = _mixed_dataset()
    out = ds.with_values("a", np.array([9.0, 8.0, 7.0, 6.0]))
    assert out.is_complete() or out.incomplete_columns() == ("g",)
    assert not out.missing("a").any()
    assert out.cell(1, "a") == 8.0
    # original untouched
    assert ds.cell(1, "a") is None


def test_with_missing_mask_hides_values():
    specs = [ColumnSpec("a", CONT)]
    ds = Dataset(specs, [np.array([1.0, 2.0, 3.0])])
    out = ds.with_missing_mask("a", np.array([False, True, False]))
    assert out.cell(1, "a") is None
    assert out.cell(2, "a") == 3.0
    assert ds.is_complete()


def test_csv_round_trip(tmp_path):
    ds = _mixed_dataset()
    path = tmp_path / "data.csv"
    write_csv(ds, path)
    back = read_csv(path, ds.columns)
    assert_datasets_equal(ds, back)


def test_csv_round_trip_preserves_exact_floats(tmp_path):
    specs = [ColumnSpec("a", CONT)]
    vals = np.array([0.1, 1 / 3, 1e-300, 12345.6789])
    ds = Dataset(specs, [vals])
    path = tmp_path / "exact.csv"
    write_csv(ds, path)
    back = read_csv(path, specs)
    assert np.array_equal(back.column("a"), vals)


def test_read_csv_missing_tokens(tmp_path):
    path = tmp_path / "m.csv"
    path.write_text("a,g\n1.0,low\nNA,high\n2.5,\n")
    ds = read_csv(path, [ColumnSpec("a", CONT),
                         ColumnSpec("g", CAT, ("low", "mid", "high"))])
    assert np.array_equal(ds.missing("a"), [False, True, False])
    assert np.array_equal(ds.missing("g"), [False, False, True])


def test_read_csv_errors_name_row_and_column(tmp_path):
    path = tmp_path / "bad.csv"
    specs = [ColumnSpec("a", CONT)]

    path.write_text("wrong\n1.0\n")
    with pytest.raises(CsvParseError, match="header"):
        read_csv(path, specs)

    path.write_text("a\n1.0\nnope\n")
    with pytest.raises(CsvParseError, match="row 2.*'a'"):
        read_csv(path, specs)

    path.write_text("a\n1.0,2.0\n")
    with pytest.raises(CsvParseError, match="row 1"):
        read_csv(path, specs)

    path.write_text("g\nblue\n")
    with pytest.raises(CsvParseError, match="unknown categorical level"):
        read_csv(path, [ColumnSpec("g", CAT, ("low", "high"))])

    path.write_text("")
    with pytest.raises(CsvParseError, match="empty"):
        read_csv(path, specs)


def test_infer_specs(tmp_path):
    path = tmp_path / "infer.csv"
    path.write_text("a,g\n1.0,low\nNA,high\n2.5,low\n")
    specs = infer_specs(path)
    assert specs[0] == ColumnSpec("a", CONT)
    assert specs[1] == ColumnSpec("g", CAT, ("high", "low"))


def test_add_product_column():
    specs = [ColumnSpec("a", CONT), ColumnSpec("b", CONT)]
    ds = Dataset(specs, [np.array([2.0, 3.0]), np.array([4.0, 5.0])])
    out = add_product_column(ds, "a", "b", "ab")
    assert np.array_equal(out.column("ab"), [8.0, 15.0])

    ds2 = Dataset(specs, [np.array([2.0, np.nan]), np.array([4.0, 5.0])])
    out2 = add_product_column(ds2, "a", "b", "ab")
    assert out2.cell(0, "ab") == 8.0
    assert out2.cell(1, "ab") is None

    with pytest.raises(KeyError):
        add_product_column(ds, "nope", "b", "ab")
    with pytest.raises(ValueError):
        add_product_column(out, "a", "b", "ab")  # name collision


def test_feature_matrix():
    ds = _mixed_dataset().take([0, 3])
    X, levels = feature_matrix(ds, ["a", "g"])
    assert X.shape == (2, 2)
    assert levels == (0, 3)
    assert np.array_equal(X[:, 0], [1.5, 4.0])
    assert np.array_equal(X[:, 1], [0.0, 1.0])

    with pytest.raises(ValueError, match="missing"):
        feature_matrix(_mixed_dataset(), ["a"])
