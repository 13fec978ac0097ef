import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bayesps.data import (DataError, Dataset, is_standardized, load_dataset, recover_categorical,
                          standardize_continuous, validate)

SCHEMA2 = {"treatment": "x", "outcome": "y",
           "confounders": [{"name": "age", "kind": "continuous"}, {"name": "sex", "kind": "binary"}]}


def test_load_four_rows(csv_factory):
    p, s = csv_factory(["x", "y", "age", "sex"],
                       [[1, 0, 50, 1], [0, 1, 61, 0], [1, 1, 44, 0], [0, 0, 70, 1]], SCHEMA2)
    d = load_dataset(p, s)
    assert (d.n, d.p) == (4, 2)
    assert d.names == ["age", "sex"]
    assert validate(d).violations == []


def test_schema_order_not_file_order(csv_factory):
    p, s = csv_factory(["sex", "age", "y", "x"], [[1, 50, 0, 1], [0, 61, 1, 0]], SCHEMA2)
    d = load_dataset(p, s)
    np.testing.assert_array_equal(d.confounders[:, 0], [50, 61])


def test_nonbinary_treatment(csv_factory):
    p, s = csv_factory(["x", "y", "age", "sex"], [[2, 0, 50, 1], [0, 1, 61, 0], [1, 0, 3, 1]],
                       SCHEMA2)
    with pytest.raises(DataError, match="non-binary treatment"):
        load_dataset(p, s)


def test_categorical_three_levels(csv_factory):
    schema = {"treatment": "x", "outcome": "y", "confounders": [{"name": "site", "kind": "categorical"}]}
    rows = [[1, 0, "a"], [0, 1, "b"], [1, 1, "c"], [0, 0, "a"], [1, 0, "b"], [0, 1, "a"]]
    p, s = csv_factory(["x", "y", "site"], rows, schema)
    d = load_dataset(p, s)
    assert d.p == 2
    # "a" is most frequent and becomes the reference
    assert d.names == ["site=b", "site=c"]
    assert recover_categorical(d, "site") == [r[2] for r in rows]


def test_categorical_tie_uses_first_level(csv_factory):
    schema = {"treatment": "x", "outcome": "y", "confounders": [{"name": "g", "kind": "categorical"}]}
    p, s = csv_factory(["x", "y", "g"], [[1, 0, "q"], [0, 1, "p"], [1, 1, "q"], [0, 0, "p"]], schema)
    assert load_dataset(p, s).names == ["g=q"]


def test_missing_file(tmp_path):
    with pytest.raises(DataError, match="missing file"):
        load_dataset(tmp_path / "nope.csv", SCHEMA2)


def test_unparseable_cell(csv_factory):
    p, s = csv_factory(["x", "y", "age", "sex"], [[1, 0, "old", 1], [0, 1, 61, 0]], SCHEMA2)
    with pytest.raises(DataError, match="unparseable"):
        load_dataset(p, s)


def test_duplicate_columns(csv_factory):
    p, s = csv_factory(["x", "y", "age", "age", "sex"], [[1, 0, 5, 5, 1], [0, 1, 6, 6, 0]], SCHEMA2)
    with pytest.raises(DataError, match="duplicate"):
        load_dataset(p, s)


def test_missing_cell_names_row_and_column(csv_factory):
    p, s = csv_factory(["x", "y", "age", "sex"], [[1, 0, "", 1], [0, 1, 61, 0]], SCHEMA2)
    with pytest.raises(DataError) as e:
        load_dataset(p, s)
    assert any("row 1" in v and "age" in v for v in e.value.violations)


def test_validate_empty_control_arm():
    d = Dataset.from_arrays([1, 1, 1], [0, 1, 0], np.ones((3, 1)) * [[1], [2], [3]], ["a"])
    assert "empty control arm" in validate(d).violations


def test_validate_nan_cell():
    c = np.array([[1.0], [np.nan], [3.0], [4.0]])
    rep = validate(Dataset.from_arrays([1, 0, 1, 0], [0, 1, 0, 1], c, ["a"]))
    assert not rep.ok
    assert any("row 2" in v and "'a'" in v for v in rep.violations)


def test_validate_report_counts():
    rep = validate(Dataset.from_arrays([1, 1, 0, 0, 0], [1, 0, 1, 1, 0], np.arange(5.0)[:, None], ["a"]))
    assert rep.ok and rep.n == 5 and rep.p == 1
    assert rep.n_treated == 2
    assert (rep.events_treated, rep.events_control) == (1, 2)


def test_standardize_hand_values():
    d = Dataset.from_arrays([1, 0, 1], [0, 1, 0], np.array([[1.0], [2.0], [3.0]]), ["a"],
                            ["continuous"])
    out = standardize_continuous(d)
    np.testing.assert_allclose(out.confounders[:, 0], [-1, 0, 1], atol=1e-15)
    assert out.transforms["a"] == pytest.approx((2.0, 1.0))


def test_standardize_all_binary_unchanged():
    c = np.array([[0.0, 1.0], [1.0, 0.0], [1.0, 1.0]])
    d = Dataset.from_arrays([1, 0, 1], [0, 1, 0], c, ["a", "b"])
    out = standardize_continuous(d)
    np.testing.assert_array_equal(out.confounders, c)


def test_standardize_zero_variance_names_column():
    d = Dataset.from_arrays([1, 0, 1], [0, 1, 0], np.array([[5.0], [5.0], [5.0]]), ["bmi"],
                            ["continuous"])
    with pytest.raises(DataError, match="bmi"):
        standardize_continuous(d)


def test_dataset_arrays_read_only():
    d = Dataset.from_arrays([1, 0], [0, 1], np.array([[0.5], [1.5]]), ["a"])
    with pytest.raises(ValueError):
        d.confounders[0, 0] = 3.0


@given(st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=3, max_size=30))
def test_standardize_idempotent(vals):
    v = np.array(vals)
    if v.std(ddof=1) < 1e-3:
        return
    n = v.size
    x = np.arange(n) % 2
    d = Dataset.from_arrays(x, 1 - x, v[:, None], ["a"], ["continuous"])
    once = standardize_continuous(d)
    twice = standardize_continuous(once)
    assert is_standardized(once)
    np.testing.assert_allclose(twice.confounders, once.confounders, atol=1e-12)


@given(st.lists(st.sampled_from(["a", "b", "c", "d"]), min_size=4, max_size=40))
def test_dummy_expansion_invertible(levels):
    import tempfile
    from pathlib import Path

    n = len(levels)
    with tempfile.TemporaryDirectory() as tmp:
        p = Path(tmp) / "d.csv"
        p.write_text("x,y,g\n" + "".join(f"{i % 2},{(i // 2) % 2},{lv}\n" for i, lv in enumerate(levels)))
        schema = {"treatment": "x", "outcome": "y", "confounders": [{"name": "g", "kind": "categorical"}]}
        if len(set(levels)) == 1:
            # one level expands to no columns at all
            with pytest.raises(DataError, match="no confounder"):
                load_dataset(p, schema)
            return
        d = load_dataset(p, schema)
    assert d.n == n
    assert d.p == len(set(levels)) - 1
    assert recover_categorical(d, "g") == levels


def test_design_has_intercept():
    d = Dataset.from_arrays([1, 0], [0, 1], np.array([[0.5], [1.5]]), ["a"])
    np.testing.assert_array_equal(d.design(), [[1, 0.5], [1, 1.5]])
    assert math.isclose(d.design()[:, 0].sum(), 2)
