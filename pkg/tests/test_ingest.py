import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from zidefect.errors import (
    EmptyFile,
    MissingColumn,
    NonIntegerBugs,
    NonNumericCell,
    UnknownCovariate,
    ZeroCovariatesForNonZIFamily,
)
from zidefect.ingest import (
    Dataset,
    ModelSpec,
    build_design,
    histogram,
    histogram_csv,
    load_csv,
    write_csv,
)


def write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


def test_load_three_rows(tmp_path):
    p = write(tmp_path, "id,wmc,nloc,bugs\na,2,10,0\nb,5,30,1\nc,1,4,0\n")
    d = load_csv(p, schema=["wmc", "nloc"])
    assert d.n == 3
    assert d.bugs.tolist() == [0, 1, 0]
    assert d.module_ids == ("a", "b", "c")
    assert d.metrics["nloc"].tolist() == [10.0, 30.0, 4.0]


@pytest.mark.parametrize("value", ["-1", "1.5", "x"])
def test_bad_bugs(tmp_path, value):
    p = write(tmp_path, f"id,wmc,bugs\na,2,{value}\n")
    with pytest.raises(NonIntegerBugs):
        load_csv(p)


def test_missing_bugs_column(tmp_path):
    p = write(tmp_path, "id,wmc,nloc\na,2,10\n")
    with pytest.raises(MissingColumn):
        load_csv(p)


def test_missing_schema_column(tmp_path):
    p = write(tmp_path, "id,wmc,bugs\na,2,0\n")
    with pytest.raises(MissingColumn, match="rfc"):
        load_csv(p, schema=["wmc", "rfc"])


@pytest.mark.parametrize("cell", ["abc", "", "nan"])
def test_bad_metric_cell(tmp_path, cell):
    p = write(tmp_path, f"id,wmc,bugs\na,{cell},0\n")
    with pytest.raises(NonNumericCell):
        load_csv(p)


def test_empty_file(tmp_path):
    with pytest.raises(EmptyFile):
        load_csv(write(tmp_path, ""))
    with pytest.raises(EmptyFile):
        load_csv(write(tmp_path, "id,bugs\n", "h.csv"))


def test_extra_columns_kept_and_ids_generated(tmp_path):
    p = write(tmp_path, "wmc,noc,bugs\n1,0,2\n3,1,0\n")
    d = load_csv(p, schema=["wmc"])
    assert d.columns == ["wmc", "noc"]
    assert d.id_column is None
    assert d.module_ids == ("1", "2")


def test_round_trip(tmp_path, metric_data):
    p = tmp_path / "rt.csv"
    write_csv(metric_data, p)
    assert load_csv(p) == metric_data


def test_dataset_is_immutable(metric_data):
    with pytest.raises(ValueError):
        metric_data.bugs[0] = 5
    with pytest.raises(ValueError):
        metric_data.metrics["wmc"][0] = 1.0


def test_build_design_zip(metric_data):
    spec = ModelSpec("zip", ("wmc", "rfc", "cbo", "lcom"), ("nloc",))
    dm = build_design(metric_data, spec)
    assert dm.X.shape == (metric_data.n, 5)
    assert dm.Z.shape == (metric_data.n, 2)
    assert np.all(dm.X[:, 0] == 1) and np.all(dm.Z[:, 0] == 1)
    np.testing.assert_array_equal(dm.X[:, 2], metric_data.metrics["rfc"])


def test_build_design_zero_wmc(metric_data):
    dm = build_design(metric_data, ModelSpec("zip", ("wmc", "rfc", "cbo", "lcom"), ("wmc",)))
    assert dm.zero_names == ("intercept", "wmc")
    np.testing.assert_array_equal(dm.Z[:, 1], metric_data.metrics["wmc"])


def test_build_design_intercept_only(metric_data):
    dm = build_design(metric_data, ModelSpec("poisson"))
    assert dm.X.shape == (metric_data.n, 1)
    assert dm.Z is None


def test_build_design_is_pure(metric_data):
    spec = ModelSpec("zinb", ("wmc",), ("nloc",))
    before = {k: v.copy() for k, v in metric_data.metrics.items()}
    a, b = build_design(metric_data, spec), build_design(metric_data, spec)
    np.testing.assert_array_equal(a.X, b.X)
    np.testing.assert_array_equal(a.Z, b.Z)
    for k, v in before.items():
        np.testing.assert_array_equal(metric_data.metrics[k], v)


def test_spec_errors(metric_data):
    with pytest.raises(ZeroCovariatesForNonZIFamily):
        ModelSpec("poisson", ("wmc",), ("nloc",))
    with pytest.raises(UnknownCovariate):
        build_design(metric_data, ModelSpec("poisson", ("dit",)))
    with pytest.raises(Exception):
        ModelSpec("poisson", ("wmc", "wmc"))


@pytest.mark.parametrize(
    "y, drop, expected",
    [
        ([0, 0, 0, 2], False, [(0, 3), (2, 1)]),
        ([0, 1, 1, 3], True, [(1, 2), (3, 1)]),
        ([], False, []),
        ([], True, []),
    ],
)
def test_histogram(y, drop, expected):
    assert histogram(y, drop_zeros=drop) == expected


def test_histogram_csv():
    assert histogram_csv([(0, 3), (2, 1)]) == "value,count\n0,3\n2,1\n"


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(min_value=0, max_value=30), max_size=200))
def test_histogram_counts_sum(y):
    assert sum(c for _, c in histogram(y)) == len(y)
    assert sum(c for _, c in histogram(y, drop_zeros=True)) == sum(1 for v in y if v != 0)


@settings(max_examples=25, deadline=None)
@given(
    st.lists(
        st.tuples(st.floats(0, 1e6, allow_nan=False), st.integers(0, 50)),
        min_size=1, max_size=30,
    )
)
def test_round_trip_property(tmp_path_factory, rows):
    d = Dataset(
        tuple(f"m{i}" for i in range(len(rows))),
        {"wmc": np.array([r[0] for r in rows])},
        np.array([r[1] for r in rows]),
    )
    p = tmp_path_factory.mktemp("rt") / "d.csv"
    write_csv(d, p)
    assert load_csv(p) == d
