import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fnboost.data import (
    DataError,
    Dataset,
    FunctionalCovariate,
    Response,
    ScalarCovariate,
    center_functional,
    grid_to_long,
    load_dataset,
    long_to_grid,
    write_dataset,
)


@pytest.fixture
def small():
    rng = np.random.default_rng(0)
    Y = rng.normal(size=(4, 3))
    return Dataset(
        Response("grid", Y, grid=[0.0, 0.5, 1.0]),
        {"z": ScalarCovariate("z", [1.0, 2.0, 3.0, 4.0]), "g": ScalarCovariate.factor("g", ["b", "a", "b", "c"])},
        {"x": FunctionalCovariate("x", rng.normal(size=(4, 5)), np.linspace(0, 1, 5))},
    )


class TestLayouts:
    def test_grid_to_long_is_time_major(self):
        Y = np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
        r = grid_to_long(Response("grid", Y, grid=[10.0, 20.0]))
        np.testing.assert_array_equal(r.values, [1, 3, 5, 2, 4, 6])
        np.testing.assert_array_equal(r.times, [10, 10, 10, 20, 20, 20])
        np.testing.assert_array_equal(r.curve_id, [0, 1, 2, 0, 1, 2])

    def test_long_to_grid_inverts(self, small):
        back = long_to_grid(grid_to_long(small.response))
        np.testing.assert_array_equal(back.values, small.response.values)
        np.testing.assert_array_equal(back.grid, small.response.grid)

    def test_ragged_long_cannot_become_grid(self):
        r = Response("long", [1.0, 2.0, 3.0], times=[0.0, 1.0, 0.0], curve_id=[0, 0, 1])
        with pytest.raises(DataError, match="common grid"):
            long_to_grid(r)
        np.testing.assert_array_equal(r.curve_sizes(), [2, 1])

    def test_unsorted_times_rejected(self):
        with pytest.raises(DataError, match="not sorted"):
            Response("long", [1.0, 2.0], times=[1.0, 0.0], curve_id=[0, 0])

    def test_grid_mismatch(self):
        with pytest.raises(DataError, match="columns"):
            Response("grid", np.zeros((2, 3)), grid=[0.0, 1.0])


class TestCovariates:
    def test_factor_codes(self):
        f = ScalarCovariate.factor("g", ["b", "a", "b"])
        assert f.levels == ("a", "b")
        np.testing.assert_array_equal(f.values, [1, 0, 1])
        assert f.labels() == ["b", "a", "b"]

    def test_unknown_level(self):
        with pytest.raises(DataError, match="unknown factor level"):
            ScalarCovariate.factor("g", ["x"], levels=["a"])

    def test_centering(self, small):
        c = center_functional(small.functionals["x"])
        np.testing.assert_allclose(c.values.sum(axis=0), 0, atol=1e-14)

    def test_row_mismatch(self):
        with pytest.raises(DataError, match="expected 2 rows"):
            Dataset(Response("scalar", [1.0, 2.0]), {"z": ScalarCovariate("z", [1.0])})

    def test_nonfinite(self):
        with pytest.raises(DataError):
            ScalarCovariate("z", [1.0, np.nan])

    def test_subset_long_renumbers(self):
        r = Response("long", [1.0, 2.0, 3.0, 4.0], times=[0, 1, 0, 1], curve_id=[0, 0, 1, 1])
        d = Dataset(r, {"z": ScalarCovariate("z", [5.0, 6.0])}).subset([1])
        np.testing.assert_array_equal(d.response.curve_id, [0, 0])
        np.testing.assert_array_equal(d.response.values, [3, 4])
        np.testing.assert_array_equal(d.scalars["z"].values, [6])


class TestFiles:
    def test_round_trip(self, small, tmp_path):
        path = write_dataset(small, tmp_path)
        back = load_dataset(path)
        np.testing.assert_array_equal(back.response.values, small.response.values)
        np.testing.assert_array_equal(back.functionals["x"].values, small.functionals["x"].values)
        np.testing.assert_array_equal(back.scalars["g"].values, small.scalars["g"].values)
        assert back.scalars["g"].levels == small.scalars["g"].levels

    def test_long_round_trip(self, tmp_path):
        r = Response("long", [0.1, 0.2, 0.3], times=[0.0, 0.5, 0.25], curve_id=[0, 0, 1])
        back = load_dataset(write_dataset(Dataset(r), tmp_path)).response
        assert back.layout == "long"
        np.testing.assert_array_equal(back.curve_id, [0, 0, 1])
        np.testing.assert_array_equal(back.times, r.times)

    def test_missing_column(self, tmp_path):
        (tmp_path / "y.csv").write_text("y\n1\n2\n")
        (tmp_path / "m.json").write_text(json.dumps({"response": {"file": "y.csv", "value_column": "q"}}))
        with pytest.raises(DataError, match="column 'q' not found"):
            load_dataset(tmp_path / "m.json")

    def test_bad_number_located(self, tmp_path):
        (tmp_path / "y.csv").write_text("y\n1\nabc\n")
        (tmp_path / "m.json").write_text(json.dumps({"response": {"file": "y.csv"}}))
        with pytest.raises(DataError) as e:
            load_dataset(tmp_path / "m.json")
        assert e.value.row == 2

    def test_ragged_csv(self, tmp_path):
        (tmp_path / "y.csv").write_text("a,b\n1,2\n3\n")
        (tmp_path / "g.csv").write_text("t\n0\n1\n")
        (tmp_path / "m.json").write_text(
            json.dumps({"response": {"layout": "grid", "file": "y.csv", "grid_file": "g.csv"}})
        )
        with pytest.raises(DataError, match="ragged"):
            load_dataset(tmp_path / "m.json")

    def test_ids_start_at_one(self, tmp_path):
        (tmp_path / "y.csv").write_text("id,t,y\n0,0,1\n")
        (tmp_path / "m.json").write_text(json.dumps({"response": {"layout": "long", "file": "y.csv"}}))
        with pytest.raises(DataError, match="start at 1"):
            load_dataset(tmp_path / "m.json")

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(DataError, match="missing manifest"):
            load_dataset(tmp_path / "nope.json")


@settings(max_examples=40, deadline=None)
@given(N=st.integers(1, 6), G=st.integers(1, 6), seed=st.integers(0, 10**6))
def test_grid_long_round_trip_property(N, G, seed):
    rng = np.random.default_rng(seed)
    r = Response("grid", rng.normal(size=(N, G)), grid=np.cumsum(rng.uniform(0.1, 1, G)))
    back = long_to_grid(grid_to_long(r))
    np.testing.assert_array_equal(back.values, r.values)
