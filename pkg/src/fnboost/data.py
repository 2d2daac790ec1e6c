"""Dataset containers, layout conversion and file ingestion.

A dataset holds scalar covariates (numeric or factor), functional covariates
observed on one grid per variable, and a response in one of three layouts:
``scalar`` (one value per curve), ``grid`` (an ``N x G`` matrix on a common
grid) or ``long`` (curve-specific grids, one row per observation).

Long vectors produced from a grid are stacked time-major: all curves at the
first time point, then all curves at the second, and so on.
"""

import csv
import json
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

__all__ = [
    "DataError",
    "FunctionalCovariate",
    "ScalarCovariate",
    "Response",
    "Dataset",
    "load_dataset",
    "center_functional",
    "grid_to_long",
    "long_to_grid",
    "write_csv_matrix",
    "write_dataset",
]


class DataError(ValueError):
    """Invalid or inconsistent input data."""

    def __init__(self, message, variable=None, row=None):
        self.variable = variable
        self.row = row
        where = []
        if variable is not None:
            where.append(f"variable {variable!r}")
        if row is not None:
            where.append(f"row {row}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)


def _check_grid(grid, name):
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size == 0:
        raise DataError("grid must be a non-empty vector", name)
    if not np.all(np.isfinite(grid)):
        raise DataError("grid contains non-finite values", name)
    if np.any(np.diff(grid) <= 0):
        bad = int(np.flatnonzero(np.diff(grid) <= 0)[0]) + 1
        raise DataError("grid must be strictly increasing", name, bad)
    return grid


def _check_finite(values, name):
    bad = ~np.isfinite(values)
    if bad.any():
        row = int(np.argwhere(bad)[0][0])
        raise DataError("non-finite value", name, row)


@dataclass(frozen=True)
class FunctionalCovariate:
    """Curves ``x_i(s_r)`` stored as an ``N x R`` matrix with grid ``s``."""

    name: str
    values: np.ndarray
    grid: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim != 2:
            raise DataError("functional covariate must be a matrix", self.name)
        grid = _check_grid(self.grid, self.name)
        if grid.size != values.shape[1]:
            raise DataError(
                f"grid has {grid.size} points but matrix has {values.shape[1]} columns",
                self.name,
            )
        _check_finite(values, self.name)
        values.setflags(write=False)
        grid.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "grid", grid)

    @property
    def n_curves(self):
        return self.values.shape[0]


@dataclass(frozen=True)
class ScalarCovariate:
    """Numeric vector, or factor stored as level codes into ``levels``."""

    name: str
    values: np.ndarray
    kind: str = "numeric"
    levels: tuple = ()

    def __post_init__(self):
        if self.kind not in ("numeric", "factor"):
            raise DataError(f"unknown covariate kind {self.kind!r}", self.name)
        if self.kind == "numeric":
            values = np.array(self.values, dtype=float)
            _check_finite(values, self.name)
        else:
            values = np.array(self.values, dtype=int)
            if values.size and (values.min() < 0 or values.max() >= len(self.levels)):
                raise DataError("factor code out of range", self.name)
        if values.ndim != 1:
            raise DataError("scalar covariate must be a vector", self.name)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "levels", tuple(str(l) for l in self.levels))

    @classmethod
    def factor(cls, name, labels, levels=None):
        """Build a factor from raw labels; levels default to sorted unique labels."""
        labels = [str(l) for l in labels]
        if levels is None:
            levels = sorted(set(labels))
        index = {l: k for k, l in enumerate(levels)}
        try:
            codes = [index[l] for l in labels]
        except KeyError as e:
            raise DataError(f"unknown factor level {e.args[0]!r}", name) from None
        return cls(name, np.array(codes, dtype=int), "factor", tuple(levels))

    @property
    def is_factor(self):
        return self.kind == "factor"

    def labels(self):
        return [self.levels[c] for c in self.values]


@dataclass(frozen=True)
class Response:
    """Response in ``scalar``, ``grid`` or ``long`` layout.

    For ``long`` data, ``curve_id`` holds zero-based curve indices; the file
    format uses 1-based ids.
    """

    layout: str
    values: np.ndarray
    grid: Optional[np.ndarray] = None
    times: Optional[np.ndarray] = None
    curve_id: Optional[np.ndarray] = None
    name: str = "y"

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        name = self.name
        if self.layout == "scalar":
            if values.ndim != 1:
                raise DataError("scalar response must be a vector", name)
        elif self.layout == "grid":
            if values.ndim != 2:
                raise DataError("grid response must be a matrix", name)
            grid = _check_grid(self.grid, name)
            if grid.size != values.shape[1]:
                raise DataError(
                    f"grid has {grid.size} points but matrix has {values.shape[1]} columns",
                    name,
                )
            grid.setflags(write=False)
            object.__setattr__(self, "grid", grid)
        elif self.layout == "long":
            times = np.array(self.times, dtype=float)
            cid = np.array(self.curve_id, dtype=int)
            if values.ndim != 1 or times.shape != values.shape or cid.shape != values.shape:
                raise DataError("long response needs equal-length values, times and curve ids", name)
            _check_finite(times, name + ":times")
            if cid.size:
                present = np.unique(cid)
                if present[0] != 0 or present[-1] != present.size - 1:
                    raise DataError("curve ids must form a contiguous index set", name)
            for i in range(cid.max() + 1 if cid.size else 0):
                ti = times[cid == i]
                if np.any(np.diff(ti) < 0):
                    row = int(np.flatnonzero(cid == i)[np.flatnonzero(np.diff(ti) < 0)[0] + 1])
                    raise DataError(f"times of curve {i + 1} are not sorted", name, row)
            times.setflags(write=False)
            cid.setflags(write=False)
            object.__setattr__(self, "times", times)
            object.__setattr__(self, "curve_id", cid)
        else:
            raise DataError(f"unknown response layout {self.layout!r}", name)
        _check_finite(values, name)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def n_curves(self):
        if self.layout == "long":
            return int(self.curve_id.max()) + 1 if self.curve_id.size else 0
        return self.values.shape[0]

    @property
    def is_functional(self):
        return self.layout != "scalar"

    def curve_sizes(self):
        """Number of observations per curve, ``G_i``."""
        if self.layout == "long":
            return np.bincount(self.curve_id, minlength=self.n_curves)
        if self.layout == "grid":
            return np.full(self.n_curves, self.values.shape[1])
        return np.ones(self.n_curves, dtype=int)

    def to_long(self):
        """Return ``(values, times, curve_id)`` in long layout."""
        if self.layout == "long":
            return self.values, self.times, self.curve_id
        if self.layout == "grid":
            r = grid_to_long(self)
            return r.values, r.times, r.curve_id
        n = self.values.size
        return self.values, np.zeros(n), np.arange(n)


@dataclass(frozen=True)
class Dataset:
    """Covariates and response; covariate row ``k`` always refers to curve ``k``."""

    response: Optional[Response] = None
    scalars: dict = field(default_factory=dict)
    functionals: dict = field(default_factory=dict)

    def __post_init__(self):
        scalars = self.scalars
        functionals = self.functionals
        if not isinstance(scalars, dict):
            scalars = {s.name: s for s in scalars}
        if not isinstance(functionals, dict):
            functionals = {f.name: f for f in functionals}
        object.__setattr__(self, "scalars", dict(scalars))
        object.__setattr__(self, "functionals", dict(functionals))
        dup = set(self.scalars) & set(self.functionals)
        if self.response is not None and self.response.name in self.scalars | self.functionals:
            dup.add(self.response.name)
        if dup:
            raise DataError(f"duplicate variable names {sorted(dup)}")
        n = self.n_curves
        for name, s in self.scalars.items():
            if s.values.shape[0] != n:
                raise DataError(f"expected {n} rows, got {s.values.shape[0]}", name)
        for name, f in self.functionals.items():
            if f.n_curves != n:
                raise DataError(f"expected {n} rows, got {f.n_curves}", name)

    @property
    def n_curves(self):
        if self.response is not None:
            return self.response.n_curves
        for s in self.scalars.values():
            return s.values.shape[0]
        for f in self.functionals.values():
            return f.n_curves
        return 0

    def variable(self, name):
        if name in self.scalars:
            return self.scalars[name]
        if name in self.functionals:
            return self.functionals[name]
        raise DataError("variable not found in data", name)

    def with_response(self, response):
        return Dataset(response, self.scalars, self.functionals)

    def subset(self, rows):
        """Curves ``rows`` (all covariates and the response), renumbered."""
        rows = np.asarray(rows, dtype=int)
        scalars = {
            k: ScalarCovariate(k, s.values[rows], s.kind, s.levels) for k, s in self.scalars.items()
        }
        functionals = {
            k: FunctionalCovariate(k, f.values[rows], f.grid) for k, f in self.functionals.items()
        }
        r = self.response
        if r is None:
            resp = None
        elif r.layout == "scalar":
            resp = Response("scalar", r.values[rows], name=r.name)
        elif r.layout == "grid":
            resp = Response("grid", r.values[rows], grid=r.grid, name=r.name)
        else:
            new_id = -np.ones(r.n_curves, dtype=int)
            new_id[rows] = np.arange(rows.size)
            keep = np.isin(r.curve_id, rows)
            resp = Response(
                "long", r.values[keep], times=r.times[keep], curve_id=new_id[r.curve_id[keep]], name=r.name
            )
        return Dataset(resp, scalars, functionals)


def center_functional(x: FunctionalCovariate) -> FunctionalCovariate:
    """Subtract the pointwise mean curve so every column sums to zero."""
    if x.n_curves < 2:
        raise DataError("centering needs at least two curves", x.name)
    v = x.values - x.values.mean(axis=0)
    return FunctionalCovariate(x.name, v, x.grid)


def grid_to_long(r: Response) -> Response:
    """Stack a grid response time-major into long layout."""
    if r.layout != "grid":
        raise DataError("grid_to_long needs a grid response", r.name)
    N, G = r.values.shape
    values = r.values.ravel(order="F")
    times = np.repeat(r.grid, N)
    curve_id = np.tile(np.arange(N), G)
    return Response("long", values, times=times, curve_id=curve_id, name=r.name)


def long_to_grid(r: Response) -> Response:
    """Inverse of :func:`grid_to_long` for long data on a common grid."""
    if r.layout != "long":
        raise DataError("long_to_grid needs a long response", r.name)
    N = r.n_curves
    grid = np.unique(r.times)
    if r.values.size != N * grid.size:
        raise DataError("curves are not observed on a common grid", r.name)
    col = np.searchsorted(grid, r.times)
    out = np.full((N, grid.size), np.nan)
    out[r.curve_id, col] = r.values
    if np.isnan(out).any():
        raise DataError("curves are not observed on a common grid", r.name)
    return Response("grid", out, grid=grid, name=r.name)


# ---------------------------------------------------------------------------
# CSV ingestion


def _read_csv(path, variable):
    if not os.path.exists(path):
        raise DataError(f"missing file {path}", variable)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"empty file {path}; a header row is required", variable)
    header, body = rows[0], rows[1:]
    for k, row in enumerate(body):
        if len(row) != len(header):
            raise DataError(
                f"ragged CSV {path}: expected {len(header)} cells, got {len(row)}", variable, k + 1
            )
    return header, body


def _to_float(cell, variable, row):
    try:
        v = float(cell)
    except ValueError:
        raise DataError(f"cannot parse {cell!r} as a number", variable, row) from None
    if not np.isfinite(v):
        raise DataError("non-finite value", variable, row)
    return v


def _read_matrix(path, variable):
    _, body = _read_csv(path, variable)
    out = np.empty((len(body), len(body[0]) if body else 0))
    for i, row in enumerate(body):
        for j, cell in enumerate(row):
            out[i, j] = _to_float(cell, variable, i + 1)
    return out


def _read_column(path, column, variable, as_float=True):
    header, body = _read_csv(path, variable)
    if column is None:
        if len(header) != 1:
            raise DataError(f"{path} has several columns; name one with 'column'", variable)
        j = 0
    else:
        if column not in header:
            raise DataError(f"column {column!r} not found in {path}", variable)
        j = header.index(column)
    if as_float:
        return np.array([_to_float(row[j], variable, i + 1) for i, row in enumerate(body)])
    return [row[j] for row in body]


def load_dataset(manifest_path) -> Dataset:
    """Load a dataset described by a JSON manifest.

    The manifest has the form::

        {"response": {"layout": "scalar" | "grid" | "long", "file": ...,
                      "grid_file": ..., "id_column": "id",
                      "time_column": "t", "value_column": "y", "name": "y"},
         "scalars": [{"name": ..., "file": ..., "column": ..., "kind": "numeric" | "factor"}],
         "functionals": [{"name": ..., "file": ..., "grid_file": ...}]}

    Relative paths are resolved against the manifest's directory. Every CSV
    must start with a header row. Grid files hold a single column.
    """
    if not os.path.exists(manifest_path):
        raise DataError(f"missing manifest {manifest_path}")
    with open(manifest_path) as fh:
        try:
            manifest = json.load(fh)
        except json.JSONDecodeError as e:
            raise DataError(f"manifest is not valid JSON: {e}") from None
    base = os.path.dirname(os.path.abspath(manifest_path))

    def path(p):
        return p if os.path.isabs(p) else os.path.join(base, p)

    response = None
    spec = manifest.get("response")
    if spec is not None:
        layout = spec.get("layout", "scalar")
        name = spec.get("name", "y")
        if layout == "scalar":
            values = _read_column(path(spec["file"]), spec.get("value_column"), name)
            response = Response("scalar", values, name=name)
        elif layout == "grid":
            values = _read_matrix(path(spec["file"]), name)
            if "grid_file" not in spec:
                raise DataError("grid response needs a grid_file", name)
            grid = _read_column(path(spec["grid_file"]), None, name + ":grid")
            response = Response("grid", values, grid=grid, name=name)
        elif layout == "long":
            f = path(spec["file"])
            values = _read_column(f, spec.get("value_column", "y"), name)
            times = _read_column(f, spec.get("time_column", "t"), name)
            ids = _read_column(f, spec.get("id_column", "id"), name)
            if np.any(ids != np.round(ids)):
                raise DataError("curve ids must be integers", name)
            ids = ids.astype(int)
            if ids.size and ids.min() != 1:
                raise DataError("curve ids must start at 1", name)
            response = Response("long", values, times=times, curve_id=ids - 1, name=name)
        else:
            raise DataError(f"unknown response layout {layout!r}", name)

    scalars = {}
    for entry in manifest.get("scalars", []):
        name = entry["name"]
        kind = entry.get("kind", "numeric")
        column = entry.get("column", name)
        if kind == "factor":
            labels = _read_column(path(entry["file"]), column, name, as_float=False)
            scalars[name] = ScalarCovariate.factor(name, labels, entry.get("levels"))
        else:
            scalars[name] = ScalarCovariate(name, _read_column(path(entry["file"]), column, name))

    functionals = {}
    for entry in manifest.get("functionals", []):
        name = entry["name"]
        values = _read_matrix(path(entry["file"]), name)
        grid = _read_column(path(entry["grid_file"]), None, name + ":grid")
        functionals[name] = FunctionalCovariate(name, values, grid)

    return Dataset(response, scalars, functionals)


def write_csv_matrix(path, matrix, header):
    """Write a numeric matrix with 17 significant digits."""
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in matrix:
            w.writerow([f"{v:.17g}" for v in row])


def _write_column(path, name, values):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([name])
        for v in values:
            w.writerow([v if isinstance(v, str) else f"{float(v):.17g}"])


def write_dataset(data: Dataset, directory, manifest_name="manifest.json"):
    """Write a dataset as CSV files plus a manifest readable by ``load_dataset``.

    Returns the manifest path. Numbers carry 17 significant digits so that a
    round trip reproduces the values exactly.
    """
    os.makedirs(directory, exist_ok=True)
    manifest = {}
    r = data.response
    if r is not None:
        if r.layout == "scalar":
            _write_column(os.path.join(directory, "response.csv"), r.name, r.values)
            manifest["response"] = {"layout": "scalar", "file": "response.csv", "name": r.name}
        elif r.layout == "grid":
            write_csv_matrix(
                os.path.join(directory, "response.csv"), r.values, [f"t{j + 1}" for j in range(r.grid.size)]
            )
            _write_column(os.path.join(directory, "response_grid.csv"), "t", r.grid)
            manifest["response"] = {
                "layout": "grid", "file": "response.csv", "grid_file": "response_grid.csv", "name": r.name
            }
        else:
            M = np.column_stack([r.curve_id + 1, r.times, r.values])
            write_csv_matrix(os.path.join(directory, "response.csv"), M, ["id", "t", "y"])
            manifest["response"] = {
                "layout": "long", "file": "response.csv", "id_column": "id",
                "time_column": "t", "value_column": "y", "name": r.name,
            }
    scalars = []
    for name, cov in data.scalars.items():
        f = f"scalar_{name}.csv"
        values = cov.labels() if cov.is_factor else cov.values
        _write_column(os.path.join(directory, f), name, values)
        entry = {"name": name, "file": f, "column": name, "kind": cov.kind}
        if cov.is_factor:
            entry["levels"] = list(cov.levels)
        scalars.append(entry)
    if scalars:
        manifest["scalars"] = scalars
    functionals = []
    for name, x in data.functionals.items():
        f, g = f"functional_{name}.csv", f"functional_{name}_grid.csv"
        write_csv_matrix(os.path.join(directory, f), x.values, [f"s{j + 1}" for j in range(x.grid.size)])
        _write_column(os.path.join(directory, g), "s", x.grid)
        functionals.append({"name": name, "file": f, "grid_file": g})
    if functionals:
        manifest["functionals"] = functionals
    path = os.path.join(directory, manifest_name)
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path
