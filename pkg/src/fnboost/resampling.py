"""Resampling folds, out-of-bag risk curves and bootstrap coefficient bands."""

import os
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .boosting import (
    Engine,
    Structure,
    _model_from_engine,
    compute_all_constraints,
    compute_offset,
    training_weights,
)

__all__ = [
    "FoldMatrix",
    "make_folds",
    "CVResult",
    "oob_risk_curves",
    "BootstrapResult",
    "bootstrap_ci",
    "n_jobs",
]


@dataclass(frozen=True)
class FoldMatrix:
    """Integer resampling weights, one row per curve and one column per fold.

    ``unit_map`` maps each curve to its independent unit (group) index; rows
    of curves in the same unit are identical.
    """

    weights: np.ndarray
    type: str
    unit_map: Optional[np.ndarray] = None

    @property
    def B(self):
        return self.weights.shape[1]

    def unit_weights(self):
        """Weights at the unit level (one row per unit)."""
        if self.unit_map is None:
            return self.weights
        _, first = np.unique(self.unit_map, return_index=True)
        return self.weights[first]


def make_folds(n_units, type="bootstrap", B=None, seed=None, grouping=None) -> FoldMatrix:
    """Draw resampling weights.

    Parameters
    ----------
    n_units : int
        Number of curves (or, with ``grouping``, its length must match).
    type : {"bootstrap", "kfold", "subsampling"}
    B : int, optional
        Number of folds; defaults to 10 for ``kfold`` and 25 otherwise.
    seed : int or numpy SeedSequence, optional
    grouping : array_like, optional
        Unit label per curve; resampling happens on unique labels (sorted)
        and is copied to all curves of a unit.

    Notes
    -----
    ``kfold`` with as many folds as units is leave-one-unit-out with unit
    ``j`` held out in fold ``j``.
    """
    if type not in ("bootstrap", "kfold", "subsampling"):
        raise ValueError(f"unknown fold type {type!r}")
    if B is None:
        B = 10 if type == "kfold" else 25
    B = int(B)
    unit_map = None
    if grouping is not None:
        grouping = np.asarray(grouping)
        if grouping.size != n_units:
            raise ValueError("grouping needs one label per curve")
        _, unit_map = np.unique(grouping, return_inverse=True)
        n = int(unit_map.max()) + 1
    else:
        n = int(n_units)
    if n < 2:
        raise ValueError("resampling needs at least two units")
    rng = np.random.default_rng(seed)
    if type == "kfold":
        if B < 2:
            raise ValueError("kfold needs B >= 2")
        if B > n:
            raise ValueError(f"kfold with B={B} folds exceeds the {n} units")
        fold = np.arange(n) if B == n else rng.permutation(n) % B
        w = np.ones((n, B), dtype=int)
        w[np.arange(n), fold] = 0
    elif type == "bootstrap":
        if B < 1:
            raise ValueError("bootstrap needs B >= 1")
        w = rng.multinomial(n, np.full(n, 1.0 / n), size=B).T.astype(int)
    else:
        if B < 1:
            raise ValueError("subsampling needs B >= 1")
        w = np.zeros((n, B), dtype=int)
        for b in range(B):
            w[rng.choice(n, n // 2, replace=False), b] = 1
    if unit_map is not None:
        w = w[unit_map]
    return FoldMatrix(w, type, unit_map)


def n_jobs(jobs=None):
    """Effective worker count; ``FNBOOST_THREADS`` caps it."""
    jobs = 1 if jobs is None else int(jobs)
    if jobs < 1:
        jobs = os.cpu_count() or 1
    cap = os.environ.get("FNBOOST_THREADS")
    if cap:
        jobs = min(jobs, max(1, int(cap)))
    return jobs


def _map(fn, items, jobs):
    jobs = n_jobs(jobs)
    if jobs == 1 or len(items) <= 1:
        return [fn(x) for x in items]
    from joblib import Parallel, delayed

    return Parallel(n_jobs=jobs, prefer="processes")(delayed(fn)(x) for x in items)


@dataclass(frozen=True)
class CVResult:
    """Out-of-bag risk per fold (rows) and grid value (columns)."""

    risk: np.ndarray
    grid: np.ndarray
    mstop_opt: int
    at_boundary: bool

    @property
    def mean_risk(self):
        return self.risk.mean(axis=0)


def _oob_fold(args):
    structure, train_w, oob_w, mstop, fixed_offset, fixed_Qs = args
    engine = Engine(structure, train_w, fixed_offset, fixed_Qs)
    frame = structure.frame
    obs_oob = engine.int_w * oob_w[frame.curve_id]
    curve = engine.run(mstop, obs_oob)
    return curve / oob_w.sum()


def _preprocessing(structure, mode, weights=None):
    if mode == "refit_all":
        return None, None
    if mode != "fixed_preprocessing":
        raise ValueError(f"unknown resampling mode {mode!r}")
    frame = structure.frame
    resp = frame.data.response
    y = resp.values if resp.layout == "scalar" else resp.to_long()[0]
    offset = None
    if frame.layout != "scalar" and structure.spec.offset_mode == "smooth":
        offset = compute_offset(structure, structure.spec.family, y, training_weights(structure, weights))
    cw = np.ones(frame.N) if weights is None else weights
    return offset, compute_all_constraints(structure, cw)


def _risk_matrix(structure, train_ws, oob_ws, grid, mode, jobs, base_weights=None):
    grid = np.asarray(sorted(set(int(g) for g in grid)))
    if grid.size == 0 or grid[0] < 0:
        raise ValueError("the iteration grid must contain nonnegative integers")
    for b, w in enumerate(oob_ws):
        if not np.any(w > 0):
            raise ValueError(f"fold {b + 1} has an empty out-of-bag set")
    offset, Qs = _preprocessing(structure, mode, base_weights)
    mstop = int(grid[-1])
    tasks = [(structure, tw, ow, mstop, offset, Qs) for tw, ow in zip(train_ws, oob_ws)]
    curves = _map(_oob_fold, tasks, jobs)
    risk = np.array([c[grid] for c in curves])
    mean = risk.mean(axis=0)
    k = int(np.argmin(mean))
    return CVResult(risk, grid, int(grid[k]), bool(k == grid.size - 1))


def oob_risk_curves(spec, data, folds: FoldMatrix, grid=None, mode="fixed_preprocessing", jobs=1,
                    structure=None) -> CVResult:
    """Out-of-bag risk along the iteration grid for every fold.

    In each fold the model is fitted with the fold's weights and its risk on
    the curves with zero weight is recorded at every grid value, divided by
    the number of out-of-bag curves.

    ``mode="refit_all"`` recomputes offset and constraint transforms from the
    in-bag weights; ``"fixed_preprocessing"`` keeps a smooth offset and the
    constraints from the full-data fit. Smoothing parameters and scalar
    offsets are recomputed in both modes.

    A grid value of 0 stands for the offset-only model. The selected
    ``mstop_opt`` minimizes the mean risk (ties: smallest);
    ``at_boundary`` flags a minimum at the largest grid value, in which case
    the grid should be enlarged.
    """
    grid = np.arange(1, spec.control.mstop + 1) if grid is None else np.asarray(grid)
    structure = Structure.build(spec, data) if structure is None else structure
    W = folds.weights.astype(float)
    if W.shape[0] != data.n_curves:
        raise ValueError(f"fold matrix has {W.shape[0]} rows but data has {data.n_curves} curves")
    train = [W[:, b] for b in range(W.shape[1])]
    oob = [(W[:, b] == 0).astype(float) for b in range(W.shape[1])]
    return _risk_matrix(structure, train, oob, grid, mode, jobs)


@dataclass(frozen=True)
class BootstrapResult:
    """Coefficient functions of every outer fold and their pointwise quantiles.

    ``estimates[b]`` is the ``coef_eval`` list of fold ``b``; ``bands[k]``
    maps each quantile to the pointwise quantile of entry ``k`` across folds.
    """

    estimates: list
    bands: list
    quantiles: tuple
    mstops: np.ndarray


def _outer_fold(args):
    (structure, spec, w_outer, seed, type_inner, B_inner, grid, mode, n1, n2) = args
    units = np.flatnonzero(w_outer > 0)
    inner = make_folds(units.size, type_inner, B_inner, seed)
    train_ws, oob_ws = [], []
    for b in range(inner.B):
        wi = np.zeros_like(w_outer)
        wi[units] = inner.weights[:, b]
        train_ws.append(w_outer * wi)
        oob = np.zeros_like(w_outer)
        oob[units] = (inner.weights[:, b] == 0) * w_outer[units]
        oob_ws.append(oob)
    cv = _risk_matrix(structure, train_ws, oob_ws, grid, mode, 1, w_outer)
    engine = Engine(structure, w_outer)
    engine.run(cv.mstop_opt)
    model = _model_from_engine(spec, structure, engine, structure.frame.data, cv.mstop_opt)
    return model.coef_eval(n1, n2), cv.mstop_opt


def bootstrap_ci(spec, data, B_outer=100, B_inner=25, grid=None, quantiles=(0.05, 0.5, 0.95), seed=None,
                 type_inner="bootstrap", mode="fixed_preprocessing", jobs=1, n1=40, n2=40,
                 grouping=None) -> BootstrapResult:
    """Nested bootstrap of the coefficient functions.

    Each outer bootstrap sample selects its own ``mstop`` by inner resampling
    over its in-bag curves, is refitted at that ``mstop`` and evaluated with
    ``coef_eval``. Outer folds draw their inner folds from independent
    substreams of ``seed``, so results do not depend on ``jobs``.
    """
    if B_outer < 2 or B_inner < 2:
        raise ValueError("B_outer and B_inner must be at least 2")
    grid = np.arange(1, spec.control.mstop + 1) if grid is None else np.asarray(grid)
    structure = Structure.build(spec, data)
    ss = np.random.SeedSequence(seed)
    outer_seed, inner_root = ss.spawn(2)
    outer = make_folds(data.n_curves, "bootstrap", B_outer, outer_seed, grouping)
    inner_seeds = inner_root.spawn(B_outer)
    tasks = [
        (structure, spec, outer.weights[:, b].astype(float), inner_seeds[b], type_inner, B_inner, grid, mode, n1, n2)
        for b in range(B_outer)
    ]
    results = []
    for b, r in enumerate(_map(_safe_outer, tasks, jobs)):
        if isinstance(r, Exception):
            raise RuntimeError(f"outer fold {b + 1}: {r}") from r
        results.append(r)
    estimates = [r[0] for r in results]
    mstops = np.array([r[1] for r in results])
    quantiles = tuple(float(q) for q in quantiles)
    bands = []
    for k in range(len(estimates[0])):
        stack = np.stack([np.asarray(e[k].value, dtype=float) for e in estimates])
        bands.append({q: np.quantile(stack, q, axis=0) for q in quantiles})
    return BootstrapResult(estimates, bands, quantiles, mstops)


def _safe_outer(args):
    try:
        return _outer_fold(args)
    except Exception as e:  # annotated with the fold index by the caller
        return e
