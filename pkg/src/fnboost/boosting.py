"""Component-wise gradient boosting for scalar and functional responses.

Every iteration fits each base-learner to the negative gradient by penalized
least squares and adds the best fitting one, shrunk by the step length, to
the predictor. Base-learner designs, penalties and smoothing parameters are
computed once before the first iteration.
"""

import json
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy import linalg

from .baselearners import (
    TIME,
    ComposeNode,
    Frame,
    HistNode,
    InterceptNode,
    LearnerError,
    OlsNode,
    RandomNode,
    BbsNode,
    SignalNode,
    FpcNode,
    ConcurrentNode,
    compute_constraints,
    eval_curve,
    eval_obs,
    lambda_for_df,
    node_from_state,
    preorder,
    resolve_smoothing,
    spec_from_dict,
)
from .data import DataError, Dataset
from .families import Family, family_from_name, gaussian, observation_weights
from .splines import SplineBasis, bspline_design, difference_penalty

__all__ = [
    "Control",
    "ModelSpec",
    "FittedModel",
    "CoefFunction",
    "fit",
    "load_model",
    "FitError",
]

MODEL_FORMAT = "fnboost-model"
MODEL_VERSION = 1


class FitError(RuntimeError):
    """Numerical failure during fitting."""


@dataclass(frozen=True)
class Control:
    mstop: int = 100
    nu: Optional[float] = None

    def __post_init__(self):
        if int(self.mstop) != self.mstop or self.mstop < 0:
            raise ValueError("mstop must be a nonnegative integer")
        if self.nu is not None and not 0 < self.nu <= 1:
            raise ValueError("nu must lie in (0, 1]")


@dataclass(frozen=True)
class ModelSpec:
    """Model formula and fitting options.

    Parameters
    ----------
    formula : sequence of learner specs
    timeformula : learner spec, optional
        Time basis (usually ``Bbs("t")``) expanded onto every covariate-level
        term; required exactly when the response is functional.
    family : Family
    control : Control
    offset_mode : {"smooth", "scalar"}
        ``smooth`` uses a smoothed pointwise offset for functional responses.
    numInt : {"equal", "riemann", "trapezoid"}
        Integration weights of the loss over each curve's time points.
    time_name : str
        Variable name that refers to the response's time argument.
    array : bool
        Use the Kronecker array representation for grid responses.
    """

    formula: tuple
    timeformula: Optional[object] = None
    family: Family = field(default_factory=gaussian)
    control: Control = field(default_factory=Control)
    offset_mode: str = "smooth"
    numInt: str = "equal"
    time_name: str = TIME
    array: bool = True

    def __post_init__(self):
        object.__setattr__(self, "formula", tuple(self.formula))
        if not self.formula:
            raise ValueError("formula needs at least one base-learner")
        if self.offset_mode not in ("smooth", "scalar"):
            raise ValueError(f"unknown offset_mode {self.offset_mode!r}")
        if self.numInt not in ("equal", "riemann", "trapezoid"):
            raise ValueError(f"unknown numInt {self.numInt!r}")

    @property
    def nu(self):
        return self.control.nu if self.control.nu is not None else self.family.nu_default

    def with_control(self, **kw):
        return replace(self, control=replace(self.control, **kw))

    def to_dict(self):
        return {
            "formula": [s.to_dict() for s in self.formula],
            "timeformula": None if self.timeformula is None else self.timeformula.to_dict(),
            "family": self.family.name,
            "control": {"mstop": self.control.mstop, "nu": self.control.nu},
            "offset_mode": self.offset_mode,
            "numInt": self.numInt,
            "time_name": self.time_name,
            "array": self.array,
        }

    @classmethod
    def from_dict(cls, d):
        c = d.get("control", {})
        tf = d.get("timeformula")
        return cls(
            formula=tuple(spec_from_dict(s) for s in d["formula"]),
            timeformula=None if tf is None else spec_from_dict(tf),
            family=family_from_name(d.get("family", "gaussian")),
            control=Control(int(c.get("mstop", 100)), c.get("nu")),
            offset_mode=d.get("offset_mode", "smooth"),
            numInt=d.get("numInt", "equal"),
            time_name=d.get("time_name", TIME),
            array=bool(d.get("array", True)),
        )


# ---------------------------------------------------------------------------
# offsets

SMOOTH_OFFSET_KNOTS = 20
SMOOTH_OFFSET_DF = 6
# fewer distinct time points than this: interpolate the pointwise offsets
SMOOTH_OFFSET_MIN_POINTS = 10


class Offset:
    """Constant or smooth-in-time offset."""

    def __init__(self, kind, value=None, basis=None, coef=None, knots_t=None, knots_v=None):
        self.kind = kind
        self.value = value
        self.basis = basis
        self.coef = None if coef is None else np.asarray(coef, dtype=float)
        self.knots_t = None if knots_t is None else np.asarray(knots_t, dtype=float)
        self.knots_v = None if knots_v is None else np.asarray(knots_v, dtype=float)

    def __call__(self, times):
        times = np.asarray(times, dtype=float)
        if self.kind == "scalar":
            return np.full(times.shape, self.value)
        if self.kind == "smooth":
            lo, hi = self.basis.boundary
            return bspline_design(np.clip(times, lo, hi), self.basis) @ self.coef
        return np.interp(times, self.knots_t, self.knots_v)

    def state(self):
        if self.kind == "scalar":
            return {"kind": "scalar", "value": self.value}
        if self.kind == "smooth":
            return {"kind": "smooth", "basis": self.basis.to_dict(), "coef": self.coef.tolist()}
        return {"kind": "interp", "t": self.knots_t.tolist(), "v": self.knots_v.tolist()}

    @classmethod
    def from_state(cls, s):
        if s["kind"] == "scalar":
            return cls("scalar", value=s["value"])
        if s["kind"] == "smooth":
            return cls("smooth", basis=SplineBasis.from_dict(s["basis"]), coef=s["coef"])
        return cls("interp", knots_t=s["t"], knots_v=s["v"])


def smooth_offset(family, y, times, w):
    """Pointwise family offsets per distinct time, smoothed by a P-spline."""
    keep = w > 0
    ut, inv = np.unique(times[keep], return_inverse=True)
    yk, wk = y[keep], w[keep]
    vals = np.empty(ut.size)
    cnt = np.empty(ut.size)
    for u in range(ut.size):
        sel = inv == u
        vals[u] = family.offset(yk[sel], wk[sel])
        cnt[u] = wk[sel].sum()
    if ut.size < SMOOTH_OFFSET_MIN_POINTS:
        return Offset("interp", knots_t=ut, knots_v=vals)
    basis = SplineBasis(SMOOTH_OFFSET_KNOTS, 3, (float(times.min()), float(times.max())))
    B = bspline_design(ut, basis)
    P = difference_penalty(basis.dim, 2)
    F = B.T @ (cnt[:, None] * B)
    lam = lambda_for_df(F, P, SMOOTH_OFFSET_DF)
    coef = linalg.solve(F + lam * P, B.T @ (cnt * vals), assume_a="pos")
    return Offset("smooth", basis=basis, coef=coef)


# ---------------------------------------------------------------------------
# model structure and per-fit term solvers


class Structure:
    """Built (unweighted) learner nodes of a model on its training data."""

    def __init__(self, spec, frame, time_node, roots, labels):
        self.spec = spec
        self.frame = frame
        self.time_node = time_node
        self.roots = roots
        self.labels = labels

    @classmethod
    def build(cls, spec: ModelSpec, data: Dataset):
        if data.response is None:
            raise DataError("fitting needs a response")
        frame = Frame.from_response(data)
        functional = frame.layout != "scalar"
        if functional and spec.timeformula is None:
            raise ValueError("a functional response needs a timeformula")
        if not functional and spec.timeformula is not None:
            raise ValueError("a scalar response takes no timeformula")
        spec.family.validate(data.response.values)
        time_node = None
        if functional:
            time_node = spec.timeformula.build(frame, spec.time_name)
            if time_node.level != "time":
                raise LearnerError(f"timeformula {time_node.label} must be a basis in {spec.time_name!r}")
        roots, labels = [], []
        for k, s in enumerate(spec.formula):
            try:
                node = s.build(frame, spec.time_name)
            except LearnerError as e:
                raise LearnerError(f"formula term {k + 1}: {e}") from None
            except DataError as e:
                err = DataError(f"formula term {k + 1}: {e}")
                err.variable, err.row = e.variable, e.row
                raise err from None
            if functional and node.level == "curve":
                node = ComposeNode(f"{node.label} %O% {time_node.label}", "kronecker", node, time_node)
            elif not functional and node.level != "curve":
                raise LearnerError(f"{node.label}: needs a functional response")
            roots.append(node)
            labels.append(node.label)
        return cls(spec, frame, time_node, roots, labels)


def _array_capable(root, frame, spec):
    return (
        spec.array
        and frame.layout == "grid"
        and isinstance(root, ComposeNode)
        and root.op.startswith("kronecker")
    )


class TermSolver:
    """Penalized least-squares fits of one term under fixed weights."""

    def __init__(self, root, frame, Qs, obs_w, curve_w, time_w, use_array):
        self.root = root
        self.label = root.label
        self.array = use_array
        data = frame.data
        if use_array:
            self.A = eval_curve(root.left, data, Qs)
            self.B = root.right.time_design(frame.grid)
            self.N, self.G = self.A.shape[0], self.B.shape[0]
            FA = self.A.T @ (curve_w[:, None] * self.A)
            FB = self.B.T @ (time_w[:, None] * self.B)
            F = np.kron(FA, FB)
            self.shape = (self.A.shape[1], self.B.shape[1])
        else:
            if frame.layout == "scalar":
                self.Z = eval_curve(root, data, Qs)
            else:
                self.Z = eval_obs(root, data, frame.times, frame.curve_id, Qs)
            F = self.Z.T @ (obs_w[:, None] * self.Z)

        def marginal_gram(child):
            M = eval_obs(child, data, frame.times, frame.curve_id, Qs)
            return M.T @ (obs_w[:, None] * M)

        self.penalty, self.lam, self.df = resolve_smoothing(root, Qs, F, marginal_gram)
        self.K = F.shape[0]
        self.gram = F
        self.chol = _factor(F + self.lam * self.penalty, self.label)

    def crossprod(self, wu):
        if self.array:
            M = wu.reshape(self.G, self.N)
            return (self.A.T @ M.T @ self.B).ravel()
        return self.Z.T @ wu

    def solve(self, wu):
        return linalg.cho_solve(self.chol, self.crossprod(wu))

    def fitted(self, theta):
        if self.array:
            T = theta.reshape(self.shape)
            return (self.B @ (self.A @ T).T).ravel()
        return self.Z @ theta


def _factor(M, label):
    """Cholesky factor; a tiny jitter rescues borderline systems only."""
    M = 0.5 * (M + M.T)
    jitter = 0.0
    try:
        c = linalg.cho_factor(M, lower=True)
    except linalg.LinAlgError:
        jitter = 1e-10 * np.trace(M) / max(M.shape[0], 1)
        try:
            c = linalg.cho_factor(M + jitter * np.eye(M.shape[0]), lower=True)
        except linalg.LinAlgError:
            raise FitError(f"{label}: singular penalized normal equations") from None
    d = np.abs(np.diag(c[0]))
    # a pivot of the jitter's size means the system itself was singular
    if jitter and d.min() ** 2 < 100 * jitter:
        raise FitError(f"{label}: singular penalized normal equations (design is rank deficient)")
    if d.size and (d.min() == 0 or (d.min() / d.max()) ** 2 < 1e-14):
        raise FitError(f"{label}: singular penalized normal equations (design is rank deficient)")
    return c


def compute_offset(structure, family, y, W):
    frame = structure.frame
    if frame.layout != "scalar" and structure.spec.offset_mode == "smooth":
        return smooth_offset(family, y, frame.times, W)
    return Offset("scalar", value=family.offset(y, W))


def compute_all_constraints(structure, curve_weights):
    Qs = {}
    for r in structure.roots:
        compute_constraints(r, structure.frame.data, curve_weights, Qs)
    return Qs


def training_weights(structure, curve_weights=None):
    """Per-observation weights: curve weights times integration weights."""
    frame = structure.frame
    cw = np.ones(frame.N) if curve_weights is None else np.asarray(curve_weights, dtype=float)
    return observation_weights(frame.data.response, structure.spec.numInt) * cw[frame.curve_id]


class Engine:
    """Mutable fitting state: predictor, path and term solvers."""

    def __init__(self, structure: Structure, curve_weights=None, fixed_offset=None, fixed_Qs=None,
                 family=None):
        spec = structure.spec
        self.structure = structure
        self.family = family or spec.family
        self.nu = spec.control.nu if spec.control.nu is not None else self.family.nu_default
        frame = structure.frame
        resp = frame.data.response
        self.y = resp.to_long()[0] if resp.layout != "scalar" else resp.values
        N = frame.N
        cw = np.ones(N) if curve_weights is None else np.asarray(curve_weights, dtype=float)
        if cw.shape != (N,) or np.any(cw < 0):
            raise ValueError("need one nonnegative weight per curve")
        if cw.sum() <= 0:
            raise ValueError("all weights are zero")
        self.curve_w = cw
        self.int_w = observation_weights(resp, spec.numInt)
        self.W = self.int_w * cw[frame.curve_id]
        time_w = None
        if frame.layout == "grid":
            time_w = self.int_w[:: N] if N else np.zeros(0)
        if fixed_offset is not None:
            self.offset = fixed_offset
        else:
            self.offset = compute_offset(structure, self.family, self.y, self.W)
        self.Qs = dict(fixed_Qs) if fixed_Qs is not None else compute_all_constraints(structure, cw)
        self.terms = [
            TermSolver(r, frame, self.Qs, self.W, cw, time_w, _array_capable(r, frame, spec))
            for r in structure.roots
        ]
        self.f = self.offset(frame.times)
        self.selected = []
        self.increments = []
        self.risk = [self.family.risk(self.y, self.f, self.W)]

    def step(self, m):
        u = self.family.ngradient(self.y, self.f, self.W)
        if not np.all(np.isfinite(u)):
            raise FitError(f"non-finite negative gradient for family {self.family.name} at iteration {m}")
        wu = self.W * u
        best, best_rss, best_theta, best_fit = -1, np.inf, None, None
        for j, t in enumerate(self.terms):
            theta = t.solve(wu)
            fit = t.fitted(theta)
            r = u - fit
            rss = float(np.dot(self.W * r, r))
            if rss < best_rss:
                best, best_rss, best_theta, best_fit = j, rss, theta, fit
        if best < 0:
            raise FitError(f"no base-learner produced a finite fit at iteration {m}")
        self.f = self.f + self.nu * best_fit
        self.selected.append(best)
        self.increments.append(self.nu * best_theta)
        self.risk.append(self.family.risk(self.y, self.f, self.W))

    def run(self, mstop, oob_weights=None):
        """Iterate until ``mstop`` steps are recorded.

        Returns the out-of-bag risk after every iteration ``0..mstop`` when
        ``oob_weights`` (per observation) are given.
        """
        oob = None
        if oob_weights is not None:
            oob = [self.family.risk(self.y, self.f, oob_weights)]
        for m in range(len(self.selected) + 1, mstop + 1):
            self.step(m)
            if oob is not None:
                oob.append(self.family.risk(self.y, self.f, oob_weights))
        return None if oob is None else np.array(oob)


# ---------------------------------------------------------------------------
# fitted model


@dataclass(frozen=True)
class CoefFunction:
    """A learner's estimated effect evaluated on regular grids.

    ``kind`` is one of ``constant``, ``s`` (function of one covariate
    argument), ``t`` (function of time), ``surface`` (``s`` by ``t``),
    ``coefficients`` and ``coefficients_t`` (named linear coefficients,
    constant or varying in time).
    """

    label: str
    kind: str
    value: np.ndarray
    s: Optional[np.ndarray] = None
    t: Optional[np.ndarray] = None
    names: Optional[tuple] = None

    def rows(self):
        """Long rows ``(learner, s, t, value)``; absent arguments are ``None``."""
        v = np.asarray(self.value)
        if self.kind == "constant":
            return [(self.label, None, None, float(v))]
        if self.kind == "s":
            return [(self.label, float(a), None, float(b)) for a, b in zip(self.s, v)]
        if self.kind == "t":
            return [(self.label, None, float(a), float(b)) for a, b in zip(self.t, v)]
        if self.kind == "surface":
            return [
                (self.label, float(a), float(b), float(v[i, j]))
                for i, a in enumerate(self.s)
                for j, b in enumerate(self.t)
            ]
        if self.kind == "coefficients":
            return [(f"{self.label}[{n}]", None, None, float(x)) for n, x in zip(self.names, v)]
        return [
            (f"{self.label}[{n}]", None, float(b), float(v[i, j]))
            for i, n in enumerate(self.names)
            for j, b in enumerate(self.t)
        ]


def _equi(boundary, n):
    lo, hi = boundary
    return np.linspace(lo, hi, n)


class FittedModel:
    """Offset, learners and the full selection path of a boosting fit.

    Coefficients at iteration ``m`` are sums of the stored increments, so
    truncation is exact and reversible.
    """

    def __init__(self, spec, structure, offset, Qs, terms_info, selected, increments, risk, mstop,
                 engine=None, data=None):
        self.spec = spec
        self.structure = structure
        self.offset = offset
        self.Qs = Qs
        self.terms_info = terms_info
        self._selected = list(selected)
        self._increments = list(increments)
        self._risk = list(risk)
        self.mstop = int(mstop)
        self._engine = engine
        self._data = data

    # -- path ---------------------------------------------------------------

    @property
    def labels(self):
        return list(self.structure.labels)

    @property
    def family(self):
        return self.spec.family

    @property
    def path_length(self):
        return len(self._selected)

    @property
    def selected(self):
        return np.array(self._selected[: self.mstop], dtype=int)

    @property
    def risk_path(self):
        return np.array(self._risk[: self.mstop + 1])

    @property
    def increments(self):
        return list(self._increments[: self.mstop])

    def coefficients(self, at=None):
        """Accumulated coefficient vector of every term at iteration ``at``."""
        at = self.mstop if at is None else int(at)
        if at < 0 or at > self.path_length:
            raise ValueError(f"iteration {at} outside the recorded path 0..{self.path_length}")
        out = [np.zeros(info["K"]) for info in self.terms_info]
        for j, inc in zip(self._selected[:at], self._increments[:at]):
            out[j] = out[j] + inc
        return out

    def truncate(self, m):
        """Model at iteration ``m``; continues fitting when ``m`` exceeds the path."""
        m = int(m)
        if m < 0:
            raise ValueError("m must be nonnegative")
        if m > self.path_length:
            if self._engine is None:
                raise ValueError("cannot continue fitting a reloaded model; refit with a larger mstop")
            self._engine.run(m)
            self._selected = list(self._engine.selected)
            self._increments = list(self._engine.increments)
            self._risk = list(self._engine.risk)
        return FittedModel(
            self.spec, self.structure, self.offset, self.Qs, self.terms_info, self._selected,
            self._increments, self._risk, m, self._engine, self._data,
        )

    def __getitem__(self, m):
        return self.truncate(m)

    def update_family(self, family):
        """Refit from iteration zero with another family and the same learners."""
        if self._data is None:
            raise ValueError("the training data of a reloaded model are unavailable")
        spec = replace(self.spec, family=family, control=replace(self.spec.control, mstop=self.mstop))
        return fit(spec, self._data)

    # -- prediction ------------------------------------------------------------

    def _frame(self, newdata, grid=None):
        layout = self.structure.frame.layout
        if layout == "scalar":
            return Frame.scalar(newdata)
        if grid is not None:
            return Frame.on_grid(newdata, grid)
        r = newdata.response
        if r is not None and r.layout != "scalar":
            return Frame.from_response(newdata)
        if self.structure.frame.grid is not None:
            return Frame.on_grid(newdata, self.structure.frame.grid)
        raise DataError("newdata needs response times (grid or long) for a functional model")

    def predict(self, newdata=None, at=None, type="link", grid=None):
        """Predictor ``offset + sum_j Z_j(newdata) theta_j`` at iteration ``at``.

        Returns a vector for scalar and long responses and an ``N x G``
        matrix on a grid. ``type="response"`` applies the inverse link.
        """
        data = self._data if newdata is None else newdata
        if data is None:
            raise ValueError("newdata is required for a reloaded model")
        frame = self._frame(data, grid)
        coefs = self.coefficients(at)
        pred = self.offset(frame.times)
        for root, info, theta in zip(self.structure.roots, self.terms_info, coefs):
            if not np.any(theta):
                continue
            if _array_capable(root, frame, self.spec):
                A = eval_curve(root.left, data, self.Qs)
                B = root.right.time_design(frame.grid)
                T = theta.reshape(A.shape[1], B.shape[1])
                pred = pred + (B @ (A @ T).T).ravel()
            elif frame.layout == "scalar":
                pred = pred + eval_curve(root, data, self.Qs) @ theta
            else:
                pred = pred + eval_obs(root, data, frame.times, frame.curve_id, self.Qs) @ theta
        if type == "response":
            pred = self.family.inverse_link(pred)
        elif type != "link":
            raise ValueError("type must be 'link' or 'response'")
        if frame.layout == "grid":
            return pred.reshape(frame.grid.size, frame.N).T
        return pred

    def fitted(self, type="link"):
        return self.predict(None, type=type)

    # -- coefficient functions -------------------------------------------------

    def coef_eval(self, n1=40, n2=40, at=None):
        """Evaluate every learner's effect on equidistant grids.

        ``n1`` points span the covariate argument (``s`` or the scalar
        covariate), ``n2`` points span the response time. The offset is the
        first entry.
        """
        out = []
        times = self.structure.frame.times
        if self.offset.kind == "scalar" or self.structure.frame.layout == "scalar":
            out.append(CoefFunction("offset", "constant", np.array(self.offset.value)))
        else:
            t = np.linspace(times.min(), times.max(), n2)
            out.append(CoefFunction("offset", "t", self.offset(t), t=t))
        for root, theta in zip(self.structure.roots, self.coefficients(at)):
            out.append(self._coef_one(root, theta, n1, n2))
        return out

    def _raw(self, node, theta):
        Q = self.Qs.get(id(node))
        return theta if Q is None else Q @ theta

    def _covariate_part(self, node, n1):
        """(kind, argument, basis matrix or None, names) of a curve-level leaf."""
        if isinstance(node, InterceptNode):
            return "constant", None, None, None
        if isinstance(node, (SignalNode, FpcNode)):
            s = np.linspace(node.grid[0], node.grid[-1], n1)
            return "s", s, node.coef_basis(s), None
        if isinstance(node, BbsNode) and not node.is_time:
            s = _equi(node.basis.boundary, n1)
            return "s", s, bspline_design(s, node.basis), None
        if isinstance(node, (OlsNode, RandomNode)):
            return "coefficients", None, None, tuple(node.column_names())
        return "coefficients", None, None, None

    def _coef_one(self, root, theta, n1, n2):
        label = root.label
        if isinstance(root, HistNode):
            s = np.linspace(root.grid[0], root.grid[-1], n1)
            t = _equi(root.basis_t.boundary, n2)
            T = theta.reshape(root.basis_s.dim, root.basis_t.dim)
            surf = bspline_design(s, root.basis_s) @ T @ bspline_design(t, root.basis_t).T
            surf = np.where(root.limits.admissible(s[:, None], t[None, :]), surf, 0.0)
            return CoefFunction(label, "surface", surf, s=s, t=t)
        if isinstance(root, ConcurrentNode):
            t = _equi(root.basis_t.boundary, n2)
            return CoefFunction(label, "t", bspline_design(t, root.basis_t) @ theta, t=t)
        if isinstance(root, ComposeNode) and root.op.startswith("kronecker"):
            left, right = root.left, root.right
            t = _equi(right.basis.boundary, n2) if isinstance(right, BbsNode) else None
            Kr = node_dim(right, self.Qs)
            T = theta.reshape(-1, Kr)
            Q = self.Qs.get(id(left))
            Traw = T if Q is None else Q @ T
            Bt = right.time_design(t)
            kind, s, Bs, names = self._covariate_part(left, n1)
            if kind == "constant":
                return CoefFunction(label, "t", (Bt @ Traw.T).ravel(), t=t)
            if kind == "s":
                return CoefFunction(label, "surface", Bs @ Traw @ Bt.T, s=s, t=t)
            names = names or tuple(f"theta{k}" for k in range(Traw.shape[0]))
            return CoefFunction(label, "coefficients_t", Traw @ Bt.T, t=t, names=names)
        if root.level == "curve":
            raw = self._raw(root, theta)
            kind, s, Bs, names = self._covariate_part(root, n1)
            if kind == "constant":
                return CoefFunction(label, "constant", np.array(raw[0]))
            if kind == "s":
                return CoefFunction(label, "s", Bs @ raw, s=s)
            names = names or tuple(f"theta{k}" for k in range(raw.size))
            return CoefFunction(label, "coefficients", raw, names=names)
        if isinstance(root, BbsNode) and root.is_time:
            t = _equi(root.basis.boundary, n2)
            return CoefFunction(label, "t", bspline_design(t, root.basis) @ theta, t=t)
        return CoefFunction(label, "coefficients", theta, names=tuple(f"theta{k}" for k in range(theta.size)))

    # -- serialization ---------------------------------------------------------

    def to_dict(self):
        terms = []
        for root, info in zip(self.structure.roots, self.terms_info):
            qs = [
                [k, self.Qs[id(n)].tolist()]
                for k, n in enumerate(preorder(root))
                if id(n) in self.Qs
            ]
            terms.append({"root": root.state(), "Qs": qs, **info})
        fr = self.structure.frame
        return {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "spec": self.spec.to_dict(),
            "layout": fr.layout,
            "grid": None if fr.grid is None else fr.grid.tolist(),
            "time_range": [float(fr.times.min()), float(fr.times.max())] if fr.n else None,
            "time_node": None if self.structure.time_node is None else self.structure.time_node.state(),
            "terms": terms,
            "offset": self.offset.state(),
            "selected": list(self._selected),
            "increments": [inc.tolist() for inc in self._increments],
            "risk": list(self._risk),
            "mstop": self.mstop,
        }

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def from_dict(cls, d):
        if d.get("format") != MODEL_FORMAT:
            raise ValueError("not a serialized model")
        if d.get("version") != MODEL_VERSION:
            raise ValueError(f"unsupported model version {d.get('version')}")
        spec = ModelSpec.from_dict(d["spec"])
        roots, Qs, infos = [], {}, []
        for t in d["terms"]:
            root = node_from_state(t["root"])
            nodes = list(preorder(root))
            for k, Q in t["Qs"]:
                Qs[id(nodes[k])] = np.array(Q, dtype=float).reshape(len(Q), -1)
            roots.append(root)
            infos.append({k: t[k] for k in ("label", "K", "lam", "df", "array")})
        grid = None if d["grid"] is None else np.array(d["grid"])
        layout = d["layout"]
        lo, hi = d["time_range"] if d["time_range"] else (0.0, 0.0)
        # a placeholder frame carrying only layout and time metadata
        frame = Frame(Dataset(), layout, np.array([lo, hi]), np.array([0, 0]), 0, grid)
        time_node = None if d["time_node"] is None else node_from_state(d["time_node"])
        structure = Structure(spec, frame, time_node, roots, [r.label for r in roots])
        return cls(
            spec, structure, Offset.from_state(d["offset"]), Qs, infos, d["selected"],
            [np.array(v, dtype=float) for v in d["increments"]], d["risk"], d["mstop"],
        )


def node_dim(node, Qs):
    Q = Qs.get(id(node))
    if Q is not None:
        return Q.shape[1]
    if isinstance(node, ComposeNode):
        return node_dim(node.left, Qs) * node_dim(node.right, Qs)
    return node.K


def load_model(path) -> FittedModel:
    with open(path) as fh:
        return FittedModel.from_dict(json.load(fh))


def _model_from_engine(spec, structure, engine, data, mstop):
    infos = [
        {"label": t.label, "K": t.K, "lam": t.lam, "df": t.df, "array": t.array} for t in engine.terms
    ]
    return FittedModel(
        spec, structure, engine.offset, engine.Qs, infos, engine.selected, engine.increments,
        engine.risk, mstop, engine, data,
    )


def fit(spec: ModelSpec, data: Dataset, weights=None, structure=None, fixed_offset=None, fixed_Qs=None):
    """Fit a boosting model for ``spec.control.mstop`` iterations.

    Parameters
    ----------
    spec : ModelSpec
    data : Dataset
    weights : array_like, optional
        Per-curve weights (e.g. resampling multiplicities).
    structure : Structure, optional
        Prebuilt learner structure, reused across resampling folds.
    fixed_offset, fixed_Qs : optional
        Offset and constraint transforms to keep instead of recomputing them
        from ``weights``.
    """
    structure = Structure.build(spec, data) if structure is None else structure
    engine = Engine(structure, weights, fixed_offset, fixed_Qs)
    engine.run(spec.control.mstop)
    return _model_from_engine(spec, structure, engine, data, spec.control.mstop)
