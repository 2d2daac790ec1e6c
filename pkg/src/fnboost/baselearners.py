"""Base-learner specifications, design construction and smoothing parameters.

A *spec* (``Bsignal``, ``Bbs``, ...) describes an additive term. Building a
spec against training data gives a *node*: an immutable object holding every
piece of structural state (spline boundaries, factor levels, FPC basis, ...)
needed to evaluate the term's design matrix on new data.

Nodes live on one of three levels:

``curve``
    One design row per curve (scalar covariates, signal and FPC effects).
``time``
    A basis in the response's time argument; rows follow response times.
``obs``
    One row per response observation (historical and concurrent effects,
    and compositions involving a time or observation level part).

Row ordering for grid responses is time-major: observation ``g * N + i`` is
curve ``i`` at time ``t_g``. Coefficients of a composed term are ordered
left-major, so the design row of observation ``(i, g)`` is
``kron(a_i, b_g)``.
"""

import warnings
from dataclasses import dataclass, field, fields
from typing import Callable, ClassVar, Optional

import numpy as np
from scipy import linalg
from scipy.optimize import brentq

from .data import DataError, Dataset, FunctionalCovariate
from .fpca import FpcaResult, fpca
from .splines import SplineBasis, bspline_design, difference_penalty, integration_weights

__all__ = [
    "TIME",
    "Limits",
    "Intercept",
    "Bols",
    "Bolsc",
    "Brandom",
    "Bbs",
    "Bbsc",
    "Bsignal",
    "Bfpc",
    "Bconcurrent",
    "Bhist",
    "Compose",
    "spec_from_dict",
    "BuiltBaseLearner",
    "Frame",
    "build_signal",
    "build_fpc",
    "build_hist",
    "build_concurrent",
    "apply_constraint",
    "compose",
    "constraint_transform",
    "df_to_lambda",
    "lambda_for_df",
    "df_for_lambda",
    "row_tensor",
    "kronecker_rows",
    "kronecker_sum",
]

#: default name of the response's time argument in formulas
TIME = "t"


class LearnerError(ValueError):
    """A base-learner cannot be built or solved; message names the learner."""


# ---------------------------------------------------------------------------
# integration limits


@dataclass(frozen=True)
class Limits:
    """Admissible region ``l(t) <= s <= u(t)`` of a historical effect.

    Parameters
    ----------
    kind : {"hist", "lag", "lead", "full", "band", "custom"}
        ``hist``: ``s <= t``; ``lag``: ``t - delta <= s <= t``;
        ``lead``: ``s <= t - delta``; ``full``: every ``s``;
        ``band``: ``t + lower <= s <= t + upper``; ``custom``: ``func(s, t)``.
    delta : float
    lower, upper : float
    func : callable, optional
        Vectorized predicate for ``kind="custom"``. Not serializable.

    Comparisons are inclusive.
    """

    kind: str = "hist"
    delta: float = 0.0
    lower: float = 0.0
    upper: float = 0.0
    func: Optional[Callable] = field(default=None, compare=False)

    KINDS: ClassVar[tuple] = ("hist", "lag", "lead", "full", "band", "custom")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown limits kind {self.kind!r}; expected one of {self.KINDS}")
        if self.kind == "custom" and self.func is None:
            raise ValueError("custom limits need a predicate func(s, t)")
        if self.kind == "lag" and self.delta < 0:
            raise ValueError("lag needs delta >= 0")

    def admissible(self, s, t):
        s, t = np.broadcast_arrays(np.asarray(s, dtype=float), np.asarray(t, dtype=float))
        eps = 1e-10 * (1.0 + np.abs(t))
        if self.kind == "hist":
            return s <= t + eps
        if self.kind == "lag":
            return (s >= t - self.delta - eps) & (s <= t + eps)
        if self.kind == "lead":
            return s <= t - self.delta + eps
        if self.kind == "full":
            return np.ones(s.shape, dtype=bool)
        if self.kind == "band":
            return (s >= t + self.lower - eps) & (s <= t + self.upper + eps)
        return np.asarray(self.func(s, t), dtype=bool)

    def to_dict(self):
        if self.kind == "custom":
            raise ValueError("custom limits cannot be serialized")
        return {"kind": self.kind, "delta": self.delta, "lower": self.lower, "upper": self.upper}

    @classmethod
    def from_dict(cls, d):
        if isinstance(d, str):
            return cls(d)
        return cls(
            d.get("kind", "hist"),
            float(d.get("delta", 0.0)),
            float(d.get("lower", 0.0)),
            float(d.get("upper", 0.0)),
        )


# ---------------------------------------------------------------------------
# linear algebra kernels


def row_tensor(A, B):
    """Row-wise Kronecker product: row ``r`` is ``kron(A[r], B[r])``."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if A.shape[0] != B.shape[0]:
        raise ValueError(f"row tensor needs equal row counts, got {A.shape[0]} and {B.shape[0]}")
    return (A[:, :, None] * B[:, None, :]).reshape(A.shape[0], A.shape[1] * B.shape[1])


def kronecker_rows(A, B):
    """Kronecker design of an ``N``-row and a ``G``-row design, time-major.

    Row ``g * N + i`` equals ``kron(A[i], B[g])``.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    N, G = A.shape[0], B.shape[0]
    return row_tensor(np.tile(A, (G, 1)), np.repeat(B, N, axis=0))


def kronecker_sum(Pl, Pr):
    """``Pl (x) I + I (x) Pr``."""
    Pl = np.asarray(Pl, dtype=float)
    Pr = np.asarray(Pr, dtype=float)
    return np.kron(Pl, np.eye(Pr.shape[0])) + np.kron(np.eye(Pl.shape[0]), Pr)


def constraint_transform(Z, weights=None):
    """Orthonormal basis ``Q`` of the null space of ``c' = (Z' w)'``.

    ``Z @ Q`` has (weighted) column sums of zero. When ``c`` already vanishes
    the identity is returned.

    Raises
    ------
    ValueError
        If ``Z`` has a single column.
    """
    Z = np.asarray(Z, dtype=float)
    K = Z.shape[1]
    if K < 2:
        raise ValueError("sum-to-zero constraint would remove the only design column")
    w = np.ones(Z.shape[0]) if weights is None else np.asarray(weights, dtype=float)
    c = Z.T @ w
    scale = np.max(np.abs(Z)) * np.sum(np.abs(w)) if Z.size else 0.0
    if scale == 0 or np.linalg.norm(c) <= 1e-12 * scale:
        return np.eye(K)
    Qf, _ = np.linalg.qr(c[:, None], mode="complete")
    return Qf[:, 1:]


def _joint_eigen(F, P):
    """Simultaneous diagonalization of ``F`` and ``P``.

    With ``F + cP = L L'`` and ``L^-1 F L^-T = V diag(g) V'``, every
    ``F + lam P`` is diagonal in the same basis, so
    ``df(lam) = sum g / (g + (lam / c) (1 - g))``. This is the Demmler-Reinsch
    form, extended to rank-deficient ``F`` as long as ``F + P`` is definite.
    """
    tp = np.trace(P)
    c = np.trace(F) / tp if tp > 0 else 1.0
    c = c if c > 0 else 1.0
    try:
        L = linalg.cholesky(F + c * P, lower=True)
    except linalg.LinAlgError:
        return None, c
    r = np.abs(np.diag(L))
    if r.min() <= 1e-7 * r.max():
        return None, c
    M = linalg.solve_triangular(L, linalg.solve_triangular(L, F, lower=True).T, lower=True)
    g = np.linalg.eigvalsh(0.5 * (M + M.T))
    return np.clip(g, 0.0, 1.0), c


def _dense_df(F, P, lam):
    """Reference ``trace((F + lam P)^-1 F)`` by a direct solve."""
    if lam == 0:
        return float(np.linalg.matrix_rank(F, hermitian=True))
    try:
        c = linalg.cho_factor(F + lam * P)
    except linalg.LinAlgError:
        raise LearnerError(
            "penalized normal equations are singular: the design is rank deficient inside the "
            "penalty's null space"
        ) from None
    return float(np.trace(linalg.cho_solve(c, F)))


class _DfCurve:
    """``df(lam) = trace((F + lam P)^-1 F)`` with its attainable range."""

    TOL = 1e-10

    def __init__(self, F, P):
        F = 0.5 * (F + F.T)
        P = 0.5 * (P + P.T)
        self.F, self.P = F, P
        K = F.shape[0]
        if not np.any(P):
            self.g, self.c = None, 1.0
            self.df_max = self.df_min = float(np.linalg.matrix_rank(F, hermitian=True))
            return
        g, c = _joint_eigen(F, P)
        if g is None:
            raise LearnerError(
                "penalized normal equations are singular: the design is rank deficient inside the "
                "penalty's null space"
            )
        self.g, self.c = g, c
        self.active = g > self.TOL
        self.df_max = float(np.sum(self.active))
        self.df_min = float(np.sum(g >= 1 - self.TOL))
        free = self.active & (g < 1 - self.TOL)
        # smallest penalized eigen-ratio governs how fast df approaches df_min
        self.ratio_min = float(np.min((1 - g[free]) / g[free])) if free.any() else 0.0

    def __call__(self, lam):
        if self.g is None:
            return self.df_max
        if lam == 0:
            return self.df_max
        g = self.g[self.active]
        return float(np.sum(g / (g + (lam / self.c) * (1 - g))))

    def infinite_lambda(self):
        """A finite lambda whose df lies within 1e-5 of the lower bound."""
        excess = self.df_max - self.df_min
        if excess <= 0 or self.ratio_min == 0:
            return 0.0
        return 1e5 * excess * self.c / self.ratio_min

    def solve(self, df):
        tol = 1e-10
        if df > self.df_max + tol or df < self.df_min - tol:
            raise LearnerError(
                f"df={df:g} outside the attainable range [{self.df_min:g}, {self.df_max:g}]"
            )
        if df >= self.df_max - tol:
            return 0.0
        if df <= self.df_min + tol:
            return self.infinite_lambda()
        g = lambda loglam: self(np.exp(loglam)) - df
        lo, hi = np.log(self.c) - 10, np.log(self.c) + 10
        for _ in range(50):
            if g(lo) > 0:
                break
            lo -= 10
        for _ in range(50):
            if g(hi) < 0:
                break
            hi += 10
        loglam = brentq(g, lo, hi, xtol=1e-14, rtol=1e-15, maxiter=1000)
        return float(np.exp(loglam))


def lambda_for_df(gram, penalty, df):
    """Smoothing parameter whose penalized hat matrix has trace ``df``.

    Parameters
    ----------
    gram : ndarray, shape (K, K)
        Weighted cross product ``Z' W Z``.
    penalty : ndarray, shape (K, K)
    df : float

    Returns
    -------
    float
        ``0`` when ``df`` equals the design rank, a large finite value when
        ``df`` equals the dimension left unpenalized.
    """
    return _DfCurve(np.asarray(gram, dtype=float), np.asarray(penalty, dtype=float)).solve(float(df))


def df_for_lambda(gram, penalty, lam):
    """Trace of the penalized hat matrix at ``lam``."""
    return _DfCurve(np.asarray(gram, dtype=float), np.asarray(penalty, dtype=float))(float(lam))


def df_to_lambda(design, penalty, weights, df_target):
    """Solve ``trace(Z (Z'WZ + lam P)^-1 Z'W) = df_target`` for ``lam``."""
    Z = np.asarray(design, dtype=float)
    w = np.ones(Z.shape[0]) if weights is None else np.asarray(weights, dtype=float)
    return lambda_for_df(Z.T @ (w[:, None] * Z), penalty, df_target)


def _spline_penalty(K, order):
    # a basis too small for its difference order is left unpenalized
    if K <= order:
        return np.zeros((K, K))
    return difference_penalty(K, order)


# ---------------------------------------------------------------------------
# design kernels


def signal_design(X, grid, basis, scheme="trapezoid"):
    """``sum_r w_r x_i(s_r) phi_k(s_r)`` for every curve and basis function."""
    w = integration_weights(grid, scheme).weights
    return (np.asarray(X, dtype=float) * w) @ bspline_design(grid, basis)


def _grid_index(grid, times, what):
    grid = np.asarray(grid, dtype=float)
    tol = 1e-9 * max(1.0, np.ptp(grid))
    idx = np.clip(np.searchsorted(grid, times), 0, grid.size - 1)
    lower = np.clip(idx - 1, 0, grid.size - 1)
    pick = np.where(np.abs(grid[lower] - times) < np.abs(grid[idx] - times), lower, idx)
    miss = np.abs(grid[pick] - times) > tol
    if miss.any():
        raise LearnerError(
            f"{what}: covariate grid lacks response time {times[miss][0]!r}; "
            "concurrent effects need the covariate observed at every response time"
        )
    return pick


def concurrent_design(X, grid, times, curve_id, basis_t):
    """Rows ``x_i(t) phi(t)'`` for observations ``(curve_id, times)``."""
    idx = _grid_index(grid, np.asarray(times, dtype=float), "concurrent effect")
    xv = np.asarray(X, dtype=float)[np.asarray(curve_id), idx]
    return xv[:, None] * bspline_design(times, basis_t)


def hist_design_s(X, grid, scheme, basis_s, limits, standardize, times, curve_id, label="bhist"):
    """Covariate part ``sum_r I(l(t) <= s_r <= u(t)) w_r x_i(s_r) phi_k(s_r)``.

    Returns an ``n x K_s`` matrix, one row per observation.
    """
    X = np.asarray(X, dtype=float)
    grid = np.asarray(grid, dtype=float)
    times = np.asarray(times, dtype=float)
    curve_id = np.asarray(curve_id)
    w = integration_weights(grid, scheme).weights
    Phi = bspline_design(grid, basis_s)
    floor = 1.0 if scheme == "equal" else float(np.min(np.diff(grid)))
    ut, inv = np.unique(times, return_inverse=True)
    out = np.zeros((times.size, Phi.shape[1]))
    empty = 0
    for u, tu in enumerate(ut):
        mask = limits.admissible(grid, tu)
        rows = np.flatnonzero(inv == u)
        if not mask.any():
            empty += 1
            continue
        if limits.kind == "custom":
            on = np.flatnonzero(mask)
            if on[-1] - on[0] + 1 != on.size:
                raise LearnerError(f"{label}: admissible s-range at t={tu!r} is not contiguous")
        wm = w * mask
        if standardize == "length":
            wm = wm / max(wm.sum(), floor)
        out[rows] = (X[curve_id[rows]] * wm) @ Phi
    if empty:
        warnings.warn(
            f"{label}: {empty} response time point(s) have an empty integration window; "
            "their design rows are zero",
            stacklevel=3,
        )
    return out


# ---------------------------------------------------------------------------
# frames


@dataclass(frozen=True)
class Frame:
    """Data together with the response's observation index.

    ``times`` and ``curve_id`` give the time and curve of every observation
    in long order; for a scalar response both index the curves.
    """

    data: Dataset
    layout: str
    times: np.ndarray
    curve_id: np.ndarray
    N: int
    grid: Optional[np.ndarray] = None

    @property
    def n(self):
        return self.times.size

    @classmethod
    def from_response(cls, data, response=None):
        r = data.response if response is None else response
        if r is None:
            raise DataError("a response (or response grid) is needed to index observations")
        if r.layout == "scalar":
            N = r.n_curves
            return cls(data, "scalar", np.zeros(N), np.arange(N), N)
        _, times, cid = r.to_long()
        return cls(data, r.layout, times, cid, r.n_curves, r.grid if r.layout == "grid" else None)

    @classmethod
    def on_grid(cls, data, grid):
        grid = np.asarray(grid, dtype=float)
        N = data.n_curves
        return cls(data, "grid", np.repeat(grid, N), np.tile(np.arange(N), grid.size), N, grid)

    @classmethod
    def scalar(cls, data):
        N = data.n_curves
        return cls(data, "scalar", np.zeros(N), np.arange(N), N)


# ---------------------------------------------------------------------------
# specs


def _check_df_lam(spec):
    if spec.df is not None and spec.lam is not None:
        raise ValueError(f"{spec.TYPE}: give either df or lambda, not both")
    if spec.df is not None and not spec.df > 0:
        raise ValueError(f"{spec.TYPE}: df must be positive")
    if spec.lam is not None and not spec.lam >= 0:
        raise ValueError(f"{spec.TYPE}: lambda must be nonnegative")


class _Spec:
    TYPE: ClassVar[str] = ""
    DEFAULT_DF: ClassVar[Optional[float]] = 4.0

    def __post_init__(self):
        _check_df_lam(self)

    @property
    def df_target(self):
        if self.df is not None:
            return float(self.df)
        return None if self.lam is not None else self.DEFAULT_DF

    def to_dict(self):
        d = {"type": self.TYPE}
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "lam":
                if v is not None:
                    d["lambda"] = v
            elif isinstance(v, _Spec):
                d[f.name] = v.to_dict()
            elif isinstance(v, Limits):
                d[f.name] = v.to_dict()
            elif isinstance(v, tuple):
                d[f.name] = list(v)
            elif v is not None:
                d[f.name] = v
        return d

    def label(self):
        return f"{self.TYPE}({self.var_names()[0]})"

    def var_names(self):
        return ()


@dataclass(frozen=True)
class Intercept(_Spec):
    """Constant term; expanded with the time formula it becomes a smooth intercept."""

    df: Optional[float] = None
    lam: Optional[float] = None
    TYPE: ClassVar[str] = "intercept"
    DEFAULT_DF: ClassVar[Optional[float]] = None

    def label(self):
        return "intercept"

    def build(self, frame, time_name=TIME):
        return InterceptNode(self.label())


@dataclass(frozen=True)
class Bols(_Spec):
    """Linear effect of scalar covariates (ridge penalty when df or lambda is set)."""

    z: tuple = ()
    intercept: bool = True
    df: Optional[float] = None
    lam: Optional[float] = None
    TYPE: ClassVar[str] = "bols"
    DEFAULT_DF: ClassVar[Optional[float]] = None
    CONSTRAINED: ClassVar[bool] = False

    def __post_init__(self):
        z = (self.z,) if isinstance(self.z, str) else tuple(self.z)
        if not z and not self.intercept:
            raise ValueError(f"{self.TYPE}: needs a variable or an intercept")
        object.__setattr__(self, "z", z)
        super().__post_init__()

    def var_names(self):
        return self.z

    def label(self):
        return f"{self.TYPE}({', '.join(self.z) if self.z else '1'})"

    def build(self, frame, time_name=TIME):
        cols = []
        for v in self.z:
            cov = frame.data.scalars.get(v)
            if cov is None:
                raise DataError("scalar covariate not found", v)
            cols.append((v, cov.levels if cov.is_factor else None))
        return OlsNode(
            self.label(), tuple(cols), self.intercept, self.CONSTRAINED, self.df, self.lam
        )


@dataclass(frozen=True)
class Bolsc(Bols):
    """Linear effect constrained to sum to zero over curves."""

    TYPE: ClassVar[str] = "bolsc"
    CONSTRAINED: ClassVar[bool] = True


@dataclass(frozen=True)
class Brandom(_Spec):
    """Ridge-penalized factor effect with one coefficient per level."""

    z: str = ""
    constrained: bool = False
    df: Optional[float] = None
    lam: Optional[float] = None
    TYPE: ClassVar[str] = "brandom"

    def var_names(self):
        return (self.z,)

    def build(self, frame, time_name=TIME):
        cov = frame.data.scalars.get(self.z)
        if cov is None:
            raise DataError("scalar covariate not found", self.z)
        if not cov.is_factor:
            raise DataError("brandom needs a factor", self.z)
        return RandomNode(self.label(), self.z, cov.levels, self.constrained, self.df_target, self.lam)


@dataclass(frozen=True)
class Bbs(_Spec):
    """P-spline of a scalar covariate or of the response time."""

    z: str = TIME
    knots: int = 20
    degree: int = 3
    differences: int = 2
    df: Optional[float] = None
    lam: Optional[float] = None
    TYPE: ClassVar[str] = "bbs"
    CONSTRAINED: ClassVar[bool] = False

    def var_names(self):
        return (self.z,)

    def build(self, frame, time_name=TIME):
        if self.z == time_name:
            if self.CONSTRAINED:
                raise LearnerError(f"{self.label()}: a constraint applies to covariates, not to time")
            if frame.layout == "scalar":
                raise LearnerError(f"{self.label()}: the response has no time argument")
            basis = SplineBasis.over(frame.times, self.knots, self.degree)
            return BbsNode(self.label(), self.z, basis, self.differences, True, False, self.df_target, self.lam)
        cov = frame.data.scalars.get(self.z)
        if cov is None:
            raise DataError("scalar covariate not found", self.z)
        if cov.is_factor:
            raise DataError("bbs needs a numeric covariate", self.z)
        basis = SplineBasis.over(cov.values, self.knots, self.degree)
        return BbsNode(
            self.label(), self.z, basis, self.differences, False, self.CONSTRAINED, self.df_target, self.lam
        )


@dataclass(frozen=True)
class Bbsc(Bbs):
    """P-spline constrained to sum to zero over curves."""

    TYPE: ClassVar[str] = "bbsc"
    CONSTRAINED: ClassVar[bool] = True


def _functional(frame, name):
    x = frame.data.functionals.get(name)
    if x is None:
        raise DataError("functional covariate not found", name)
    return x


@dataclass(frozen=True)
class Bsignal(_Spec):
    """Linear functional effect ``int x(s) beta(s) ds`` with a P-spline ``beta``."""

    x: str = ""
    knots: int = 10
    degree: int = 3
    differences: int = 1
    int_scheme: str = "trapezoid"
    df: Optional[float] = None
    lam: Optional[float] = None
    TYPE: ClassVar[str] = "bsignal"

    def var_names(self):
        return (self.x,)

    def build(self, frame, time_name=TIME):
        x = _functional(frame, self.x)
        basis = SplineBasis.over(x.grid, self.knots, self.degree)
        return SignalNode(
            self.label(), self.x, basis, self.differences, x.grid, self.int_scheme, self.df_target, self.lam
        )


@dataclass(frozen=True)
class Bfpc(_Spec):
    """Functional effect expanded in the covariate's principal components."""

    x: str = ""
    pve: float = 0.99
    npc: Optional[int] = None
    df: Optional[float] = None
    lam: Optional[float] = None
    TYPE: ClassVar[str] = "bfpc"

    def var_names(self):
        return (self.x,)

    def build(self, frame, time_name=TIME):
        x = _functional(frame, self.x)
        res = fpca(x.values, x.grid, self.pve, self.npc)
        df = self.df_target
        if df is not None and df > res.npc:
            warnings.warn(
                f"{self.label()}: df={df:g} exceeds the {res.npc} retained components; using df={res.npc}",
                stacklevel=2,
            )
            df = float(res.npc)
        return FpcNode(self.label(), self.x, res, df, self.lam)


@dataclass(frozen=True)
class Bconcurrent(_Spec):
    """Concurrent effect ``x(t) beta(t)``."""

    x: str = ""
    knots: int = 10
    degree: int = 3
    differences: int = 1
    df: Optional[float] = None
    lam: Optional[float] = None
    TYPE: ClassVar[str] = "bconcurrent"

    def var_names(self):
        return (self.x,)

    def build(self, frame, time_name=TIME):
        if frame.layout == "scalar":
            raise LearnerError(f"{self.label()}: needs a functional response")
        x = _functional(frame, self.x)
        _grid_index(x.grid, frame.times, self.label())
        basis = SplineBasis.over(frame.times, self.knots, self.degree)
        return ConcurrentNode(self.label(), self.x, basis, self.differences, x.grid, self.df_target, self.lam)


@dataclass(frozen=True)
class Bhist(_Spec):
    """Historical effect ``int_{l(t)}^{u(t)} x(s) beta(s, t) ds``."""

    x: str = ""
    limits: Limits = field(default_factory=Limits)
    knots: int = 10
    knots_t: Optional[int] = None
    degree: int = 3
    differences: int = 1
    int_scheme: str = "trapezoid"
    standardize: str = "none"
    df: Optional[float] = None
    lam: Optional[float] = None
    TYPE: ClassVar[str] = "bhist"

    def __post_init__(self):
        if isinstance(self.limits, (dict, str)):
            object.__setattr__(self, "limits", Limits.from_dict(self.limits))
        if self.standardize not in ("none", "length"):
            raise ValueError(f"bhist: unknown standardize {self.standardize!r}")
        super().__post_init__()

    def var_names(self):
        return (self.x,)

    def build(self, frame, time_name=TIME):
        if frame.layout == "scalar":
            raise LearnerError(f"{self.label()}: needs a functional response")
        x = _functional(frame, self.x)
        basis_s = SplineBasis.over(x.grid, self.knots, self.degree)
        kt = self.knots if self.knots_t is None else self.knots_t
        basis_t = SplineBasis.over(frame.times, kt, self.degree)
        return HistNode(
            self.label(),
            self.x,
            basis_s,
            basis_t,
            self.differences,
            x.grid,
            self.int_scheme,
            self.limits,
            self.standardize,
            self.df_target,
            self.lam,
        )


_OPS = {
    "kronecker": "%O%",
    "kronecker_t_only": "%A0%",
    "row_tensor": "%X%",
    "row_tensor_constrained": "%Xc%",
    "row_tensor_t_only": "%Xa0%",
}


@dataclass(frozen=True)
class Compose(_Spec):
    """Tensor product of two learners.

    ``kronecker`` pairs a curve-level learner with a time basis (array form
    on grid responses); ``row_tensor`` multiplies designs row by row. The
    ``*_t_only`` variants penalize only the right marginal and require the
    left marginal to be unpenalized. ``row_tensor_constrained`` centers the
    composed covariate part.
    """

    op: str = "kronecker"
    left: Optional[_Spec] = None
    right: Optional[_Spec] = None
    df: Optional[float] = None
    lam: Optional[float] = None
    TYPE: ClassVar[str] = "compose"
    DEFAULT_DF: ClassVar[Optional[float]] = None

    def __post_init__(self):
        if self.op not in _OPS:
            raise ValueError(f"unknown composition {self.op!r}; expected one of {sorted(_OPS)}")
        if self.left is None or self.right is None:
            raise ValueError("compose needs a left and a right learner")
        if isinstance(self.left, dict):
            object.__setattr__(self, "left", spec_from_dict(self.left))
        if isinstance(self.right, dict):
            object.__setattr__(self, "right", spec_from_dict(self.right))
        super().__post_init__()

    def var_names(self):
        return tuple(self.left.var_names()) + tuple(self.right.var_names())

    def label(self):
        return f"{self.left.label()} {_OPS[self.op]} {self.right.label()}"

    def build(self, frame, time_name=TIME):
        left = self.left.build(frame, time_name)
        right = self.right.build(frame, time_name)
        return ComposeNode(self.label(), self.op, left, right, self.df, self.lam)


_SPECS = {cls.TYPE: cls for cls in (Intercept, Bols, Bolsc, Brandom, Bbs, Bbsc, Bsignal, Bfpc, Bconcurrent, Bhist, Compose)}


def spec_from_dict(d):
    """Parse a learner clause such as ``{"type": "bsignal", "x": "NIR", "df": 4}``."""
    if not isinstance(d, dict) or "type" not in d:
        raise ValueError("learner clause must be an object with a 'type' field")
    cls = _SPECS.get(d["type"])
    if cls is None:
        raise ValueError(f"unknown learner type {d['type']!r}; expected one of {sorted(_SPECS)}")
    kwargs = {}
    names = {f.name for f in fields(cls)}
    for k, v in d.items():
        if k == "type":
            continue
        key = "lam" if k == "lambda" else k
        if key not in names:
            raise ValueError(f"{d['type']}: unknown field {k!r}")
        if key in ("left", "right"):
            v = spec_from_dict(v)
        elif key == "limits":
            v = Limits.from_dict(v)
        elif key == "z" and isinstance(v, list):
            v = tuple(v)
        kwargs[key] = v
    return cls(**kwargs)


# ---------------------------------------------------------------------------
# nodes


class Node:
    """Structural state of a built learner. Immutable after construction."""

    level = "curve"
    constrained = False
    unpenalized_default = False

    def __init__(self, label, df=None, lam=None):
        self.label = label
        self.df = df
        self.lam = lam

    def children(self):
        return ()

    def variables(self):
        return ()

    def state(self):
        raise NotImplementedError

    def _base_state(self):
        return {"node": type(self).__name__, "label": self.label, "df": self.df, "lam": self.lam}


def _factor_codes(data, name, levels):
    cov = data.scalars.get(name)
    if cov is None:
        raise DataError("scalar covariate not found", name)
    if not cov.is_factor:
        raise DataError("expected a factor", name)
    if tuple(cov.levels) == tuple(levels):
        return cov.values
    index = {l: k for k, l in enumerate(levels)}
    try:
        return np.array([index[l] for l in cov.labels()], dtype=int)
    except KeyError as e:
        raise DataError(f"factor level {e.args[0]!r} unseen in training", name) from None


def _numeric(data, name):
    cov = data.scalars.get(name)
    if cov is None:
        raise DataError("scalar covariate not found", name)
    if cov.is_factor:
        raise DataError("expected a numeric covariate", name)
    return cov.values


class InterceptNode(Node):
    K = 1

    def __init__(self, label="intercept"):
        super().__init__(label)
        self.penalty = np.zeros((1, 1))

    def curve_design(self, data, Qs):
        return np.ones((data.n_curves, 1))

    def column_names(self):
        return ["(Intercept)"]

    def state(self):
        return {"node": "InterceptNode", "label": self.label}

    @classmethod
    def from_state(cls, s):
        return cls(s["label"])


class OlsNode(Node):
    unpenalized_default = True

    def __init__(self, label, columns, intercept, constrained, df, lam):
        super().__init__(label, df, lam)
        self.columns = tuple((v, None if lv is None else tuple(lv)) for v, lv in columns)
        self.intercept = bool(intercept)
        self.constrained = bool(constrained)
        self.K = len(self.column_names())
        self.penalty = np.eye(self.K)

    def variables(self):
        return tuple(v for v, _ in self.columns)

    def column_names(self):
        names = ["(Intercept)"] if self.intercept else []
        full = not self.intercept
        for v, levels in self.columns:
            if levels is None:
                names.append(v)
            else:
                keep = levels if full else levels[1:]
                names.extend(f"{v}{l}" for l in keep)
                full = False
        return names

    def curve_design(self, data, Qs):
        N = data.n_curves
        cols = [np.ones((N, 1))] if self.intercept else []
        full = not self.intercept
        for v, levels in self.columns:
            if levels is None:
                cols.append(_numeric(data, v)[:, None])
            else:
                codes = _factor_codes(data, v, levels)
                D = np.zeros((N, len(levels)))
                D[np.arange(N), codes] = 1.0
                cols.append(D if full else D[:, 1:])
                full = False
        return np.hstack(cols)

    def state(self):
        s = self._base_state()
        s.update(columns=[[v, None if lv is None else list(lv)] for v, lv in self.columns],
                 intercept=self.intercept, constrained=self.constrained)
        return s

    @classmethod
    def from_state(cls, s):
        return cls(s["label"], [tuple(c) for c in s["columns"]], s["intercept"], s["constrained"], s["df"], s["lam"])


class RandomNode(Node):
    def __init__(self, label, var, levels, constrained, df, lam):
        super().__init__(label, df, lam)
        self.var = var
        self.levels = tuple(levels)
        self.constrained = bool(constrained)
        self.K = len(self.levels)
        self.penalty = np.eye(self.K)

    def variables(self):
        return (self.var,)

    def column_names(self):
        return [f"{self.var}{l}" for l in self.levels]

    def curve_design(self, data, Qs):
        codes = _factor_codes(data, self.var, self.levels)
        D = np.zeros((data.n_curves, self.K))
        D[np.arange(codes.size), codes] = 1.0
        return D

    def state(self):
        s = self._base_state()
        s.update(var=self.var, levels=list(self.levels), constrained=self.constrained)
        return s

    @classmethod
    def from_state(cls, s):
        return cls(s["label"], s["var"], s["levels"], s["constrained"], s["df"], s["lam"])


class BbsNode(Node):
    def __init__(self, label, var, basis, differences, is_time, constrained, df, lam):
        super().__init__(label, df, lam)
        self.var = var
        self.basis = basis
        self.differences = int(differences)
        self.is_time = bool(is_time)
        self.level = "time" if is_time else "curve"
        self.constrained = bool(constrained)
        self.K = basis.dim
        self.penalty = _spline_penalty(self.K, self.differences)

    def variables(self):
        return () if self.is_time else (self.var,)

    def curve_design(self, data, Qs):
        return bspline_design(_numeric(data, self.var), self.basis)

    def time_design(self, t):
        return bspline_design(t, self.basis)

    def state(self):
        s = self._base_state()
        s.update(var=self.var, basis=self.basis.to_dict(), differences=self.differences,
                 is_time=self.is_time, constrained=self.constrained)
        return s

    @classmethod
    def from_state(cls, s):
        return cls(s["label"], s["var"], SplineBasis.from_dict(s["basis"]), s["differences"],
                   s["is_time"], s["constrained"], s["df"], s["lam"])


def _functional_values(data, name, grid):
    x = data.functionals.get(name)
    if x is None:
        raise DataError("functional covariate not found", name)
    if x.grid.size != grid.size or not np.allclose(x.grid, grid, rtol=0, atol=1e-9 * max(1.0, np.ptp(grid))):
        raise DataError("functional covariate grid differs from the training grid", name)
    return x.values


class SignalNode(Node):
    def __init__(self, label, var, basis, differences, grid, scheme, df, lam):
        super().__init__(label, df, lam)
        self.var = var
        self.basis = basis
        self.differences = int(differences)
        self.grid = np.asarray(grid, dtype=float)
        self.scheme = scheme
        self.K = basis.dim
        self.penalty = _spline_penalty(self.K, self.differences)

    def variables(self):
        return (self.var,)

    def curve_design(self, data, Qs):
        X = _functional_values(data, self.var, self.grid)
        return signal_design(X, self.grid, self.basis, self.scheme)

    def coef_basis(self, s):
        return bspline_design(s, self.basis)

    def state(self):
        s = self._base_state()
        s.update(var=self.var, basis=self.basis.to_dict(), differences=self.differences,
                 grid=self.grid.tolist(), scheme=self.scheme)
        return s

    @classmethod
    def from_state(cls, s):
        return cls(s["label"], s["var"], SplineBasis.from_dict(s["basis"]), s["differences"],
                   s["grid"], s["scheme"], s["df"], s["lam"])


class FpcNode(Node):
    def __init__(self, label, var, res: FpcaResult, df, lam):
        super().__init__(label, df, lam)
        self.var = var
        self.res = res
        self.K = res.npc
        self.penalty = np.eye(self.K)

    @property
    def grid(self):
        return self.res.grid

    def variables(self):
        return (self.var,)

    def curve_design(self, data, Qs):
        X = _functional_values(data, self.var, self.res.grid)
        return self.res.project(X)

    def coef_basis(self, s):
        E = self.res.eigenfunctions
        return np.column_stack([np.interp(s, self.res.grid, E[:, k]) for k in range(self.K)])

    def state(self):
        s = self._base_state()
        r = self.res
        s.update(var=self.var, grid=r.grid.tolist(), mean=r.mean.tolist(),
                 eigenvalues=r.eigenvalues.tolist(), eigenfunctions=r.eigenfunctions.tolist(),
                 weights=r.weights.tolist(), pve=r.pve)
        return s

    @classmethod
    def from_state(cls, s):
        res = FpcaResult(
            grid=np.array(s["grid"]), mean=np.array(s["mean"]), eigenvalues=np.array(s["eigenvalues"]),
            eigenfunctions=np.array(s["eigenfunctions"]).reshape(len(s["grid"]), -1),
            scores=np.zeros((0, len(s["eigenvalues"]))), weights=np.array(s["weights"]),
            pve=s["pve"], all_eigenvalues=np.array(s["eigenvalues"]),
        )
        return cls(s["label"], s["var"], res, s["df"], s["lam"])


class ConcurrentNode(Node):
    level = "obs"

    def __init__(self, label, var, basis_t, differences, grid, df, lam):
        super().__init__(label, df, lam)
        self.var = var
        self.basis_t = basis_t
        self.differences = int(differences)
        self.grid = np.asarray(grid, dtype=float)
        self.K = basis_t.dim
        self.penalty = _spline_penalty(self.K, self.differences)

    def variables(self):
        return (self.var,)

    def obs_design(self, data, times, curve_id, Qs):
        X = _functional_values(data, self.var, self.grid)
        return concurrent_design(X, self.grid, times, curve_id, self.basis_t)

    def state(self):
        s = self._base_state()
        s.update(var=self.var, basis_t=self.basis_t.to_dict(), differences=self.differences,
                 grid=self.grid.tolist())
        return s

    @classmethod
    def from_state(cls, s):
        return cls(s["label"], s["var"], SplineBasis.from_dict(s["basis_t"]), s["differences"],
                   s["grid"], s["df"], s["lam"])


class HistNode(Node):
    level = "obs"

    def __init__(self, label, var, basis_s, basis_t, differences, grid, scheme, limits, standardize, df, lam):
        super().__init__(label, df, lam)
        self.var = var
        self.basis_s = basis_s
        self.basis_t = basis_t
        self.differences = int(differences)
        self.grid = np.asarray(grid, dtype=float)
        self.scheme = scheme
        self.limits = limits
        self.standardize = standardize
        Ks, Kt = basis_s.dim, basis_t.dim
        self.K = Ks * Kt
        self.penalty = kronecker_sum(_spline_penalty(Ks, self.differences), _spline_penalty(Kt, self.differences))

    def variables(self):
        return (self.var,)

    def obs_design(self, data, times, curve_id, Qs):
        X = _functional_values(data, self.var, self.grid)
        S = hist_design_s(X, self.grid, self.scheme, self.basis_s, self.limits, self.standardize,
                          times, curve_id, self.label)
        return row_tensor(S, bspline_design(times, self.basis_t))

    def state(self):
        s = self._base_state()
        s.update(var=self.var, basis_s=self.basis_s.to_dict(), basis_t=self.basis_t.to_dict(),
                 differences=self.differences, grid=self.grid.tolist(), scheme=self.scheme,
                 limits=self.limits.to_dict(), standardize=self.standardize)
        return s

    @classmethod
    def from_state(cls, s):
        return cls(s["label"], s["var"], SplineBasis.from_dict(s["basis_s"]), SplineBasis.from_dict(s["basis_t"]),
                   s["differences"], s["grid"], s["scheme"], Limits.from_dict(s["limits"]),
                   s["standardize"], s["df"], s["lam"])


class ComposeNode(Node):
    def __init__(self, label, op, left, right, df=None, lam=None):
        super().__init__(label, df, lam)
        if op not in _OPS:
            raise LearnerError(f"unknown composition {op!r}")
        self.op = op
        self.left = left
        self.right = right
        if op.startswith("kronecker"):
            if left.level != "curve" or right.level != "time":
                raise LearnerError(
                    f"{label}: a Kronecker product pairs a covariate learner (left) with a time basis (right)"
                )
            self.level = "obs"
        else:
            self.level = "curve" if left.level == right.level == "curve" else "obs"
        if op == "row_tensor_constrained":
            if self.level != "curve":
                raise LearnerError(f"{label}: the constrained row tensor needs two covariate learners")
            self.constrained = True

    @property
    def t_only(self):
        return self.op.endswith("t_only")

    def children(self):
        return (self.left, self.right)

    def variables(self):
        return tuple(self.left.variables()) + tuple(self.right.variables())

    def curve_design(self, data, Qs):
        return row_tensor(eval_curve(self.left, data, Qs), eval_curve(self.right, data, Qs))

    def obs_design(self, data, times, curve_id, Qs):
        return row_tensor(
            eval_obs(self.left, data, times, curve_id, Qs),
            eval_obs(self.right, data, times, curve_id, Qs),
        )

    def state(self):
        s = self._base_state()
        s.update(op=self.op, left=self.left.state(), right=self.right.state())
        return s

    @classmethod
    def from_state(cls, s):
        return cls(s["label"], s["op"], node_from_state(s["left"]), node_from_state(s["right"]), s["df"], s["lam"])


_NODES = {c.__name__: c for c in (InterceptNode, OlsNode, RandomNode, BbsNode, SignalNode, FpcNode,
                                  ConcurrentNode, HistNode, ComposeNode)}


def node_from_state(s):
    return _NODES[s["node"]].from_state(s)


def preorder(node):
    yield node
    for c in node.children():
        yield from preorder(c)


# ---------------------------------------------------------------------------
# evaluation with constraint transforms


def eval_curve(node, data, Qs):
    Z = node.curve_design(data, Qs)
    Q = Qs.get(id(node))
    return Z if Q is None else Z @ Q


def eval_obs(node, data, times, curve_id, Qs):
    if node.level == "curve":
        return eval_curve(node, data, Qs)[curve_id]
    if node.level == "time":
        return node.time_design(times)
    return node.obs_design(data, times, curve_id, Qs)


def compute_constraints(node, data, curve_weights, Qs):
    """Fill ``Qs`` for every constrained node, children first."""
    for c in node.children():
        compute_constraints(c, data, curve_weights, Qs)
    if node.constrained:
        Z = node.curve_design(data, Qs)
        try:
            Qs[id(node)] = constraint_transform(Z, curve_weights)
        except ValueError as e:
            raise LearnerError(f"{node.label}: {e}") from None
    return Qs


def effective_penalty(node, Qs):
    """Penalty after constraints; nested compositions use the isotropic sum."""
    if isinstance(node, ComposeNode):
        Pl = effective_penalty(node.left, Qs)
        Pr = effective_penalty(node.right, Qs)
        if node.t_only:
            P = np.kron(np.eye(Pl.shape[0]), Pr)
        else:
            P = kronecker_sum(Pl, Pr)
    else:
        P = node.penalty
    Q = Qs.get(id(node))
    return P if Q is None else Q.T @ P @ Q


def _marginal_df(node, P, gram_fn):
    """Degrees of freedom a marginal contributes to a product, and its lambda."""
    K = P.shape[0]
    if isinstance(node, InterceptNode):
        return 1.0, None
    if node.lam is not None:
        return df_for_lambda(gram_fn(node), P, node.lam), node.lam
    if node.df is not None:
        if node.df > K + 1e-10:
            raise LearnerError(f"{node.label}: df={node.df:g} exceeds its {K} columns")
        return float(node.df), None
    return float(K), None


def resolve_smoothing(node, Qs, gram, marginal_gram):
    """Penalty, lambda and df of a term rooted at ``node``.

    Parameters
    ----------
    gram : ndarray
        Weighted cross product of the term's effective design.
    marginal_gram : callable
        ``marginal_gram(child)`` gives the weighted cross product of a
        child's effective design, used only when a marginal carries lambda.
    """
    try:
        if not isinstance(node, ComposeNode):
            P = effective_penalty(node, Qs)
            if isinstance(node, InterceptNode) or not np.any(P):
                return P, 0.0, float(P.shape[0])
            if node.lam is not None:
                return P, float(node.lam), df_for_lambda(gram, P, node.lam)
            if node.df is None:
                return P, 0.0, float(np.linalg.matrix_rank(gram, hermitian=True))
            df = float(node.df)
            return P, lambda_for_df(gram, P, df), df
        Pl = effective_penalty(node.left, Qs)
        Pr = effective_penalty(node.right, Qs)
        Ql, Qr = Qs.get(id(node)), None
        dfl, laml = _marginal_df(node.left, Pl, marginal_gram)
        dfr, lamr = _marginal_df(node.right, Pr, marginal_gram)
        if node.t_only:
            Kl = Pl.shape[0]
            if abs(dfl - Kl) > 1e-8:
                raise LearnerError(
                    "number of degrees of freedom in the first base-learner has to be equal to "
                    f"the number of its columns ({dfl:g} != {Kl})"
                )
            P = np.kron(np.eye(Kl), Pr)
        elif node.lam is None and node.df is None and laml is not None and lamr is not None:
            P = laml * np.kron(Pl, np.eye(Pr.shape[0])) + lamr * np.kron(np.eye(Pl.shape[0]), Pr)
            if Ql is not None:
                P = Ql.T @ P @ Ql
            return P, 1.0, df_for_lambda(gram, P, 1.0)
        else:
            P = kronecker_sum(Pl, Pr)
        if Ql is not None:
            P = Ql.T @ P @ Ql
        if node.lam is not None:
            return P, float(node.lam), df_for_lambda(gram, P, node.lam)
        target = float(node.df) if node.df is not None else dfl * dfr
        if Ql is not None:
            target = min(target, float(P.shape[0]))
        if not np.any(P):
            return P, 0.0, float(P.shape[0])
        return P, lambda_for_df(gram, P, target), target
    except LearnerError as e:
        msg = str(e)
        if not msg.startswith(node.label):
            msg = f"{node.label}: {msg}"
        raise LearnerError(msg) from None


# ---------------------------------------------------------------------------
# standalone builders returning design + penalty on training data


@dataclass(frozen=True)
class BuiltBaseLearner:
    """Design, penalty, constraint transform and smoothing parameter of a term."""

    design: np.ndarray
    penalty: np.ndarray
    transform: np.ndarray
    lam: float
    df: float
    label: str

    @property
    def K(self):
        return self.design.shape[1]


def _finish(label, Z, P, df=None, lam=None, weights=None, transform=None):
    Z = np.asarray(Z, dtype=float)
    w = np.ones(Z.shape[0]) if weights is None else np.asarray(weights, dtype=float)
    F = Z.T @ (w[:, None] * Z)
    try:
        if lam is not None:
            dfv = df_for_lambda(F, P, lam) if np.any(P) else float(Z.shape[1])
            lamv = float(lam)
        elif df is None or not np.any(P):
            lamv, dfv = 0.0, float(np.linalg.matrix_rank(F, hermitian=True))
        else:
            lamv, dfv = lambda_for_df(F, P, df), float(df)
    except LearnerError as e:
        raise LearnerError(f"{label}: {e}") from None
    T = np.eye(Z.shape[1]) if transform is None else transform
    return BuiltBaseLearner(Z, P, T, lamv, dfv, label)


def build_signal(spec: Bsignal, x: FunctionalCovariate) -> BuiltBaseLearner:
    """Design ``(X * w) Phi`` of a signal effect on the covariate's grid."""
    basis = SplineBasis.over(x.grid, spec.knots, spec.degree)
    Z = signal_design(x.values, x.grid, basis, spec.int_scheme)
    P = _spline_penalty(basis.dim, spec.differences)
    return _finish(spec.label(), Z, P, spec.df_target, spec.lam)


def build_fpc(spec: Bfpc, x: FunctionalCovariate) -> BuiltBaseLearner:
    """Design of leading principal component scores, ridge penalty."""
    res = fpca(x.values, x.grid, spec.pve, spec.npc)
    df = spec.df_target
    if df is not None and df > res.npc:
        warnings.warn(f"{spec.label()}: df reduced to the {res.npc} retained components", stacklevel=2)
        df = float(res.npc)
    return _finish(spec.label(), res.scores, np.eye(res.npc), df, spec.lam)


def _obs_index(N, response_times, curve_id):
    t = np.asarray(response_times, dtype=float)
    if curve_id is None:
        return np.repeat(t, N), np.tile(np.arange(N), t.size)
    return t, np.asarray(curve_id, dtype=int)


def build_hist(spec: Bhist, x: FunctionalCovariate, response_times, curve_id=None) -> BuiltBaseLearner:
    """Historical design for all curves at ``response_times``.

    With ``curve_id=None`` the times are a common grid and rows are
    time-major; otherwise ``response_times`` and ``curve_id`` list the
    observations in long format.
    """
    times, cid = _obs_index(x.n_curves, response_times, curve_id)
    basis_s = SplineBasis.over(x.grid, spec.knots, spec.degree)
    basis_t = SplineBasis.over(times, spec.knots if spec.knots_t is None else spec.knots_t, spec.degree)
    S = hist_design_s(x.values, x.grid, spec.int_scheme, basis_s, spec.limits, spec.standardize,
                      times, cid, spec.label())
    Z = row_tensor(S, bspline_design(times, basis_t))
    P = kronecker_sum(_spline_penalty(basis_s.dim, spec.differences), _spline_penalty(basis_t.dim, spec.differences))
    return _finish(spec.label(), Z, P, spec.df_target, spec.lam)


def build_concurrent(spec: Bconcurrent, x: FunctionalCovariate, response_times, curve_id=None) -> BuiltBaseLearner:
    """Concurrent design ``x_i(t) phi(t)'``; rows as in :func:`build_hist`."""
    times, cid = _obs_index(x.n_curves, response_times, curve_id)
    _grid_index(x.grid, times, spec.label())
    basis = SplineBasis.over(times, spec.knots, spec.degree)
    Z = concurrent_design(x.values, x.grid, times, cid, basis)
    return _finish(spec.label(), Z, _spline_penalty(basis.dim, spec.differences), spec.df_target, spec.lam)


def apply_constraint(b: BuiltBaseLearner, weights=None) -> BuiltBaseLearner:
    """Reparametrize so the design's (weighted) column sums vanish.

    The degrees of freedom are kept when still attainable, otherwise capped
    at the reduced dimension.
    """
    try:
        Q = constraint_transform(b.design, weights)
    except ValueError as e:
        raise LearnerError(f"{b.label}: {e}") from None
    Z = b.design @ Q
    P = Q.T @ b.penalty @ Q
    df = min(b.df, float(Q.shape[1])) if b.lam > 0 else None
    return _finish(b.label, Z, P, df, None, weights, b.transform @ Q)


def compose(op, left: BuiltBaseLearner, right: BuiltBaseLearner, df=None, lam=None) -> BuiltBaseLearner:
    """Combine two built learners.

    ``kronecker`` and ``kronecker_t_only`` expect an ``N``-row left design and
    a ``G``-row right design and return ``N * G`` rows in time-major order;
    the row-tensor operators need equal row counts. The default df is the
    product of the marginal dfs.
    """
    if op not in _OPS:
        raise LearnerError(f"unknown composition {op!r}")
    label = f"{left.label} {_OPS[op]} {right.label}"
    if op.startswith("kronecker"):
        Z = kronecker_rows(left.design, right.design)
    else:
        if left.design.shape[0] != right.design.shape[0]:
            raise LearnerError(f"{label}: row tensor needs equal row counts")
        Z = row_tensor(left.design, right.design)
    T = np.kron(left.transform, right.transform)
    if op.endswith("t_only"):
        if abs(left.df - left.K) > 1e-8:
            raise LearnerError(
                f"{label}: number of degrees of freedom in the first base-learner has to be equal "
                f"to the number of its columns ({left.df:g} != {left.K})"
            )
        P = np.kron(np.eye(left.K), right.penalty)
    else:
        P = kronecker_sum(left.penalty, right.penalty)
    if lam is None and df is None:
        df = left.df * right.df
    b = _finish(label, Z, P, df, lam, transform=T)
    if op == "row_tensor_constrained":
        b = apply_constraint(b)
    return b
