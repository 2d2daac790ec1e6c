"""B-spline bases, difference penalties and quadrature weights.

These are the numerical kernels shared by every smooth and functional
base-learner.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import BSpline

__all__ = [
    "SplineBasis",
    "IntegrationWeights",
    "bspline_design",
    "difference_penalty",
    "integration_weights",
]


@dataclass(frozen=True)
class SplineBasis:
    """Equidistant B-spline basis on a closed interval.

    Parameters
    ----------
    inner_knots : int
        Number of interior knots.
    degree : int
        Polynomial degree of the pieces (3 for cubic splines).
    boundary : tuple of float
        ``(lower, upper)`` end points of the covariate domain.

    Notes
    -----
    The boundary knots are repeated ``degree`` additional times, so the basis
    has ``inner_knots + degree + 1`` functions and forms a partition of unity
    on the closed interval.
    """

    inner_knots: int
    degree: int
    boundary: tuple
    knots: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.inner_knots < 0:
            raise ValueError("inner_knots must be nonnegative")
        if self.degree < 0:
            raise ValueError("degree must be nonnegative")
        lo, hi = (float(b) for b in self.boundary)
        if not np.isfinite(lo) or not np.isfinite(hi) or not lo < hi:
            raise ValueError(f"invalid spline boundary {self.boundary!r}")
        object.__setattr__(self, "boundary", (lo, hi))
        breaks = np.linspace(lo, hi, self.inner_knots + 2)
        knots = np.concatenate(
            [np.repeat(lo, self.degree), breaks, np.repeat(hi, self.degree)]
        )
        object.__setattr__(self, "knots", knots)

    @property
    def dim(self) -> int:
        return self.inner_knots + self.degree + 1

    @classmethod
    def over(cls, x, inner_knots=10, degree=3):
        """Basis spanning the observed range of ``x``."""
        x = np.asarray(x, dtype=float)
        return cls(inner_knots, degree, (float(x.min()), float(x.max())))

    def to_dict(self):
        return {
            "inner_knots": self.inner_knots,
            "degree": self.degree,
            "boundary": list(self.boundary),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(int(d["inner_knots"]), int(d["degree"]), tuple(d["boundary"]))


def bspline_design(x, basis: SplineBasis) -> np.ndarray:
    """Evaluate all basis functions at ``x``.

    Parameters
    ----------
    x : array_like, shape (n,)
        Evaluation points, all inside ``basis.boundary``.
    basis : SplineBasis

    Returns
    -------
    numpy.ndarray, shape (n, basis.dim)
        Dense design matrix. Each row sums to one.

    Raises
    ------
    ValueError
        If any point lies outside the basis boundary.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    lo, hi = basis.boundary
    # a few ulps of slack so grids produced by linspace map onto the boundary
    tol = 1e-10 * (hi - lo)
    if x.size and (np.any(~np.isfinite(x)) or x.min() < lo - tol or x.max() > hi + tol):
        bad = x[(x < lo - tol) | (x > hi + tol) | ~np.isfinite(x)]
        raise ValueError(
            f"{bad.size} evaluation point(s) outside spline boundary [{lo}, {hi}], "
            f"e.g. {bad[0]!r}"
        )
    x = np.clip(x, lo, hi)
    if x.size == 0:
        return np.zeros((0, basis.dim))
    k = basis.degree
    if k == 0:
        # scipy's design matrix needs k >= 1 to close the last span
        breaks = basis.knots
        idx = np.searchsorted(breaks, x, side="right") - 1
        idx = np.clip(idx, 0, basis.dim - 1)
        out = np.zeros((x.size, basis.dim))
        out[np.arange(x.size), idx] = 1.0
        return out
    return BSpline.design_matrix(x, basis.knots, k).toarray()


def difference_penalty(K: int, order: int) -> np.ndarray:
    """Squared difference penalty ``D.T @ D`` of the given order.

    Raises
    ------
    ValueError
        If ``K <= order`` or ``order < 1``.
    """
    if order < 1:
        raise ValueError("difference order must be at least 1")
    if K <= order:
        raise ValueError(f"need more than {order} coefficients for an order-{order} penalty, got {K}")
    D = np.diff(np.eye(K), n=order, axis=0)
    return D.T @ D


@dataclass(frozen=True)
class IntegrationWeights:
    weights: np.ndarray
    scheme: str


_SCHEMES = ("trapezoid", "riemann", "equal")


def integration_weights(grid, scheme="trapezoid") -> IntegrationWeights:
    """Quadrature weights for sums of the form ``sum_r w_r f(s_r)``.

    ``"equal"`` gives unit weights, ``"riemann"`` right-aligned cell widths
    (the first point reuses the first cell width) and ``"trapezoid"`` the
    composite trapezoid rule.
    """
    grid = np.asarray(grid, dtype=float)
    if scheme not in _SCHEMES:
        raise ValueError(f"unknown integration scheme {scheme!r}; expected one of {_SCHEMES}")
    if scheme == "equal":
        return IntegrationWeights(np.ones(grid.size), scheme)
    if grid.size < 2:
        raise ValueError(f"{scheme} weights need at least two grid points")
    d = np.diff(grid)
    if np.any(d <= 0):
        raise ValueError("grid must be strictly increasing")
    if scheme == "riemann":
        w = np.concatenate([[d[0]], d])
    else:
        w = np.zeros(grid.size)
        w[:-1] += d / 2
        w[1:] += d / 2
    return IntegrationWeights(w, scheme)
