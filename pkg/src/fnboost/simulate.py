"""Synthetic datasets with known coefficient functions.

Three scenarios are provided:

``sof``
    Scalar response on smooth random curves, ``y = int x(s) beta(s) ds + e``.
``fos``
    Curves depending on a scalar covariate, with a smooth random intercept
    curve per subject.
``hist``
    Curves driven by the past of a covariate curve, where only lags of at
    least ``delta`` grid steps act on the response.
"""

from dataclasses import dataclass

import numpy as np

from .baselearners import Limits
from .data import Dataset, FunctionalCovariate, Response, ScalarCovariate
from .splines import integration_weights

__all__ = ["Simulation", "smooth_curves", "simulate_sof", "simulate_fos", "simulate_hist", "simulate"]


@dataclass(frozen=True)
class Simulation:
    data: Dataset
    truth: dict


def smooth_curves(rng, N, grid, n_basis=10, decay=1.0):
    """Random curves ``sum_k z_k k^-decay phi_k(s)`` on a Fourier basis.

    The grid is mapped to [0, 1]; ``phi_1`` is constant, then sine and
    cosine pairs of increasing frequency.
    """
    grid = np.asarray(grid, dtype=float)
    u = (grid - grid[0]) / (grid[-1] - grid[0])
    cols = [np.ones_like(u)]
    k = 1
    while len(cols) < n_basis:
        cols.append(np.sqrt(2) * np.sin(2 * np.pi * k * u))
        if len(cols) < n_basis:
            cols.append(np.sqrt(2) * np.cos(2 * np.pi * k * u))
        k += 1
    Phi = np.column_stack(cols)
    scale = np.arange(1, n_basis + 1, dtype=float) ** -decay
    return rng.standard_normal((N, n_basis)) * scale @ Phi.T


def simulate_sof(N=200, R=101, sigma=0.1, seed=1, beta=None):
    """Scalar-on-function data on ``s`` in [0, 1] with ``beta(s) = sin(pi s)``."""
    rng = np.random.default_rng(seed)
    s = np.linspace(0.0, 1.0, R)
    X = smooth_curves(rng, N, s)
    X = X - X.mean(axis=0)
    b = np.sin(np.pi * s) if beta is None else np.asarray(beta(s), dtype=float)
    w = integration_weights(s, "trapezoid").weights
    y = X @ (w * b) + sigma * rng.standard_normal(N)
    data = Dataset(Response("scalar", y), {}, {"x": FunctionalCovariate("x", X, s)})
    return Simulation(data, {"beta": (s, b)})


def simulate_fos(N=60, G=40, n_subjects=10, sigma=0.2, seed=1):
    """Function-on-scalar data ``y_i(t) = b0(t) + power_i b1(t) + u_subject(t) + e``."""
    rng = np.random.default_rng(seed)
    t = np.linspace(0.0, 1.0, G)
    subject = np.arange(N) % n_subjects
    power = rng.uniform(-1.0, 1.0, N)
    b0 = np.sin(2 * np.pi * t)
    b1 = 1.0 + np.cos(np.pi * t)
    U = 0.3 * smooth_curves(rng, n_subjects, t, n_basis=4)
    Y = b0 + np.outer(power, b1) + U[subject] + sigma * rng.standard_normal((N, G))
    labels = [f"s{k + 1:02d}" for k in subject]
    data = Dataset(
        Response("grid", Y, grid=t),
        {
            "power": ScalarCovariate("power", power),
            "subject": ScalarCovariate.factor("subject", labels),
        },
        {},
    )
    return Simulation(data, {"intercept": (t, b0), "power": (t, b1)})


def hist_beta(s, t, G):
    """Smooth lag kernel used by the historical scenario."""
    lag = (t - s) / G
    return 0.3 * np.sin(np.pi * t / G) * np.exp(-3.0 * lag)


def simulate_hist(N=60, G=40, delta=3, sigma=1.0, seed=1):
    """Historical model on ``s, t = 1..G`` with support ``s <= t - delta``."""
    rng = np.random.default_rng(seed)
    grid = np.arange(1.0, G + 1.0)
    X = smooth_curves(rng, N, grid, n_basis=12, decay=0.5)
    limits = Limits("lead", delta=float(delta))
    S, T = np.meshgrid(grid, grid, indexing="ij")
    mask = limits.admissible(S, T)
    beta = np.where(mask, hist_beta(S, T, G), 0.0)
    w = integration_weights(grid, "trapezoid").weights
    b0 = np.cos(2 * np.pi * grid / G)
    Y = b0 + (X * w) @ beta + sigma * rng.standard_normal((N, G))
    data = Dataset(Response("grid", Y, grid=grid), {}, {"x": FunctionalCovariate("x", X, grid)})
    return Simulation(data, {"beta": (grid, grid, beta), "intercept": (grid, b0), "delta": delta})


def simulate(scenario, **kw):
    fn = {"sof": simulate_sof, "fos": simulate_fos, "hist": simulate_hist}.get(scenario)
    if fn is None:
        raise ValueError(f"unknown scenario {scenario!r}; expected sof, fos or hist")
    return fn(**kw)
