"""Shared data generators and oracles for the test suite."""

import numpy as np

from fnboost.baselearners import _dense_df
from fnboost.families import binomial, gaussian, huber, laplace, poisson, quantile


def rank3_curves(N=500, R=101, zeta=(4.0, 1.0, 0.25), seed=0):
    """Curves ``mu + sum_k xi_k phi_k`` with ``phi_k = sqrt2 sin(k pi s)``.

    On an equidistant grid the sines are exactly orthonormal under trapezoid
    weights (they vanish at both ends), which makes them an oracle basis.
    """
    rng = np.random.default_rng(seed)
    s = np.linspace(0, 1, R)
    phi = np.column_stack([np.sqrt(2) * np.sin((k + 1) * np.pi * s) for k in range(len(zeta))])
    xi = rng.normal(size=(N, len(zeta))) * np.sqrt(zeta)
    return s, 1.0 + s + xi @ phi.T, phi


def single_families():
    """The six single-parameter families with a sampler for valid responses.

    Huber uses a fixed threshold here: the adaptive variant re-estimates its
    threshold from the residuals, so it is not a fixed function of ``f``.
    """
    return [
        (gaussian(), lambda rng, n: rng.normal(size=n)),
        (laplace(), lambda rng, n: rng.normal(size=n)),
        (quantile(0.3), lambda rng, n: rng.normal(size=n)),
        (huber(0.7), lambda rng, n: rng.normal(size=n)),
        (binomial(), lambda rng, n: rng.integers(0, 2, n).astype(float)),
        (poisson(), lambda rng, n: rng.poisson(2.0, n).astype(float)),
    ]


def central_difference(fn, x, h=1e-6):
    return (fn(x + h) - fn(x - h)) / (2 * h)


def dense_df(F, P, lam):
    """``trace((F + lam P)^-1 F)`` by a direct solve."""
    return _dense_df(F, P, lam)


def hat_trace_eigen(Z, P, lam):
    """Trace of ``Z (Z'Z + lam P)^-1 Z'`` from the eigenvalues of the hat matrix."""
    H = Z @ np.linalg.solve(Z.T @ Z + lam * P, Z.T)
    return float(np.sum(np.linalg.eigvalsh(0.5 * (H + H.T))))


def cox_de_boor(x, knots, k):
    """Textbook recursion, independent of scipy."""
    knots = np.asarray(knots, dtype=float)
    n = len(knots) - k - 1
    # degree 0 with the last non-empty span closed on the right
    last = np.max(np.flatnonzero(knots[:-1] < knots[1:]))
    B = np.zeros((len(x), len(knots) - 1))
    for j in range(len(knots) - 1):
        if knots[j] < knots[j + 1]:
            right = (x <= knots[j + 1]) if j == last else (x < knots[j + 1])
            B[:, j] = (x >= knots[j]) & right
    for d in range(1, k + 1):
        nb = np.zeros((len(x), len(knots) - d - 1))
        for j in range(len(knots) - d - 1):
            a = knots[j + d] - knots[j]
            b = knots[j + d + 1] - knots[j + 1]
            if a > 0:
                nb[:, j] += (x - knots[j]) / a * B[:, j]
            if b > 0:
                nb[:, j] += (knots[j + d + 1] - x) / b * B[:, j + 1]
        B = nb
    return B[:, :n]


ACCEPTANCE_LINES = []


def report(k, ok, detail):
    """Print and remember one ``ACCEPTANCE k PASS|FAIL`` line."""
    line = f"ACCEPTANCE {k} {'PASS' if ok else 'FAIL'} {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    return ok
