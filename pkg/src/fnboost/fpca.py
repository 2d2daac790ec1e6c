"""Functional principal components on a dense common grid."""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .splines import integration_weights

__all__ = ["FpcaResult", "fpca"]


@dataclass(frozen=True)
class FpcaResult:
    """Eigen decomposition of the quadrature-weighted covariance operator.

    Attributes
    ----------
    mean : ndarray, shape (R,)
        Pointwise mean removed before the decomposition.
    eigenvalues : ndarray, shape (K,)
    eigenfunctions : ndarray, shape (R, K)
        Orthonormal under ``<f, g> = sum_r w_r f(s_r) g(s_r)``.
    scores : ndarray, shape (N, K)
    weights : ndarray, shape (R,)
        Trapezoid weights of the grid.
    pve : float
        Share of total variance captured by the retained components.
    """

    grid: np.ndarray
    mean: np.ndarray
    eigenvalues: np.ndarray
    eigenfunctions: np.ndarray
    scores: np.ndarray
    weights: np.ndarray
    pve: float
    all_eigenvalues: np.ndarray

    @property
    def npc(self):
        return self.eigenvalues.size

    def project(self, values):
        """Scores of new curves on the retained eigenfunctions."""
        values = np.atleast_2d(np.asarray(values, dtype=float))
        return ((values - self.mean) * self.weights) @ self.eigenfunctions

    def reconstruct(self, scores=None):
        scores = self.scores if scores is None else scores
        return self.mean + scores @ self.eigenfunctions.T


def fpca(values, grid, pve=0.99, npc: Optional[int] = None) -> FpcaResult:
    """Principal components of curves observed on ``grid``.

    The covariance ``C = X'X / (N - 1)`` of the centered curves is turned into
    a symmetric matrix ``D^1/2 C D^1/2`` with ``D`` the trapezoid weights, so
    that its eigenvectors map back to ``D``-orthonormal eigenfunctions.

    Parameters
    ----------
    values : ndarray, shape (N, R)
    grid : ndarray, shape (R,)
    pve : float
        Smallest cumulative share of variance to retain; ignored when ``npc``
        is given.
    npc : int, optional
        Exact number of components.

    Raises
    ------
    ValueError
        For ``pve`` outside (0, 1], fewer than two curves, zero variance, or
        ``npc`` larger than the number of positive eigenvalues.
    """
    X = np.asarray(values, dtype=float)
    grid = np.asarray(grid, dtype=float)
    if not 0 < pve <= 1:
        raise ValueError(f"pve must lie in (0, 1], got {pve}")
    N = X.shape[0]
    if N < 2:
        raise ValueError("fpca needs at least two curves")
    w = integration_weights(grid, "trapezoid").weights
    mean = X.mean(axis=0)
    Xc = X - mean
    sw = np.sqrt(w)
    Xs = Xc * sw
    # SVD of the scaled data gives the same eigenpairs as D^1/2 C D^1/2
    _, sv, vt = np.linalg.svd(Xs, full_matrices=False)
    lam = sv**2 / (N - 1)
    total = lam.sum()
    scale = np.max(np.abs(X)) ** 2 * np.sum(w)
    if not total > 1e-24 * scale or scale == 0:
        raise ValueError("degenerate covariance: the curves have no variance")
    positive = int(np.sum(lam > lam[0] * 1e-12))
    lam = lam[:positive]
    cum = np.cumsum(lam) / total
    if npc is not None:
        npc = int(npc)
        if npc < 1 or npc > positive:
            raise ValueError(f"npc={npc} exceeds the {positive} positive eigenvalues")
        K = npc
    else:
        K = int(np.searchsorted(cum, pve - 1e-12) + 1)
        K = min(K, positive)
    V = vt[:K].T
    efun = V / sw[:, None]
    # orient each eigenfunction so its largest-magnitude entry is positive
    idx = np.argmax(np.abs(efun), axis=0)
    signs = np.sign(efun[idx, np.arange(K)])
    signs[signs == 0] = 1
    efun = efun * signs
    scores = Xc * w @ efun
    return FpcaResult(
        grid=grid,
        mean=mean,
        eigenvalues=lam[:K],
        eigenfunctions=efun,
        scores=scores,
        weights=w,
        pve=float(cum[K - 1]),
        all_eigenvalues=lam,
    )
