import numpy as np
import pytest

from fnboost.fpca import fpca
from fnboost.splines import integration_weights

from helpers import rank3_curves


class TestFpca:
    def test_pve_selects_true_rank(self):
        s, X, _ = rank3_curves()
        assert fpca(X, s, pve=0.99).npc == 3

    def test_reconstruction_exact_with_all_components(self):
        s, X, _ = rank3_curves()
        res = fpca(X, s, pve=1.0)
        w = integration_weights(s).weights
        rmse = np.sqrt(np.mean(((res.reconstruct() - X) ** 2) @ w / w.sum()))
        assert rmse < 1e-8

    def test_eigenfunctions_orthonormal(self):
        s, X, _ = rank3_curves(N=200)
        res = fpca(X, s, npc=3)
        w = integration_weights(s).weights
        np.testing.assert_allclose(res.eigenfunctions.T @ (w[:, None] * res.eigenfunctions), np.eye(3), atol=1e-10)

    def test_recovers_sine_subspace(self):
        s, X, phi = rank3_curves(N=2000, seed=3)
        res = fpca(X, s, npc=3)
        w = integration_weights(s).weights
        # projection of each true eigenfunction onto the estimated span
        C = phi.T @ (w[:, None] * res.eigenfunctions)
        np.testing.assert_allclose(np.sum(C**2, axis=1), 1.0, atol=1e-10)
        # leading eigenvalues near 4, 1, 0.25
        np.testing.assert_allclose(res.eigenvalues, [4, 1, 0.25], rtol=0.15)

    def test_scores_match_projection(self):
        s, X, _ = rank3_curves(N=50)
        res = fpca(X, s, npc=2)
        np.testing.assert_allclose(res.project(X), res.scores, atol=1e-12)

    def test_sign_convention(self):
        s, X, _ = rank3_curves(N=60)
        e1 = fpca(X, s, npc=3).eigenfunctions
        e2 = fpca(-X, s, npc=3).eigenfunctions
        np.testing.assert_allclose(e1, e2, atol=1e-10)
        idx = np.argmax(np.abs(e1), axis=0)
        assert np.all(e1[idx, np.arange(3)] > 0)

    def test_constant_curves_rejected(self):
        with pytest.raises(ValueError, match="degenerate"):
            fpca(np.ones((5, 10)), np.linspace(0, 1, 10))

    def test_too_many_components(self):
        s, X, _ = rank3_curves(N=30)
        with pytest.raises(ValueError, match="exceeds"):
            fpca(X, s, npc=5)

    def test_bad_pve(self):
        with pytest.raises(ValueError):
            fpca(np.eye(3), [0, 1, 2], pve=1.5)
