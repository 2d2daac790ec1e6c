import numpy as np
import pytest

from fnboost.baselearners import Limits
from fnboost.simulate import simulate, simulate_fos, simulate_hist, simulate_sof, smooth_curves


class TestScenarios:
    def test_sof_shapes_and_centering(self):
        sim = simulate_sof(N=50, R=31, seed=2)
        x = sim.data.functionals["x"]
        assert x.values.shape == (50, 31)
        assert sim.data.response.values.shape == (50,)
        np.testing.assert_allclose(x.values.mean(axis=0), 0, atol=1e-12)
        s, beta = sim.truth["beta"]
        np.testing.assert_allclose(beta, np.sin(np.pi * s))

    def test_fos_factor_levels(self):
        sim = simulate_fos(N=24, G=10, n_subjects=6)
        subject = sim.data.scalars["subject"]
        assert subject.levels == tuple(f"s{k:02d}" for k in range(1, 7))
        assert sim.data.response.values.shape == (24, 10)

    def test_hist_truth_vanishes_off_support(self):
        sim = simulate_hist(N=10, G=12, delta=3)
        grid, _, beta = sim.truth["beta"]
        mask = Limits("lead", delta=3).admissible(grid[:, None], grid[None, :])
        assert np.all(beta[~mask] == 0)
        assert np.all(beta[mask] != 0)

    @pytest.mark.parametrize("scenario", ["sof", "fos", "hist"])
    def test_deterministic(self, scenario):
        a, b = simulate(scenario, seed=4), simulate(scenario, seed=4)
        np.testing.assert_array_equal(a.data.response.values, b.data.response.values)
        c = simulate(scenario, seed=5)
        assert not np.array_equal(a.data.response.values, c.data.response.values)

    def test_unknown_scenario(self):
        with pytest.raises(ValueError, match="unknown scenario"):
            simulate("nope")


def test_smooth_curves_variance_decays():
    rng = np.random.default_rng(0)
    s = np.linspace(0, 1, 201)
    X = smooth_curves(rng, 4000, s, n_basis=3, decay=1.0)
    # constant, sqrt2 sin and sqrt2 cos components with scales 1, 1/2, 1/3
    w = np.full(s.size, 1 / (s.size - 1))
    w[[0, -1]] /= 2
    level = X @ w
    assert np.var(level) == pytest.approx(1.0, rel=0.1)
