"""Acceptance criteria, one test each.

Every test prints a single ``ACCEPTANCE k PASS|FAIL`` line with the measured
quantity before asserting, so the summary at the end of the run lists all
thirteen outcomes.
"""

import time
from dataclasses import replace

import numpy as np
import pytest
from scipy.integrate import trapezoid

from fnboost import (
    Bbs,
    Bbsc,
    Bhist,
    Bols,
    Bolsc,
    Brandom,
    Bsignal,
    Compose,
    Control,
    Dataset,
    FunctionalCovariate,
    Intercept,
    Limits,
    ModelSpec,
    Response,
    ScalarCovariate,
    fit,
)
from fnboost.baselearners import df_to_lambda, eval_curve, kronecker_sum
from fnboost.boosting import Structure
from fnboost.data import grid_to_long
from fnboost.fpca import fpca
from fnboost.gamlss import gaussian_lss
from fnboost.resampling import bootstrap_ci, make_folds, oob_risk_curves
from fnboost.simulate import simulate_fos, simulate_hist, simulate_sof, smooth_curves
from fnboost.splines import difference_penalty, integration_weights

from helpers import central_difference, cox_de_boor, hat_trace_eigen, rank3_curves, report, single_families


def test_01_penalty_goldens():
    t0 = time.perf_counter()
    first = difference_penalty(24, 1)[:5, :5]
    iso = kronecker_sum(difference_penalty(14, 1), difference_penalty(14, 1))[:5, :5]
    elapsed = time.perf_counter() - t0
    expected_first = np.array(
        [[1, -1, 0, 0, 0], [-1, 2, -1, 0, 0], [0, -1, 2, -1, 0], [0, 0, -1, 2, -1], [0, 0, 0, -1, 2]]
    )
    expected_iso = np.array(
        [[2, -1, 0, 0, 0], [-1, 3, -1, 0, 0], [0, -1, 3, -1, 0], [0, 0, -1, 3, -1], [0, 0, 0, -1, 3]]
    )
    ok = np.array_equal(first, expected_first) and np.array_equal(iso, expected_iso) and elapsed < 1
    report(1, ok, f"exact integer blocks, {elapsed:.3f}s")
    np.testing.assert_array_equal(first, expected_first)
    np.testing.assert_array_equal(iso, expected_iso)
    assert elapsed < 1


def _one_step_instance(rng):
    N = int(rng.integers(15, 51))
    inner = int(rng.integers(2, 9))
    K = inner + 4
    z = rng.uniform(-2, 2, N)
    y = np.sin(2 * z) + 0.3 * rng.normal(size=N)
    df = float(rng.uniform(2.5, K - 0.5))
    data = Dataset(Response("scalar", y), {"z": ScalarCovariate("z", z)})
    spec = ModelSpec([Bbs("z", knots=inner, df=df)], control=Control(1, 1.0), offset_mode="scalar")
    # independent design and penalty: textbook recursion and explicit differences
    knots = np.concatenate([[z.min()] * 3, np.linspace(z.min(), z.max(), inner + 2), [z.max()] * 3])
    Z = cox_de_boor(z, knots, 3)
    D = np.diff(np.eye(K), 2, axis=0)
    return data, spec, y, Z, D.T @ D


def test_02_one_step_oracle():
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(20):
        data, spec, y, Z, P = _one_step_instance(rng)
        m = fit(spec, data)
        lam = m.terms_info[0]["lam"]
        theta = np.linalg.solve(Z.T @ Z + lam * P, Z.T @ (y - y.mean()))
        est = m.coefficients()[0]
        worst = max(worst, float(np.max(np.abs(est - theta) / np.maximum(np.abs(theta), 1.0))))
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-10 and elapsed < 5
    report(2, ok, f"max relative coefficient error {worst:.2e} over 20 instances, {elapsed:.2f}s")
    assert worst < 1e-10
    assert elapsed < 5


def test_03_df_calibration():
    rng = np.random.default_rng(7)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(50):
        n = int(rng.integers(8, 60))
        K = int(rng.integers(4, 16))
        order = int(rng.integers(1, 4))
        if K <= order:
            K = order + 2
        Z = rng.normal(size=(n, K))
        P = difference_penalty(K, order)
        upper = min(n, K)
        target = float(rng.uniform(order + 0.1, upper - 0.1))
        lam = df_to_lambda(Z, P, None, target)
        worst = max(worst, abs(hat_trace_eigen(Z, P, lam) - target))
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-6 and elapsed < 10
    report(3, ok, f"max |trace(H) - df| {worst:.2e} over 50 triples, {elapsed:.2f}s")
    assert worst < 1e-6
    assert elapsed < 10


def test_04_constraints():
    sim = simulate_fos(N=60, G=40, seed=3)
    rng = np.random.default_rng(303)
    data = sim.data
    dose, age = rng.uniform(0, 2, data.n_curves), rng.uniform(-1, 1, data.n_curves)
    t = data.response.grid
    Y = data.response.values + np.outer(np.sin(2 * dose), t) + np.outer(age * dose, 1 - t)
    data = Dataset(Response("grid", Y, grid=t),
                   {**data.scalars, "dose": ScalarCovariate("dose", dose), "age": ScalarCovariate("age", age)})
    learners = [
        Bolsc("power", df=1),
        Bbsc("dose", knots=6, df=3),
        Brandom("subject", df=2, constrained=True),
        Compose("row_tensor_constrained", Bols("age", intercept=False), Bbs("dose", knots=3), df=3),
    ]
    spec = ModelSpec(learners, Bbs("t", df=3), control=Control(200))
    m = fit(spec, data)
    worst = 0.0
    for root, theta in zip(m.structure.roots, m.coefficients()):
        A = eval_curve(root.left, data, m.Qs)
        B = root.right.time_design(t)
        effect = A @ theta.reshape(A.shape[1], B.shape[1]) @ B.T
        worst = max(worst, float(np.max(np.abs(effect.sum(axis=0)))))
    selected = sorted(set(m.selected.tolist()))
    ok = worst < 1e-8 and len(selected) == len(learners)
    report(4, ok, f"max_t |sum_i h_j| {worst:.2e}, {len(selected)} of {len(learners)} learners selected")
    # an unselected learner would pass trivially
    assert len(selected) == len(learners)
    assert worst < 1e-8


def test_05_family_gradients():
    rng = np.random.default_rng(5)
    worst = 0.0
    for fam, draw in single_families():
        y = draw(rng, 100)
        f = rng.normal(size=100)
        if fam.name.startswith(("laplace", "quantile", "huber")):
            # keep the points off the kinks of the piecewise losses
            r = y - f
            f = np.where(np.abs(np.abs(r) - 0.7) < 1e-3, f + 0.01, f)
            f = np.where(np.abs(r) < 1e-3, f + 0.01, f)
        fd = central_difference(lambda v: fam.loss(y, v), f)
        worst = max(worst, float(np.max(np.abs(-fd - fam.ngradient(y, f)))))
    lss = gaussian_lss()
    y = rng.normal(size=100)
    eta = {"mu": rng.normal(size=100), "sigma": rng.normal(scale=0.5, size=100)}
    for param in ("mu", "sigma"):
        def loss(v, param=param):
            return lss.loss(y, {**eta, param: v})

        fd = central_difference(loss, eta[param])
        worst = max(worst, float(np.max(np.abs(-fd - lss.ngradient(param, y, eta)))))
    ok = worst < 1e-6
    report(5, ok, f"max finite-difference gap {worst:.2e} (6 families, 2 LSS partials, 100 points)")
    assert worst < 1e-6


def test_06_array_equals_dense():
    rng = np.random.default_rng(6)
    N, G, R = 15, 20, 30
    t, s = np.linspace(0, 1, G), np.linspace(0, 1, R)
    X = smooth_curves(rng, N, s)
    z = rng.normal(size=N)
    Y = np.sin(2 * np.pi * t) + np.outer(z, t) + 0.2 * rng.normal(size=(N, G))
    data = Dataset(Response("grid", Y, grid=t), {"z": ScalarCovariate("z", z)},
                   {"x": FunctionalCovariate("x", X, s)})
    spec = ModelSpec([Bols("z", df=2), Bsignal("x", knots=5, df=3)], Bbs("t", df=3), control=Control(100))
    a = fit(spec, data)
    d = fit(replace(spec, array=False), data)
    paths = all(info["array"] for info in a.terms_info) and not any(info["array"] for info in d.terms_info)
    gap = max(float(np.max(np.abs(x - y))) for x, y in zip(a.coefficients(), d.coefficients()))
    ok = paths and gap < 1e-10
    report(6, ok, f"max coefficient gap {gap:.2e} after 100 iterations")
    assert paths
    assert gap < 1e-10


def test_07_signal_recovery():
    t0 = time.perf_counter()
    errors = []
    for seed in range(10):
        sim = simulate_sof(N=400, R=101, sigma=0.5, seed=seed)
        spec = ModelSpec([Bsignal("x", knots=20, df=4)], control=Control(1000))
        st = Structure.build(spec, sim.data)
        cv = oob_risk_curves(spec, sim.data, make_folds(400, "kfold", 5, seed), np.arange(1, 1001), structure=st)
        m = fit(spec.with_control(mstop=cv.mstop_opt), sim.data, structure=st)
        s, beta = sim.truth["beta"]
        est = m.coef_eval(n1=101)[1].value
        errors.append(trapezoid((est - beta) ** 2, s) / trapezoid(beta**2, s))
    elapsed = time.perf_counter() - t0
    med = float(np.median(errors))
    ok = med < 0.15 and elapsed < 60
    report(7, ok, f"median relative ISE {med:.4f} over 10 seeds, {elapsed:.1f}s")
    assert med < 0.15
    assert elapsed < 60


# the first three response times have no admissible lag
@pytest.mark.filterwarnings("ignore:bhist.*empty integration window")
def test_08_historical_recovery():
    t0 = time.perf_counter()
    limits = Limits("lead", delta=3)
    errors, zeros, invariance = [], 0.0, 0.0
    for seed in range(10):
        sim = simulate_hist(N=60, G=40, delta=3, sigma=1.0, seed=seed)
        spec = ModelSpec([Intercept(), Bhist("x", limits=limits, df=6)], Bbs("t", df=4),
                         control=Control(1000), offset_mode="smooth")
        st = Structure.build(spec, sim.data)
        cv = oob_risk_curves(spec, sim.data, make_folds(60, "kfold", 5, seed), np.arange(1, 1001), structure=st)
        m = fit(spec.with_control(mstop=cv.mstop_opt), sim.data, structure=st)
        grid, _, beta = sim.truth["beta"]
        est = m.coef_eval(n1=40, n2=40)[2].value
        mask = limits.admissible(grid[:, None], grid[None, :])
        zeros = max(zeros, float(np.max(np.abs(est[~mask]))))
        errors.append(np.sum((est - beta) ** 2 * mask) / np.sum(beta**2 * mask))
        # design support: x(s) for s > t - 3 cannot move the prediction at t
        X = sim.data.functionals["x"]
        base = m.predict(sim.data)
        for t_cut in (10, 25, 40):
            V = X.values.copy()
            V[:, grid > t_cut - 3] += 5.0
            moved = Dataset(sim.data.response, {}, {"x": FunctionalCovariate("x", V, X.grid)})
            pred = m.predict(moved)
            invariance = max(invariance, float(np.max(np.abs(pred - base)[:, grid <= t_cut])))
    elapsed = time.perf_counter() - t0
    med = float(np.median(errors))
    ok = zeros == 0.0 and invariance == 0.0 and med < 0.25 and elapsed < 180
    report(8, ok, f"median relative ISE {med:.4f}, max |beta| off support {zeros:.1e}, "
                  f"max prediction shift {invariance:.1e}, {elapsed:.1f}s")
    assert zeros == 0.0
    assert invariance == 0.0
    assert med < 0.25
    assert elapsed < 180


def test_09_fpca():
    s, X, _ = rank3_curves(N=500, zeta=(4.0, 1.0, 0.25))
    npc = fpca(X, s, pve=0.99).npc
    full = fpca(X, s, pve=1.0)
    w = integration_weights(s).weights
    rmse = float(np.sqrt(np.mean(((full.reconstruct() - X) ** 2) @ w / w.sum())))
    ok = npc == 3 and rmse < 1e-8
    report(9, ok, f"pve 0.99 selects K={npc}, full reconstruction weighted RMSE {rmse:.2e}")
    assert npc == 3
    assert rmse < 1e-8


def test_10_fold_identities():
    rng = np.random.default_rng(10)
    failures = 0
    for _ in range(100):
        n = int(rng.integers(2, 80))
        B = int(rng.integers(2, 50))
        seed = int(rng.integers(0, 2**31))
        k = make_folds(n, "kfold", min(B, n), seed).weights
        b = make_folds(n, "bootstrap", B, seed).weights
        sub = make_folds(n, "subsampling", B, seed).weights
        good = (
            np.all(k.sum(axis=1) == k.shape[1] - 1)
            and np.all(np.isin(k, (0, 1)))
            and np.all(b.sum(axis=0) == n)
            and np.all(sub.sum(axis=0) == n // 2)
            and np.all(np.isin(sub, (0, 1)))
        )
        groups = rng.integers(0, max(2, n // 3), size=n)
        if np.unique(groups).size >= 2:
            for kind in ("kfold", "bootstrap", "subsampling"):
                Bg = min(B, np.unique(groups).size) if kind == "kfold" else B
                w = make_folds(n, kind, Bg, seed, grouping=groups).weights
                good = good and all(np.all(w[groups == g] == w[groups == g][0]) for g in np.unique(groups))
        failures += not good
    ok = failures == 0
    report(10, ok, f"{100 - failures}/100 random (n, B) pairs satisfy all identities")
    assert failures == 0


def test_11_long_equals_wide():
    sim = simulate_fos(N=30, G=20, seed=11)
    long = sim.data.with_response(grid_to_long(sim.data.response))
    spec = ModelSpec([Intercept()], Bbs("t", df=4), control=Control(50))
    a, b = fit(spec, sim.data), fit(spec, long)
    risk_gap = float(np.max(np.abs(a.risk_path - b.risk_path) / np.abs(a.risk_path)))
    coef_gap = float(np.max(np.abs(a.coefficients()[0] - b.coefficients()[0])))
    ok = risk_gap < 1e-12 and coef_gap < 1e-12
    report(11, ok, f"relative risk gap {risk_gap:.1e}, coefficient gap {coef_gap:.1e}")
    assert risk_gap < 1e-12
    assert coef_gap < 1e-12


def _scaling_data(N, G, R=60):
    rng = np.random.default_rng(0)
    t, s = np.linspace(0, 1, G), np.linspace(0, 1, R)
    X = smooth_curves(rng, N, s)
    z = rng.normal(size=N)
    Y = np.outer(z, t) + rng.normal(size=(N, G))
    return Dataset(Response("grid", Y, grid=t), {"z": ScalarCovariate("z", z)},
                   {"x": FunctionalCovariate("x", X, s)})


def test_12_runtime_scaling():
    spec = ModelSpec([Intercept(), Bolsc("z", df=1), Bsignal("x", knots=5)], Bbs("t", knots=8, df=3),
                     control=Control(50))
    t0 = time.perf_counter()

    def timed(N, G):
        data = _scaling_data(N, G)
        best = np.inf
        for _ in range(3):
            start = time.perf_counter()
            fit(spec, data)
            best = min(best, time.perf_counter() - start)
        return best

    Ns, Gs = [50, 100, 200], [10, 20, 40]
    slope_N = np.polyfit(np.log(Ns), np.log([timed(n, 400) for n in Ns]), 1)[0]
    slope_G = np.polyfit(np.log(Gs), np.log([timed(5000, g) for g in Gs]), 1)[0]
    elapsed = time.perf_counter() - t0
    ok = 0.7 <= slope_N <= 1.5 and 0.7 <= slope_G <= 1.5 and elapsed < 600
    report(12, ok, f"exponent in N {slope_N:.2f}, in G {slope_G:.2f}, {elapsed:.1f}s")
    assert 0.7 <= slope_N <= 1.5
    assert 0.7 <= slope_G <= 1.5
    assert elapsed < 600


def test_13_null_bootstrap_coverage():
    coverage = []
    for seed in range(5):
        rng = np.random.default_rng(100 + seed)
        N, G = 40, 20
        t = np.linspace(0, 1, G)
        Y = np.sin(2 * np.pi * t) + 0.5 * smooth_curves(rng, N, t, n_basis=5) + 0.3 * rng.normal(size=(N, G))
        z = rng.normal(size=N)
        data = Dataset(Response("grid", Y, grid=t), {"z": ScalarCovariate("z", z)})
        spec = ModelSpec([Bolsc("z", df=1)], Bbs("t", df=3), control=Control(100))
        res = bootstrap_ci(spec, data, B_outer=40, B_inner=10, grid=np.arange(0, 101), quantiles=(0.05, 0.95),
                           seed=seed, n2=40)
        lo, hi = res.bands[1][0.05], res.bands[1][0.95]
        coverage.append(float(np.mean((lo <= 0) & (hi >= 0))))
    mean = float(np.mean(coverage))
    ok = mean >= 0.85
    report(13, ok, f"mean coverage of 0 {mean:.3f} over 5 seeds ({', '.join(f'{c:.2f}' for c in coverage)})")
    assert mean >= 0.85
