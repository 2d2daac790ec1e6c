# %% [markdown]
# # Scalar response on a functional covariate
# Simulated spectra-like curves, a smooth coefficient function, and mstop
# chosen by 5-fold cross-validation.

# %%
import numpy as np
from scipy.integrate import trapezoid

from fnboost import Bsignal, Control, ModelSpec, fit
from fnboost.boosting import Structure
from fnboost.resampling import make_folds, oob_risk_curves
from fnboost.simulate import simulate_sof

sim = simulate_sof(N=400, R=101, sigma=0.5, seed=0)
spec = ModelSpec([Bsignal("x", knots=20, df=4)], control=Control(1000))
structure = Structure.build(spec, sim.data)

# %%
cv = oob_risk_curves(spec, sim.data, make_folds(400, "kfold", 5, seed=0), np.arange(1, 1001),
                     structure=structure)
print("selected mstop:", cv.mstop_opt, "(at grid boundary)" if cv.at_boundary else "")

# %%
model = fit(spec.with_control(mstop=cv.mstop_opt), sim.data, structure=structure)
s, beta = sim.truth["beta"]
est = model.coef_eval(n1=101)[1].value
rise = trapezoid((est - beta) ** 2, s) / trapezoid(beta**2, s)
print(f"relative integrated squared error: {rise:.4f}")

# %%
# a coarse text view of truth against estimate
for k in range(0, 101, 10):
    print(f"s={s[k]:.1f}  beta={beta[k]:+.3f}  estimate={est[k]:+.3f}")
