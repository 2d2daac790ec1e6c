# %% [markdown]
# # Historical function-on-function regression
# The response at time t depends on the covariate curve only at lags of at
# least three grid steps. The fitted surface is exactly zero elsewhere.

# %%
import warnings

import numpy as np

from fnboost import Bbs, Bhist, Control, Intercept, Limits, ModelSpec, fit
from fnboost.boosting import Structure
from fnboost.resampling import make_folds, oob_risk_curves
from fnboost.simulate import simulate_hist

warnings.filterwarnings("ignore", message="bhist.*empty integration window")
sim = simulate_hist(N=60, G=40, delta=3, seed=0)
limits = Limits("lead", delta=3)
spec = ModelSpec([Intercept(), Bhist("x", limits=limits, df=6)], Bbs("t", df=4), control=Control(1000))
structure = Structure.build(spec, sim.data)

# %%
cv = oob_risk_curves(spec, sim.data, make_folds(60, "kfold", 5, seed=0), np.arange(1, 1001), structure=structure)
model = fit(spec.with_control(mstop=cv.mstop_opt), sim.data, structure=structure)
grid, _, beta = sim.truth["beta"]
est = model.coef_eval(n1=40, n2=40)[2].value
mask = limits.admissible(grid[:, None], grid[None, :])
print("mstop:", cv.mstop_opt)
print("largest |estimate| outside the support:", np.abs(est[~mask]).max())
print("relative ISE on the support:", np.sum((est - beta) ** 2 * mask) / np.sum(beta**2 * mask))
