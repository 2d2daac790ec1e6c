# %% [markdown]
# # Functional response on scalar covariates
# Curves with a linear effect of ``power`` and a random intercept curve per
# subject. Both effects are centered at every time point so the smooth
# intercept stays interpretable.

# %%
import numpy as np

from fnboost import Bbs, Bolsc, Brandom, Control, ModelSpec, fit
from fnboost.resampling import bootstrap_ci, make_folds, oob_risk_curves
from fnboost.simulate import simulate_fos

sim = simulate_fos(N=60, G=40, n_subjects=10, seed=1)
spec = ModelSpec([Bolsc("power", df=1), Brandom("subject", df=2)], Bbs("t", df=3), control=Control(3000))

# %%
# leave-one-subject-out over the subject grouping
subjects = sim.data.scalars["subject"].values
folds = make_folds(60, "kfold", 10, grouping=subjects)
cv = oob_risk_curves(spec, sim.data, folds, np.arange(0, 3001, 10))
model = fit(spec.with_control(mstop=cv.mstop_opt), sim.data)
print("mstop:", cv.mstop_opt, "(at grid boundary)" if cv.at_boundary else "")
print("selection counts:", {lab: int(np.sum(model.selected == j)) for j, lab in enumerate(model.labels)})

# %%
coefs = model.coef_eval(n2=40)
for c in coefs:
    print(c.label, np.shape(c.value))

# %%
# pointwise bootstrap band for the power effect (small B to keep it quick)
res = bootstrap_ci(spec, sim.data, B_outer=10, B_inner=5, grid=np.arange(0, 3001, 50),
                   quantiles=(0.05, 0.95), seed=1, n2=40, grouping=subjects)
lo, hi = res.bands[1][0.05], res.bands[1][0.95]
print("band width (mean over t):", float(np.mean(hi - lo)))
print("outer mstops:", res.mstops)
