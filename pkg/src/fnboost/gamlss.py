"""Boosting several distribution parameters at once (location and scale).

Each iteration fits every learner of every parameter to that parameter's
partial negative gradient, picks the best learner per parameter by residual
sum of squares, and then applies the single update, across parameters, that
lowers the joint negative log-likelihood the most.
"""

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .baselearners import TIME
from .boosting import Control, FitError, ModelSpec, Structure, TermSolver, _array_capable
from .baselearners import compute_constraints
from .families import gaussian

__all__ = ["LssFamily", "gaussian_lss", "LssModel", "fit_lss"]


@dataclass(frozen=True)
class LssFamily:
    """Joint loss of several predictors with per-parameter gradients.

    ``loss(y, eta)`` and ``ngradient(name, y, eta)`` take ``eta`` as a dict of
    link-scale predictors keyed by parameter name.
    """

    name: str
    parameters: tuple
    loss: Callable
    ngradient: Callable
    offsets: Callable
    inverse_links: dict = field(default_factory=dict)

    def risk(self, y, eta, w=None):
        l = self.loss(y, eta)
        return float(np.sum(l if w is None else w * l))


def gaussian_lss():
    """Normal distribution with identity link for ``mu`` and log link for ``sigma``."""

    def loss(y, eta):
        ls = eta["sigma"]
        return ls + 0.5 * (y - eta["mu"]) ** 2 * np.exp(-2 * ls) + 0.5 * np.log(2 * np.pi)

    def ngrad(name, y, eta):
        r = y - eta["mu"]
        s2 = np.exp(2 * eta["sigma"])
        if name == "mu":
            return r / s2
        return r**2 / s2 - 1.0

    def offsets(y, w):
        w = np.ones_like(y) if w is None else w
        mu = np.sum(w * y) / np.sum(w)
        # maximum-likelihood scale of a constant fit
        sd = np.sqrt(np.sum(w * (y - mu) ** 2) / np.sum(w))
        return {"mu": float(mu), "sigma": float(np.log(max(sd, 1e-12)))}

    return LssFamily("gaussian_lss", ("mu", "sigma"), loss, ngrad, offsets, {"mu": lambda x: x, "sigma": np.exp})


@dataclass
class LssModel:
    """Per-parameter offsets, learner labels and the joint selection path."""

    family: LssFamily
    offsets: dict
    structures: dict
    solvers: dict
    path: list
    risk_path: np.ndarray
    nu: float

    @property
    def mstop(self):
        return len(self.path)

    def coefficients(self, name, at=None):
        at = self.mstop if at is None else at
        out = [np.zeros(t.K) for t in self.solvers[name]]
        for p, j, inc in self.path[:at]:
            if p == name:
                out[j] = out[j] + inc
        return out

    def predict(self, at=None):
        """Link-scale predictors on the training data, one vector per parameter."""
        eta = {}
        for name in self.family.parameters:
            frame = self.structures[name].frame
            f = np.full(frame.n, self.offsets[name])
            for t, theta in zip(self.solvers[name], self.coefficients(name, at)):
                if np.any(theta):
                    f = f + t.fitted(theta)
            eta[name] = f
        return eta

    def selected(self, name):
        return [j for p, j, _ in self.path if p == name]

    @property
    def monotone(self):
        return bool(np.all(np.diff(self.risk_path) <= 1e-12 * np.maximum(1.0, np.abs(self.risk_path[:-1]))))


def fit_lss(formulas, family: LssFamily, data, control=None, timeformula=None, time_name=TIME, weights=None):
    """Noncyclic boosting of a multi-parameter family.

    Parameters
    ----------
    formulas : dict
        Parameter name to a list of learner specs.
    family : LssFamily
    data : Dataset
    control : Control
        ``mstop`` counts the total number of updates over all parameters.
    timeformula : learner spec, optional
        Time basis for functional responses. Offsets are constant and the
        loss uses unit integration weights.
    """
    control = control or Control()
    nu = 0.1 if control.nu is None else control.nu
    missing = [p for p in family.parameters if not formulas.get(p)]
    if missing:
        raise ValueError(f"parameters without learners: {missing}")
    structures, solvers = {}, {}
    for p in family.parameters:
        spec = ModelSpec(tuple(formulas[p]), timeformula, gaussian(), control, "scalar", "equal", time_name)
        st = Structure.build(spec, data)
        structures[p] = st
    frame = structures[family.parameters[0]].frame
    N = frame.N
    cw = np.ones(N) if weights is None else np.asarray(weights, dtype=float)
    W = cw[frame.curve_id]
    time_w = np.ones(frame.grid.size) if frame.layout == "grid" else None
    for p in family.parameters:
        st = structures[p]
        Qs = {}
        for r in st.roots:
            compute_constraints(r, frame.data, cw, Qs)
        solvers[p] = [
            TermSolver(r, st.frame, Qs, W, cw, time_w, _array_capable(r, st.frame, st.spec)) for r in st.roots
        ]
    y = data.response.to_long()[0] if data.response.layout != "scalar" else data.response.values
    off = family.offsets(y, W)
    eta = {p: np.full(frame.n, off[p]) for p in family.parameters}
    path = []
    risk = [family.risk(y, eta, W)]
    for m in range(1, control.mstop + 1):
        best = None
        for p in family.parameters:
            u = family.ngradient(p, y, eta)
            if not np.all(np.isfinite(u)):
                raise FitError(f"non-finite gradient for parameter {p} at iteration {m}")
            wu = W * u
            jb, rss_b, th_b, fit_b = -1, np.inf, None, None
            for j, t in enumerate(solvers[p]):
                theta = t.solve(wu)
                fit = t.fitted(theta)
                r = u - fit
                rss = float(np.dot(W * r, r))
                if rss < rss_b:
                    jb, rss_b, th_b, fit_b = j, rss, theta, fit
            trial = dict(eta)
            trial[p] = eta[p] + nu * fit_b
            loss = family.risk(y, trial, W)
            if best is None or loss < best[0]:
                best = (loss, p, jb, th_b, trial)
        loss, p, j, theta, trial = best
        eta = trial
        path.append((p, j, nu * theta))
        risk.append(loss)
    return LssModel(family, off, structures, solvers, path, np.array(risk), nu)
