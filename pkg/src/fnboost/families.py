"""Loss functions, negative gradients, links and offsets.

Every family works on the additive predictor ``f`` (link scale). Losses are
elementwise; the empirical risk is a weighted sum of them.
"""

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.special import expit, gammaln, logit

from .splines import integration_weights

__all__ = [
    "Family",
    "gaussian",
    "laplace",
    "quantile",
    "huber",
    "binomial",
    "poisson",
    "family_from_name",
    "weighted_quantile",
    "integrated_risk",
    "observation_weights",
]

# keeps log/logit offsets finite when a response is constant at a boundary
_PROB_EPS = 1e-10


def _identity(x):
    return x


def weighted_quantile(y, w, q):
    """Lower weighted ``q``-quantile, the minimizer of the weighted check loss.

    Returns the smallest ``y_k`` whose cumulative weight reaches ``q`` times the
    total weight.
    """
    y = np.asarray(y, dtype=float)
    w = np.ones_like(y) if w is None else np.asarray(w, dtype=float)
    keep = w > 0
    y, w = y[keep], w[keep]
    if y.size == 0:
        raise ValueError("weighted quantile of an empty sample")
    order = np.argsort(y, kind="stable")
    y, w = y[order], w[order]
    cw = np.cumsum(w)
    k = np.searchsorted(cw, q * cw[-1] * (1 - 1e-12), side="left")
    return float(y[min(k, y.size - 1)])


def _weighted_mean(y, w):
    w = np.ones_like(y) if w is None else w
    tot = np.sum(w)
    if tot <= 0:
        raise ValueError("offset needs positive total weight")
    return float(np.sum(w * y) / tot)


@dataclass(frozen=True)
class Family:
    """A loss together with its gradient, link and constant-fit offset.

    ``ngradient`` and ``loss`` accept observation weights because the adaptive
    Huber loss chooses its threshold from the weighted residual distribution.
    """

    name: str
    _loss: Callable
    _ngradient: Callable
    _offset: Callable
    link: Callable = _identity
    inverse_link: Callable = _identity
    nu_default: float = 0.1
    check_response: Optional[Callable] = None

    def loss(self, y, f, w=None):
        return self._loss(np.asarray(y, dtype=float), np.asarray(f, dtype=float), w)

    def ngradient(self, y, f, w=None):
        return self._ngradient(np.asarray(y, dtype=float), np.asarray(f, dtype=float), w)

    def offset(self, y, w=None):
        y = np.asarray(y, dtype=float)
        return float(self._offset(y, None if w is None else np.asarray(w, dtype=float)))

    def risk(self, y, f, w=None):
        l = self.loss(y, f, w)
        return float(np.sum(l if w is None else w * l))

    def validate(self, y):
        if self.check_response is not None:
            self.check_response(np.asarray(y, dtype=float))


def gaussian():
    return Family(
        "gaussian",
        lambda y, f, w: 0.5 * (y - f) ** 2,
        lambda y, f, w: y - f,
        _weighted_mean,
    )


def laplace():
    return Family(
        "laplace",
        lambda y, f, w: np.abs(y - f),
        lambda y, f, w: np.sign(y - f),
        lambda y, w: weighted_quantile(y, w, 0.5),
    )


def quantile(tau=0.5):
    tau = float(tau)
    if not 0 < tau < 1:
        raise ValueError(f"quantile level must lie in (0, 1), got {tau}")

    def loss(y, f, w):
        r = y - f
        return r * (tau - (r < 0))

    def ngrad(y, f, w):
        r = y - f
        # exact zero residuals get a zero gradient
        return np.where(r > 0, tau, np.where(r < 0, tau - 1.0, 0.0))

    return Family(f"quantile:{tau:g}", loss, ngrad, lambda y, w: weighted_quantile(y, w, tau))


def _huber_minimizer(y, w, delta, iters=200):
    """Constant minimizing the weighted Huber loss, by bisection on its derivative."""
    w = np.ones_like(y) if w is None else w

    def score(c):
        return np.sum(w * np.clip(y - c, -delta, delta))

    lo, hi = float(np.min(y)), float(np.max(y))
    if lo == hi:
        return lo
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if score(mid) > 0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15 * max(1.0, abs(mid)):
            break
    return 0.5 * (lo + hi)


def huber(delta=None):
    """Huber loss; ``delta=None`` picks the weighted median of ``|y - f|`` each call."""
    if delta is not None and not delta > 0:
        raise ValueError("huber delta must be positive")

    def threshold(y, f, w):
        if delta is not None:
            return float(delta)
        d = weighted_quantile(np.abs(y - f), w, 0.5)
        return d if d > 0 else 1e-12

    def loss(y, f, w):
        d = threshold(y, f, w)
        r = np.abs(y - f)
        return np.where(r <= d, 0.5 * r**2, d * (r - 0.5 * d))

    def ngrad(y, f, w):
        d = threshold(y, f, w)
        return np.clip(y - f, -d, d)

    def offset(y, w):
        d = threshold(y, np.full_like(y, weighted_quantile(y, w, 0.5)), w)
        return _huber_minimizer(y, w, d)

    name = "huber" if delta is None else f"huber:{delta:g}"
    return Family(name, loss, ngrad, offset)


def _check_binary(y):
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("binomial response must be coded 0/1")


def binomial():
    def loss(y, f, w):
        return np.logaddexp(0.0, f) - y * f

    def offset(y, w):
        p = np.clip(_weighted_mean(y, w), _PROB_EPS, 1 - _PROB_EPS)
        return logit(p)

    return Family(
        "binomial",
        loss,
        lambda y, f, w: y - expit(f),
        offset,
        link=logit,
        inverse_link=expit,
        check_response=_check_binary,
    )


def _check_counts(y):
    if np.any(y < 0) or np.any(y != np.round(y)):
        raise ValueError("poisson response must be nonnegative integers")


def poisson():
    def offset(y, w):
        return np.log(max(_weighted_mean(y, w), _PROB_EPS))

    return Family(
        "poisson",
        lambda y, f, w: np.exp(f) - y * f + gammaln(y + 1),
        lambda y, f, w: y - np.exp(f),
        offset,
        link=np.log,
        inverse_link=np.exp,
        nu_default=0.01,
        check_response=_check_counts,
    )


def family_from_name(name):
    """Parse ``gaussian``, ``laplace``, ``quantile:<tau>``, ``huber[:<delta>]``,
    ``binomial`` or ``poisson``."""
    key, _, arg = str(name).partition(":")
    key = key.strip().lower()
    if key == "gaussian":
        return gaussian()
    if key == "laplace":
        return laplace()
    if key == "quantile":
        return quantile(float(arg) if arg else 0.5)
    if key == "huber":
        return huber(float(arg) if arg else None)
    if key == "binomial":
        return binomial()
    if key == "poisson":
        return poisson()
    raise ValueError(f"unknown family {name!r}")


def observation_weights(response, numInt="equal"):
    """Per-observation integration weights in long order.

    Each curve gets the weights of its own time grid; a scalar response gets
    unit weights. Curves with a single time point get weight one.
    """
    if numInt not in ("equal", "riemann", "trapezoid"):
        raise ValueError(f"unknown numInt {numInt!r}")
    if response.layout == "scalar" or numInt == "equal":
        n = response.values.size
        return np.ones(n)
    if response.layout == "grid":
        N = response.n_curves
        wt = integration_weights(response.grid, numInt).weights
        return np.repeat(wt, N)
    _, times, cid = response.to_long()
    out = np.ones(times.size)
    order = np.argsort(cid, kind="stable")
    sizes = np.bincount(cid)
    start = 0
    for size in sizes:
        idx = order[start : start + size]
        idx = idx[np.argsort(times[idx], kind="stable")]
        if size >= 2:
            out[idx] = integration_weights(times[idx], numInt).weights
        start += size
    return out


def integrated_risk(family, response, fitted, numInt="equal", weights=None):
    """Loss summed over observations with integration weights per curve.

    Parameters
    ----------
    family : Family
    response : Response
    fitted : array_like
        Predictor in long order (time-major for a grid response).
    numInt : {"equal", "riemann", "trapezoid"}
    weights : array_like, optional
        Extra per-curve weights.
    """
    y, _, cid = response.to_long()
    f = np.asarray(fitted, dtype=float).ravel()
    if f.size != y.size:
        raise ValueError(f"fitted has {f.size} entries but the response has {y.size} observations")
    w = observation_weights(response, numInt)
    if weights is not None:
        weights = np.asarray(weights, dtype=float)
        if weights.size != response.n_curves:
            raise ValueError("need one weight per curve")
        w = w * weights[cid]
    return family.risk(y, f, w)
