"""One-dimensional Gaussian mixtures: density, tail mass, sampling, EM, AIC."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
from numba import njit
from scipy.special import erfc, logsumexp

from .errors import ConfigError, DegenerateFitError

VARIANCE_FLOOR = 1e-10
EM_TOL = 1e-8
_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True, eq=False)
class GmmModel:
    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=float).ravel()
        mu = np.array(self.means, dtype=float).ravel()
        var = np.array(self.variances, dtype=float).ravel()
        if not (w.size == mu.size == var.size) or w.size < 1:
            raise ConfigError("weights, means and variances must share a length >= 1")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ConfigError(f"weights must be non-negative and sum to 1 (sum={w.sum()!r})")
        if np.any(~(var > 0)) or np.any(~np.isfinite(mu)):
            raise ConfigError("variances must be positive and means finite")
        for a in (w, mu, var):
            a.flags.writeable = False
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "variances", var)

    @property
    def c(self) -> int:
        return int(self.weights.size)

    @property
    def sigmas(self) -> np.ndarray:
        return np.sqrt(self.variances)

    def to_dict(self) -> dict:
        return {
            "weights": [float(x) for x in self.weights],
            "means": [float(x) for x in self.means],
            "variances": [float(x) for x in self.variances],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GmmModel":
        return cls(d["weights"], d["means"], d["variances"])

    def __eq__(self, other):
        if not isinstance(other, GmmModel):
            return NotImplemented
        return (
            np.array_equal(self.weights, other.weights)
            and np.array_equal(self.means, other.means)
            and np.array_equal(self.variances, other.variances)
        )

    def __repr__(self):
        return f"GmmModel(c={self.c}, weights={self.weights.tolist()}, means={self.means.tolist()}, variances={self.variances.tolist()})"


@dataclass
class EmTrace:
    log_likelihoods: list = field(default_factory=list)
    iterations_run: int = 0
    converged: bool = False


def _component_logpdf(model: GmmModel, x: np.ndarray) -> np.ndarray:
    # shape (n, c): log w_k + log N(x; mu_k, var_k)
    with np.errstate(divide="ignore"):
        logw = np.log(model.weights)
    d = x[:, None] - model.means[None, :]
    return logw - 0.5 * (_LOG_2PI + np.log(model.variances)) - 0.5 * d * d / model.variances


def gmm_logpdf(model: GmmModel, x) -> np.ndarray:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    return logsumexp(_component_logpdf(model, x), axis=1)


def gmm_pdf(model: GmmModel, x):
    """Mixture density at ``x`` (scalar in, float out; array in, array out)."""
    out = np.exp(gmm_logpdf(model, x))
    return float(out[0]) if np.ndim(x) == 0 else out


def normal_sf(z):
    """Upper standard-normal tail via erfc, accurate far into the tail."""
    return 0.5 * erfc(np.asarray(z, dtype=float) / math.sqrt(2.0))


def gmm_tail(model: GmmModel, t):
    """P(X > t) under the mixture, integrating the Gaussian tails to +inf."""
    t_arr = np.atleast_1d(np.asarray(t, dtype=float))
    z = (t_arr[:, None] - model.means[None, :]) / model.sigmas[None, :]
    w = model.weights
    # same reduction on both sides so the t -> -inf limit is exactly 1
    p = np.clip(np.sum(normal_sf(z) * w, axis=1) / np.sum(w), 0.0, 1.0)
    return float(p[0]) if np.ndim(t) == 0 else p


def gmm_sample(model: GmmModel, n: int, seed: Union[int, np.random.Generator]) -> np.ndarray:
    if n < 1:
        raise ConfigError("sample count must be at least 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if model.c == 1:
        comp = np.zeros(n, dtype=np.intp)
    else:
        # inverse-CDF component draw; zero-weight components are never selected
        cw = np.cumsum(model.weights)
        cw[-1] = 1.0
        comp = np.searchsorted(cw, rng.random(n), side="right")
        comp = np.minimum(comp, model.c - 1)
    return model.means[comp] + model.sigmas[comp] * rng.standard_normal(n)


def log_likelihood(model: GmmModel, data) -> float:
    return float(gmm_logpdf(model, np.asarray(data, dtype=float)).sum())


def kmeanspp_init(x: np.ndarray, c: int, rng: np.random.Generator) -> GmmModel:
    """k-means++ seeded means, uniform weights, pooled variance."""
    n = x.size
    means = np.empty(c)
    means[0] = x[rng.integers(n)]
    d2 = (x - means[0]) ** 2
    for k in range(1, c):
        total = d2.sum()
        if total <= 0.0:
            idx = rng.integers(n)
        else:
            idx = int(np.searchsorted(np.cumsum(d2), rng.random() * total, side="right"))
            idx = min(idx, n - 1)
        means[k] = x[idx]
        d2 = np.minimum(d2, (x - means[k]) ** 2)
    pooled = max(float(x.var()), VARIANCE_FLOOR)
    return GmmModel(np.full(c, 1.0 / c), means, np.full(c, pooled))


@njit(cache=True)
def _em_loop(x, w, mu, var, max_iter, tol, floor, lls):
    n = x.size
    c = w.size
    resp = np.empty((n, c))
    logc = np.empty(c)
    prev = -np.inf
    n_ll = 0
    converged = False
    for it in range(max_iter + 1):
        for k in range(c):
            if w[k] > 0.0:
                logc[k] = math.log(w[k]) - 0.5 * (_LOG_2PI + math.log(var[k]))
            else:
                logc[k] = -np.inf
        ll = 0.0
        for i in range(n):
            m = -np.inf
            for k in range(c):
                d = x[i] - mu[k]
                v = logc[k] - 0.5 * d * d / var[k]
                resp[i, k] = v
                if v > m:
                    m = v
            s = 0.0
            for k in range(c):
                e = math.exp(resp[i, k] - m)
                resp[i, k] = e
                s += e
            for k in range(c):
                resp[i, k] /= s
            ll += m + math.log(s)
        lls[n_ll] = ll
        n_ll += 1
        if it > 0 and ll - prev < tol:
            converged = True
            break
        if it == max_iter:
            break
        prev = ll
        nk = np.zeros(c)
        sx = np.zeros(c)
        for i in range(n):
            for k in range(c):
                r = resp[i, k]
                nk[k] += r
                sx[k] += r * x[i]
        for k in range(c):
            w[k] = nk[k] / n
            if nk[k] > 0.0:
                mu[k] = sx[k] / nk[k]
        sv = np.zeros(c)
        for i in range(n):
            for k in range(c):
                d = x[i] - mu[k]
                sv[k] += resp[i, k] * d * d
        for k in range(c):
            if nk[k] > 0.0:
                var[k] = max(sv[k] / nk[k], floor)
    return w, mu, var, n_ll, converged


def em_fit(
    data,
    c: int,
    init: Union[None, int, np.random.Generator, GmmModel] = None,
    max_iter: int = 100,
    tol: float = EM_TOL,
) -> tuple[GmmModel, EmTrace]:
    """Fit a ``c``-component mixture by EM.

    ``init`` is either a seed / generator for k-means++ seeding or an explicit
    starting model (warm start; its component count must equal ``c``). The
    trace records the log-likelihood of every parameter set visited, ending
    with that of the returned model. Iteration stops after ``max_iter``
    M-steps or once the log-likelihood gain drops below ``tol``.
    """
    x = np.asarray(data, dtype=float).ravel()
    if c < 1:
        raise ConfigError("component count must be at least 1")
    if x.size < c:
        raise ConfigError(f"need at least {c} points to fit {c} components, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise ConfigError("data must be finite")
    if c > 1 and x.min() == x.max():
        raise DegenerateFitError(f"all {x.size} values are identical; cannot fit {c} components")

    if isinstance(init, GmmModel):
        if init.c != c:
            raise ConfigError(f"initial model has {init.c} components, expected {c}")
        w, mu, var = init.weights.copy(), init.means.copy(), init.variances.copy()
    else:
        rng = init if isinstance(init, np.random.Generator) else np.random.default_rng(init)
        start = kmeanspp_init(x, c, rng)
        w, mu, var = start.weights.copy(), start.means.copy(), start.variances.copy()

    # centring keeps the variance accumulation well conditioned
    shift = float(x.mean())
    lls = np.empty(max_iter + 1)
    w, mu, var, n_ll, converged = _em_loop(x - shift, w, mu - shift, var, max_iter, tol, VARIANCE_FLOOR, lls)
    trace = EmTrace(lls[:n_ll].tolist(), n_ll - 1, bool(converged))
    w = w / w.sum()
    mu = mu + shift
    return GmmModel(w, mu, var), trace


def n_parameters(c: int) -> int:
    return 3 * c - 1


def aic(model: GmmModel, data) -> float:
    return 2.0 * n_parameters(model.c) - 2.0 * log_likelihood(model, data)
