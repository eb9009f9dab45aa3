"""Posterior risk terms, Bayes gating, empirical risk and the detection bound.

Probabilities here are plain floats in [0, 1]. Window-level evaluation: every
evaluation window carries its own best mixture fit (from the test-phase
assignment) and its KS P-value, which stands in for the fit confidence
P(eps = eps_hat | Q_hat).
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, DataError
from .gmm import GmmModel, gmm_tail
from .learner import Category, CategorySet, best_record
from .seeding import rng_for

ALPHA_PAPER = 0.002  # 0.2 %
ALPHA_1M_PAPER = 1e-5  # 0.001 %
EPS_MIN = 0.05
EPS_MAX = 0.055


@dataclass(frozen=True)
class RiskWeightSpec:
    mean_low: float = 0.5
    mean_high: float = 1.0
    m_draws: int = 10

    def __post_init__(self):
        if not 0.0 <= self.mean_low <= self.mean_high:
            raise ConfigError("risk-weight means need 0 <= mean_low <= mean_high")
        if self.m_draws < 1:
            raise ConfigError("m_draws must be at least 1")


@dataclass(frozen=True)
class RiskConfig:
    rho: float = 0.05
    varsigma: float = 0.95
    gate_mode: str = "constant"
    alpha_const: Optional[float] = ALPHA_PAPER
    alpha_1m: float = ALPHA_1M_PAPER
    eps_min: float = EPS_MIN
    eps_max: float = EPS_MAX
    varphi: float = 0.01
    weighting: RiskWeightSpec = field(default_factory=RiskWeightSpec)
    per_sample_tail: bool = False

    def __post_init__(self):
        if not 0.0 < self.rho < 1.0:
            raise ConfigError("rho must lie in (0, 1)")
        if not 0.0 <= self.eps_min <= self.eps_max <= 1.0:
            raise ConfigError("need 0 <= eps_min <= eps_max <= 1")
        if not 0.0 < self.varsigma < 1.0:
            raise ConfigError("varsigma must lie in (0, 1)")
        if self.gate_mode not in ("constant", "per_category"):
            raise ConfigError(f"unknown gate mode {self.gate_mode!r}")
        gates = [self.alpha_1m] + ([] if self.alpha_const is None else [self.alpha_const])
        if any(not 0.0 <= g <= 1.0 for g in gates):
            raise ConfigError("gates must lie in [0, 1]")
        if self.varphi <= 0:
            raise ConfigError("varphi must be positive")


@dataclass(frozen=True)
class GateSet:
    alpha_per_category: tuple
    alpha_const: float
    alpha_1m: float

    def __post_init__(self):
        for g in (*self.alpha_per_category, self.alpha_const, self.alpha_1m):
            if not 0.0 <= g <= 1.0:
                raise ConfigError(f"gate {g!r} outside [0, 1]")

    def gate_for(self, category: int, mode: str) -> float:
        return self.alpha_per_category[category] if mode == "per_category" else self.alpha_const


# -- posterior terms ------------------------------------------------------


def fit_confidence(category: Category) -> float:
    """Best KS P-value of the category, the proxy for P(eps = eps_hat | Q_hat)."""
    if not category.fits:
        raise DataError(f"category {category.id} is unfitted")
    return float(category.best.p_value)


def category_probabilities(categories: CategorySet) -> np.ndarray:
    """P(lambda_i) = N_i / N."""
    return categories.category_weights()


def model_fit_probability(categories: CategorySet) -> float:
    """P(Q_hat = lambda) = sum_i P(Q_hat | lambda_i) N_i / N."""
    weights = category_probabilities(categories)
    conf = np.array([fit_confidence(c) for c in categories.categories])
    return float(np.dot(conf, weights))


def delta_eve(model: GmmModel, confidence: float, rho: float) -> float:
    """P(eps_hat > rho) times the fit confidence."""
    if not 0.0 < rho < 1.0:
        raise ConfigError("rho must lie in (0, 1)")
    return float(gmm_tail(model, rho)) * float(confidence)


def delta_var(model: GmmModel, confidence: float, rho: float) -> float:
    # same tail x confidence form; eavesdropping and time variation differ only
    # through the gate (P(V) vs P(R)) they are weighted with
    return delta_eve(model, confidence, rho)


def eta_from_model(model: GmmModel, confidence: float, eps_min: float, qber: Optional[float] = None) -> float:
    """Posterior eta = confidence * P(eps_hat > eps_min).

    With ``qber`` the lower limit becomes max(qber, eps_min) (per-sample variant).
    """
    lower = eps_min if qber is None else max(qber, eps_min)
    return float(confidence) * float(gmm_tail(model, lower))


def eta_posterior(category: Category, eps_min: float) -> float:
    return eta_from_model(category.best.model, fit_confidence(category), eps_min)


def calibrate_gates(baseline: CategorySet, config: RiskConfig) -> GateSet:
    """Gates from an attack-free category set.

    Per-category gate: delta_var of the category's best model. Constant gate:
    ``config.alpha_const`` when set, else the maximum per-category gate.
    """
    if baseline is None or baseline.H == 0:
        raise DataError("baseline category set is empty")
    per_cat = tuple(delta_var(c.best.model, fit_confidence(c), config.rho) for c in baseline.categories)
    alpha = max(per_cat) if config.alpha_const is None else config.alpha_const
    return GateSet(per_cat, alpha, config.alpha_1m)


def bayes_classify(eta: float, gate: float) -> int:
    """1 when eta strictly exceeds the gate; a tie is not an alarm."""
    return 1 if eta > gate else 0


def estimate_pv_pr(etas, gates, alpha_1m: float, sizes=None) -> tuple[float, float]:
    """Flagged fractions under the Eve gate and under ``alpha_1m``.

    ``etas``/``gates`` are per window; ``sizes`` weights each window by its
    sample count so the result is a per-sample fraction.
    """
    etas = np.asarray(etas, dtype=float)
    if etas.size == 0:
        raise DataError("no windows to classify")
    gates = np.broadcast_to(np.asarray(gates, dtype=float), etas.shape)
    w = np.ones_like(etas) if sizes is None else np.asarray(sizes, dtype=float)
    flag_v = np.array([bayes_classify(e, g) for e, g in zip(etas, gates)], dtype=float)
    flag_r = np.array([bayes_classify(e, alpha_1m) for e in etas], dtype=float)
    return float(np.dot(flag_v, w) / w.sum()), float(np.dot(flag_r, w) / w.sum())


def risk_loss_gamma(d_eve, d_var, p_v: float, p_r: float, fit) -> np.ndarray | float:
    """gamma = [dE*P(V) + dV*P(R) - dE*dV*P(V)] * fit (vectorised over windows)."""
    d_eve = np.asarray(d_eve, dtype=float)
    d_var = np.asarray(d_var, dtype=float)
    g = (d_eve * p_v + d_var * p_r - d_eve * d_var * p_v) * np.asarray(fit, dtype=float)
    return float(g) if g.ndim == 0 else g


def gamma_category_sum(d_eve, d_var, confidences, weights, p_v: float, p_r: float) -> float:
    """Category-summed loss: sum_i [..]_i * P(Q_hat | lambda_i) * N_i / N."""
    d_eve = np.asarray(d_eve, dtype=float)
    d_var = np.asarray(d_var, dtype=float)
    bracket = d_eve * p_v + d_var * p_r - d_eve * d_var * p_v
    return float(np.sum(bracket * np.asarray(confidences) * np.asarray(weights)))


def risk_measure(gamma, weights) -> float:
    gamma = np.asarray(gamma, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if gamma.shape != weights.shape:
        raise DataError(f"gamma has {gamma.size} entries but weights {weights.size}")
    if gamma.size == 0:
        raise DataError("empty gamma series")
    return float(np.mean(weights * gamma))


def risk_reference(gamma) -> float:
    """Mean of (1 - gamma) * gamma; never above 0.25."""
    gamma = np.asarray(gamma, dtype=float)
    if gamma.size == 0:
        raise DataError("empty gamma series")
    return float(np.mean((1.0 - gamma) * gamma))


def risk_reduction_rate(gamma):
    """gamma as a percentage; values outside (0, 1) are clamped with a warning."""
    g = np.asarray(gamma, dtype=float)
    if np.any((g <= 0.0) | (g >= 1.0)):
        warnings.warn("risk reduction rate evaluated at gamma outside (0, 1); clamped", RuntimeWarning, stacklevel=2)
    out = np.clip(g, 0.0, 1.0) * 100.0
    return float(out) if out.ndim == 0 else out


def trust_check(r_eps: float, r_ref: float) -> bool:
    return bool(r_eps <= r_ref)


def eve_detection_bound(etas, gates, varsigma: float, varphi: float) -> tuple[float, float]:
    """Markov-type bound on the near-gate fraction and the detection floor.

    Returns ``(tau_upper, psi_lower)`` with
    tau_upper = (E[max(eta - gate, 0)] + E[max(gate - eta, 0)]) / varphi,
    clamped to [0, 1], and psi_lower = 1 - tau_upper * (1 - varsigma) / 2.
    """
    if varphi <= 0:
        raise ConfigError("varphi must be positive")
    etas = np.asarray(etas, dtype=float)
    gates = np.broadcast_to(np.asarray(gates, dtype=float), etas.shape)
    if etas.size == 0:
        raise DataError("empty eta series")
    diff = etas - gates
    e_plus = float(np.mean(np.maximum(diff, 0.0)))
    e_minus = float(np.mean(np.maximum(-diff, 0.0)))
    tau_upper = min(max((e_plus + e_minus) / varphi, 0.0), 1.0)
    return tau_upper, 1.0 - tau_upper * (1.0 - varsigma) / 2.0


def empirical_tau(etas, gates, varphi: float) -> float:
    etas = np.asarray(etas, dtype=float)
    gates = np.broadcast_to(np.asarray(gates, dtype=float), etas.shape)
    return float(np.mean(np.abs(etas - gates) < varphi))


def sample_risk_weights(n_epochs: int, m_draws: int = 10, seed: int = 0, spec: Optional[RiskWeightSpec] = None) -> np.ndarray:
    """Per-epoch averaged risk-control weights H_Mj.

    Epoch j draws a mean m_j ~ U[mean_low, mean_high], then ``m_draws`` normal
    values with mean and standard deviation m_j, each clamped to [0, 1].
    """
    spec = spec or RiskWeightSpec(m_draws=m_draws)
    if n_epochs < 1 or m_draws < 1:
        raise ConfigError("n_epochs and m_draws must be at least 1")
    rng = rng_for(seed, 6)
    means = rng.uniform(spec.mean_low, spec.mean_high, n_epochs)
    draws = rng.normal(means[:, None], means[:, None], (n_epochs, m_draws))
    return np.clip(draws, 0.0, 1.0).mean(axis=1)


# -- report ---------------------------------------------------------------


@dataclass
class WindowRisk:
    index: int
    category: int
    n: int
    c: int
    confidence: float
    eta: float
    delta_eve: float
    delta_var: float
    gate: float
    flag: int
    gamma: float = 0.0
    attack_samples: int = 0


@dataclass
class RiskReport:
    per_window: list
    p_v: float
    p_r: float
    r_eps: float
    r_ref: float
    beta: list
    trusted: bool
    tau_upper: float
    psi_lower: float
    tau_empirical: float
    gamma_mean: float
    gamma_category_sum: float
    model_fit_probability: float
    gates: GateSet
    config: RiskConfig

    def to_dict(self) -> dict:
        cfg = asdict(self.config)
        return {
            "p_v": self.p_v,
            "p_r": self.p_r,
            "r_eps": self.r_eps,
            "r_ref": self.r_ref,
            "trusted": self.trusted,
            "tau_upper": self.tau_upper,
            "psi_lower": self.psi_lower,
            "tau_empirical": self.tau_empirical,
            "gamma_mean": self.gamma_mean,
            "gamma_category_sum": self.gamma_category_sum,
            "model_fit_probability": self.model_fit_probability,
            "beta": list(self.beta),
            "gates": {
                "alpha_const": self.gates.alpha_const,
                "alpha_1m": self.gates.alpha_1m,
                "alpha_per_category": list(self.gates.alpha_per_category),
            },
            "config": cfg,
            "per_window": [asdict(w) for w in self.per_window],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    def window_csv_rows(self) -> list:
        return [(w.index, w.category, w.eta, w.gamma, w.flag) for w in self.per_window]


def assess_windows(
    tested: CategorySet,
    gates: GateSet,
    config: RiskConfig,
    window_sizes: Sequence[int],
    attack_counts: Optional[Sequence[int]] = None,
    window_qber_max: Optional[Sequence[float]] = None,
    weight_seed: int = 0,
    weights: Optional[np.ndarray] = None,
) -> RiskReport:
    """Full risk evaluation over the windows of a test-phase category set.

    ``weights`` are per-sample H_Mj; simulated from ``config.weighting`` when
    omitted. Each sample inherits the gamma of its window.
    """
    if tested.phase != "test":
        raise DataError("risk assessment needs a test-phase category set")
    n_win = len(tested.fold_assignment)
    if n_win == 0 or len(window_sizes) != n_win:
        raise DataError("window sizes do not match the tested folds")

    windows = []
    for s in range(n_win):
        h = tested.fold_assignment[s]
        cat = tested.categories[h]
        rec = best_record(cat.test_fold_fits[s])
        conf = rec.p_value
        q = None
        if config.per_sample_tail and window_qber_max is not None:
            q = window_qber_max[s]
        eta = eta_from_model(rec.model, conf, config.eps_min, q)
        gate = gates.gate_for(h, config.gate_mode)
        windows.append(
            WindowRisk(
                index=s,
                category=cat.id,
                n=int(window_sizes[s]),
                c=rec.c,
                confidence=conf,
                eta=eta,
                delta_eve=delta_eve(rec.model, conf, config.rho),
                delta_var=delta_var(rec.model, conf, config.rho),
                gate=gate,
                flag=bayes_classify(eta, gate),
                attack_samples=0 if attack_counts is None else int(attack_counts[s]),
            )
        )

    etas = np.array([w.eta for w in windows])
    wgates = np.array([w.gate for w in windows])
    sizes = np.array([w.n for w in windows])
    p_v, p_r = estimate_pv_pr(etas, wgates, gates.alpha_1m, sizes)
    d_e = np.array([w.delta_eve for w in windows])
    d_v = np.array([w.delta_var for w in windows])
    conf = np.array([w.confidence for w in windows])
    gam = np.atleast_1d(risk_loss_gamma(d_e, d_v, p_v, p_r, conf))
    for w, g in zip(windows, gam):
        w.gamma = float(g)

    per_sample = np.repeat(gam, sizes)
    if weights is None:
        weights = sample_risk_weights(per_sample.size, config.weighting.m_draws, weight_seed, config.weighting)
    r_eps = risk_measure(per_sample, weights)
    r_ref = risk_reference(per_sample)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        beta = np.atleast_1d(risk_reduction_rate(gam)).tolist()
    tau_upper, psi = eve_detection_bound(etas, wgates, config.varsigma, config.varphi)

    cats = tested.categories
    cat_w = category_probabilities(tested)
    cat_conf = [fit_confidence(c) for c in cats]
    cat_de = [delta_eve(c.best.model, fit_confidence(c), config.rho) for c in cats]
    cat_dv = [delta_var(c.best.model, fit_confidence(c), config.rho) for c in cats]

    return RiskReport(
        per_window=windows,
        p_v=p_v,
        p_r=p_r,
        r_eps=r_eps,
        r_ref=r_ref,
        beta=beta,
        trusted=trust_check(r_eps, r_ref),
        tau_upper=tau_upper,
        psi_lower=psi,
        tau_empirical=empirical_tau(etas, wgates, config.varphi),
        gamma_mean=float(np.mean(per_sample)),
        gamma_category_sum=gamma_category_sum(cat_de, cat_dv, cat_conf, cat_w, p_v, p_r),
        model_fit_probability=float(np.dot(cat_conf, cat_w)),
        gates=gates,
        config=config,
    )
