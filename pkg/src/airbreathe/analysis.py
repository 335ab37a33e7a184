"""Closed-form error and convergence diagnostics, plus empirical estimators.

Implements, as numerically evaluable functions:

* the random-pruning distortion of generic data,
* the aggregation-error decomposition into a gradient-pruning term and an
  interference-induced term,
* the propagation-loss process u(n) bounding the gap to vanilla SGD,
* the rate-supermartingale trace and the failure-probability bound for
  strongly convex training,
* the per-round air-interface error terms whose sum enters that bound,
* inverse-moment helpers for the binomial active-device count,

and an end-to-end Monte-Carlo estimator of the aggregation error that runs
the real transceiver chain with gradients held fixed, used as the oracle
against the closed forms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import signal_chain as sc
from .channel import InterferenceProfile, draw_channels, transmit_round
from .depth_control import GsiEstimate, SirConfig, estimate_gsi
from .errors import ConfigurationError


# --------------------------------------------------------------------------
# Aggregation-error closed forms
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class MseBreakdown:
    """Aggregation error split into its two sources."""

    pruning_term: float
    interference_term: float

    @property
    def total(self) -> float:
        return self.pruning_term + self.interference_term


def generic_pruning_mse(sigma_sq: float, d: int, gamma: float,
                        k_active: int) -> float:
    """Distortion (1-gamma)·D·sigma²/|K| of randomly pruning averaged i.i.d. data."""
    if not 0 < gamma <= 1 or k_active < 1:
        raise ConfigurationError("need gamma in (0,1] and k_active >= 1")
    return (1.0 - gamma) * d * sigma_sq / k_active


def closed_form_mse(gamma: float, g_depth: int, cfg: SirConfig,
                    alpha_sq: float, v_sq: float, inv_k_sq: float) -> MseBreakdown:
    """Aggregation error (1-γ)·E[α²] + γ·D·P_I·E[V²/|K|²]/(G·P0).

    ``alpha_sq`` is E[α²] (squared norm of the active-average gradient),
    ``v_sq`` the symbol variance actually applied in normalization, and
    ``inv_k_sq`` E[1/|K|²]; the caller supplies whichever estimates or
    exact values fit its expectation semantics.
    """
    if not 0 < gamma <= 1 or g_depth < 1:
        raise ConfigurationError("need gamma in (0,1] and g_depth >= 1")
    pruning = (1.0 - gamma) * alpha_sq
    interference = gamma * cfg.d * cfg.p_i * v_sq * inv_k_sq / (g_depth * cfg.p0)
    return MseBreakdown(pruning_term=pruning, interference_term=interference)


def propagation_loss(mse_total: float, k: int, xi_a: float, sigma_g_sq: float,
                     appendix_variant: bool = False) -> float:
    """Per-round bound u(n) on the expected gap to vanilla SGD.

    Default form: (2-ξ_a)·σ_g²/(K·ξ_a) + sqrt(MSE(n)).  With
    ``appendix_variant`` the fading term is sqrt((2-ξ_a)/(K·ξ_a))·σ_g,
    the form the derivation actually produces; both are exposed because
    they differ whenever σ_g is far from the crossover scale.
    """
    if not 0 < xi_a <= 1 or k < 1 or mse_total < 0 or sigma_g_sq < 0:
        raise ConfigurationError("invalid propagation-loss arguments")
    ratio = (2.0 - xi_a) / (k * xi_a)
    fading = math.sqrt(ratio) * math.sqrt(sigma_g_sq) if appendix_variant \
        else ratio * sigma_g_sq
    return fading + math.sqrt(mse_total)


# --------------------------------------------------------------------------
# Supermartingale machinery
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ConvergenceParams:
    """Constants of the strongly convex convergence analysis.

    ``eta`` must satisfy eta < 2·c·epsilon / g_bound_sq so that the
    supermartingale denominator 2ηcε - η²G² is positive.  (The premise is
    sometimes misprinted as eta < 2·c·epsilon·G²; positivity of the
    denominator forces the division.)
    """

    c: float
    epsilon: float
    g_bound_sq: float
    sigma_g_sq: float
    zeta_sq: float
    eta: float

    def __post_init__(self):
        if min(self.c, self.epsilon, self.g_bound_sq, self.eta) <= 0:
            raise ConfigurationError("c, epsilon, g_bound_sq, eta must be > 0")
        if self.sigma_g_sq < 0 or self.zeta_sq < 0:
            raise ConfigurationError("variance bounds must be >= 0")
        if self.eta >= 2.0 * self.c * self.epsilon / self.g_bound_sq:
            raise ConfigurationError(
                "learning rate too large: need eta < 2·c·epsilon/g_bound_sq")

    @property
    def denominator(self) -> float:
        """2ηcε - η²G², the positive scale of the supermartingale."""
        return 2.0 * self.eta * self.c * self.epsilon \
            - self.eta ** 2 * self.g_bound_sq

    @property
    def h_lipschitz(self) -> float:
        """Lipschitz constant H = 2·sqrt(ε) / (2ηcε - η²G²)."""
        return 2.0 * math.sqrt(self.epsilon) / self.denominator


def rate_supermartingale(w: np.ndarray, w_star: np.ndarray,
                         p: ConvergenceParams, n: int) -> float:
    """Trace W_n = ε/(2ηcε-η²G²)·log(e·||w-w*||²/ε) + n (pre-convergence)."""
    dist_sq = float(np.sum((np.asarray(w) - np.asarray(w_star)) ** 2))
    if dist_sq <= 0:
        raise ConfigurationError("w must differ from w_star")
    return p.epsilon / p.denominator * math.log(math.e * dist_sq / p.epsilon) + n


@dataclass(frozen=True)
class FailureBound:
    """Bound on the probability of missing the success region by round N."""

    raw: float            # unclamped value (may exceed 1 or be meaningless)
    value: float          # clamped to [0, 1]; 1.0 when vacuous
    vacuous: bool         # denominator was not positive
    lr_condition_ok: bool # learning-rate inequality of the bound's premise


def failure_bound(p: ConvergenceParams, u_series: np.ndarray,
                  w0_dist_sq: float) -> FailureBound:
    """Evaluate the failure-probability bound for a given u(n) series.

    Numerator: ε·log(e·||w(0)-w*||²/ε).  Denominator: (2ηcε-η²G²)·N -
    2η·sqrt(ε)·Σu(n).  A non-positive denominator (equivalently, a
    violated learning-rate condition) yields a vacuous bound.
    """
    u = np.asarray(u_series, dtype=np.float64)
    n_rounds = u.size
    if n_rounds < 1 or w0_dist_sq <= 0:
        raise ConfigurationError("need at least one round and w0 != w*")
    u_sum = float(u.sum())
    denom = p.denominator * n_rounds - 2.0 * p.eta * math.sqrt(p.epsilon) * u_sum
    lr_ok = p.eta < 2.0 * math.sqrt(p.epsilon) \
        * (p.c * math.sqrt(p.epsilon) * n_rounds - u_sum) \
        / (n_rounds * p.g_bound_sq)
    numer = p.epsilon * math.log(math.e * w0_dist_sq / p.epsilon)
    if denom <= 0:
        return FailureBound(raw=math.inf, value=1.0, vacuous=True,
                            lr_condition_ok=lr_ok)
    raw = numer / denom
    return FailureBound(raw=raw, value=min(max(raw, 0.0), 1.0), vacuous=False,
                        lr_condition_ok=lr_ok)


def air_interface_error(g: int, alpha_sq: float, v_over_k_sq: float,
                        cfg: SirConfig) -> float:
    """Per-round error term β_n(G) = (1-1/G)·E[α²] + D·P_I·E[V²/|K|²]/(G²·P0)."""
    if g < 1:
        raise ConfigurationError("depth must be >= 1")
    return (1.0 - 1.0 / g) * alpha_sq \
        + cfg.d * cfg.p_i * v_over_k_sq / (g ** 2 * cfg.p0)


def theorem_bound_terms(g_series, alpha_sq_series, v_over_k_sq_series,
                        cfg: SirConfig):
    """β_Σ = Σ sqrt(β_n(G_n)) and the per-round β_n breakdown."""
    g = np.asarray(g_series, dtype=np.int64)
    a = np.asarray(alpha_sq_series, dtype=np.float64)
    v = np.asarray(v_over_k_sq_series, dtype=np.float64)
    if not g.size == a.size == v.size:
        raise ConfigurationError("series lengths differ")
    beta_n = np.array([air_interface_error(int(gi), ai, vi, cfg)
                       for gi, ai, vi in zip(g, a, v)])
    return float(np.sqrt(beta_n).sum()), beta_n


# --------------------------------------------------------------------------
# Moment helpers and bound checks
# --------------------------------------------------------------------------

def binomial_inverse_moments(k: int, xi_a: float) -> tuple[float, float]:
    """Exact E[1/|K|] and E[1/|K|²] for |K| ~ Binomial(k, xi_a), given |K|>=1."""
    if k < 1 or not 0 < xi_a <= 1:
        raise ConfigurationError("need k >= 1 and xi_a in (0, 1]")
    js = np.arange(1, k + 1)
    pmf = np.array([math.comb(k, int(j)) * xi_a ** j * (1 - xi_a) ** (k - j)
                    for j in js])
    pmf /= pmf.sum()
    return float((pmf / js).sum()), float((pmf / js ** 2).sum())


@dataclass(frozen=True)
class GammaBoundReport:
    """Empirical check of the variance envelope Γ ≥ (||g||² + σ_g²)/D."""

    gamma: float
    alpha_sq_mean: float
    v_sq_mean: float
    alpha_margin: float     # D·Γ - E[α̂²]  (>= 0 expected)
    v_margin: float         # Γ - E[V̂²]    (>= 0 expected)
    precondition_ok: bool   # K·ξ_a >= 2 (at least two active devices expected)


def gamma_bound_check(gradients, sigma_g_sq: float,
                      xi_a: float = 1.0) -> GammaBoundReport:
    """Check E[α̂²] <= D·Γ and E[V̂²] <= Γ on a batch of device gradients."""
    grads = [np.asarray(g, dtype=np.float64) for g in gradients]
    if len(grads) == 0:
        raise ConfigurationError("need at least one gradient")
    d = grads[0].size
    gbar = np.mean(grads, axis=0)
    gamma = (float(gbar @ gbar) + sigma_g_sq) / d
    gsi = estimate_gsi(grads)
    return GammaBoundReport(
        gamma=gamma,
        alpha_sq_mean=gsi.alpha_sq,
        v_sq_mean=gsi.v_sq,
        alpha_margin=d * gamma - gsi.alpha_sq,
        v_margin=gamma - gsi.v_sq,
        precondition_ok=len(grads) * xi_a >= 2.0,
    )


# --------------------------------------------------------------------------
# Empirical aggregation-error estimator (end-to-end oracle)
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class EmpiricalMse:
    """Monte-Carlo estimate of the aggregation error and its plug-ins."""

    mse: float
    alpha_sq: float        # MC mean of α² over non-skipped trials
    inv_k_sq: float        # MC mean of 1/|K|²
    v_sq: float            # symbol variance applied by normalization
    gamma: float           # effective pruning ratio of the mask
    g_depth: int
    trials_used: int
    trials_skipped: int

    def closed_form(self, cfg: SirConfig) -> MseBreakdown:
        """Closed form evaluated at this run's plug-in expectations."""
        return closed_form_mse(self.gamma, self.g_depth, cfg,
                               self.alpha_sq, self.v_sq, self.inv_k_sq)


def empirical_aircomp_mse(gradients, g_depth: int, g_th: float, p0: float,
                          p_i: float, trials: int, rng: np.random.Generator,
                          gamma: float | None = None,
                          prunable: np.ndarray | None = None) -> EmpiricalMse:
    """Run the full transceiver chain repeatedly with gradients held fixed.

    Per trial: fresh fading (hence a fresh active set), a fresh pruning
    mask, fresh PN chips and fresh interference; the per-device gradients
    and the normalization statistics stay fixed so the result estimates the
    expectation over the communication randomness only.  Trials with no
    active device are skipped and counted.
    """
    grads = np.asarray(gradients, dtype=np.float64)
    if grads.ndim != 2:
        raise ConfigurationError("gradients must be a (K, D) matrix")
    num_devices, dim = grads.shape
    gsi = estimate_gsi(list(grads))
    params = sc.NormalizationParams(mean=gsi.mean, std=math.sqrt(gsi.v_sq))
    intf = InterferenceProfile(power=p_i)
    errors = []
    alpha_sqs = []
    inv_k_sqs = []
    skipped = 0
    gamma_eff = None
    for _ in range(trials):
        chan = draw_channels(num_devices, g_th, p0, rng)
        active = chan.active_indices
        if active.size == 0:
            skipped += 1
            continue
        mask = sc.generate_mask(dim, g_depth, rng, prunable=prunable, gamma=gamma)
        gamma_eff = mask.gamma
        pn = sc.generate_pn(mask.size, g_depth, rng)
        chips = np.zeros((num_devices, mask.size * g_depth))
        for k in active:
            chips[k] = sc.device_chips(grads[k], mask, params, pn)
        frame = transmit_round(chips, chan, intf, rng)
        y_prime = sc.receiver_output(frame, mask, params, pn, active.size, p0)
        target = grads[active].mean(axis=0)
        errors.append(float(np.sum((target - y_prime) ** 2)))
        alpha_sqs.append(float(target @ target))
        inv_k_sqs.append(1.0 / active.size ** 2)
    if not errors:
        raise ConfigurationError("every trial had an empty active set")
    return EmpiricalMse(
        mse=float(np.mean(errors)),
        alpha_sq=float(np.mean(alpha_sqs)),
        inv_k_sq=float(np.mean(inv_k_sqs)),
        v_sq=params.std ** 2,
        gamma=gamma_eff,
        g_depth=g_depth,
        trials_used=len(errors),
        trials_skipped=skipped,
    )
