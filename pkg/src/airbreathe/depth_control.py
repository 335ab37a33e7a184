"""Breathing-depth controllers: fixed closed form and per-round adaptive.

The breathing depth G is the single control variable of the scheme: under
fixed bandwidth-time, a processing gain of G forces the pruning ratio 1/G.
Raising G suppresses interference quadratically but discards more gradient
coordinates; the controllers minimize the resulting per-round air-interface
error term.

Two regimes are implemented:

* ``fixed_depth`` -- no gradient/channel state at the server.  Minimizes a
  distribution-level bound beta_F(G), whose continuous minimizer is
  x* = 12·P_I / (P0·K²·xi_a²).
* ``adaptive_depth`` -- per-round gradient statistics (mean squared norm
  and element variance, fed back by active devices) plus the realized
  active count.  Minimizes the plug-in estimate beta_hat(G) with
  continuous minimizer x* = 2·P_I·D·V² / (P0·|K|²·alpha²).

Both integerize by comparing the objective at floor/ceil of x* and clip to
{1..D}; ties resolve to the smaller depth (less pruning).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .errors import ConfigurationError, RoundSkip


@dataclass(frozen=True)
class SirConfig:
    """Static link and population parameters entering the depth objectives."""

    p0: float      # receive alignment power per device
    p_i: float     # interference power per complex chip
    k: int         # number of participating devices
    xi_a: float    # activation probability of each device
    d: int         # model dimension

    def __post_init__(self):
        if min(self.p0, self.p_i) <= 0 or self.k < 1 or self.d < 1:
            raise ConfigurationError("p0, p_i must be > 0; k, d >= 1")
        if not 0 < self.xi_a <= 1:
            raise ConfigurationError("xi_a must lie in (0, 1]")

    @classmethod
    def from_sir_db(cls, sir_db: float, k: int, xi_a: float, d: int,
                    p_i: float = 1.0) -> "SirConfig":
        """Build from a per-device receive SIR in dB with unit P_I."""
        return cls(p0=p_i * 10.0 ** (sir_db / 10.0), p_i=p_i, k=k, xi_a=xi_a, d=d)


class DeviceStats(NamedTuple):
    """Scalar statistics one device feeds back: ||g||², V_k², coord mean."""

    norm_sq: float
    local_var: float
    local_mean: float


@dataclass(frozen=True)
class GsiEstimate:
    """Server-side gradient state information for one round.

    ``alpha_sq`` estimates the squared norm of the averaged gradient by the
    mean of per-device squared norms; ``v_sq`` is the mean of per-device
    element variances; ``mean`` averages per-device coordinate means and
    feeds the normalization step.
    """

    alpha_sq: float
    v_sq: float
    mean: float
    per_device: tuple[DeviceStats, ...]


@dataclass(frozen=True)
class DepthDecision:
    """Chosen integer depth plus the relaxed minimizer and clip regime."""

    g: int
    relaxed_x: float
    regime: str  # "clip_low" | "interior" | "clip_high"


def beta_fixed(g: int | np.ndarray, cfg: SirConfig) -> float | np.ndarray:
    """Distribution-level error factor sqrt(1 - 1/G + 6·P_I/(G²·K²·xi_a²·P0))."""
    g = np.asarray(g, dtype=np.float64)
    if np.any(g < 1):
        raise ConfigurationError("depth must be >= 1")
    val = np.sqrt(1.0 - 1.0 / g
                  + 6.0 * cfg.p_i / (g ** 2 * cfg.k ** 2 * cfg.xi_a ** 2 * cfg.p0))
    return float(val) if val.ndim == 0 else val


def beta_adaptive(g: int | np.ndarray, gsi: GsiEstimate, active_count: int,
                  cfg: SirConfig) -> float | np.ndarray:
    """Plug-in per-round air-interface error (1-1/G)·α² + D·P_I·V²/(G²·P0·|K|²)."""
    if active_count < 1:
        raise ConfigurationError("active_count must be >= 1")
    g = np.asarray(g, dtype=np.float64)
    if np.any(g < 1):
        raise ConfigurationError("depth must be >= 1")
    val = (1.0 - 1.0 / g) * gsi.alpha_sq \
        + cfg.d * cfg.p_i * gsi.v_sq / (g ** 2 * cfg.p0 * active_count ** 2)
    return float(val) if val.ndim == 0 else val


def _clip_and_round(relaxed_x: float, d: int, objective) -> DepthDecision:
    """Integerize a unimodal objective's continuous minimizer over {1..D}."""
    if relaxed_x < 1.0:
        return DepthDecision(g=1, relaxed_x=relaxed_x, regime="clip_low")
    if relaxed_x > d:
        return DepthDecision(g=d, relaxed_x=relaxed_x, regime="clip_high")
    lo = int(np.floor(relaxed_x))
    hi = min(int(np.ceil(relaxed_x)), d)
    g = lo if objective(lo) <= objective(hi) else hi
    return DepthDecision(g=g, relaxed_x=relaxed_x, regime="interior")


def fixed_depth(cfg: SirConfig) -> DepthDecision:
    """Closed-form fixed depth minimizing beta_fixed over {1..D}."""
    relaxed = 12.0 * cfg.p_i / (cfg.p0 * cfg.k ** 2 * cfg.xi_a ** 2)
    return _clip_and_round(relaxed, cfg.d, lambda g: beta_fixed(g, cfg))


def adaptive_depth(gsi: GsiEstimate, active_count: int,
                   cfg: SirConfig) -> DepthDecision:
    """Per-round depth minimizing beta_adaptive given GSI and |K|."""
    if active_count < 1:
        raise ConfigurationError("active_count must be >= 1")
    if gsi.alpha_sq == 0.0:
        # no signal to lose: maximum interference suppression
        warnings.warn("degenerate GSI (alpha_sq == 0); using depth D",
                      RuntimeWarning, stacklevel=2)
        return DepthDecision(g=cfg.d, relaxed_x=np.inf, regime="clip_high")
    relaxed = 2.0 * cfg.p_i * cfg.d * gsi.v_sq \
        / (cfg.p0 * active_count ** 2 * gsi.alpha_sq)
    return _clip_and_round(relaxed, cfg.d,
                           lambda g: beta_adaptive(g, gsi, active_count, cfg))


def estimate_gsi(active_gradients: Sequence[np.ndarray]) -> GsiEstimate:
    """Aggregate device feedback into the round's gradient state information.

    Each active device contributes its squared gradient norm, the variance
    of its gradient entries around their own mean, and that mean.  The
    estimates are the plain averages over active devices.
    """
    if len(active_gradients) == 0:
        raise RoundSkip("no active devices; GSI unavailable")
    stats = []
    for g in active_gradients:
        g = np.asarray(g, dtype=np.float64)
        m = float(g.mean())
        stats.append(DeviceStats(norm_sq=float(g @ g),
                                 local_var=float(np.mean((g - m) ** 2)),
                                 local_mean=m))
    return GsiEstimate(
        alpha_sq=float(np.mean([s.norm_sq for s in stats])),
        v_sq=float(np.mean([s.local_var for s in stats])),
        mean=float(np.mean([s.local_mean for s in stats])),
        per_device=tuple(stats),
    )
