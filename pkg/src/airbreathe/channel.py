"""Rayleigh fading, truncated channel inversion, and chip-level superposition.

Per round each device draws an i.i.d. unit-variance complex Gaussian fading
coefficient, constant within the round.  A device transmits only if its
power gain clears the truncation threshold; active devices invert their
channel so every aligned contribution arrives with real amplitude sqrt(P0).
Simultaneous transmission superposes chip-by-chip and the receiver sees the
sum plus worst-case (Gaussian) interference of total variance 2·P_I per
complex chip.  Channel noise is neglected (interference-limited regime).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError


@dataclass(frozen=True)
class ChannelRealization:
    """Per-device fading, inversion coefficient and activity for one round.

    ``p`` is the complex inversion coefficient sqrt(P0)/h so that h·p is
    exactly the real alignment amplitude sqrt(P0) for active devices and 0
    for truncated ones.  ``|p|**2`` is the device's transmit power.
    """

    h: np.ndarray
    p: np.ndarray
    active: np.ndarray
    g_th: float
    p0: float

    @property
    def num_devices(self) -> int:
        return self.h.size

    @property
    def active_indices(self) -> np.ndarray:
        return np.flatnonzero(self.active)

    @property
    def active_count(self) -> int:
        return int(np.count_nonzero(self.active))


@dataclass(frozen=True)
class InterferenceProfile:
    """Stationary Gaussian interference with total power P_I per complex chip.

    ``power`` may be zero to switch interference off in ablation runs.
    """

    power: float

    def __post_init__(self):
        if self.power < 0:
            raise ConfigurationError("interference power must be >= 0")


@dataclass
class PowerLedger:
    """Cumulative transmit energy per device against a long-term budget.

    Accumulation is a commutative sum of per-round G·S·|p_k|² terms, so
    trial-parallel updates merge in any order.  The ledger only reports,
    it never gates transmission: the budget is an expectation constraint.
    """

    num_devices: int
    budget: float = np.inf
    cumulative: np.ndarray = field(init=False)

    def __post_init__(self):
        self.cumulative = np.zeros(self.num_devices, dtype=np.float64)

@dataclass(frozen=True)
class PowerReport:
    per_device: np.ndarray
    total: float
    budget: float
    fraction_used: np.ndarray


def activation_probability(g_th: float) -> float:
    """Probability exp(-g_th) that a unit-variance Rayleigh gain clears g_th."""
    if g_th < 0:
        raise ConfigurationError("threshold must be >= 0")
    return float(np.exp(-g_th))


def draw_channels(num_devices: int, g_th: float, p0: float,
                  rng: np.random.Generator) -> ChannelRealization:
    """Draw one round of fading and apply truncated channel inversion."""
    if g_th < 0 or p0 <= 0:
        raise ConfigurationError("need g_th >= 0 and p0 > 0")
    h = (rng.standard_normal(num_devices) + 1j * rng.standard_normal(num_devices)) \
        / np.sqrt(2.0)
    active = np.abs(h) ** 2 >= g_th
    p = np.zeros(num_devices, dtype=np.complex128)
    p[active] = np.sqrt(p0) / h[active]
    return ChannelRealization(h=h, p=p, active=active, g_th=g_th, p0=p0)


def transmit_round(per_device_chips: np.ndarray, chan: ChannelRealization,
                   intf: InterferenceProfile, rng: np.random.Generator,
                   ledger: PowerLedger | None = None) -> np.ndarray:
    """Superpose all active devices' chips and add Gaussian interference.

    ``per_device_chips`` is a (K, L) real matrix with one row per device;
    rows of truncated devices are ignored (their inversion coefficient is
    zero).  Returns the length-L complex chip frame.
    """
    chips = np.asarray(per_device_chips, dtype=np.float64)
    if chips.ndim != 2 or chips.shape[0] != chan.num_devices:
        raise ConfigurationError(
            f"chip matrix must be ({chan.num_devices}, L), got {chips.shape}")
    length = chips.shape[1]
    gains = chan.h * chan.p  # sqrt(P0) for active devices, 0 otherwise
    frame = (gains.real @ chips).astype(np.complex128)
    frame += 1j * (gains.imag @ chips)
    if intf.power > 0:
        scale = np.sqrt(intf.power)
        frame = frame + scale * rng.standard_normal(length) \
            + 1j * scale * rng.standard_normal(length)
    if ledger is not None:
        # one symbol's worth of chips is accounted per chip transmitted
        ledger.cumulative += length * np.abs(chan.p) ** 2
    return frame


def audit_power(ledger: PowerLedger) -> PowerReport:
    """Report per-device cumulative energy and budget utilization."""
    per_device = ledger.cumulative.copy()
    frac = per_device / ledger.budget if np.isfinite(ledger.budget) \
        else np.zeros_like(per_device)
    return PowerReport(per_device=per_device, total=float(per_device.sum()),
                       budget=ledger.budget, fraction_used=frac)
