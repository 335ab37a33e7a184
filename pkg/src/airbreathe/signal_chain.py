"""Transmitter and receiver operations of the spectrum-breathing transceiver.

Device side (before the multiple-access channel):

* spectrum contraction -- project the gradient onto a server-broadcast
  pruning mask,
* normalization -- shift/scale to roughly unit symbol power,
* spreading -- multiply every surviving coefficient by a length-``G``
  pseudo-noise chip sequence of ±1 entries.

Server side (after superposition):

* de-spreading -- correlate each chip block with its PN row, which leaves
  the aligned signal untouched and attenuates interference power by ``G``,
* de-normalization -- undo the power alignment and per-round statistics,
* zero padding -- scatter the surviving coefficients back into the full
  model dimension.

All functions are pure and deterministic given their inputs; PN chips and
masks are generated from explicit generators so identical seeds give
bit-identical rounds.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DegenerateStatisticsError, RoundSkip

# Below this symbol standard deviation a round is considered degenerate and
# must be transmitted unnormalized (std=1, mean=0) by the caller.
SIGMA_FLOOR = 1e-12


@dataclass(frozen=True)
class PruningMask:
    """Index set of gradient coordinates that survive spectrum contraction.

    The same mask is broadcast to every device in a round so that the
    superposed coefficients stay aligned.  ``indices`` is strictly
    increasing; coordinates marked non-prunable are always included.
    """

    indices: np.ndarray
    source_dim: int
    prunable: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.intp)
        object.__setattr__(self, "indices", idx)
        if idx.ndim != 1 or idx.size < 1:
            raise ConfigurationError("mask needs at least one index")
        if np.any(np.diff(idx) <= 0):
            raise ConfigurationError("mask indices must be strictly increasing")
        if idx[0] < 0 or idx[-1] >= self.source_dim:
            raise ConfigurationError("mask index out of range")
        if self.prunable is None:
            object.__setattr__(self, "prunable", np.ones(self.source_dim, dtype=bool))

    @property
    def size(self) -> int:
        """Number of transmitted coefficients S_n."""
        return int(self.indices.size)

    @property
    def gamma(self) -> float:
        """Effective pruning ratio: transmitted fraction of prunable coords."""
        n_prunable = int(np.count_nonzero(self.prunable))
        if n_prunable == 0:
            return 1.0
        return min(1.0, self.size / n_prunable)


@dataclass(frozen=True)
class NormalizationParams:
    """Per-round shift/scale (M(n), V(n)) shared by all devices."""

    mean: float
    std: float

    def __post_init__(self):
        if not np.isfinite(self.mean) or not np.isfinite(self.std):
            raise ConfigurationError("normalization params must be finite")


@dataclass(frozen=True)
class PNSequenceSet:
    """One ±1 chip row of length G per transmitted coefficient.

    Rows are generated server-side from fair Bernoulli draws and broadcast,
    so every device scrambles with identical chips.  Each row trivially has
    unit chip energy: (1/G)·sum(chips**2) == 1.
    """

    chips: np.ndarray
    seed: str = ""

    def __post_init__(self):
        chips = np.asarray(self.chips, dtype=np.int8)
        object.__setattr__(self, "chips", chips)
        if chips.ndim != 2:
            raise ConfigurationError("chips must be a (S, G) matrix")
        if not np.all(np.abs(chips) == 1):
            raise ConfigurationError("chips must be +1/-1")

    @property
    def num_symbols(self) -> int:
        return self.chips.shape[0]

    @property
    def gain(self) -> int:
        """Processing gain G: chips per gradient coefficient."""
        return self.chips.shape[1]


def generate_mask(
    dim: int,
    depth: int,
    rng: np.random.Generator,
    prunable: np.ndarray | None = None,
    gamma: float | None = None,
) -> PruningMask:
    """Draw the round's pruning mask uniformly over the prunable coordinates.

    The number of selected prunable coordinates is ``floor(n_prunable /
    depth)`` (fixed bandwidth-time: depth × ratio = 1), or ``floor(gamma *
    n_prunable)`` when an explicit ratio is given (pruning without
    spreading).  Non-prunable coordinates are always appended.
    """
    if prunable is None:
        prunable = np.ones(dim, dtype=bool)
    prunable = np.asarray(prunable, dtype=bool)
    if prunable.shape != (dim,):
        raise ConfigurationError("prunable flags must have length dim")
    candidates = np.flatnonzero(prunable)
    n_prunable = candidates.size
    if gamma is not None:
        if not 0.0 < gamma <= 1.0:
            raise ConfigurationError("gamma must lie in (0, 1]")
        n_keep = int(np.floor(gamma * n_prunable))
    else:
        if depth < 1:
            raise ConfigurationError("depth must be >= 1")
        n_keep = n_prunable // int(depth)
    forced = np.flatnonzero(~prunable)
    n_keep = max(n_keep, 1 if forced.size == 0 else 0)
    chosen = rng.choice(candidates, size=n_keep, replace=False) if n_keep else []
    indices = np.sort(np.concatenate([np.asarray(chosen, dtype=np.intp), forced]))
    return PruningMask(indices=indices, source_dim=dim, prunable=prunable)


def generate_pn(num_symbols: int, gain: int, rng: np.random.Generator,
                seed_label: str = "") -> PNSequenceSet:
    """Draw a fresh PN set: fair ±1 chips, one length-``gain`` row per symbol.

    A gain of 1 means no bandwidth expansion; the chip is fixed to +1 so the
    transmitted symbol is exactly the gradient symbol (no scrambling to
    undo), matching the no-spreading degenerate case.
    """
    if num_symbols < 1 or gain < 1:
        raise ConfigurationError("num_symbols and gain must be >= 1")
    if gain == 1:
        chips = np.ones((num_symbols, 1), dtype=np.int8)
    else:
        chips = rng.integers(0, 2, size=(num_symbols, gain), dtype=np.int8) * 2 - 1
    return PNSequenceSet(chips=chips, seed=seed_label)


def prune(g: np.ndarray, mask: PruningMask) -> np.ndarray:
    """Spectrum contraction: keep exactly the masked coordinates, in order."""
    g = np.asarray(g, dtype=np.float64)
    if g.shape != (mask.source_dim,):
        raise ConfigurationError(
            f"gradient has dim {g.shape}, mask expects ({mask.source_dim},)")
    return g[mask.indices]


def zero_pad(y: np.ndarray, mask: PruningMask) -> np.ndarray:
    """Inverse of pruning: place coefficients back, zeros elsewhere."""
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (mask.size,):
        raise ConfigurationError(
            f"input has {y.shape[0] if y.ndim else '?'} entries, mask has {mask.size}")
    out = np.zeros(mask.source_dim, dtype=np.float64)
    out[mask.indices] = y
    return out


def normalize(gc: np.ndarray, params: NormalizationParams) -> np.ndarray:
    """Shift by M(n) and scale by V(n) toward unit symbol power."""
    if params.std <= SIGMA_FLOOR:
        raise DegenerateStatisticsError(
            f"symbol std {params.std!r} at or below floor {SIGMA_FLOOR}")
    gc = np.asarray(gc, dtype=np.float64)
    return (gc - params.mean) / params.std


def spread(gn: np.ndarray, pn: PNSequenceSet) -> np.ndarray:
    """Upsample and scramble: coefficient s becomes gn[s] * chips[s, :].

    Returns the length S·G chip vector, row-major by coefficient.
    """
    gn = np.asarray(gn, dtype=np.float64)
    if gn.shape != (pn.num_symbols,):
        raise ConfigurationError(
            f"{gn.shape[0] if gn.ndim else '?'} coefficients vs {pn.num_symbols} PN rows")
    return (gn[:, None] * pn.chips).ravel()


def despread(frame: np.ndarray, pn: PNSequenceSet) -> np.ndarray:
    """Correlate each chip block with its PN row.

    Output s is (1/G)·sum_l chips[s,l]·Re(frame[s,l]).  Aligned signal
    passes through unchanged (chips²=1) while wideband interference is
    averaged down to power P_I/G.
    """
    frame = np.asarray(frame)
    s, g = pn.chips.shape
    if frame.shape != (s * g,):
        raise ConfigurationError(
            f"frame has {frame.shape} chips, PN set expects ({s * g},)")
    blocks = np.real(frame).reshape(s, g)
    return (pn.chips * blocks).sum(axis=1) / g


def denormalize(y: np.ndarray, params: NormalizationParams,
                active_count: int, p0: float) -> np.ndarray:
    """Undo power alignment and normalization of the superposed symbols.

    Output = V(n)/(sqrt(P0)·|K|) · y + M(n).  The additive term is M(n)
    (not |K|·M(n)): each device subtracted M(n) once before transmission
    and the de-spread sum was already divided by |K|, so adding M(n) back
    once restores the average of the un-normalized coefficients exactly.
    """
    if active_count < 1:
        raise RoundSkip("no active devices; skip the model update this round")
    y = np.asarray(y, dtype=np.float64)
    return (params.std / (np.sqrt(p0) * active_count)) * y + params.mean


def device_chips(g: np.ndarray, mask: PruningMask, params: NormalizationParams,
                 pn: PNSequenceSet) -> np.ndarray:
    """Full device-side chain: prune, normalize, spread."""
    return spread(normalize(prune(g, mask), params), pn)


def receiver_output(frame: np.ndarray, mask: PruningMask,
                    params: NormalizationParams, pn: PNSequenceSet,
                    active_count: int, p0: float) -> np.ndarray:
    """Full server-side chain: despread, denormalize, zero-pad."""
    y = despread(frame, pn)
    y = denormalize(y, params, active_count, p0)
    return zero_pad(y, mask)
