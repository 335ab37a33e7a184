"""Deterministic, named random streams derived from one master seed.

Every randomness source in a simulation (channel fading, interference,
pruning masks, PN chips, mini-batch sampling, data synthesis, weight init)
draws from its own counter-addressed stream.  Streams are derived from the
master seed through ``numpy.random.SeedSequence`` spawn keys, so

* the same ``(master_seed, name, counters...)`` always yields the same
  generator, regardless of creation order or thread scheduling, and
* toggling how much randomness one source consumes leaves every other
  source's draws unchanged (counter-based splitting, not a shared stream).
"""

from __future__ import annotations

import numpy as np

# Stable numeric ids of named streams.  Appending new names is fine;
# renumbering existing ones silently changes every seeded experiment.
_STREAM_IDS = {
    "data": 0,
    "partition": 1,
    "init": 2,
    "channel": 3,
    "interference": 4,
    "mask": 5,
    "pn": 6,
    "batch": 7,
    "scratch": 8,
}


def stream(master_seed: int, name: str, *counters: int) -> np.random.Generator:
    """Return the generator for a named stream at the given counters.

    ``counters`` conventionally are ``(trial,)``, ``(trial, round)`` or
    ``(trial, round, device)`` depending on the stream's granularity.
    """
    try:
        sid = _STREAM_IDS[name]
    except KeyError:
        raise ValueError(f"unknown stream name {name!r}") from None
    seq = np.random.SeedSequence(master_seed, spawn_key=(sid, *counters))
    return np.random.default_rng(seq)


def stream_names() -> tuple[str, ...]:
    return tuple(_STREAM_IDS)
