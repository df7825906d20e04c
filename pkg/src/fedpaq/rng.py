"""Keyed, counter-based random streams.

Every random draw in a simulation comes from a stream identified by
``(master_seed, purpose, node, round)``. Streams are Philox generators keyed
directly by that tuple (seed in one 64-bit key word; purpose, node and round
packed into the other), so a node's draws in a round never depend on which
other nodes ran, in what order, or on how many threads were used.
"""

from __future__ import annotations

import enum

import numpy as np


class Purpose(enum.IntEnum):
    """Stream namespaces. Values are part of the key; never renumber."""

    SAMPLING = 1
    LOCAL_SGD = 2
    COMP_TIME = 4
    PARTITION = 5
    DATA = 6
    ESTIMATE = 7


SERVER = 2**32 - 1  # node slot for server-side streams


def _key(master_seed: int, purpose: int, node: int, round_: int) -> np.ndarray:
    if not 0 <= master_seed < 2**64:
        raise ValueError(f"seed must be in [0, 2**64), got {master_seed}")
    if not (0 <= purpose < 2**8 and 0 <= node < 2**32 and 0 <= round_ < 2**24):
        raise ValueError(f"stream cell out of range: purpose={purpose}, node={node}, round={round_}")
    cell = (int(purpose) << 56) | (int(node) << 24) | int(round_)
    return np.array([master_seed, cell], dtype=np.uint64)


def stream(master_seed: int, purpose: int, node: int = 0, round_: int = 0) -> np.random.Generator:
    """Return the generator for one (seed, purpose, node, round) cell."""
    return np.random.Generator(np.random.Philox(key=_key(master_seed, purpose, node, round_)))


def rekey(gen: np.random.Generator, master_seed: int, purpose: int, node: int = 0, round_: int = 0) -> np.random.Generator:
    """Reset a Philox-backed ``gen`` in place to the start of a cell's stream.

    Draws afterwards equal those of ``stream(...)`` with the same arguments;
    this skips building a new generator on hot paths.
    """
    gen.bit_generator.state = {
        "bit_generator": "Philox",
        "state": {"counter": np.zeros(4, dtype=np.uint64), "key": _key(master_seed, purpose, node, round_)},
        "buffer": np.zeros(4, dtype=np.uint64),
        "buffer_pos": 4,
        "has_uint32": 0,
        "uinteger": 0,
    }
    return gen


def derive_seed(master_seed: int, *labels: int) -> int:
    """Deterministic child seed (63-bit) for sweep points and repeats."""
    seq = np.random.SeedSequence([int(master_seed), *map(int, labels)])
    hi, lo = (int(w) for w in seq.generate_state(2, np.uint32))
    return (hi << 31) | (lo >> 1)
