"""Deterministic seed derivation for every random stream in the simulator.

All randomness flows from one master seed. Each consumer (a client's
training shuffle, a channel draw, a noise vector) gets its own stream whose
seed is a 64-bit BLAKE2b digest of the master seed plus a path of context
parts, joined with ``/``:

    seed = blake2b("master/part1/part2/...", digest_size=8)  -> uint64 (LE)

The derivation depends only on the identifiers (client id, round index,
purpose tag), never on scheduling order, so results are reproducible for
any execution order or worker count.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(master: int, *parts: int | str | float) -> int:
    """Derive a 64-bit stream seed from the master seed and context parts."""
    h = hashlib.blake2b(digest_size=8)
    h.update(str(master).encode("utf-8"))
    for part in parts:
        h.update(b"/")
        h.update(str(part).encode("utf-8"))
    return int.from_bytes(h.digest(), "little")


def derive_rng(master: int, *parts: int | str | float) -> np.random.Generator:
    """A fresh PCG64 generator seeded by :func:`derive_seed`."""
    return np.random.default_rng(derive_seed(master, *parts))
