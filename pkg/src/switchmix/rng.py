"""Keyed, counter-based random streams.

Every source of randomness in the package is a pure function of a 64-bit user
seed plus a tuple of integer labels (stream purpose, path index, time slot,
...).  Labels are folded into a Philox key with a splitmix64-style mixer, so
regenerating any slot of any stream is bit-identical and independent slots
never share state.  This is what makes double-sided noise fields, window
restarts and thread-count independence exact rather than approximate.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1

# stream purpose labels; arbitrary distinct constants
WIENER_STREAM = 0x57524E52
POISSON_STREAM = 0x504F4953
BRIDGE_STREAM = 0x42524447
PATH_STREAM = 0x50415448
COUPLE_STREAM = 0x43504C45
PUSH_STREAM = 0x50555348
GILLESPIE_STREAM = 0x47494C4C


def mix64(z: int) -> int:
    '''splitmix64 finalizer; bijective on 64-bit integers.'''
    z &= _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


def derive_key(*parts: int) -> int:
    '''Fold integer labels (negatives allowed) into one 64-bit key.'''
    acc = 0x8C9F3B6A42D1E7F5
    for p in parts:
        acc = mix64(acc ^ mix64(int(p) & _MASK64))
    return acc


def keyed_generator(*parts: int) -> np.random.Generator:
    '''Independent Generator fully determined by the label tuple.'''
    k1 = derive_key(*parts)
    k2 = mix64(k1 ^ 0x9E3779B97F4A7C15)
    key = np.array([k1, k2], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))
