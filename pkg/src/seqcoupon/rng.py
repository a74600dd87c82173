"""Splittable counter-based randomness.

Every stochastic decision in the simulator draws from a substream addressed by
(master seed, item key, round, purpose). Streams are independent of iteration
order and of which other items participate, so per-item simulation can run in
any order or in parallel and still reproduce bit-identically.

The generator is the SplitMix64 finaliser chained over the address components;
uniforms come from the top 53 bits.
"""

from __future__ import annotations

import hashlib

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_U53_INV = float(2.0**-53)

# Purpose tags; values are part of the reproducibility contract.
ARM_R1 = 1
SALE_R1 = 2
ATTACH_DELAY = 3
PURCHASE_R1 = 4
ARM_R2 = 5
SALE_R2 = 6
PURCHASE_R2 = 7
BOOTSTRAP = 8


def item_key(item_id: str) -> int:
    """Stable 64-bit key for an item id (independent of process hash seeds)."""
    digest = hashlib.blake2s(item_id.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def item_keys(item_ids) -> np.ndarray:
    return np.array([item_key(i) for i in item_ids], dtype=np.uint64)


def _mix(z: np.ndarray) -> np.ndarray:
    # uint64 wrap-around is the point; silence numpy's scalar overflow warning
    with np.errstate(over="ignore"):
        z = z + _GOLDEN
        z = (z ^ (z >> np.uint64(30))) * _MIX1
        z = (z ^ (z >> np.uint64(27))) * _MIX2
        return z ^ (z >> np.uint64(31))


def stream_words(seed: int, keys: np.ndarray | int, *tags: int) -> np.ndarray:
    """One 64-bit word per key for the substream addressed by (seed, key, *tags)."""
    h = _mix(np.uint64(seed & 0xFFFFFFFFFFFFFFFF))
    z = _mix(h ^ np.asarray(keys, dtype=np.uint64))
    for t in tags:
        z = _mix(z ^ np.uint64(t & 0xFFFFFFFFFFFFFFFF))
    return z


def uniforms(seed: int, keys: np.ndarray | int, *tags: int) -> np.ndarray:
    """Uniform [0, 1) draws, one per key, for the addressed substream."""
    words = stream_words(seed, keys, *tags)
    return (words >> np.uint64(11)).astype(np.float64) * _U53_INV
