"""Splittable seeds: one top-level seed, children derived by label.

child = splitmix64(seed XOR splitmix64(h(label))) where h is the first eight
bytes of blake2b(label), read little-endian.  All arithmetic is mod 2^64.
"""

from __future__ import annotations

import hashlib

MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    """One step of the SplitMix64 output function."""
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def label_hash(label) -> int:
    digest = hashlib.blake2b(str(label).encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def derive_seed(seed: int, label) -> int:
    """Child seed for ``label`` under ``seed``; stable across platforms."""
    return splitmix64((int(seed) & MASK64) ^ splitmix64(label_hash(label)))


def trial_seed(base_seed: int, cell_key: str, trial: int) -> int:
    return derive_seed(derive_seed(base_seed, cell_key), f"trial:{trial}")
