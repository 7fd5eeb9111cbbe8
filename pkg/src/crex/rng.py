"""Seeded randomness: one master seed, named child streams.

Every random draw in the package flows through a named child stream of a
single master seed, so any artifact can be regenerated from (master, name).
Child seeds are derived with FNV-1a over the master seed bytes plus the
stream name, which keeps distinct names statistically independent and the
derivation stable across platforms and runs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


def fnv1a64(data: bytes) -> int:
    """64-bit FNV-1a hash. Also used to bucket token strings."""
    h = _FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * _FNV_PRIME) & _MASK64
    return h


def child_seed(master: int, name: str) -> int:
    """Derive the seed of the named child stream of ``master``."""
    payload = (master & _MASK64).to_bytes(8, "little") + name.encode("utf-8")
    return fnv1a64(payload)


def child_rng(master: int, name: str) -> np.random.Generator:
    """Generator for the named child stream of ``master``."""
    return np.random.Generator(np.random.PCG64(child_seed(master, name)))


@dataclass(frozen=True)
class RngLineage:
    """Master seed plus the derivation rule for its named streams.

    Streams used by the pipeline: ``split``, ``init``, ``dropout``,
    ``shuffle/<k>``, ``synth``, and ``fold-<i>``.
    """

    master_seed: int

    def seed_of(self, name: str) -> int:
        return child_seed(self.master_seed, name)

    def stream(self, name: str) -> np.random.Generator:
        return child_rng(self.master_seed, name)
