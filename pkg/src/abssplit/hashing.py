"""Stable keyed 64-bit hashing used for every randomized decision.

The hash of an identifier ``id`` in stream ``namespace`` under ``seed`` is::

    d = BLAKE2b-64(id)                       # little-endian uint64
    k = BLAKE2b-64(namespace + "\\x00" + str(seed))
    h = fmix64(d XOR k)                      # MurmurHash3 64-bit finalizer

Identifier digests do not depend on the seed, so Monte-Carlo loops can
digest ids once and re-key them cheaply with numpy. ``h < 2**63`` is the
binary coin; ``((h >> 12) + 0.5) / 2**52`` is a uniform draw in (0, 1).
"""

from __future__ import annotations

import hashlib
from functools import lru_cache
from typing import Iterable

import numpy as np

_M1 = np.uint64(0xFF51AFD7ED558CCD)
_M2 = np.uint64(0xC4CEB9FE1A85EC53)
_S33 = np.uint64(33)
_S12 = np.uint64(12)
_HALF = np.uint64(1 << 63)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)


def _blake64(data: bytes) -> int:
    return int.from_bytes(hashlib.blake2b(data, digest_size=8).digest(), "little")


@lru_cache(maxsize=1 << 16)
def digest(identifier: str) -> int:
    return _blake64(identifier.encode("utf-8"))


def digests(identifiers: Iterable[str]) -> np.ndarray:
    return np.fromiter((digest(i) for i in identifiers), dtype=np.uint64)


@lru_cache(maxsize=4096)
def stream_key(namespace: str, seed: int) -> int:
    return _blake64(f"{namespace}\x00{seed}".encode("utf-8"))


def fmix64(h: np.ndarray) -> np.ndarray:
    h = np.asarray(h, dtype=np.uint64).copy()
    with np.errstate(over="ignore"):
        h ^= h >> _S33
        h *= _M1
        h ^= h >> _S33
        h *= _M2
        h ^= h >> _S33
    return h


def keyed(id_digests: np.ndarray, namespace: str, seed: int) -> np.ndarray:
    key = np.uint64(stream_key(namespace, seed))
    return fmix64(np.asarray(id_digests, dtype=np.uint64) ^ key)


def indexed(base: np.ndarray, index: np.ndarray) -> np.ndarray:
    """Child hashes ``fmix64(base + (index + 1) * golden)`` for sub-draws of one entity."""
    base = np.asarray(base, dtype=np.uint64)
    index = np.asarray(index, dtype=np.uint64)
    with np.errstate(over="ignore"):
        return fmix64(base + (index + np.uint64(1)) * _GOLDEN)


def coin(h: np.ndarray) -> np.ndarray:
    """True for the upper half of the hash range."""
    return np.asarray(h, dtype=np.uint64) >= _HALF


def uniform(h: np.ndarray) -> np.ndarray:
    """Map hashes to floats strictly inside (0, 1)."""
    top = (np.asarray(h, dtype=np.uint64) >> _S12).astype(np.float64)
    return (top + 0.5) * 2.0**-52


def derive_seed(seed: int, *labels: object) -> int:
    """A child seed in [0, 2**63) for a labelled sub-task."""
    text = "\x1f".join([str(seed), *map(str, labels)])
    return _blake64(text.encode("utf-8")) >> 1
