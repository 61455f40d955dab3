"""Deterministic counter-based randomness.

Every random draw in the package is keyed: a 64-bit master seed plus a tuple
of integer words (component label, trial index, lattice coordinates, step
counter) is mapped through a SplitMix64 chain to uniforms, or to a Philox key
when a full bit generator is more convenient. Output therefore depends only
on the key words, never on evaluation order, chunk sizes, or thread count.
"""

from __future__ import annotations

import numpy as np

_MASK = 0xFFFFFFFFFFFFFFFF
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX_1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX_2 = np.uint64(0x94D049BB133111EB)
_INV_2_53 = float(2.0**-53)

# Fixed domain-separation labels, one per consumer of keyed randomness.
LABEL_SITE = 0x01
LABEL_WALK = 0x02
LABEL_COIN = 0x03
LABEL_MARKER = 0x04
LABEL_FIELD = 0x05
LABEL_BOUNDARY = 0x06
LABEL_START = 0x07


def _u64(value) -> np.uint64:
    return np.uint64(int(value) & _MASK)


def _mix(x: np.ndarray) -> np.ndarray:
    """SplitMix64 finalizer, vectorized over uint64 arrays."""
    with np.errstate(over="ignore"):
        x = np.bitwise_xor(x, x >> np.uint64(30)) * _MIX_1
        x = np.bitwise_xor(x, x >> np.uint64(27)) * _MIX_2
        return np.bitwise_xor(x, x >> np.uint64(31))


def key(seed: int, *words: int) -> np.uint64:
    """Derive a scalar key from a seed and a tuple of integer words."""
    k = _mix(np.asarray(_u64(seed) ^ _GOLDEN))
    with np.errstate(over="ignore"):
        for w in words:
            k = _mix(k + (_GOLDEN + _u64(w)))
    return np.uint64(k)


def key_mixin(base, *word_columns) -> np.ndarray:
    """Fold broadcastable integer columns into a base key, vectorized.

    Columns may be scalars or integer arrays (negative values allowed; they
    enter as their two's complement). Shapes follow numpy broadcasting.
    """
    k = np.asarray(base, dtype=np.uint64)
    with np.errstate(over="ignore"):
        for col in word_columns:
            arr = np.asarray(col)
            if arr.dtype.kind in "iu":
                w = arr.astype(np.int64, copy=False).view(np.uint64) if arr.dtype.kind == "i" else arr.astype(np.uint64, copy=False)
            else:
                w = np.asarray(arr, dtype=np.int64).view(np.uint64)
            k = _mix(k + (_GOLDEN + w))
    return k


def u01(keys, stream: int = 0) -> np.ndarray:
    """Uniform [0,1) doubles, one per key, on the given substream."""
    k = np.asarray(keys, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = _mix(k + _GOLDEN * _u64(stream + 1))
    return (z >> np.uint64(11)).astype(np.float64) * _INV_2_53


def normals(keys, stream: int = 0) -> np.ndarray:
    """Standard normals, one per key, through the inverse CDF."""
    from scipy.special import ndtri

    u = np.clip(u01(keys, stream), 2.0**-54, 1.0 - 2.0**-54)
    return ndtri(u)


def generator(seed: int, *words: int) -> np.random.Generator:
    """A Philox generator keyed on (seed, words); independent across keys."""
    k0 = key(seed, *words)
    with np.errstate(over="ignore"):
        k1 = _mix(np.asarray(k0 + _GOLDEN))
    return np.random.Generator(np.random.Philox(key=np.array([k0, k1], dtype=np.uint64)))
