"""Small deterministic hash utilities used across the package.

Everything here is fixed for the lifetime of the on-disk formats: band
digests, config digests and min-hash permutations all have to reproduce
bit-identically across runs and platforms, so we stick to two well known
constructions (FNV-1a and splitmix64) implemented over explicit uint64
arithmetic instead of relying on the interpreter's salted ``hash``.
"""

import numpy as np

FNV64_OFFSET = 0xCBF29CE484222325
FNV64_PRIME = 0x100000001B3

_U64 = np.uint64
_MASK64 = (1 << 64) - 1


def fnv1a64(data: bytes) -> int:
    """FNV-1a over ``data``, returned as a python int in [0, 2**64)."""
    h = FNV64_OFFSET
    for byte in data:
        h ^= byte
        h = (h * FNV64_PRIME) & _MASK64
    return h


def fnv1a64_rows(rows: np.ndarray) -> np.ndarray:
    """FNV-1a applied independently to each row of a uint8 matrix.

    Args:
        rows: array of shape [n, width], dtype uint8.

    Returns:
        uint64 array of n digests, identical to ``fnv1a64(row.tobytes())``
        for every row.
    """
    if rows.ndim != 2:
        raise ValueError("expected a 2-D array of byte rows")
    out = np.full(rows.shape[0], _U64(FNV64_OFFSET), dtype=np.uint64)
    prime = _U64(FNV64_PRIME)
    with np.errstate(over="ignore"):
        for col in range(rows.shape[1]):
            out ^= rows[:, col].astype(np.uint64)
            out *= prime
    return out


def splitmix64(x: np.ndarray) -> np.ndarray:
    """Vectorised splitmix64 finaliser over a uint64 array (wrapping)."""
    z = x.astype(np.uint64, copy=True)
    with np.errstate(over="ignore"):
        z += _U64(0x9E3779B97F4A7C15)
        z ^= z >> _U64(30)
        z *= _U64(0xBF58476D1CE4E5B9)
        z ^= z >> _U64(27)
        z *= _U64(0x94D049BB133111EB)
        z ^= z >> _U64(31)
    return z


def mix64(value: int) -> int:
    """Scalar splitmix64 finaliser for deriving sub-seeds."""
    z = (value + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64
