"""Counter-based SplitMix64 streams.

Every random number in the package comes from here. A stream is identified
by a 64-bit key; draw ``k`` of stream ``key`` is::

    mix64(key + (k + 1) * GOLDEN)

where ``GOLDEN = 0x9E3779B97F4A7C15`` and ``mix64`` is the SplitMix64
finalizer (Steele, Lea & Flood 2014)::

    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB
    z =  z ^ (z >> 31)

all arithmetic modulo 2**64. Uniforms use the top 52 bits shifted by half a
unit, ``((z >> 12) + 0.5) * 2**-52``. Every such value is exactly
representable and lies strictly inside (0, 1), so inverse-CDF transforms
never see 0 or 1. (With 53 bits the largest value would round up to 1.)

Child keys are derived with :func:`derive_seed`, which folds each integer
index into the key one at a time::

    h = mix64(master)
    for i in indices:
        h = mix64(h ^ mix64(i + GOLDEN))

Because a draw depends only on (key, counter), replicates can be produced
in any order or in parallel and still be bit-identical.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB


def mix64(z: int) -> int:
    """SplitMix64 finalizer on a Python int."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * _M1) & MASK64
    z = ((z ^ (z >> 27)) * _M2) & MASK64
    return z ^ (z >> 31)


def derive_seed(master: int, *indices: int) -> int:
    h = mix64(master)
    for i in indices:
        h = mix64(h ^ mix64((int(i) + GOLDEN) & MASK64))
    return h


def _mix64_array(z: np.ndarray) -> np.ndarray:
    z = z ^ (z >> np.uint64(30))
    z = z * np.uint64(_M1)
    z = z ^ (z >> np.uint64(27))
    z = z * np.uint64(_M2)
    return z ^ (z >> np.uint64(31))


def raw_stream(keys, count: int, offset: int = 0) -> np.ndarray:
    """Raw 64-bit draws ``offset .. offset+count-1`` for each key.

    ``keys`` may be a scalar or a 1-D sequence; the result has shape
    ``(len(keys), count)`` (or ``(count,)`` for a scalar key).
    """
    scalar = np.ndim(keys) == 0
    k = np.atleast_1d(np.asarray(keys, dtype=object)).astype(np.uint64)
    ctr = np.arange(offset + 1, offset + count + 1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = k[:, None] + ctr[None, :] * np.uint64(GOLDEN)
        out = _mix64_array(z)
    return out[0] if scalar else out


def uniforms(keys, count: int, offset: int = 0) -> np.ndarray:
    """Open-interval (0, 1) uniforms from :func:`raw_stream`."""
    z = raw_stream(keys, count, offset)
    return ((z >> np.uint64(12)).astype(np.float64) + 0.5) * 2.0**-52


def derive_seeds(master: int, prefix, last) -> np.ndarray:
    """Vectorized ``derive_seed(master, *prefix, r)`` over an array of ``r``."""
    h = derive_seed(master, *prefix)
    r = np.asarray(last, dtype=object).astype(np.uint64)
    with np.errstate(over="ignore"):
        inner = _mix64_array(r + np.uint64(GOLDEN))
        return _mix64_array(np.uint64(h) ^ inner)
