"""Counter-based random numbers (Philox4x64-10).

Every random quantity used by the simulator is a pure function of
``(seed, path index, purpose tag, counter words)``, so a path's draws never
depend on how paths are batched or scheduled across workers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

_M32 = np.uint64(0xFFFFFFFF)
_S32 = np.uint64(32)
_M0 = np.uint64(0xD2E7470EE14C6C93)
_M1 = np.uint64(0xCA5A826395121157)
_W0 = np.uint64(0x9E3779B97F4A7C15)
_W1 = np.uint64(0xBB67AE8584CAA73B)
_S11 = np.uint64(11)
_ONE = np.uint64(1)
_TWO_M53 = 1.0 / 9007199254740992.0


@njit(inline="always", cache=True)
def _mulhilo(a, b):
    a_lo = a & _M32
    a_hi = a >> _S32
    b_lo = b & _M32
    b_hi = b >> _S32
    p0 = a_lo * b_lo
    p1 = a_lo * b_hi
    p2 = a_hi * b_lo
    p3 = a_hi * b_hi
    mid = (p0 >> _S32) + (p1 & _M32) + (p2 & _M32)
    hi = p3 + (p1 >> _S32) + (p2 >> _S32) + (mid >> _S32)
    return hi, a * b


@njit(cache=True)
def philox4x64(c0, c1, c2, c3, k0, k1):
    """One Philox4x64-10 block: four 64-bit words from a counter and key."""
    for i in range(10):
        if i > 0:
            k0 = k0 + _W0
            k1 = k1 + _W1
        hi0, lo0 = _mulhilo(_M0, c0)
        hi1, lo1 = _mulhilo(_M1, c2)
        c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
    return c0, c1, c2, c3


@njit(inline="always", cache=True)
def u_open0(x):
    """Uniform on (0, 1] from the top 53 bits."""
    return ((x >> _S11) + _ONE) * _TWO_M53


@njit(inline="always", cache=True)
def u_open1(x):
    """Uniform on [0, 1) from the top 53 bits."""
    return (x >> _S11) * _TWO_M53


@njit(cache=True)
def block_uniforms(seed, path, tag, n, sub):
    """Four uniforms on (0, 1] keyed by (seed, path, tag, n, sub)."""
    a, b, c, d = philox4x64(
        np.uint64(path), np.uint64(tag), np.uint64(n), np.uint64(sub), np.uint64(seed), np.uint64(0)
    )
    return u_open0(a), u_open0(b), u_open0(c), u_open0(d)


@dataclass(frozen=True)
class PathStream:
    """Handle on the random stream of one simulated path.

    Path ``index`` of an estimate run with ``seed`` uses exactly this stream,
    so ``sample_path(..., PathStream(seed, i))`` replays path ``i``.
    """

    seed: int
    index: int = 0

    def __post_init__(self):
        if not (0 <= self.seed < 2**64) or not (0 <= self.index < 2**63):
            raise ValueError("seed must be a u64 and index a non-negative int")


def raw_block(counter, key) -> np.ndarray:
    """Philox4x64-10 output for explicit counter/key words (testing aid)."""
    c = [np.uint64(v) for v in counter]
    k = [np.uint64(v) for v in key]
    return np.array(philox4x64(c[0], c[1], c[2], c[3], k[0], k[1]), dtype=np.uint64)
