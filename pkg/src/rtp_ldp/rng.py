"""Seedable random number generation for the event-driven simulator.

The generator is xoshiro256++ with SplitMix64 state initialisation.  It is
implemented here (rather than taken from numpy) so that the event loop,
which runs inside compiled kernels, consumes exactly one documented stream
per path: replica ``i`` of a run with base seed ``s`` uses seed ``s ^ i``.
Identical seeds therefore give bitwise-identical paths.
"""
from __future__ import annotations

import numpy as np
from numba import njit

_U64 = np.uint64
_INV_2_53 = 1.0 / 9007199254740992.0  # 2**-53


@njit(cache=True, inline="always")
def _splitmix64(x):
    x = x + _U64(0x9E3779B97F4A7C15)
    z = x
    z = (z ^ (z >> _U64(30))) * _U64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> _U64(27))) * _U64(0x94D049BB133111EB)
    z = z ^ (z >> _U64(31))
    return x, z


@njit(cache=True)
def rng_init(seed):
    """Expand a 64-bit seed into a xoshiro256++ state vector."""
    s = np.empty(4, dtype=np.uint64)
    x = _U64(seed)
    for i in range(4):
        x, z = _splitmix64(x)
        s[i] = z
    # xoshiro must not start from the all-zero state; SplitMix64 output of
    # four consecutive words is never all zero, but guard anyway.
    if s[0] == _U64(0) and s[1] == _U64(0) and s[2] == _U64(0) and s[3] == _U64(0):
        s[0] = _U64(0x9E3779B97F4A7C15)
    return s


@njit(cache=True, inline="always")
def _rotl(x, k):
    return (x << _U64(k)) | (x >> _U64(64 - k))


@njit(cache=True, inline="always")
def rng_next(s):
    result = _rotl(s[0] + s[3], 23) + s[0]
    t = s[1] << _U64(17)
    s[2] ^= s[0]
    s[3] ^= s[1]
    s[1] ^= s[2]
    s[0] ^= s[3]
    s[2] ^= t
    s[3] = _rotl(s[3], 45)
    return result


@njit(cache=True, inline="always")
def rng_uniform(s):
    """Uniform double in [0, 1) with 53 random bits."""
    return float(rng_next(s) >> _U64(11)) * _INV_2_53


@njit(cache=True, inline="always")
def rng_exponential(s):
    """Standard exponential variate; -log1p(-u) avoids log(0)."""
    return -np.log1p(-rng_uniform(s))


@njit(cache=True)
def rng_poisson(s, lam):
    """Poisson variate by Knuth's product method, chunked for large means.

    Exact for every lam >= 0; cost is O(lam) uniforms, which is fine for the
    O(1) macroscopic densities used as initial intensities.
    """
    n = 0
    remaining = lam
    while remaining > 30.0:
        limit = np.exp(-30.0)
        p = rng_uniform(s)
        while p >= limit:
            n += 1
            p *= rng_uniform(s)
        remaining -= 30.0
    limit = np.exp(-remaining)
    p = rng_uniform(s)
    while p >= limit:
        n += 1
        p *= rng_uniform(s)
    return n


class Xoshiro:
    """Thin Python-side handle on a xoshiro256++ stream.

    Used by the reference single-step simulator API; the compiled kernels
    operate on the raw state array directly.
    """

    def __init__(self, seed: int):
        self.state = rng_init(np.uint64(seed & 0xFFFFFFFFFFFFFFFF))

    def uniform(self) -> float:
        return rng_uniform(self.state)

    def exponential(self) -> float:
        return rng_exponential(self.state)

    def poisson(self, lam: float) -> int:
        return int(rng_poisson(self.state, lam))


def replica_seed(base_seed: int, index: int) -> int:
    """Stream splitting rule: replica i uses base_seed XOR i."""
    return (int(base_seed) ^ int(index)) & 0xFFFFFFFFFFFFFFFF
