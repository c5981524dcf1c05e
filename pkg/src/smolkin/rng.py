"""Counter-based random streams.

Every random draw in the simulators is a pure function of
``(root seed, key...)``. Replica ``k`` of an ensemble therefore reproduces in
isolation, independent of worker count or scheduling order.

Splitting rule
--------------
``replica_seed(root, k)`` is the first 64-bit word of
``numpy.random.SeedSequence(entropy=root, spawn_key=(k,))``. Inside a
replica, draws are keyed by integers (particle id, step index, tree node,
...) and hashed with the splitmix64 finalizer.
"""
from __future__ import annotations

import math

import numba as nb
import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_TWO53 = 1.0 / 9007199254740992.0


def replica_seed(root: int, k: int) -> int:
    ss = np.random.SeedSequence(entropy=int(root), spawn_key=(int(k),))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def replica_seeds(root: int, n: int) -> list[int]:
    return [replica_seed(root, k) for k in range(n)]


@nb.njit(cache=True, inline="always")
def mix64(z):
    z = np.uint64(z)
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


@nb.njit(cache=True, inline="always")
def key2(seed, a):
    return mix64(np.uint64(seed) ^ mix64(np.uint64(a) + _GOLDEN))


@nb.njit(cache=True, inline="always")
def key3(seed, a, b):
    return mix64(key2(seed, a) ^ mix64(np.uint64(b) + _GOLDEN * np.uint64(3)))


@nb.njit(cache=True, inline="always")
def key4(seed, a, b, c):
    return mix64(key3(seed, a, b) ^ mix64(np.uint64(c) + _GOLDEN * np.uint64(5)))


@nb.njit(cache=True, inline="always")
def to_unit(h):
    # (0, 1]: safe under log
    return (np.float64(h >> np.uint64(11)) + 1.0) * _TWO53


@nb.njit(cache=True, inline="always")
def next_u64(state):
    """Advance a splitmix64 stream; returns (new_state, output)."""
    s = np.uint64(state) + _GOLDEN
    return s, mix64(s)


@nb.njit(cache=True)
def normal3(key, out):
    """Fill ``out[0:3]`` with independent N(0,1) draws from one key."""
    s = np.uint64(key)
    s, a = next_u64(s)
    s, b = next_u64(s)
    s, c = next_u64(s)
    s, e = next_u64(s)
    r1 = math.sqrt(-2.0 * math.log(to_unit(a)))
    th1 = 2.0 * math.pi * to_unit(b)
    r2 = math.sqrt(-2.0 * math.log(to_unit(c)))
    th2 = 2.0 * math.pi * to_unit(e)
    out[0] = r1 * math.cos(th1)
    out[1] = r1 * math.sin(th1)
    out[2] = r2 * math.cos(th2)


@nb.njit(cache=True)
def stream_normal(state):
    """One N(0,1) draw from a sequential stream; returns (new_state, z)."""
    state, a = next_u64(state)
    state, b = next_u64(state)
    z = math.sqrt(-2.0 * math.log(to_unit(a))) * math.cos(2.0 * math.pi * to_unit(b))
    return state, z


@nb.njit(cache=True)
def stream_uniform(state):
    state, a = next_u64(state)
    return state, to_unit(a)
