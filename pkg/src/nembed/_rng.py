"""Counter-based splitmix64 streams usable from numba kernels.

Every kernel that draws random numbers carries its own 64-bit state, so
results do not depend on thread scheduling.
"""
import numpy as np
from numba import njit

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK = (1 << 64) - 1


@njit(cache=True, nogil=True)
def mix64(z):
    z = np.uint64(z)
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


@njit(cache=True, nogil=True)
def next_u64(state):
    """Advance ``state`` (a length-1 uint64 array) and return the next output."""
    state[0] = state[0] + _GOLDEN
    return mix64(state[0])


@njit(cache=True, nogil=True)
def next_float(state):
    # 53 high bits -> [0, 1)
    return (next_u64(state) >> np.uint64(11)) * (1.0 / 9007199254740992.0)


@njit(cache=True, nogil=True)
def next_below(state, n):
    r = int(next_float(state) * n)
    return r if r < n else n - 1


def derive_seed(*parts):
    """Hash integers into one 64-bit seed (pure Python, stable across runs)."""
    h = 0x243F6A8885A308D3
    for p in parts:
        h = (h ^ (int(p) & _MASK)) & _MASK
        h = (h + 0x9E3779B97F4A7C15) & _MASK
        z = h
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
        h = z ^ (z >> 31)
    return h


def seed_from(rng):
    """Accept an int seed or a numpy Generator and return a 64-bit seed."""
    if isinstance(rng, np.random.Generator):
        return int(rng.integers(0, 2**63, dtype=np.int64))
    return int(rng) & _MASK
