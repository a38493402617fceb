"""Seed derivation and the in-kernel counter-based generator.

Python-level code draws from ``numpy.random.Generator`` streams derived
from ``(master_seed, *keys)`` with ``SeedSequence`` spawn keys, so replicate
``i`` never depends on how many other replicates exist.  Compiled kernels
cannot hold one ``Generator`` per tree particle, so they use SplitMix64
streams whose 64-bit keys are derived the same way.
"""
import os

import numpy as np
from numba import njit, uint64

SEED_ENV = "FRAG_EXPLORE_SEED"

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def resolve_seed(seed):
    """Apply the environment override to a command-line seed."""
    env = os.environ.get(SEED_ENV)
    if env is not None and env.strip():
        return int(env)
    return int(seed)


def seed_sequence(master_seed, *keys):
    return np.random.SeedSequence(int(master_seed) % 2**64, spawn_key=tuple(int(k) for k in keys))


def make_rng(master_seed, *keys):
    """Independent ``Generator`` for the stream addressed by ``keys``."""
    return np.random.Generator(np.random.PCG64(seed_sequence(master_seed, *keys)))


def derive_key(master_seed, *keys):
    """64-bit key for a compiled-kernel stream."""
    return int(seed_sequence(master_seed, *keys).generate_state(1, np.uint64)[0])


def as_rng(rng):
    if isinstance(rng, np.random.Generator):
        return rng
    return make_rng(0 if rng is None else rng)


def key_from_rng(rng):
    """Draw a kernel key from a Python-level generator."""
    return int(as_rng(rng).integers(0, 2**63, dtype=np.int64))


@njit(cache=True)
def mix64(z):
    z = uint64(z)
    z = (z ^ (z >> uint64(30))) * _M1
    z = (z ^ (z >> uint64(27))) * _M2
    return z ^ (z >> uint64(31))


@njit(cache=True)
def child_key(key, index):
    """Key of the ``index``-th child stream of ``key``."""
    return mix64(uint64(key) ^ mix64(uint64(index) * _GOLDEN + uint64(1)))


@njit(cache=True)
def next_uniform(state):
    """Uniform on (0, 1); ``state`` is a length-1 uint64 array advanced in place."""
    state[0] = state[0] + _GOLDEN
    z = mix64(state[0])
    return (float(z >> uint64(11)) + 0.5) * (1.0 / 9007199254740992.0)


@njit(cache=True)
def next_normal(state):
    u1 = next_uniform(state)
    u2 = next_uniform(state)
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


@njit(cache=True)
def next_exponential(state):
    return -np.log(next_uniform(state))


@njit(cache=True)
def new_state(key):
    s = np.empty(1, dtype=np.uint64)
    s[0] = mix64(uint64(key))
    return s
