"""Counter-based random streams.

Every random draw in the package comes from a Philox generator keyed by an
integer tuple ``(seed, tag, *ids)``.  Two draws with different keys are
independent; the same key always reproduces the same numbers, whatever the
order or the thread in which streams are opened.
"""
import numpy as np

# stream tags
BROWNIAN = 1
INITIAL = 2
FACTOR_NOISE = 3
FACTOR_INITIAL = 4
OPERATOR = 5
CHAOS = 6
PROBE = 7
REPLICATION = 8
ORACLE = 9
MIXTURE = 10
SYNTHETIC = 11
REFERENCE = 12

MASK63 = (1 << 63) - 1


def _key(seed, key):
    seed = int(seed)
    if seed < 0:
        raise ValueError(f"seeds must be non-negative, got {seed}")
    return seed, tuple(int(k) for k in key)


def stream(seed, *key) -> np.random.Generator:
    """Return the generator for the stream addressed by ``(seed, *key)``."""
    seed, key = _key(seed, key)
    ss = np.random.SeedSequence(seed, spawn_key=key)
    return np.random.Generator(np.random.Philox(ss))


def child_seed(seed, *key) -> int:
    """Derive a 63-bit integer seed for a nested computation."""
    seed, key = _key(seed, key)
    state = np.random.SeedSequence(seed, spawn_key=key).generate_state(2, np.uint64)
    return int(state[0]) & MASK63


def brownian_increments(seed, count, n, d, dt, key=()):
    """Brownian increments of shape ``(count, n, d)`` with variance ``dt``.

    Draws are laid out particle-major, so particle ``i`` always receives the
    same increments for a given seed no matter how many particles follow it.
    """
    gen = stream(seed, BROWNIAN, *key)
    return gen.standard_normal((count, n, d)) * np.sqrt(dt)
