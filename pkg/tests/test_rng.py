import numpy as np
from hypothesis import given, strategies as st

from fluctlab import rng


@given(st.integers(0, 2 ** 63), st.lists(st.integers(0, 1000), max_size=3))
def test_streams_are_reproducible(seed, key):
    a = rng.stream(seed, *key).standard_normal(5)
    b = rng.stream(seed, *key).standard_normal(5)
    assert np.array_equal(a, b)


def test_distinct_keys_give_distinct_streams():
    a = rng.stream(1, rng.BROWNIAN).standard_normal(8)
    b = rng.stream(1, rng.INITIAL).standard_normal(8)
    assert not np.array_equal(a, b)


def test_child_seed_is_63_bit_and_stable():
    s = rng.child_seed(7, rng.OPERATOR, 3)
    assert s == rng.child_seed(7, rng.OPERATOR, 3)
    assert 0 <= s < 2 ** 63


def test_brownian_increments_prefix_stable_and_scaled():
    a = rng.brownian_increments(3, 10, 50, 1, 0.01)
    b = rng.brownian_increments(3, 20, 50, 1, 0.01)
    assert np.array_equal(a, b[:10])
    big = rng.brownian_increments(4, 4000, 50, 1, 0.01)
    # variance dt within a few standard errors
    v = big.var()
    assert abs(v - 0.01) < 4 * 0.01 * np.sqrt(2 / big.size)
