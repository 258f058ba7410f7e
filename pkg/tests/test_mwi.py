import math
from itertools import combinations

import numpy as np
import pytest
from hypothesis import given, strategies as st

from fluctlab.model import TimeGrid, example31_spec
from fluctlab.mwi import (
    ChaosBasis,
    ProductKernel,
    TruncationWarning,
    elementary_symmetric,
    hermite_coefficients,
    i1_field,
    i2_from_kernel,
    iK_truncated,
    ik_product_form,
    median_of_means,
    permanent,
    sample_J,
    sample_joint,
    symmetric_statistic,
    symmetrize,
    wick_product,
)
from fluctlab.operators import build_sample_operator
from fluctlab.simulate import simulate_reference

M = 60
DRAWS = 200_000


def _vec(seed):
    return np.random.default_rng(seed).normal(size=M)


def _inner(f, g):
    return float(np.dot(f, g) / M)


def _close(est, target, rel):
    return abs(est - target) <= rel * abs(target)


def test_i1_isometry_and_cross_moment():
    basis = ChaosBasis(M, 1)
    h, g = _vec(0), _vec(1)
    a, b = i1_field(basis, h), i1_field(basis, g)
    assert a.second_moment == pytest.approx(_inner(h, h))
    x = sample_joint([a, b], DRAWS)
    assert _close(np.mean(x[:, 0] ** 2), _inner(h, h), 0.02)
    assert abs(np.mean(x[:, 0] * x[:, 1]) - _inner(h, g)) < 0.02 * np.sqrt(_inner(h, h) * _inner(g, g))
    assert basis.orthonormality_error() < 1e-12


def test_basis_extension_keeps_existing_draws():
    basis = ChaosBasis(M, 3)
    a = i1_field(basis, _vec(0))
    before = a.sample(1000)
    i1_field(basis, _vec(1))
    assert np.array_equal(a.sample(1000), before)


@given(st.floats(-2, 2), st.floats(-2, 2))
def test_i1_is_linear(a, b):
    basis = ChaosBasis(M, 5)
    h, g = _vec(2), _vec(3)
    lhs = i1_field(basis, a * h + b * g).sample(50)
    rhs = a * i1_field(basis, h).sample(50) + b * i1_field(basis, g).sample(50)
    assert np.allclose(lhs, rhs, atol=1e-9)


def test_hermite_coefficients():
    assert hermite_coefficients(2) == [(0, 1), (1, -1)]
    assert hermite_coefficients(3) == [(0, 1), (1, -3)]
    assert hermite_coefficients(4) == [(0, 1), (1, -6), (2, 3)]


@pytest.mark.parametrize("k", [1, 2, 3])
def test_product_form_isometry(k):
    basis = ChaosBasis(M, 7)
    h = _vec(4) / 2
    s = ik_product_form(basis, h, k)
    target = math.factorial(k) * _inner(h, h) ** k
    assert s.second_moment == pytest.approx(target)
    x = s.sample(DRAWS)
    assert abs(x.mean()) < 4 * np.sqrt(target / DRAWS)
    assert _close(np.mean(x ** 2), target, 0.05 if k < 3 else 0.1)


def test_rank_one_kernel_matches_product_form():
    h = _vec(5)
    S = np.outer(h, h)
    basis = ChaosBasis.from_kernel(S, 9)
    assert basis.R == 1 and basis.captured_mass == pytest.approx(1.0)
    i2 = i2_from_kernel(basis)
    pf = ik_product_form(basis, h, 2)
    x = sample_joint([i2, pf], 1000)
    assert np.allclose(x[:, 0], x[:, 1], atol=1e-9)


def test_wick_products_and_permanents():
    gram = np.array([[1.0, 0.5], [0.5, 2.0]])
    x = np.array([[0.3, -1.2], [2.0, 0.1]])
    assert np.allclose(wick_product(x, gram), x[:, 0] * x[:, 1] - 0.5)
    g3 = np.eye(3)
    v = np.array([[1.0, 2.0, 3.0]])
    assert wick_product(v, g3)[0] == 6.0
    same = np.ones((3, 3))
    assert wick_product(np.array([[2.0, 2.0, 2.0]]), same)[0] == pytest.approx(2.0 ** 3 - 3 * 2.0)
    assert permanent(np.ones((3, 3))) == pytest.approx(6.0)
    assert permanent(np.array([[1.0, 2.0], [3.0, 4.0]])) == pytest.approx(10.0)


def test_iK_wick_terms_second_moment():
    basis = ChaosBasis(M, 11)
    h1, h2 = _vec(6), _vec(7)
    s = iK_truncated(basis, [(1.0, [h1, h2])])
    target = _inner(h1, h1) * _inner(h2, h2) + _inner(h1, h2) ** 2
    assert s.second_moment == pytest.approx(target)
    x = s.sample(DRAWS)
    assert _close(np.mean(x ** 2), target, 0.06)


def test_iK_truncation_warning():
    S = np.diag(np.linspace(1.0, 0.9, M)) * M
    with pytest.warns(TruncationWarning):
        s = iK_truncated(ChaosBasis(M, 1), S, mass=0.5, warn_below=0.9)
    assert s.meta["captured_mass"] < 0.9


def test_sample_J_without_interaction():
    spec = example31_spec(beta="zero")
    grid = TimeGrid.from_step(1.0, 0.1)
    ref = simulate_reference(spec, 20, grid, 1)
    op = build_sample_operator(spec, ref, (0.5, 0.5), 20, 2)
    js = sample_J(op)
    assert js.trace == 0.0
    assert np.all(js.sample(100) == 0.0)
    assert js.exp_mean() == 1.0


def test_sample_J_moments_match_closed_forms():
    spec = example31_spec()
    grid = TimeGrid.from_step(1.0, 0.05)
    ref = simulate_reference(spec, 500, grid, 1)
    op = build_sample_operator(spec, ref, (0.5, 0.5), 200, 2)
    js = sample_J(op)
    x = js.sample(DRAWS)
    assert abs(x.mean() - js.mean) < 4 * np.sqrt(js.variance / DRAWS)
    assert _close(x.var(), js.variance, 0.05)
    assert _close(np.exp(x).mean(), js.exp_mean(), 0.02)


def test_symmetrize():
    phi = lambda p: p[0] * 10 + p[1]
    g = symmetrize(phi, 2)
    assert g([(1, 2), (3, 4)]) == pytest.approx((1 * 10 + 4 + 3 * 10 + 2) / 2)
    assert g([(1, 2), (3, 4)]) == g([(3, 4), (1, 2)])
    with pytest.raises(ValueError):
        symmetrize(phi, 9)


def test_symmetric_statistic_small_cases():
    data = np.array([1.0, 2.0, 3.0, 4.0])
    assert symmetric_statistic(lambda a, b: a * b, data[:1], 2) == 0.0
    assert symmetric_statistic(lambda a: a ** 2, data, 1) == 30.0
    brute = sum(a * b for a, b in combinations(data, 2))
    assert symmetric_statistic(lambda a, b: a * b, data, 2) == pytest.approx(brute)
    assert symmetric_statistic(ProductKernel(lambda x: x), data, 2) == pytest.approx(brute)
    brute3 = sum(a * b + c for a, b, c in combinations(data, 3))
    assert symmetric_statistic(lambda a, b, c: a * b + c, data, 3) == pytest.approx(brute3)


@given(st.lists(st.floats(-3, 3), min_size=0, max_size=7), st.integers(1, 4))
def test_elementary_symmetric_matches_brute_force(vals, k):
    brute = sum(np.prod(c) for c in combinations(vals, k)) if len(vals) >= k else 0.0
    assert float(elementary_symmetric(np.array(vals, dtype=float), k)) == pytest.approx(brute, abs=1e-8)


def test_median_of_means():
    assert median_of_means(np.arange(20.0), blocks=4) == pytest.approx(np.median([2.0, 7.0, 12.0, 17.0]))
