import numpy as np
import pytest
from hypothesis import given, strategies as st

from fluctlab.model import ConfigError, LinearModelSpec, TimeGrid, build_layout, common_factor_preset, example31_spec
from fluctlab.simulate import simulate_common_factor_interacting, simulate_conditional_reference, simulate_interacting, simulate_reference
from fluctlab.statistics import (
    FactorMismatchError,
    FluctuationSample,
    KPathFunctional,
    TupleCapError,
    center_functional,
    config_hash,
    dbl_distance,
    functional_from_expression,
    ks_normality,
    ks_two_sample,
    lln_statistic,
    m_phi_alpha,
    sample_covariance,
    terminal,
    v_alpha,
    xi_alpha,
    xi_multitype,
)

GRID = TimeGrid.from_step(1.0, 0.05)


@pytest.fixture(scope="module")
def ens():
    return simulate_interacting(example31_spec(), build_layout(2, counts=(6, 4)), GRID, 3)


@pytest.fixture(scope="module")
def ref():
    return simulate_reference(example31_spec(), 40, GRID, 8)


def test_expression_functional_matches_numpy(ens):
    phi = functional_from_expression("xT - integral(sin(x))")
    X = ens.paths(0)[1]
    direct = X[:, -1, 0] - GRID.dt * np.sin(X[:, :-1, 0]).sum(axis=1)
    assert np.allclose(phi(X, GRID), direct, atol=1e-13)
    psi = functional_from_expression("x0 + T*integral(t)")
    assert np.allclose(psi(X, GRID), X[:, 0, 0] + GRID.times[:-1].sum() * GRID.dt)


def test_bad_expressions_rejected():
    for text in ("integral(integral(x))", "y + 1", "xT +", "x"):
        with pytest.raises(ConfigError):
            functional_from_expression(text)


def test_xi_alpha_definition(ens):
    phi = terminal()
    X = ens.paths(1)[1]
    assert xi_alpha(ens, phi, 1) == pytest.approx(X[:, -1, 0].sum() / 2.0)


def test_separable_and_general_tuple_sums_agree(ens):
    p0, p1 = terminal(), functional_from_expression("cos(xT)")
    sep = KPathFunctional(2, factors=(p0, p1))
    gen = KPathFunctional(2, fn=lambda paths, g: p0(paths[0], g) * p1(paths[1], g))
    assert lln_statistic(ens, gen) == pytest.approx(lln_statistic(ens, sep), rel=1e-12)
    assert xi_multitype(ens, gen) == pytest.approx(xi_multitype(ens, sep), rel=1e-12)
    # brute force over all pairs
    a = p0(ens.paths(0)[1], GRID)
    b = p1(ens.paths(1)[1], GRID)
    assert xi_multitype(ens, gen) == pytest.approx(np.outer(a, b).sum() / np.sqrt(24), rel=1e-12)


def test_tuple_cap(ens):
    gen = KPathFunctional(2, fn=lambda p, g: p[0][..., -1, 0] * p[1][..., -1, 0])
    with pytest.raises(TupleCapError):
        lln_statistic(ens, gen, cap=10)


def test_per_type_centering_is_exact_on_reference(ref):
    phi = center_functional(functional_from_expression("xT*xT + sin(x0)"), ref, "per-type", alpha=1)
    assert abs(np.mean(phi(ref.flow(1), GRID))) < 1e-12


def test_multitype_centering_kills_single_coordinate_means(ref):
    f = KPathFunctional(2, fn=lambda p, g: np.sin(p[0][..., -1, 0] + p[1][..., -1, 0]) + p[0][..., -1, 0] ** 2)
    fc = center_functional(f, ref, "multitype", max_reference=15)
    X0, X1 = ref.flow(0)[:15], ref.flow(1)[:15]
    vals = fc([X0[:, None], X1[None, :]], GRID)
    assert np.allclose(vals.mean(axis=0), 0.0, atol=1e-12)
    assert np.allclose(vals.mean(axis=1), 0.0, atol=1e-12)
    sep = center_functional(KPathFunctional(2, factors=(terminal(), terminal())), ref, "multitype")
    assert abs(np.mean(sep.factors[0](ref.flow(0), GRID))) < 1e-12


@given(st.floats(-3, 3), st.floats(-3, 3))
def test_xi_is_linear(a, b):
    e = simulate_interacting(example31_spec(), build_layout(2, N=8), GRID, 1)
    f, g = terminal(), functional_from_expression("integral(cos(x))")
    lhs = xi_alpha(e, f * a + g * b, 0)
    rhs = a * xi_alpha(e, f, 0) + b * xi_alpha(e, g, 0)
    assert lhs == pytest.approx(rhs, abs=1e-9)


def test_dbl_point_masses():
    for x in (0.0, 0.3, 1.7, 5.0):
        assert dbl_distance([0.0], [x]) == pytest.approx(min(abs(x), 2.0), abs=1e-9)


def test_dbl_identical_and_bounds():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(50, 2))
    assert dbl_distance(a, a) == 0.0
    b = a + 10.0
    d = dbl_distance(a, b)
    assert 0.0 < d <= 2.0
    x = rng.normal(size=200)
    assert dbl_distance(x, x) == pytest.approx(0.0, abs=1e-12)
    # |f| <= 1 binds in the tails, so a shift by c moves the measure by less than c
    assert 0.05 < dbl_distance(x, x + 0.1) <= 0.1 + 1e-9
    u = np.linspace(-0.5, 0.5, 101)
    assert dbl_distance(u, u + 0.1) == pytest.approx(0.1, abs=1e-9)
    with pytest.raises(ValueError):
        dbl_distance(a, x)


def test_sample_covariance_single_row_has_infinite_se():
    cov, se = sample_covariance(np.ones((1, 3)))
    assert np.all(np.isinf(se))


def test_sample_covariance_matches_numpy():
    v = np.random.default_rng(1).normal(size=(300, 3))
    cov, se = sample_covariance(v)
    assert np.allclose(cov, np.cov(v.T))
    assert np.all(se > 0)


def test_ks_helpers():
    rng = np.random.default_rng(2)
    z = rng.normal(size=2000)
    assert ks_normality(z)[2]
    assert not ks_normality(rng.exponential(size=2000))[2]
    assert ks_two_sample(z, rng.normal(size=2000))[2]


def test_fluctuation_sample_round_trip(tmp_path):
    v = np.random.default_rng(3).normal(size=(5, 2))
    s = FluctuationSample(v, ["a", "b"], [11, 12, 13, 14, 15], {"N": 7})
    s.to_csv(tmp_path / "x.csv")
    t = FluctuationSample.from_csv(tmp_path / "x.csv")
    assert np.array_equal(t.values, s.values)
    assert t.labels == s.labels and t.seeds == s.seeds and t.meta == {"N": 7}
    with pytest.raises(ValueError):
        FluctuationSample(np.array([[np.nan]]), ["a"], [0])


def test_v_alpha_matches_and_mismatch():
    spec = common_factor_preset("factor_drift", K=1, gain=1.0)
    ens = simulate_common_factor_interacting(spec, build_layout(1, N=30), GRID, 1, 5)
    cref = simulate_conditional_reference(spec, 5, 100, GRID, 2)
    one = functional_from_expression("1 + 0*xT")
    assert v_alpha(ens, one, 0, cref) == pytest.approx(0.0, abs=1e-12)
    assert m_phi_alpha(one, cref, 0) == 1.0
    phi = terminal()
    expected = np.sqrt(30) * (ens.paths(0)[1][:, -1, 0].mean() - cref.flow(0)[:, -1, 0].mean())
    assert v_alpha(ens, phi, 0, cref) == pytest.approx(expected)
    other = simulate_conditional_reference(spec, 6, 100, GRID, 2)
    with pytest.raises(FactorMismatchError):
        v_alpha(ens, phi, 0, other)


def test_config_hash_is_order_independent():
    assert config_hash({"a": 1, "b": [1, 2]}) == config_hash({"b": [1, 2], "a": 1})
    assert config_hash({"a": 1}) != config_hash({"a": 2})
