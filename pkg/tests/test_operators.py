import numpy as np
import pytest

from fluctlab import rng
from fluctlab.model import LinearModelSpec, TimeGrid, build_layout, common_factor_preset, example31_spec
from fluctlab.operators import (
    NonPSDError,
    SingularOperatorError,
    build_random_operator,
    build_sample_operator,
    fredholm_solve,
    girsanov_exponent,
    kernel_b_centered,
    kernel_h,
    limit_covariance,
    mixture_sampler,
    neumann_solve,
    psd_factor,
    sigma_conditional,
    trace_diagnostics,
    u_statistic_jackknife,
)
from fluctlab.simulate import sample_limit_paths, simulate_conditional_reference, simulate_reference
from fluctlab.statistics import center_functional, functional_from_expression

GRID = TimeGrid.from_step(1.0, 0.05)
W2 = (0.5, 0.5)


@pytest.fixture(scope="module")
def ref31():
    return simulate_reference(example31_spec(), 2000, GRID, 1)


@pytest.fixture(scope="module")
def op31(ref31):
    return build_sample_operator(example31_spec(), ref31, W2, 300, 7, keep_blocks=True)


def _spec(K, kernels):
    return LinearModelSpec.from_config({"K": K, "kernels": kernels})


def test_zero_and_constant_kernels_give_zero_operator():
    for kern in ("zero", {"preset": "constant", "value": 0.7}):
        spec = _spec(2, kern)
        ref = simulate_reference(spec, 50, GRID, 1)
        op = build_sample_operator(spec, ref, W2, 20, 3)
        assert np.allclose(op.H, 0.0, atol=1e-12)
        g = np.random.default_rng(0).normal(size=20)
        res = fredholm_solve(op, g)
        assert np.allclose(res.u, g) and res.residual <= 1e-10


def test_centered_kernel_averages_to_zero(ref31):
    spec = example31_spec()
    x = np.array([[0.3]])
    flow = ref31.flow(1)[:, 10]
    vals = kernel_b_centered(spec, ref31, 0, 1, 10, np.broadcast_to(x, flow.shape), flow)
    assert abs(vals.mean()) < 1e-12
    assert np.allclose(vals[:, 0], 0.5 * (np.sin(flow[:, 0]) - np.sin(flow[:, 0]).mean()))


def test_matrix_assembly_matches_direct_ito_sum(op31, ref31):
    spec = example31_spec()
    (Wa, Xa), (_, Xg) = op31.samples[0], op31.samples[1]
    for i, j in [(0, 1), (5, 9), (17, 3)]:
        direct = kernel_h(spec, ref31, W2, 0, 1, (Wa[i], Xa[i]), (None, Xg[j]))
        assert op31.blocks[(0, 1)][i, j] == pytest.approx(direct, abs=1e-12)
    assert np.allclose(op31.H, sum(op31.blocks.values()))


def test_kernel_second_moment_matches_closed_form(ref31):
    # X ~ W for the odd profile; E h^2 = l_a l_g sum_k dt (1 - exp(-2 t_k)) / 2
    spec = example31_spec()
    n = 3000
    Wa, Xa = sample_limit_paths(spec, ref31, 0, n, 11)
    _, Xg = sample_limit_paths(spec, ref31, 1, n, 12)
    h = kernel_h(spec, ref31, W2, 0, 1, (Wa, Xa), (None, Xg))
    t = GRID.times[:-1]
    target = 0.25 * np.sum(GRID.dt * (1 - np.exp(-2 * t)) / 2)
    h2 = h ** 2
    assert abs(h2.mean() - target) < 3.5 * h2.std(ddof=1) / np.sqrt(n) + 0.03 * target


def test_traces(op31):
    d = trace_diagnostics(op31)
    # Ito integrals against independent noise: zero trace of A and of A^2
    assert abs(d["traceA"]) < 4 * d["traceA_se"]
    assert abs(d["traceA2"]) < 4 * d["traceA2_se"]
    assert abs(d["traceAAstar"] - d["analytic_traceAAstar"]) < 4 * np.hypot(d["traceAAstar_se"], d["analytic_traceAAstar_se"])


def test_u_statistic_jackknife_constant_and_small():
    P = np.full((5, 5), 2.0)
    u, se = u_statistic_jackknife(P)
    assert u == 2.0 and se == pytest.approx(0.0, abs=1e-12)
    assert np.isinf(u_statistic_jackknife(np.ones((2, 2)))[1])


def test_fredholm_and_neumann(op31):
    g = np.sin(np.arange(op31.M))
    res = fredholm_solve(op31, g)
    assert res.residual <= 1e-10
    assert np.allclose(op31.system_matrix() @ res.u, g, atol=1e-9)
    assert np.max(np.abs(neumann_solve(op31, g, 40) - res.u)) < 1e-6


def test_singular_operator_detected():
    spec = example31_spec()
    ref = simulate_reference(spec, 50, GRID, 1)
    op = build_sample_operator(spec, ref, W2, 4, 3)
    op.H = np.eye(4) * 4.0  # I - H^T/M = 0
    with pytest.raises(SingularOperatorError):
        fredholm_solve(op, np.ones(4))


def test_limit_covariance_structure(op31, ref31):
    phi = functional_from_expression("xT - integral(sin(x))")
    p0 = center_functional(phi, ref31, alpha=0)
    p1 = center_functional(phi, ref31, alpha=1)
    rep = limit_covariance(op31, [(p0, 0), (p1, 1)])
    swapped = limit_covariance(op31, [(p1, 1), (p0, 0)])
    assert np.allclose(rep.matrix, rep.matrix.T)
    assert np.allclose(rep.matrix[::-1, ::-1], swapped.matrix)
    assert max(rep.residuals) <= 1e-10
    both = limit_covariance(op31, [(p0, 0), (p0 * 2.0, 0)])
    assert both.matrix[1, 1] == pytest.approx(4 * both.matrix[0, 0])
    assert both.matrix[0, 1] == pytest.approx(2 * both.matrix[0, 0])


def test_limit_covariance_without_interaction_is_gram():
    spec = _spec(2, "zero")
    ref = simulate_reference(spec, 50, GRID, 1)
    op = build_sample_operator(spec, ref, W2, 500, 3)
    phi = functional_from_expression("xT")
    rep = limit_covariance(op, [(phi, 0), (phi, 1)])
    G = np.stack([op.lifted(phi, 0), op.lifted(phi, 1)], axis=1)
    assert np.allclose(rep.matrix, G.T @ G / op.M)


def test_example31_covariance_against_frozen_oracle(frozen, ref31):
    o = frozen["example31_sin_half"]
    grid = TimeGrid.from_step(1.0, o["dt"])
    spec = example31_spec()
    ref = simulate_reference(spec, 4000, grid, 2)
    phi = functional_from_expression("xT - integral(sin(x))")
    fs = [(center_functional(phi, ref, alpha=a), a) for a in (0, 1)]
    mats = [limit_covariance(build_sample_operator(spec, ref, W2, 600, s), fs).matrix for s in range(3)]
    S = np.mean(mats, axis=0)
    target = np.array([[o["sigma11"], o["sigma12"]], [o["sigma12"], o["sigma22"]]])
    scale = np.sqrt(np.outer(np.diag(target), np.diag(target)))
    assert np.max(np.abs(S - target) / scale) < 0.12


def test_girsanov_exponent_vanishes_without_interaction():
    spec = _spec(2, "zero")
    ref = simulate_reference(spec, 20, GRID, 1)
    lay = build_layout(2, N=10)
    W = np.cumsum(np.random.default_rng(0).normal(size=(10, GRID.n + 1, 1)), axis=1)
    assert girsanov_exponent(spec, ref, lay, W, W) == (0.0, 0.0, 0.0)


def test_girsanov_exponent_batched_matches_single(ref31):
    spec = example31_spec()
    lay = build_layout(2, N=20)
    paths = [sample_limit_paths(spec, ref31, a, 10, s) for a, s in ((0, 1), (1, 2))]
    W = np.concatenate([p[0] for p in paths])
    X = np.concatenate([p[1] for p in paths])
    J1, J2, J = girsanov_exponent(spec, ref31, lay, W, X)
    Jb = girsanov_exponent(spec, ref31, lay, np.stack([W, W]), np.stack([X, X]))
    assert Jb[2][0] == pytest.approx(J) and J2 >= 0 and J == pytest.approx(J1 - J2 / 2)


def test_decoupled_random_operator_is_zero():
    spec = common_factor_preset("decoupled", K=1)
    cref = simulate_conditional_reference(spec, 1, 50, GRID, 2)
    cop = build_random_operator(spec, cref, (1.0,), 30, 3)
    assert np.allclose(cop.H, 0.0)
    rep = sigma_conditional(cop, [(functional_from_expression("xT"), 0)])
    x = cop.lifted(functional_from_expression("xT"), 0) - cref.flow(0)[:, -1, 0].mean()
    assert rep.matrix[0, 0] == pytest.approx(np.mean(x * x))


def test_mixture_single_draw_is_gaussian():
    spec = common_factor_preset("decoupled", K=1)
    mix = mixture_sampler(spec, [(functional_from_expression("xT"), 0)], 1, 200, 5, 200, GRID, (1.0,))
    assert mix.B == 1
    assert mix.marginal_kurtosis()[0] == pytest.approx(3.0)
    z = mix.sample(5000)
    assert z.shape == (5000, 1)
    assert abs(z.var() / mix.sigmas[0, 0, 0] - 1) < 0.1
    assert np.array_equal(mix.sample(10), mix.sample(10))


def test_psd_factor():
    S = np.array([[2.0, 1.0], [1.0, 1.0]])
    L, wmin = psd_factor(S)
    assert np.allclose(L @ L.T, S) and wmin > 0
    L, wmin = psd_factor(np.array([[1.0, 0.0], [0.0, -1e-10]]))
    assert wmin == 0.0
    with pytest.raises(NonPSDError):
        psd_factor(np.array([[1.0, 0.0], [0.0, -1.0]]))
    assert rng.child_seed(1, rng.MIXTURE) != rng.child_seed(2, rng.MIXTURE)
