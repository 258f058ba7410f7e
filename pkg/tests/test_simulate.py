import numpy as np
import pytest

from fluctlab import rng
from fluctlab.model import LinearModelSpec, TimeGrid, build_layout, common_factor_preset, example31_spec
from fluctlab.simulate import (
    fundamental_solution,
    sample_limit_paths,
    s_gamma_path,
    simulate_common_factor_interacting,
    simulate_conditional_reference,
    simulate_interacting,
    simulate_reference,
)

GRID = TimeGrid.from_step(1.0, 0.02)


def _linear(K=1, kernel="zero", initial=None):
    cfg = {"K": K, "kernels": kernel}
    if initial is not None:
        cfg["initial"] = initial
    return LinearModelSpec.from_config(cfg)


def test_zero_drift_is_exact():
    spec = _linear(2, initial={"law": "gaussian", "mean": 0.5, "std": 1.0})
    ens = simulate_interacting(spec, build_layout(2, counts=(4, 3)), GRID, 11)
    assert ens.X.shape == (7, GRID.n + 1, 1)
    assert np.all(ens.W[:, 0] == 0.0)
    assert np.array_equal(ens.X, ens.X[:, :1] + ens.W)


def test_constant_kernel_gives_constant_drift():
    c = 0.3
    spec = _linear(2, kernel=str(c))
    ens = simulate_interacting(spec, build_layout(2, counts=(5, 5)), GRID, 1)
    resid = ens.X - ens.X[:, :1] - ens.W
    assert np.allclose(resid[:, :, 0], 2 * c * GRID.times[None, :], atol=1e-12)


def test_same_seed_same_ensemble():
    spec = example31_spec()
    lay = build_layout(2, N=20)
    a = simulate_interacting(spec, lay, GRID, 5)
    b = simulate_interacting(spec, lay, GRID, 5)
    assert np.array_equal(a.X, b.X) and np.array_equal(a.W, b.W)
    c = simulate_interacting(spec, lay, GRID, 6)
    assert not np.array_equal(a.X, c.X)


def test_increments_have_variance_dt():
    ens = simulate_interacting(_linear(), build_layout(1, N=2000), GRID, 3)
    dW = np.diff(ens.W[..., 0], axis=1)
    se = GRID.dt * np.sqrt(2.0 / dW.size)
    assert abs(dW.var() - GRID.dt) < 4 * se
    assert abs(dW.mean()) < 4 * np.sqrt(GRID.dt / dW.size)


def test_uncoupled_reference_variance():
    ref = simulate_reference(_linear(initial={"law": "gaussian", "mean": 0.0, "std": 0.5}), 4000, GRID, 2)
    xT = ref.flow(0)[:, -1, 0]
    target = 0.25 + 1.0
    se = xT.var() * np.sqrt(2.0 / len(xT))
    assert abs(xT.var() - target) < 3 * se
    assert ref.counts == (4000,)


def test_reference_without_picard_is_interacting_run():
    spec = example31_spec()
    ref = simulate_reference(spec, 30, GRID, 9)
    ens = simulate_interacting(spec, build_layout(2, counts=(30, 30)), GRID, 9)
    assert np.array_equal(ref.ensemble.X, ens.X)


def test_example31_flow_mean_stays_zero():
    ref = simulate_reference(example31_spec(), 3000, GRID, 4)
    X = np.concatenate(ref.flows())[..., 0]
    mean, se = X.mean(axis=0), X.std(axis=0, ddof=1) / np.sqrt(X.shape[0])
    assert np.all(np.abs(mean[1:]) <= 3.5 * se[1:])


def test_weak_error_probe_fourth_moment():
    # b = 0, X_0 = 0: E X_T^4 = 3 T^2
    ens = simulate_interacting(_linear(), build_layout(1, N=20000), GRID, 8)
    x4 = ens.X[:, -1, 0] ** 4
    assert abs(x4.mean() - 3.0) < 3 * x4.std(ddof=1) / np.sqrt(len(x4))


def test_limit_paths_batched_matches_single():
    spec = example31_spec()
    ref = simulate_reference(spec, 50, GRID, 1)
    W1, X1 = sample_limit_paths(spec, ref, 0, 7, 123)
    Wb, Xb = sample_limit_paths(spec, ref, 0, 7, [123, 124])
    assert np.array_equal(X1, Xb[0])
    assert not np.array_equal(Xb[0], Xb[1])


# common factor


def test_decoupled_factor_is_brownian():
    spec = common_factor_preset("decoupled", K=1, sigma=1.0)
    ens = simulate_common_factor_interacting(spec, build_layout(1, N=10), GRID, 3, 4)
    assert np.array_equal(ens.X, ens.X[:, :1] + ens.W)
    assert np.array_equal(ens.factor_Y, ens.factor_Y[:1] + ens.factor_W)
    again = simulate_common_factor_interacting(spec, build_layout(1, N=10), GRID, 3, 4)
    assert np.array_equal(ens.factor_Y, again.factor_Y) and np.array_equal(ens.X, again.X)


def _ode_error(a, dt):
    spec = common_factor_preset("linear_factor", K=1, a=a, y0=1.0)
    grid = TimeGrid.from_step(1.0, dt)
    ens = simulate_common_factor_interacting(spec, build_layout(1, N=2), grid, 0, 0)
    return np.max(np.abs(ens.factor_Y[:, 0] - np.exp(a * grid.times)))


def test_deterministic_factor_converges_first_order():
    e1, e2 = _ode_error(-1.0, 0.02), _ode_error(-1.0, 0.01)
    assert e1 < 0.02
    assert 1.7 < e1 / e2 < 2.3


def test_conditional_reference_shares_factor_and_repeats():
    spec = common_factor_preset("factor_drift", K=1, gain=1.0)
    a = simulate_conditional_reference(spec, 17, 50, GRID, 1)
    b = simulate_conditional_reference(spec, 17, 50, GRID, 1)
    c = simulate_conditional_reference(spec, 17, 50, GRID, 2)
    ens = simulate_common_factor_interacting(spec, build_layout(1, N=5), GRID, 99, 17)
    assert np.array_equal(a.ensemble.X, b.ensemble.X)
    assert np.array_equal(a.factor_W, c.factor_W)
    assert np.array_equal(a.factor_W, ens.factor_W)


def test_factor_drift_conditional_law():
    # b = g(Y): given Y, X_T ~ N(int g(Y) ds, T)
    gain = 1.5
    spec = common_factor_preset("factor_drift", K=1, gain=gain)
    cref = simulate_conditional_reference(spec, 3, 20000, GRID, 5)
    Y = cref.factor_Y[:, 0]
    mean_target = GRID.dt * np.sum(gain * np.tanh(Y[:-1]))
    xT = cref.flow(0)[:, -1, 0]
    assert abs(xT.mean() - mean_target) < 3 * xT.std() / np.sqrt(len(xT))
    assert abs(xT.var() - 1.0) < 3 * xT.var() * np.sqrt(2 / len(xT))


def test_conditional_independence_of_particles():
    spec = common_factor_preset("factor_drift", K=1, gain=1.0)
    a = simulate_conditional_reference(spec, 8, 4000, GRID, 1).flow(0)[:, -1, 0]
    b = simulate_conditional_reference(spec, 8, 4000, GRID, 2).flow(0)[:, -1, 0]
    r = np.corrcoef(a, b)[0, 1]
    assert abs(r) < 3 / np.sqrt(len(a))


def test_fundamental_solution_trivial_and_scalar_ode():
    spec = common_factor_preset("factor_drift", K=1, rate=0.0)
    cref = simulate_conditional_reference(spec, 1, 10, GRID, 1)
    fund = fundamental_solution(spec, cref)
    assert np.array_equal(fund.Phi, np.ones_like(fund.Phi))
    assert np.array_equal(fund.Psi, np.ones_like(fund.Psi))
    lin = common_factor_preset("linear_factor", K=1, a=-0.7)
    cref = simulate_conditional_reference(lin, 1, 10, GRID, 1)
    fund = fundamental_solution(lin, cref)
    assert np.max(np.abs(fund.Phi[:, 0, 0] - np.exp(-0.7 * GRID.times))) < GRID.dt


def test_inverse_flow_error_shrinks_with_grid():
    spec = common_factor_preset("meanfield", K=1, rate=1.0, slope=0.5, gain=0.5)
    errs = []
    for dt in (0.02, 0.005):
        grid = TimeGrid.from_step(1.0, dt)
        cref = simulate_conditional_reference(spec, 2, 10, grid, 1)
        errs.append(float(fundamental_solution(spec, cref).inversion_error.max()))
    assert errs[1] < errs[0]


def test_s_path_vanishes_without_measure_dependence():
    spec = common_factor_preset("factor_drift", K=1, gain=1.0, rate=0.5)
    cref = simulate_conditional_reference(spec, 1, 20, GRID, 1)
    s = s_gamma_path(spec, fundamental_solution(spec, cref), cref.flow(0), cref, 0)
    assert np.array_equal(s, np.zeros_like(s))


def test_s_path_matches_quadrature_for_linear_feedback():
    # factor drift feedback * <sin, nu>, no rate, sigma constant: Phi = 1 and
    # s_t = feedback * sum_{s<t} (sin X_s - mean_flow_s) ds
    fb = 0.8
    spec = common_factor_preset("meanfield", K=1, gain=0.0, feedback=fb, rate=0.0)
    cref = simulate_conditional_reference(spec, 4, 200, GRID, 1)
    fund = fundamental_solution(spec, cref)
    X = cref.flow(0)
    s = s_gamma_path(spec, fund, X, cref, 0)[..., 0]
    centred = np.sin(X[:, :-1, 0]) - cref.moments[:-1, 0]
    direct = np.concatenate([np.zeros((X.shape[0], 1)), np.cumsum(fb * centred * GRID.dt, axis=1)], axis=1)
    assert np.allclose(s, direct, atol=1e-12)
    # centering is exact on the flow's own sample
    assert np.allclose(s.mean(axis=0), 0.0, atol=1e-12)


def test_bad_layout_rejected():
    from fluctlab.model import ConfigError

    with pytest.raises(ConfigError):
        simulate_interacting(example31_spec(), build_layout(1, N=5), GRID, 0)
    assert rng.child_seed(0, 1) >= 0
