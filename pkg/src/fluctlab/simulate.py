"""Euler–Maruyama engines for particle systems and their reference flows.

States are stored as ``X = X_0 + W + D`` with ``D`` the accumulated drift
integral, so a system without drift reproduces ``X_0 + W`` bitwise.
"""
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import rng
from .model import (
    CommonFactorModelSpec,
    ConfigError,
    LinearModelSpec,
    PopulationLayout,
    TimeGrid,
    build_layout,
)

__all__ = [
    "SimulationError",
    "PathEnsemble",
    "ReferenceEnsemble",
    "FundamentalSolution",
    "simulate_interacting",
    "simulate_interacting_batch",
    "simulate_reference",
    "sample_limit_paths",
    "simulate_common_factor_interacting",
    "simulate_common_factor_batch",
    "simulate_conditional_reference",
    "simulate_conditional_reference_batch",
    "sample_conditional_limit_paths",
    "fundamental_solution",
    "s_gamma_path",
]


class SimulationError(RuntimeError):
    """Non-finite state during a simulation."""


@dataclass(frozen=True)
class PathEnsemble:
    """Discretized driving paths ``W`` and state paths ``X`` of ``P`` particles.

    ``W`` and ``X`` have shape ``(P, n + 1, d)``.  Common-factor runs also
    carry the factor noise ``factor_W`` and state ``factor_Y`` of shape
    ``(n + 1, m)`` and the per-time moment path ``moments`` ``(n + 1, k)``.
    """

    grid: TimeGrid
    layout: PopulationLayout
    W: np.ndarray
    X: np.ndarray
    seed: int
    factor_W: Optional[np.ndarray] = None
    factor_Y: Optional[np.ndarray] = None
    factor_seed: Optional[int] = None
    moments: Optional[np.ndarray] = None

    def __post_init__(self):
        for arr in (self.W, self.X, self.factor_W, self.factor_Y, self.moments):
            if arr is not None:
                arr.flags.writeable = False
        if self.W.shape != self.X.shape or self.W.shape[:2] != (self.layout.N, self.grid.n + 1):
            raise ConfigError("path arrays do not match layout and grid")

    @property
    def d(self) -> int:
        return self.X.shape[-1]

    @property
    def has_factor(self) -> bool:
        return self.factor_W is not None

    def paths(self, alpha):
        """``(W, X)`` of the type-``alpha`` particles."""
        s = self.layout.slice(alpha)
        return self.W[s], self.X[s]


@dataclass(frozen=True)
class ReferenceEnsemble:
    """Large ensemble standing in for the limit laws and their flow.

    The flow of type ``alpha`` at grid time ``k`` is the empirical
    distribution of ``flow(alpha)[:, k]``.
    """

    ensemble: PathEnsemble
    picard_iters: int = 0

    @property
    def grid(self) -> TimeGrid:
        return self.ensemble.grid

    @property
    def K(self) -> int:
        return self.ensemble.layout.K

    @property
    def counts(self):
        return self.ensemble.layout.counts

    def flow(self, alpha) -> np.ndarray:
        return self.ensemble.paths(alpha)[1]

    def flows(self):
        return tuple(self.flow(a) for a in range(self.K))

    @property
    def moments(self):
        return self.ensemble.moments

    @property
    def factor_Y(self):
        return self.ensemble.factor_Y

    @property
    def factor_W(self):
        return self.ensemble.factor_W

    @property
    def factor_seed(self):
        return self.ensemble.factor_seed


# ---------------------------------------------------------------------------
# linear systems


class _LinearDrift:
    """Drift evaluator for blocks of particles.

    ``blocks`` lists ``(slice, type)``.  Without a ``flow`` the empirical
    measures come from the live blocks themselves; with a frozen flow they
    come from the stored per-type reference states.
    """

    def __init__(self, spec: LinearModelSpec, blocks, flow=None):
        self.spec = spec
        self.blocks = blocks
        self.flow = flow
        self.own = {alpha: s for s, alpha in blocks}
        self.frozen_means = {}
        if flow is not None:
            for _, a in blocks:
                for g in range(spec.K):
                    kern = spec.kernels[a][g]
                    if kern.separable and not kern.is_zero:
                        key = (a, g)
                        ys = np.swapaxes(flow[g], 0, 1)
                        self.frozen_means[key] = kern.term_means(ys)

    def __call__(self, k, t, X):
        out = np.zeros(X.shape)
        spec = self.spec
        for s, a in self.blocks:
            xa = X[..., s, :]
            acc = out[..., s, :]
            if not spec.drifts[a].is_zero:
                acc = acc + spec.drifts[a](t, xa)
            for g in range(spec.K):
                kern = spec.kernels[a][g]
                if kern.is_zero:
                    continue
                if self.flow is None:
                    acc = acc + kern.mean_field(xa, X[..., self.own[g], :])
                elif kern.separable:
                    acc = acc + kern.apply_means(xa, self.frozen_means[(a, g)][k])
                else:
                    acc = acc + kern.mean_field(xa, self.flow[g][:, k])
            out[..., s, :] = acc
        return out


def _zero_drift(spec, blocks):
    return all(spec.drifts[a].is_zero and all(k.is_zero for k in spec.kernels[a]) for _, a in blocks)


def _brownian_path(dW):
    W = np.zeros(dW.shape[:-2] + (dW.shape[-2] + 1, dW.shape[-1]))
    np.cumsum(dW, axis=-2, out=W[..., 1:, :])
    return W


def _euler_linear(spec, blocks, grid, X0, dW, flow=None):
    """Integrate ``(B, P)`` particles; returns ``(W, X)`` of shape ``(B, P, n+1, d)``."""
    n, dt = grid.n, grid.dt
    W = _brownian_path(dW)
    X = X0[..., None, :] + W
    if _zero_drift(spec, blocks):
        return W, X
    drift = _LinearDrift(spec, blocks, flow)
    times = grid.times
    D = np.zeros(X0.shape)
    for k in range(n):
        # X[..., k, :] already holds X0 + W_k + D_k
        D = D + drift(k, times[k], X[..., k, :]) * dt
        if not np.all(np.isfinite(D)):
            raise SimulationError(f"non-finite state at step {k + 1}")
        X[..., k + 1, :] += D
    return W, X


def _layout_blocks(layout):
    return [(layout.slice(a), a) for a in range(layout.K)]


def _initial_states(spec, layout, seed, key=()):
    gen = rng.stream(seed, rng.INITIAL, *key)
    return np.concatenate(
        [spec.initial[a].sample(gen, layout.counts[a], spec.d) for a in range(layout.K)], axis=0
    )


def _check_linear(spec, layout):
    if not isinstance(spec, LinearModelSpec):
        raise ConfigError("expected a LinearModelSpec")
    if layout.K != spec.K:
        raise ConfigError(f"layout has {layout.K} types but the model has {spec.K}")


def simulate_interacting_batch(spec: LinearModelSpec, layout: PopulationLayout, grid: TimeGrid, seeds):
    """Independent runs of the interacting system, one per seed.

    Returns ``(W, X)`` of shape ``(len(seeds), N, n + 1, d)``; row ``b`` is
    bitwise what :func:`simulate_interacting` gives for ``seeds[b]``.
    """
    _check_linear(spec, layout)
    seeds = [int(s) for s in seeds]
    X0 = np.stack([_initial_states(spec, layout, s) for s in seeds])
    dW = np.stack([rng.brownian_increments(s, layout.N, grid.n, spec.d, grid.dt) for s in seeds])
    return _euler_linear(spec, _layout_blocks(layout), grid, X0, dW)


def simulate_interacting(spec: LinearModelSpec, layout: PopulationLayout, grid: TimeGrid, seed: int) -> PathEnsemble:
    """Simulate the ``N``-particle interacting system.

    The drift of particle ``i`` of type ``a`` at step ``k`` is
    ``f_a(t_k, Z_i) + sum_g mean_{j in g} b_ag(Z_i, Z_j)`` evaluated at the
    left endpoint over the live ensemble.
    """
    W, X = simulate_interacting_batch(spec, layout, grid, [seed])
    return PathEnsemble(grid, layout, W[0], X[0], int(seed))


def simulate_reference(spec: LinearModelSpec, m_ref, grid: TimeGrid, seed: int, picard_iters: int = 0) -> ReferenceEnsemble:
    """Reference ensemble of ``m_ref`` particles per type.

    The first pass is one large self-interacting system.  Each Picard pass
    re-simulates the same noise and initial points against the frozen flow
    of the previous pass.
    """
    K = spec.K
    counts = (int(m_ref),) * K if np.ndim(m_ref) == 0 else tuple(int(c) for c in m_ref)
    if any(c < 2 for c in counts):
        raise ConfigError("reference ensembles need at least 2 particles per type")
    layout = build_layout(K, counts=counts)
    ens = simulate_interacting(spec, layout, grid, seed)
    W, X = ens.W, ens.X
    blocks = _layout_blocks(layout)
    for _ in range(int(picard_iters)):
        flow = tuple(X[layout.slice(a)] for a in range(K))
        X0 = X[None, :, 0, :]
        dW = np.diff(W, axis=1)[None]
        _, Xn = _euler_linear(spec, blocks, grid, X0, dW, flow)
        X = Xn[0]
    if picard_iters:
        ens = PathEnsemble(grid, layout, np.array(W), X, int(seed))
    return ReferenceEnsemble(ens, int(picard_iters))


def sample_limit_paths(spec: LinearModelSpec, reference: ReferenceEnsemble, alpha: int, count: int, seeds, key=()):
    """Fresh type-``alpha`` particles driven by the frozen reference flow.

    ``seeds`` may be one seed (returns ``(count, n+1, d)`` arrays) or a
    sequence (returns ``(B, count, n+1, d)``).  The paths are independent
    draws from the reference approximation of the limit law of type alpha.
    """
    single = np.ndim(seeds) == 0
    seeds = [int(seeds)] if single else [int(s) for s in seeds]
    grid = reference.grid
    key = (alpha,) + tuple(key)
    X0 = np.stack([spec.initial[alpha].sample(rng.stream(s, rng.INITIAL, *key), count, spec.d) for s in seeds])
    dW = np.stack([rng.brownian_increments(s, count, grid.n, spec.d, grid.dt, key) for s in seeds])
    W, X = _euler_linear(spec, [(slice(0, count), alpha)], grid, X0, dW, reference.flows())
    return (W[0], X[0]) if single else (W, X)


# ---------------------------------------------------------------------------
# common-factor systems


def _euler_common(spec: CommonFactorModelSpec, layout, grid, X0, dW, Y0, dWbar, frozen_moments=None, frozen_Y=None):
    """Joint integration of particles and factor.

    Shapes: ``X0`` ``(B, P, d)``, ``dW`` ``(B, P, n, d)``, ``Y0`` ``(B, m)``,
    ``dWbar`` ``(B, n, m)``.  With ``frozen_moments`` (``(B, n+1, k)``) the
    coefficients read the stored flow instead of the live one; with
    ``frozen_Y`` as well, the factor path is taken as given.
    """
    n, dt = grid.n, grid.dt
    slices = layout.slices
    W = _brownian_path(dW)
    X = X0[..., None, :] + W
    if frozen_Y is None:
        Wbar = _brownian_path(dWbar)
        Y = Y0[..., None, :] + np.zeros_like(Wbar)
        Mbar = np.zeros(Y0.shape)
        Dbar = np.zeros(Y0.shape)
    else:
        Wbar = None
        Y = frozen_Y
    D = np.zeros(X0.shape)
    kmom = spec.n_moments
    moments = np.zeros(X0.shape[:-2] + (n + 1, kmom))
    for k in range(n + 1):
        Xk = X[..., k, :]
        if frozen_moments is None:
            mom = spec.moment_values(Xk, slices)
        else:
            mom = frozen_moments[..., k, :]
        moments[..., k, :] = mom
        if k == n:
            break
        yk = Y[..., k, :]
        yb, mb = yk[..., None, :], mom[..., None, :]
        drift = np.empty(Xk.shape)
        for a, s in enumerate(slices):
            drift[..., s, :] = spec.drift[a](Xk[..., s, :], yb, mb)
        D = D + drift * dt
        if frozen_Y is None:
            Dbar = Dbar + spec.factor_drift(yk, mom) * dt
            Mbar = Mbar + np.einsum("...ij,...j->...i", spec.factor_diffusion(yk, mom), dWbar[..., k, :])
            Y[..., k + 1, :] = (Y0 + Mbar) + Dbar
        if not (np.all(np.isfinite(D)) and np.all(np.isfinite(Y[..., k + 1, :]))):
            raise SimulationError(f"non-finite state at step {k + 1}")
        X[..., k + 1, :] += D
    return W, X, Wbar, Y, moments


def _factor_noise(spec, grid, factor_seed):
    Y0 = spec.factor_initial.sample(rng.stream(factor_seed, rng.FACTOR_INITIAL), 1, spec.m)[0]
    dWbar = rng.stream(factor_seed, rng.FACTOR_NOISE).standard_normal((grid.n, spec.m)) * np.sqrt(grid.dt)
    return Y0, dWbar


def _check_common(spec, layout):
    if not isinstance(spec, CommonFactorModelSpec):
        raise ConfigError("expected a CommonFactorModelSpec")
    if layout.K != spec.K:
        raise ConfigError(f"layout has {layout.K} types but the model has {spec.K}")


def simulate_common_factor_batch(spec, layout, grid, seeds, factor_seeds):
    """Batched interacting common-factor runs.

    Returns ``(W, X, Wbar, Y, moments)`` with a leading replication axis.
    """
    _check_common(spec, layout)
    seeds = [int(s) for s in seeds]
    factor_seeds = [int(s) for s in factor_seeds]
    if len(seeds) != len(factor_seeds):
        raise ConfigError("need one factor seed per particle seed")
    X0 = np.stack([_initial_states(spec, layout, s) for s in seeds])
    dW = np.stack([rng.brownian_increments(s, layout.N, grid.n, spec.d, grid.dt) for s in seeds])
    noise = [_factor_noise(spec, grid, f) for f in factor_seeds]
    Y0 = np.stack([y for y, _ in noise])
    dWbar = np.stack([w for _, w in noise])
    return _euler_common(spec, layout, grid, X0, dW, Y0, dWbar)


def simulate_common_factor_interacting(spec: CommonFactorModelSpec, layout, grid, seed, factor_seed=None) -> PathEnsemble:
    """Interacting particles and factor under one Euler–Maruyama scheme.

    Particle noise comes from ``seed``; the factor initial point and noise
    come from ``factor_seed`` (derived from ``seed`` when omitted) so that a
    conditional reference can share them.
    """
    if factor_seed is None:
        factor_seed = rng.child_seed(seed, rng.FACTOR_NOISE)
    W, X, Wbar, Y, mom = simulate_common_factor_batch(spec, layout, grid, [seed], [factor_seed])
    return PathEnsemble(grid, layout, W[0], X[0], int(seed), Wbar[0], Y[0], int(factor_seed), mom[0])


def simulate_conditional_reference_batch(spec, factor_seeds, m_ref, grid, particle_seeds, picard_iters=0):
    """Batched conditional references; returns the raw arrays as
    :func:`simulate_common_factor_batch` (moments are the stored flow)."""
    K = spec.K
    counts = (int(m_ref),) * K if np.ndim(m_ref) == 0 else tuple(int(c) for c in m_ref)
    if any(c < 2 for c in counts):
        raise ConfigError("reference ensembles need at least 2 particles per type")
    layout = build_layout(K, counts=counts)
    W, X, Wbar, Y, mom = simulate_common_factor_batch(spec, layout, grid, particle_seeds, factor_seeds)
    if picard_iters:
        X0 = X[..., 0, :]
        dW = np.diff(W, axis=-2)
        Y0 = Y[..., 0, :]
        dWbar = np.diff(Wbar, axis=-2)
        for _ in range(int(picard_iters)):
            _, X, _, Y, _ = _euler_common(spec, layout, grid, X0, dW, Y0, dWbar, frozen_moments=mom)
            mom = np.stack(
                [spec.moment_values(X[..., k, :], layout.slices) for k in range(grid.n + 1)], axis=-2
            )
    return layout, (W, X, Wbar, Y, mom)


def simulate_conditional_reference(spec: CommonFactorModelSpec, factor_seed, m_ref, grid, particle_seed, picard_iters=0) -> ReferenceEnsemble:
    """Reference ensemble conditional on one factor draw.

    The factor initial point and noise come from ``factor_seed`` exactly as
    in :func:`simulate_common_factor_interacting`, so both share the factor
    driving noise.  Particles are conditionally independent given it.
    """
    layout, (W, X, Wbar, Y, mom) = simulate_conditional_reference_batch(
        spec, [factor_seed], m_ref, grid, [particle_seed], picard_iters
    )
    ens = PathEnsemble(grid, layout, W[0], X[0], int(particle_seed), Wbar[0], Y[0], int(factor_seed), mom[0])
    return ReferenceEnsemble(ens, int(picard_iters))


def sample_conditional_limit_paths(spec: CommonFactorModelSpec, cref: ReferenceEnsemble, alpha, count, seed, key=()):
    """Fresh type-``alpha`` particles given the stored factor path and flow."""
    grid = cref.grid
    key = (alpha,) + tuple(key)
    layout = build_layout(1, counts=(count,))
    X0 = spec.initial[alpha].sample(rng.stream(seed, rng.INITIAL, *key), count, spec.d)[None]
    dW = rng.brownian_increments(seed, count, grid.n, spec.d, grid.dt, key)[None]
    # one-type view of the model with the requested type's drift
    sub = _SingleType(spec, alpha)
    W, X, _, _, _ = _euler_common(
        sub, layout, grid, X0, dW, None, None,
        frozen_moments=np.asarray(cref.moments)[None], frozen_Y=np.asarray(cref.factor_Y)[None],
    )
    return W[0], X[0]


class _SingleType:
    """Adapter exposing one type's particle drift of a common-factor model."""

    def __init__(self, spec, alpha):
        self.drift = (spec.drift[alpha],)
        self.n_moments = spec.n_moments

    def moment_values(self, states, slices):  # pragma: no cover - frozen flow only
        raise RuntimeError("single-type adapter has no live moments")


# ---------------------------------------------------------------------------
# linearized factor dynamics


@dataclass(frozen=True)
class FundamentalSolution:
    """Matrix paths ``Phi`` and ``Psi`` of shape ``(n + 1, m, m)``."""

    Phi: np.ndarray
    Psi: np.ndarray
    grid: TimeGrid

    @property
    def inversion_error(self) -> np.ndarray:
        """``max`` entry of ``Psi_t Phi_t - I`` at each grid time."""
        m = self.Phi.shape[-1]
        return np.abs(self.Psi @ self.Phi - np.eye(m)).max(axis=(-2, -1))


def _factor_record(cref):
    if cref.factor_Y is None:
        raise ConfigError("reference has no factor path")
    Y = np.asarray(cref.factor_Y)
    mom = np.asarray(cref.moments)
    dWbar = np.diff(np.asarray(cref.factor_W), axis=0)
    return Y, mom, dWbar


def fundamental_solution(spec: CommonFactorModelSpec, cref: ReferenceEnsemble) -> FundamentalSolution:
    """Euler–Maruyama for the linearized factor flow and its inverse.

    ``Phi`` solves ``dPhi = A Phi dt + sum_c F_c Phi dWbar_c`` and ``Psi``
    its own equation ``dPsi = -Psi A dt - sum_c Psi F_c dWbar_c + sum_c Psi
    F_c^2 dt``, with ``A`` and ``F_c`` the factor-drift and factor-diffusion
    column derivatives along the stored conditional path.  ``Psi`` is never
    formed by inverting ``Phi``.
    """
    grid = cref.grid
    Y, mom, dWbar = _factor_record(cref)
    n, m, dt = grid.n, spec.m, grid.dt
    A = spec.factor_drift_dy(Y, mom)
    F = spec.factor_diffusion_dy(Y, mom)
    Phi = np.empty((n + 1, m, m))
    Psi = np.empty((n + 1, m, m))
    Phi[0] = Psi[0] = np.eye(m)
    for k in range(n):
        noise = np.einsum("cij,c->ij", F[k], dWbar[k])
        Phi[k + 1] = Phi[k] + A[k] @ Phi[k] * dt + noise @ Phi[k]
        ito = np.einsum("cij,cjl->il", F[k], F[k])
        Psi[k + 1] = Psi[k] - Psi[k] @ A[k] * dt - Psi[k] @ noise + Psi[k] @ ito * dt
    if not (np.all(np.isfinite(Phi)) and np.all(np.isfinite(Psi))):
        raise SimulationError("non-finite fundamental solution")
    return FundamentalSolution(Phi, Psi, grid)


def centered_factor_terms(spec: CommonFactorModelSpec, cref: ReferenceEnsemble, gamma, X):
    """Centered measure derivatives of the factor coefficients towards ``gamma``.

    ``X`` holds paths ``(..., n + 1, d)``.  Returns ``(bbar_c, sig_c)`` of
    shapes ``(..., n + 1, m)`` and ``(..., n + 1, m, c)``; the centering
    subtracts the stored flow moment at each time.
    """
    Y, mom, _ = _factor_record(cref)
    ls = spec.moments_of_type(gamma)
    lead = X.shape[:-1]
    bbar = np.zeros(lead + (spec.m,))
    sig = np.zeros(lead + (spec.m, spec.m))
    if not ls:
        return bbar, sig
    fc = np.stack([spec.moments[l][1](X) - mom[:, l] for l in ls], axis=-1)  # (..., n+1, |ls|)
    gb = spec.factor_drift_dmom(Y, mom)[..., ls]  # (n+1, m, |ls|)
    gs = spec.factor_diffusion_dmom(Y, mom)[..., ls]  # (n+1, m, c, |ls|)
    bbar = np.einsum("til,...tl->...ti", gb, fc)
    sig = np.einsum("ticl,...tl->...tic", gs, fc)
    return bbar, sig


def s_gamma_path(spec: CommonFactorModelSpec, fund: FundamentalSolution, X, cref: ReferenceEnsemble, gamma):
    """Response of the factor to one type-``gamma`` particle path.

    For paths ``X`` of shape ``(..., n + 1, d)`` returns ``(..., n + 1, m)``
    with ``s_t = Phi_t [sum_{s<t} Psi_s bbar_c ds + sum_c Psi_s sig_c
    dWbar_c - sum_c Psi_s F_c sig_c ds]`` (left-endpoint sums).
    """
    grid = cref.grid
    if fund.Phi.shape[0] != grid.n + 1 or X.shape[-2] != grid.n + 1:
        raise ConfigError("grid mismatch between paths, reference and fundamental solution")
    Y, mom, dWbar = _factor_record(cref)
    dt = grid.dt
    bbar_c, sig_c = centered_factor_terms(spec, cref, gamma, X)
    F = spec.factor_diffusion_dy(Y, mom)  # (n+1, c, m, m)
    Psi = fund.Psi
    # integrand at each left endpoint, shape (..., n, m)
    drift_part = bbar_c[..., :-1, :] * dt
    noise_part = np.einsum("...tic,tc->...ti", sig_c[..., :-1, :, :], dWbar)
    ito_part = np.einsum("tcij,...tjc->...ti", F[:-1], sig_c[..., :-1, :, :]) * dt
    inner = np.einsum("tij,...tj->...ti", Psi[:-1], drift_part + noise_part - ito_part)
    acc = np.zeros(X.shape[:-2] + (grid.n + 1, spec.m))
    np.cumsum(inner, axis=-2, out=acc[..., 1:, :])
    out = np.einsum("tij,...tj->...ti", fund.Phi, acc)
    if not np.all(np.isfinite(out)):
        raise SimulationError("non-finite s path")
    return out
