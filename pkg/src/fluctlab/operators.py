"""Monte Carlo realizations of the path-space kernels and integral operators.

Conventions: ``H[i, j]`` is the lifted kernel at ``(omega_i, omega_j)``;
the operator integrates its first argument, so
``(A f)(omega_j) = (1/M) sum_i H[i, j] f(omega_i)`` and the discrete
system is ``(I - H^T / M) u = g``.
"""
import json
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import linalg

from . import rng
from .model import ConfigError
from .simulate import (
    fundamental_solution,
    s_gamma_path,
    sample_conditional_limit_paths,
    sample_limit_paths,
    simulate_conditional_reference,
)
from .statistics import m_phi_alpha

__all__ = [
    "SingularOperatorError",
    "NonPSDError",
    "SampleOperator",
    "CovarianceReport",
    "FredholmResult",
    "kernel_b_centered",
    "kernel_h",
    "build_sample_operator",
    "trace_diagnostics",
    "fredholm_solve",
    "neumann_solve",
    "limit_covariance",
    "girsanov_exponent",
    "kernel_f_common",
    "build_random_operator",
    "sigma_conditional",
    "mixture_sampler",
    "MixtureSampler",
    "u_statistic_jackknife",
]


class SingularOperatorError(np.linalg.LinAlgError):
    """``I - A_M`` is singular to working precision."""

    def __init__(self, message, condition):
        super().__init__(message)
        self.condition = condition


class NonPSDError(ValueError):
    """A conditional covariance has a clearly negative eigenvalue."""

    def __init__(self, message, eigenvalues):
        super().__init__(message)
        self.eigenvalues = eigenvalues


@dataclass
class SampleOperator:
    """Kernel matrix on ``M`` sample tuples with equal weights ``1/M``.

    ``samples[a]`` holds ``(W, X)`` of shape ``(M, n + 1, d)`` for the
    type-``a`` coordinate of every tuple.  Conditional operators also carry
    the conditional reference, the fundamental solution and the ``s`` paths.
    """

    H: np.ndarray
    samples: tuple
    weights: tuple
    seed: int
    grid: object
    spec: object = None
    reference: object = None
    blocks: Optional[dict] = None
    fund: object = None
    s_paths: Optional[tuple] = None
    _lu: object = field(default=None, repr=False)

    @property
    def M(self) -> int:
        return self.H.shape[0]

    @property
    def K(self) -> int:
        return len(self.samples)

    @property
    def conditional(self) -> bool:
        return self.fund is not None

    def apply(self, f):
        """``(A f)`` at the sample points."""
        return self.H.T @ np.asarray(f, dtype=float) / self.M

    def system_matrix(self):
        return np.eye(self.M) - self.H.T / self.M

    def lifted(self, phi, alpha):
        """Values of ``phi`` read off the type-``alpha`` coordinate of each tuple."""
        return np.asarray(phi(self.samples[alpha][1], self.grid), dtype=float)


# ---------------------------------------------------------------------------
# kernels of the system without common factor


def _flow_at(reference, gamma, t_index):
    n = reference.grid.n
    if not (0 <= int(t_index) <= n) or int(t_index) != t_index:
        raise ConfigError(f"time index {t_index} is off the grid 0..{n}")
    return reference.flow(gamma)[:, int(t_index)]


def kernel_b_centered(spec, reference, alpha, gamma, t_index, x, y):
    """``b_ag(x, y)`` minus its average over the type-``gamma`` flow at ``t``.

    ``x`` and ``y`` broadcast over leading axes with trailing dimension ``d``.
    """
    kern = spec.kernels[alpha][gamma]
    ys = _flow_at(reference, gamma, t_index)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if kern.is_zero:
        return np.zeros(np.broadcast_shapes(x.shape, y.shape))
    lead = x.shape[:-1]
    centre = kern.mean_field(x.reshape((-1, 1, spec.d)), ys).reshape(lead + (spec.d,))
    return kern(x, y) - centre


def kernel_h(spec, reference, weights, alpha, gamma, omega, omega_p):
    """Itô sum ``sqrt(l_a/l_g) sum_k b_c(X_k(w), X_k(w')) . dW_k(w)``.

    ``omega`` and ``omega_p`` are ``(W, X)`` pairs of shape ``(n+1, d)``
    (extra leading axes broadcast).  This is the direct, step-by-step form
    used as a cross-check of the matrix assembly.
    """
    W, X = (np.asarray(v, dtype=float) for v in omega)
    _, Xp = (np.asarray(v, dtype=float) for v in omega_p)
    n = reference.grid.n
    if X.shape[-2] != n + 1 or Xp.shape[-2] != n + 1:
        raise ConfigError("paths are not on the reference grid")
    dW = np.diff(W, axis=-2)
    total = 0.0
    for k in range(n):
        bc = kernel_b_centered(spec, reference, alpha, gamma, k, X[..., k, :], Xp[..., k, :])
        total = total + np.sum(bc * dW[..., k, :], axis=-1)
    return np.sqrt(weights[alpha] / weights[gamma]) * total


def _separable_factors(spec, reference, alpha, gamma, Wa, Xa, Xg):
    """Left and right factors ``P`` ``(Ma, r)`` and ``Q`` ``(Mg, r)`` with block ``P Q^T``."""
    kern = spec.kernels[alpha][gamma]
    dW = np.diff(Wa, axis=-2)
    flow = reference.flow(gamma)
    means = kern.term_means(np.swapaxes(flow, 0, 1))[:-1]  # (n, terms)
    P, Q = [], []
    for k, (a, c) in enumerate(kern.terms):
        P.append(np.sum(a(Xa[:, :-1]) * dW, axis=-1))
        Q.append(c(Xg[:, :-1]) - means[:, k])
    return np.concatenate(P, axis=1), np.concatenate(Q, axis=1)


def _h_block(spec, reference, weights, alpha, gamma, Wa, Xa, Xg):
    kern = spec.kernels[alpha][gamma]
    scale = np.sqrt(weights[alpha] / weights[gamma])
    Ma, Mg = Xa.shape[0], Xg.shape[0]
    if kern.is_zero:
        return np.zeros((Ma, Mg))
    if kern.separable:
        P, Q = _separable_factors(spec, reference, alpha, gamma, Wa, Xa, Xg)
        return scale * (P @ Q.T)
    dW = np.diff(Wa, axis=-2)
    flow = reference.flow(gamma)
    out = np.zeros((Ma, Mg))
    for k in range(reference.grid.n):
        centre = kern.mean_field(Xa[:, k], flow[:, k])  # (Ma, d)
        vals = kern(Xa[:, None, k], Xg[None, :, k]) - centre[:, None, :]
        out += np.einsum("ijd,id->ij", vals, dW[:, k])
    return scale * out


def build_sample_operator(spec, reference, weights, M, seed, keep_blocks=False) -> SampleOperator:
    """Draw ``M`` independent tuples (one fresh path per type) and fill ``H``.

    Each coordinate is an independent limit-law particle simulated against
    the frozen reference flow, so the tuples are draws from the product of
    the type laws.
    """
    M = int(M)
    if M < 2:
        raise ConfigError("operator needs at least 2 samples")
    weights = tuple(float(w) for w in weights)
    if len(weights) != spec.K:
        raise ConfigError("one weight per type required")
    samples = tuple(sample_limit_paths(spec, reference, a, M, seed, key=(rng.OPERATOR,)) for a in range(spec.K))
    H = np.zeros((M, M))
    blocks = {} if keep_blocks else None
    for a in range(spec.K):
        for g in range(spec.K):
            blk = _h_block(spec, reference, weights, a, g, samples[a][0], samples[a][1], samples[g][1])
            H += blk
            if keep_blocks:
                blocks[(a, g)] = blk
    return SampleOperator(H, samples, weights, int(seed), reference.grid, spec, reference, blocks)


# ---------------------------------------------------------------------------
# traces


def u_statistic_jackknife(P):
    """Off-diagonal mean of a square matrix with its delete-one jackknife SE.

    ``P[i, j]`` is treated as the kernel value of the ordered pair ``(i, j)``.
    """
    P = np.asarray(P, dtype=float)
    M = P.shape[0]
    if M < 3:
        return float(np.nan), float(np.inf)
    diag = np.diag(P)
    S = P.sum() - diag.sum()
    U = S / (M * (M - 1))
    touch = P.sum(axis=0) + P.sum(axis=1) - 2.0 * diag
    loo = (S - touch) / ((M - 1) * (M - 2))
    se = np.sqrt((M - 1) / M * np.sum((loo - loo.mean()) ** 2))
    return float(U), float(se)


def _centered_pair_norms(op, Xa, Xg, alpha, gamma):
    """``sum_k |b_c(Xa_i,k, Xg_i,k)|^2 dt`` for paired rows ``i``."""
    spec = op.spec
    reference = op.reference
    kern = spec.kernels[alpha][gamma]
    n, dt = op.grid.n, op.grid.dt
    if kern.is_zero:
        return np.zeros(Xa.shape[0])
    if kern.separable:
        means = kern.term_means(np.swapaxes(reference.flow(gamma), 0, 1))[:-1]
        val = np.zeros(Xa[:, :-1].shape)
        for k, (a, c) in enumerate(kern.terms):
            val = val + a(Xa[:, :-1]) * (c(Xg[:, :-1]) - means[:, k])[..., None]
    else:
        val = np.stack(
            [kernel_b_centered(spec, reference, alpha, gamma, k, Xa[:, k], Xg[:, k]) for k in range(n)], axis=1
        )
    return np.sum(val ** 2, axis=(-2, -1)) * dt


def trace_diagnostics(op: SampleOperator, n_fresh=None, seed=None) -> dict:
    """Trace statistics of ``A`` with standard errors.

    ``traceA`` is ``(1/M) sum H_ii``.  ``traceA2`` and ``traceAAstar`` are
    off-diagonal U-statistics of ``H_ij H_ji`` and ``H_ij^2`` (unbiased for
    ``Tr A^2`` and ``Tr A A*``) with jackknife SEs; the all-pairs forms that
    include the diagonal are reported as ``*_v``.  For operators without a
    common factor, ``analytic_traceAAstar`` evaluates
    ``sum_ag (l_a/l_g) int E|b_ag,t(X, X')|^2 dt`` on fresh independent
    pairs of limit-law paths.
    """
    H = op.H
    M = op.M
    diag = np.diag(H)
    out = {
        "M": M,
        "traceA": float(diag.mean()),
        "traceA_se": float(diag.std(ddof=1) / np.sqrt(M)),
    }
    P = H * H.T
    Q = H * H
    out["traceA2"], out["traceA2_se"] = u_statistic_jackknife(P)
    out["traceAAstar"], out["traceAAstar_se"] = u_statistic_jackknife(Q)
    out["traceA2_v"] = float(P.sum() / M ** 2)
    out["traceAAstar_v"] = float(Q.sum() / M ** 2)
    if op.conditional or op.spec is None:
        return out
    spec = op.spec
    n_fresh = M if n_fresh is None else int(n_fresh)
    seed = rng.child_seed(op.seed, rng.OPERATOR, 1) if seed is None else int(seed)
    first = [sample_limit_paths(spec, op.reference, a, n_fresh, seed, key=(rng.ORACLE, 0))[1] for a in range(spec.K)]
    second = [sample_limit_paths(spec, op.reference, a, n_fresh, seed, key=(rng.ORACLE, 1))[1] for a in range(spec.K)]
    total = np.zeros(n_fresh)
    for a in range(spec.K):
        for g in range(spec.K):
            total += op.weights[a] / op.weights[g] * _centered_pair_norms(op, first[a], second[g], a, g)
    out["analytic_traceAAstar"] = float(total.mean())
    out["analytic_traceAAstar_se"] = float(total.std(ddof=1) / np.sqrt(n_fresh))
    out["analytic_n"] = n_fresh
    out["analytic_seed"] = seed
    return out


# ---------------------------------------------------------------------------
# Fredholm solves and covariances


@dataclass
class FredholmResult:
    u: np.ndarray
    residual: float
    condition: float


def _factorize(op):
    if op._lu is None:
        A = op.system_matrix()
        with warnings.catch_warnings():
            # singularity is reported through the condition estimate below
            warnings.simplefilter("ignore", linalg.LinAlgWarning)
            lu, piv = linalg.lu_factor(A, check_finite=True)
        anorm = np.linalg.norm(A, 1)
        rcond, info = linalg.lapack.dgecon(lu, anorm, norm="1")
        cond = np.inf if rcond == 0 else 1.0 / rcond
        op._lu = (A, lu, piv, float(cond))
    return op._lu


def fredholm_solve(op: SampleOperator, g, max_condition=1e12) -> FredholmResult:
    """Solve ``u_j - (1/M) sum_i H_ij u_i = g_j`` by dense LU.

    ``g`` may be a vector or an ``(M, r)`` block of right-hand sides.  The
    relative residual and the 1-norm condition estimate are returned.
    """
    A, lu, piv, cond = _factorize(op)
    if not np.isfinite(cond) or cond > max_condition:
        raise SingularOperatorError(f"I - A_M is singular to tolerance (condition estimate {cond:.3g})", cond)
    g = np.asarray(g, dtype=float)
    u = linalg.lu_solve((lu, piv), g)
    gnorm = np.linalg.norm(g)
    res = float(np.linalg.norm(A @ u - g) / gnorm) if gnorm > 0 else float(np.linalg.norm(A @ u))
    return FredholmResult(u, res, cond)


def neumann_solve(op: SampleOperator, g, terms=10):
    """Partial Neumann sum ``sum_{k < terms} A^k g``."""
    g = np.asarray(g, dtype=float)
    term = g.copy()
    out = g.copy()
    for _ in range(terms - 1):
        term = op.apply(term)
        out += term
    return out


@dataclass
class CovarianceReport:
    """Limit covariance matrix of a list of functionals."""

    labels: list
    matrix: np.ndarray
    se: np.ndarray
    M: int
    residuals: list
    condition: float
    seed: int

    def to_dict(self):
        return {
            "labels": list(self.labels),
            "matrix": np.asarray(self.matrix).tolist(),
            "se": np.asarray(self.se).tolist(),
            "M": int(self.M),
            "residuals": [float(r) for r in self.residuals],
            "condition": float(self.condition),
            "seed": int(self.seed),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_dict(cls, d):
        return cls(d["labels"], np.array(d["matrix"]), np.array(d["se"]), d["M"], d["residuals"], d["condition"], d["seed"])


def _covariance_from_values(op, G, labels):
    res = fredholm_solve(op, G)
    U = res.u
    M = op.M
    prod = U[:, :, None] * U[:, None, :]
    cov = prod.mean(axis=0)
    cov = 0.5 * (cov + cov.T)
    se = prod.std(axis=0, ddof=1) / np.sqrt(M)
    A = op.system_matrix()
    residuals = [
        float(np.linalg.norm(A @ U[:, k] - G[:, k]) / max(np.linalg.norm(G[:, k]), 1e-300)) for k in range(G.shape[1])
    ]
    return CovarianceReport(list(labels), cov, se, M, residuals, res.condition, op.seed)


def limit_covariance(op: SampleOperator, functionals, labels=None) -> CovarianceReport:
    """``<(I - A)^{-1} phi_a, (I - A)^{-1} phi_b>`` for lifted functionals.

    ``functionals`` is a list of ``(phi, type)`` pairs; each ``phi`` should
    already be centered for its type.
    """
    G = np.stack([op.lifted(phi, a) for phi, a in functionals], axis=1)
    if labels is None:
        labels = [f"{getattr(phi, 'name', 'phi')}@{a}" for phi, a in functionals]
    return _covariance_from_values(op, G, labels)


# ---------------------------------------------------------------------------
# Girsanov exponent


def girsanov_exponent(spec, reference, layout, W, X):
    """Exponent of the density of the interacting law w.r.t. independent particles.

    ``W`` and ``X`` hold ``N`` independent limit-law paths laid out by
    ``layout`` (optionally with a leading replication axis).  Returns
    ``(J1, J2, J)`` where ``J1`` is the Itô sum of the centered mean-field
    drift (all pairs, including ``j = i``) against each particle's own
    noise, ``J2`` the time integral of its squared norm and
    ``J = J1 - J2 / 2``.
    """
    W = np.asarray(W, dtype=float)
    X = np.asarray(X, dtype=float)
    single = W.ndim == 3
    if single:
        W, X = W[None], X[None]
    grid = reference.grid
    n, dt = grid.n, grid.dt
    B = W.shape[0]
    J1 = np.zeros(B)
    J2 = np.zeros(B)
    for a in range(spec.K):
        sa = layout.slice(a)
        Xa = X[:, sa, :-1]
        dWa = np.diff(W[:, sa], axis=-2)
        drift = np.zeros(Xa.shape)
        for g in range(spec.K):
            kern = spec.kernels[a][g]
            if kern.is_zero:
                continue
            Xg = X[:, layout.slice(g), :-1]
            flow = reference.flow(g)
            if kern.separable:
                flow_means = kern.term_means(np.swapaxes(flow, 0, 1))[:-1]  # (n, terms)
                live = kern.term_means(np.swapaxes(Xg, 1, 2))  # (B, n, terms)
                diff = live - flow_means
                for k, (af, _) in enumerate(kern.terms):
                    drift += af(Xa) * diff[:, None, :, k, None]
            else:
                for k in range(n):
                    drift[:, :, k] += kern.mean_field(Xa[:, :, k], Xg[:, :, k]) - kern.mean_field(Xa[:, :, k], flow[:, k])
        J1 += np.sum(drift * dWa, axis=(1, 2, 3))
        J2 += np.sum(drift ** 2, axis=(1, 2, 3)) * dt
    J = J1 - 0.5 * J2
    if single:
        return float(J1[0]), float(J2[0]), float(J[0])
    return J1, J2, J


# ---------------------------------------------------------------------------
# common-factor operators


def _flow_record(cref):
    return np.asarray(cref.factor_Y), np.asarray(cref.moments)


def kernel_f_common(spec, cref, fund, alpha, gamma, t_index, x, X_prime):
    """Kernel ``b^c_ag,(2)(x, R_t, X'_t) + b_a,(1)(x, R_t) s_g,t(X')``.

    ``X_prime`` is a full type-``gamma`` path ``(..., n + 1, d)``; its
    ``s`` path is recomputed here, so this is the slow reference form.
    """
    Y, mom = _flow_record(cref)
    t = int(t_index)
    if not 0 <= t <= cref.grid.n:
        raise ConfigError(f"time index {t_index} is off the grid")
    if fund is None:
        raise ConfigError("kernel needs the fundamental solution")
    x = np.asarray(x, dtype=float)
    Xp = np.asarray(X_prime, dtype=float)
    s = s_gamma_path(spec, fund, Xp, cref, gamma)[..., t, :]
    ls = spec.moments_of_type(gamma)
    out = np.einsum("...ij,...j->...i", spec.drift_dy[alpha](x, Y[t], mom[t]), s)
    if ls:
        G = spec.drift_dmom[alpha](x, Y[t], mom[t])[..., ls]
        fc = np.stack([spec.moments[l][1](Xp[..., t, :]) - mom[t, l] for l in ls], axis=-1)
        out = out + np.einsum("...il,...l->...i", G, fc)
    return out


def _conditional_block(spec, cref, weights, alpha, gamma, Wa, Xa, Xg, s_g):
    Y, mom = _flow_record(cref)
    scale = np.sqrt(weights[alpha] / weights[gamma])
    dW = np.diff(Wa, axis=-2)
    xa = Xa[:, :-1]
    P, Q = [], []
    ls = spec.moments_of_type(gamma)
    if ls:
        G = spec.drift_dmom[alpha](xa, Y[:-1], mom[:-1])  # (M, n, d, k)
        for l in ls:
            P.append(np.einsum("itd,itd->it", G[..., l], dW))
            Q.append(spec.moments[l][1](Xg[:, :-1]) - mom[:-1, l])
    Dy = spec.drift_dy[alpha](xa, Y[:-1], mom[:-1])  # (M, n, d, m)
    for c in range(spec.m):
        P.append(np.einsum("itd,itd->it", Dy[..., c], dW))
        Q.append(s_g[:, :-1, c])
    P = np.concatenate(P, axis=1)
    Q = np.concatenate(Q, axis=1)
    return scale * (P @ Q.T)


def build_random_operator(spec, cref, weights, M, seed, fund=None, keep_blocks=False) -> SampleOperator:
    """Operator for one factor draw, on ``M`` conditionally independent tuples."""
    M = int(M)
    if M < 2:
        raise ConfigError("operator needs at least 2 samples")
    weights = tuple(float(w) for w in weights)
    if fund is None:
        fund = fundamental_solution(spec, cref)
    samples = tuple(
        sample_conditional_limit_paths(spec, cref, a, M, seed, key=(rng.OPERATOR,)) for a in range(spec.K)
    )
    s_paths = tuple(s_gamma_path(spec, fund, samples[g][1], cref, g) for g in range(spec.K))
    H = np.zeros((M, M))
    blocks = {} if keep_blocks else None
    for a in range(spec.K):
        for g in range(spec.K):
            blk = _conditional_block(spec, cref, weights, a, g, samples[a][0], samples[a][1], samples[g][1], s_paths[g])
            H += blk
            if keep_blocks:
                blocks[(a, g)] = blk
    return SampleOperator(H, samples, weights, int(seed), cref.grid, spec, cref, blocks, fund, s_paths)


def sigma_conditional(cop: SampleOperator, functionals, labels=None) -> CovarianceReport:
    """Conditional covariance for one factor draw.

    Each ``phi`` of type ``a`` is centered by its conditional mean over the
    same conditional reference before the Fredholm solve.
    """
    cols = []
    for phi, a in functionals:
        cols.append(cop.lifted(phi, a) - m_phi_alpha(phi, cop.reference, a))
    G = np.stack(cols, axis=1)
    if labels is None:
        labels = [f"{getattr(phi, 'name', 'phi')}@{a}" for phi, a in functionals]
    return _covariance_from_values(cop, G, labels)


@dataclass
class MixtureSampler:
    """Equal-weight mixture of centered Gaussians ``N(0, Sigma_b)``."""

    sigmas: np.ndarray
    factors: np.ndarray
    seed: int
    labels: list
    min_eigenvalues: np.ndarray

    @property
    def B(self) -> int:
        return self.sigmas.shape[0]

    def sample(self, n, seed=None):
        """``(n, S)`` draws: a uniform component, then its Gaussian."""
        seed = self.seed if seed is None else seed
        gen = rng.stream(seed, rng.MIXTURE)
        comp = gen.integers(self.B, size=n)
        z = gen.standard_normal((n, self.sigmas.shape[1]))
        return np.einsum("nij,nj->ni", self.factors[comp], z)

    def mean_sigma(self):
        return self.sigmas.mean(axis=0)

    def marginal_kurtosis(self):
        """Kurtosis of each marginal: ``3 E[s^2] / E[s]^2`` over components."""
        v = np.diagonal(self.sigmas, axis1=1, axis2=2)
        return 3.0 * np.mean(v ** 2, axis=0) / np.mean(v, axis=0) ** 2


def psd_factor(S, tol=1e-8):
    """Symmetrize, clip eigenvalues in ``[-tol, 0)`` to 0 and return a square root."""
    S = 0.5 * (S + S.T)
    w, V = np.linalg.eigh(S)
    if w.min() < -tol:
        raise NonPSDError(f"covariance has eigenvalue {w.min():.3g} below -{tol:g}", w)
    w = np.clip(w, 0.0, None)
    return V * np.sqrt(w), float(w.min())


def mixture_sampler(spec, functionals, B, M, seed, m_ref, grid, weights, picard_iters=0, tol=1e-8, labels=None):
    """Gaussian-mixture limit law built from ``B`` independent factor draws.

    For each draw a conditional reference, a conditional operator and the
    conditional covariance are computed; the mixture puts weight ``1/B`` on
    each ``N(0, Sigma_b)``.
    """
    if B < 1:
        raise ConfigError("need at least one factor draw")
    sigmas, factors, mins = [], [], []
    for b in range(int(B)):
        fseed = rng.child_seed(seed, rng.MIXTURE, b, 0)
        pseed = rng.child_seed(seed, rng.MIXTURE, b, 1)
        oseed = rng.child_seed(seed, rng.MIXTURE, b, 2)
        cref = simulate_conditional_reference(spec, fseed, m_ref, grid, pseed, picard_iters)
        cop = build_random_operator(spec, cref, weights, M, oseed)
        rep = sigma_conditional(cop, functionals, labels)
        L, wmin = psd_factor(rep.matrix, tol)
        sigmas.append(rep.matrix)
        factors.append(L)
        mins.append(wmin)
        labels = rep.labels
    return MixtureSampler(np.array(sigmas), np.array(factors), int(seed), list(labels), np.array(mins))
