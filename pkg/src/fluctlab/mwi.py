"""Multiple Wiener integrals over sample-discretized L^2 spaces.

A :class:`ChaosBasis` holds functions on ``M`` sample points that are
orthonormal for the inner product ``<f, g> = (1/M) sum_i f_i g_i``.  Each
basis function ``e_r`` is paired with its own stream of independent
standard normals ``Z_r``, which realizes the isonormal field
``I_1(h) = sum_r <h, e_r> Z_r`` on the span.  Higher chaoses are built from
Wick products of ``I_1`` values, so every sampler drawn from one basis
shares the same underlying Gaussian field.
"""
import json
import math
import warnings
from dataclasses import dataclass, field
from itertools import combinations, permutations
from typing import Callable

import numpy as np
from scipy import linalg

from . import rng

__all__ = [
    "ChaosBasis",
    "ChaosSampler",
    "i1_field",
    "ik_product_form",
    "i2_from_kernel",
    "wick_product",
    "sample_J",
    "iK_truncated",
    "tilted_iK_sampler",
    "TiltedSample",
    "symmetric_statistic",
    "elementary_symmetric",
    "ProductKernel",
    "symmetrize",
    "sample_joint",
    "hermite_coefficients",
    "permanent",
    "median_of_means",
    "TruncationWarning",
]

BLOCK = 16384
MAX_SYMMETRIZE = 8


class TruncationWarning(UserWarning):
    """A truncated expansion captured less mass than requested."""


class ChaosBasis:
    """Orthonormal functions on a weighted sample with attached Gaussian draws.

    Columns ``0 .. n_kernel - 1`` are eigenvectors of a symmetric kernel
    (when built with :meth:`from_kernel`); further columns are appended on
    demand by :meth:`coordinates` so that any function passed to an ``I_1``
    sampler lies exactly in the span.  Draws for column ``r`` depend only on
    ``(seed, r)``, so extending the basis never changes existing samplers.
    """

    def __init__(self, M, seed, vectors=None, eigenvalues=None, captured_mass=1.0, total_mass=0.0):
        self.M = int(M)
        self.seed = int(seed)
        self.vectors = np.zeros((self.M, 0)) if vectors is None else np.asarray(vectors, dtype=float)
        self.eigenvalues = None if eigenvalues is None else np.asarray(eigenvalues, dtype=float)
        self.n_kernel = 0 if eigenvalues is None else len(self.eigenvalues)
        self.captured_mass = float(captured_mass)
        self.total_mass = float(total_mass)

    @classmethod
    def from_kernel(cls, S, seed, mass=0.99, max_rank=None):
        """Eigenbasis of ``S / M`` truncated to ``mass`` of the squared spectrum."""
        S = np.asarray(S, dtype=float)
        M = S.shape[0]
        S = 0.5 * (S + S.T)
        lam, V = linalg.eigh(S / M)
        order = np.argsort(-np.abs(lam), kind="stable")
        lam, V = lam[order], V[:, order]
        sq = lam ** 2
        total = float(sq.sum())
        if total == 0.0:
            return cls(M, seed, np.zeros((M, 0)), np.zeros(0), 1.0, 0.0)
        cum = np.cumsum(sq) / total
        R = int(np.searchsorted(cum, mass - 1e-15) + 1)
        R = min(R, M)
        if max_rank is not None:
            R = min(R, int(max_rank))
        captured = float(cum[R - 1])
        return cls(M, seed, V[:, :R] * np.sqrt(M), lam[:R], captured, total)

    @property
    def R(self) -> int:
        return self.vectors.shape[1]

    def inner(self, f, g):
        return float(np.dot(f, g) / self.M)

    def orthonormality_error(self) -> float:
        G = self.vectors.T @ self.vectors / self.M
        return float(np.abs(G - np.eye(self.R)).max()) if self.R else 0.0

    def coordinates(self, h, tol=1e-12):
        """Coefficients of ``h`` in the basis, extending it if needed."""
        h = np.asarray(h, dtype=float)
        if h.shape != (self.M,):
            raise ValueError(f"expected values at {self.M} sample points, got shape {h.shape}")
        scale = np.sqrt(np.dot(h, h) / self.M)
        if scale == 0.0:
            return np.zeros(self.R)
        resid = h.copy()
        c = np.zeros(self.R)
        # two Gram-Schmidt passes for numerical orthogonality
        for _ in range(2):
            if self.R:
                dc = self.vectors.T @ resid / self.M
                resid = resid - self.vectors @ dc
                c = c + dc
        rnorm = np.sqrt(np.dot(resid, resid) / self.M)
        if rnorm > tol * scale:
            self.vectors = np.concatenate([self.vectors, (resid / rnorm)[:, None]], axis=1)
            c = np.append(c, rnorm)
        return c

    def gaussians(self, n, columns=None):
        """Standard normal draws ``(n, columns)``, deterministic in ``(seed, column)``."""
        columns = self.R if columns is None else int(columns)
        out = np.empty((n, columns))
        nblocks = -(-n // BLOCK)
        for b in range(nblocks):
            lo, hi = b * BLOCK, min(n, (b + 1) * BLOCK)
            for r in range(columns):
                out[lo:hi, r] = rng.stream(self.seed, rng.CHAOS, r, b).standard_normal(BLOCK)[: hi - lo]
        return out

    def blocks(self, n, columns=None):
        """Iterate over ``(lo, Z)`` blocks of draws without holding all of them."""
        columns = self.R if columns is None else int(columns)
        nblocks = -(-n // BLOCK)
        for b in range(nblocks):
            lo, hi = b * BLOCK, min(n, (b + 1) * BLOCK)
            Z = np.empty((hi - lo, columns))
            for r in range(columns):
                Z[:, r] = rng.stream(self.seed, rng.CHAOS, r, b).standard_normal(BLOCK)[: hi - lo]
            yield lo, Z

    def describe(self):
        return {
            "M": self.M,
            "seed": self.seed,
            "columns": self.R,
            "kernel_columns": self.n_kernel,
            "captured_mass": self.captured_mass,
            "orthonormality_error": self.orthonormality_error(),
        }


@dataclass
class ChaosSampler:
    """Deterministic sampler ``Z -> value`` on a shared basis.

    ``columns`` is the number of basis columns the sampler reads;
    ``second_moment`` is the exact second moment of the (truncated)
    variable under the Gaussian field.
    """

    basis: ChaosBasis
    fn: Callable
    columns: int
    second_moment: float
    name: str = ""
    meta: dict = field(default_factory=dict)

    def evaluate(self, Z):
        return self.fn(Z[:, : self.columns])

    def sample(self, n):
        out = np.empty(n)
        for lo, Z in self.basis.blocks(n, self.columns):
            out[lo:lo + Z.shape[0]] = self.evaluate(Z)
        return out

    def to_csv(self, path, n, weights=None):
        vals = self.sample(n)
        with open(path, "w", newline="\n") as fh:
            fh.write("value\n" if weights is None else "value,weight\n")
            for i, v in enumerate(vals):
                fh.write(repr(float(v)) + ("\n" if weights is None else f",{float(weights[i])!r}\n"))
        meta = {"name": self.name, "draws": n, "second_moment": self.second_moment, **self.meta, "basis": self.basis.describe()}
        with open(str(path) + ".json", "w", newline="\n") as fh:
            json.dump(meta, fh, sort_keys=True, indent=2, default=float)
            fh.write("\n")


def sample_joint(samplers, n):
    """Draw several samplers on the same Gaussian field: ``(n, len(samplers))``."""
    basis = samplers[0].basis
    if any(s.basis is not basis for s in samplers):
        raise ValueError("joint sampling needs samplers on one basis")
    cols = max(s.columns for s in samplers)
    out = np.empty((n, len(samplers)))
    for lo, Z in basis.blocks(n, cols):
        for k, s in enumerate(samplers):
            out[lo:lo + Z.shape[0], k] = s.evaluate(Z)
    return out


# ---------------------------------------------------------------------------
# first chaos and product formulas


def i1_field(basis: ChaosBasis, h) -> ChaosSampler:
    """Sampler for ``I_1(h)``; its variance is ``<h, h>`` exactly."""
    c = basis.coordinates(h)
    cols = len(c)
    norm2 = float(np.dot(c, c))
    return ChaosSampler(basis, lambda Z: Z @ c, cols, norm2, "I1", {"norm2": norm2})


def hermite_coefficients(k):
    """``[(j, (-1)^j C_{k,j})]`` with ``C_{k,j} = k! / ((k-2j)! 2^j j!)``."""
    return [
        (j, (-1) ** j * math.factorial(k) // (math.factorial(k - 2 * j) * 2 ** j * math.factorial(j)))
        for j in range(k // 2 + 1)
    ]


def ik_product_form(basis: ChaosBasis, h, k: int) -> ChaosSampler:
    """Sampler for ``I_k(h^{(x)k}) = sum_j (-1)^j C_{k,j} |h|^{2j} I_1(h)^{k-2j}``."""
    if k < 1:
        raise ValueError("k must be at least 1")
    base = i1_field(basis, h)
    n2 = base.second_moment
    coeffs = hermite_coefficients(k)

    def fn(Z):
        x = base.evaluate(Z)
        return sum(c * n2 ** j * x ** (k - 2 * j) for j, c in coeffs)

    return ChaosSampler(basis, fn, base.columns, math.factorial(k) * n2 ** k, f"I{k}", {"norm2": n2})


def wick_product(values, gram):
    """Wick product ``:x_1 ... x_K:`` of jointly Gaussian centered variables.

    ``values`` is ``(n, K)`` and ``gram[a, b] = E[x_a x_b]``.  Uses
    ``:x_S x_k: = x_k :x_S: - sum_{a in S} gram[a, k] :x_{S - a}:``.
    """
    values = np.asarray(values, dtype=float)
    K = values.shape[1]
    memo = {0: np.ones(values.shape[0])}

    def wick(mask):
        if mask in memo:
            return memo[mask]
        k = mask.bit_length() - 1
        rest = mask & ~(1 << k)
        out = values[:, k] * wick(rest)
        a = rest
        while a:
            low = a & -a
            i = low.bit_length() - 1
            if gram[i, k] != 0.0:
                out = out - gram[i, k] * wick(rest & ~low)
            a &= a - 1
        memo[mask] = out
        return out

    return wick((1 << K) - 1)


def permanent(A):
    """Permanent of a small square matrix (Ryser's formula)."""
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    if n == 0:
        return 1.0
    total = 0.0
    for size in range(1, n + 1):
        for cols in combinations(range(n), size):
            total += (-1) ** size * np.prod(A[:, cols].sum(axis=1))
    return float((-1) ** n * total)


def i2_from_kernel(basis: ChaosBasis) -> ChaosSampler:
    """Sampler for ``I_2(S) = sum_r lambda_r (Z_r^2 - 1)`` over retained eigenpairs.

    ``second_moment`` is ``2 sum_r lambda_r^2`` of the retained part; the
    full ``2 |S|^2`` and the captured fraction are in ``meta``.
    """
    if basis.eigenvalues is None:
        raise ValueError("basis was not built from a kernel")
    lam = basis.eigenvalues
    R = len(lam)
    m2 = 2.0 * float(np.sum(lam ** 2))
    meta = {"captured_mass": basis.captured_mass, "full_second_moment": 2.0 * basis.total_mass, "rank": R}
    return ChaosSampler(basis, lambda Z: (Z[:, :R] ** 2 - 1.0) @ lam, R, m2, "I2", meta)


# ---------------------------------------------------------------------------
# symmetric functionals of K-tuples


def iK_truncated(basis: ChaosBasis, terms, mass=0.99, warn_below=0.9) -> ChaosSampler:
    """Sampler for ``I_K`` of a symmetrized functional on tuple samples.

    ``terms`` is either a list of ``(coef, [h_1, ..., h_K])`` product terms
    (``h_a`` are the lifted factor values at the ``M`` sample tuples), giving
    ``I_K(sym(sum coef h_1 (x) ... (x) h_K))`` exactly as Wick products, or
    an ``(M, M)`` matrix ``S`` of a symmetric two-point kernel on the tuple
    samples, which is expanded in its eigenvectors up to ``mass`` of the
    squared spectrum (the captured mass is recorded and a
    :class:`TruncationWarning` is issued below ``warn_below``).
    """
    if isinstance(terms, np.ndarray) and terms.ndim == 2:
        S = 0.5 * (terms + terms.T)
        M = S.shape[0]
        lam, V = linalg.eigh(S / M)
        order = np.argsort(-np.abs(lam), kind="stable")
        lam, V = lam[order], V[:, order]
        sq = lam ** 2
        total = float(sq.sum())
        if total == 0.0:
            return ChaosSampler(basis, lambda Z: np.zeros(Z.shape[0]), 0, 0.0, "I2", {"captured_mass": 1.0})
        cum = np.cumsum(sq) / total
        R = int(np.searchsorted(cum, mass - 1e-15) + 1)
        captured = float(cum[R - 1])
        terms = [(float(lam[r]), [V[:, r] * np.sqrt(M)] * 2) for r in range(R)]
        sampler = _wick_terms(basis, terms)
        sampler.meta["captured_mass"] = captured
        if captured < warn_below:
            warnings.warn(f"expansion captured only {captured:.3f} of the squared mass", TruncationWarning)
            sampler.meta["warning"] = "truncation mass below threshold"
        return sampler
    return _wick_terms(basis, terms)


def _wick_terms(basis, terms):
    terms = [(float(c), [np.asarray(h, dtype=float) for h in hs]) for c, hs in terms]
    if not terms:
        return ChaosSampler(basis, lambda Z: np.zeros(Z.shape[0]), 0, 0.0, "IK")
    K = len(terms[0][1])
    if any(len(hs) != K for _, hs in terms):
        raise ValueError("all product terms need the same order")
    if K > MAX_SYMMETRIZE:
        raise ValueError(f"order {K} exceeds the supported maximum {MAX_SYMMETRIZE}")
    coords = [[basis.coordinates(h) for h in hs] for _, hs in terms]
    cols = basis.R
    padded = [[np.pad(c, (0, cols - len(c))) for c in cs] for cs in coords]
    grams = [np.array([[np.dot(a, b) for b in cs] for a in cs]) for cs in padded]
    second = 0.0
    for (c1, _), p1 in zip(terms, padded):
        for (c2, _), p2 in zip(terms, padded):
            G = np.array([[np.dot(a, b) for b in p2] for a in p1])
            second += c1 * c2 * permanent(G)

    def fn(Z):
        out = np.zeros(Z.shape[0])
        for (c, _), cs, G in zip(terms, padded, grams):
            vals = np.stack([Z @ v for v in cs], axis=1)
            out += c * wick_product(vals, G)
        return out

    return ChaosSampler(basis, fn, cols, float(second), f"I{K}", {"order": K, "terms": len(terms)})


def symmetrize(phi, K):
    """Symmetrized lift of a functional of one path per type.

    Returns ``g(tuples)`` where ``tuples`` is a list of ``K`` tuples, each a
    list of ``K`` per-type path arrays, and
    ``g = (1/K!) sum_pi phi(t[pi(0)][0], ..., t[pi(K-1)][K-1])``.
    """
    if K > MAX_SYMMETRIZE:
        raise ValueError(f"K = {K} exceeds the supported maximum {MAX_SYMMETRIZE}")
    perms = list(permutations(range(K)))

    def g(tuples, *args):
        if len(tuples) != K:
            raise ValueError(f"expected {K} tuples")
        acc = 0.0
        for p in perms:
            acc = acc + phi([tuples[p[a]][a] for a in range(K)], *args)
        return acc / len(perms)

    return g


# ---------------------------------------------------------------------------
# symmetric statistics


@dataclass(frozen=True)
class ProductKernel:
    """``phi(x_1, ..., x_k) = prod_i g(x_i)``; enables an O(nk) statistic."""

    g: Callable


def elementary_symmetric(values, k):
    """``e_k`` of the entries along the last axis, via Newton's identities.

    ``e_k = sum_{i_1 < ... < i_k} v_i1 ... v_ik``; leading axes are kept so a
    whole batch of replications is handled at once.
    """
    v = np.asarray(values, dtype=float)
    p = [None] + [np.sum(v ** i, axis=-1) for i in range(1, k + 1)]
    e = [np.ones(v.shape[:-1])]
    for m in range(1, k + 1):
        acc = sum((-1) ** (i - 1) * e[m - i] * p[i] for i in range(1, m + 1))
        e.append(acc / m)
    return e[k]


def symmetric_statistic(phi, data, k, cap=10 ** 8):
    """``sum_{i_1 < ... < i_k} phi(X_i1, ..., X_ik)`` over the sample.

    ``phi`` is a symmetric callable on ``k`` broadcastable arrays (or a
    :class:`ProductKernel`).  Returns 0 when ``n < k``.
    """
    data = np.asarray(data, dtype=float)
    n = data.shape[0]
    if k < 1:
        raise ValueError("k must be at least 1")
    if n < k:
        return 0.0
    if isinstance(phi, ProductKernel):
        vals = np.asarray(phi.g(data), dtype=float)
        return float(elementary_symmetric(vals, k))
    count = math.comb(n, k)
    if count > cap:
        raise RuntimeError(f"{count} tuples exceed the cap {cap}")
    if k == 1:
        return float(np.sum(phi(data)))
    if k == 2:
        total = 0.0
        step = max(1, 2_000_000 // n)
        for s in range(0, n, step):
            i = np.arange(s, min(n, s + step))
            vals = phi(data[i][:, None], data[None, :])
            mask = i[:, None] < np.arange(n)[None, :]
            total += float(np.sum(np.where(mask, vals, 0.0)))
        return total
    total = 0.0
    it = combinations(range(n), k)
    chunk = 200_000
    while True:
        idx = np.fromiter((j for c in _take(it, chunk) for j in c), dtype=np.int64)
        if idx.size == 0:
            break
        idx = idx.reshape(-1, k)
        total += float(np.sum(phi(*(data[idx[:, a]] for a in range(k)))))
    return total


def _take(it, n):
    for _ in range(n):
        try:
            yield next(it)
        except StopIteration:
            return


# ---------------------------------------------------------------------------
# the limit variable J and the tilted law


def median_of_means(x, blocks=20):
    """Median of the means of ``blocks`` contiguous blocks."""
    x = np.asarray(x, dtype=float)
    parts = np.array_split(x, blocks)
    return float(np.median([p.mean() for p in parts]))


@dataclass
class JSampler:
    """Sampler for ``J = (I_2(F) - Tr AA*) / 2`` with its kernel basis."""

    basis: ChaosBasis
    i2: ChaosSampler
    trace: float
    sampler: ChaosSampler

    def sample(self, n):
        return self.sampler.sample(n)

    @property
    def mean(self):
        return -0.5 * self.trace

    @property
    def variance(self):
        return 0.25 * self.i2.second_moment

    def exp_mean(self):
        """Closed form ``E exp(J)`` under the retained spectrum (inf if any eigenvalue >= 1)."""
        lam = self.basis.eigenvalues
        if np.any(lam >= 1.0):
            return float("inf")
        return float(np.exp(-0.5 * self.trace + 0.5 * np.sum(-np.log1p(-lam) - lam)))


def sample_J(op, seed=None, mass=0.99) -> JSampler:
    """``J = (I_2(F) - Tr AA*) / 2`` with ``F = H + H^T - H^T H / M``.

    ``Tr AA*`` is taken in the all-pairs form ``(1/M^2) sum H_ij^2`` so that
    it matches the squared norm of the same sample kernel.
    """
    H = op.H
    M = op.M
    F = H + H.T - H.T @ H / M
    seed = rng.child_seed(op.seed, rng.CHAOS) if seed is None else int(seed)
    basis = ChaosBasis.from_kernel(F, seed, mass)
    i2 = i2_from_kernel(basis)
    trace = float(np.sum(H * H) / M ** 2)
    lam = basis.eigenvalues
    R = len(lam)
    sampler = ChaosSampler(
        basis,
        lambda Z: 0.5 * ((Z[:, :R] ** 2 - 1.0) @ lam - trace),
        R,
        0.25 * (i2.second_moment + trace ** 2),
        "J",
        {"trace_AAstar": trace, "captured_mass": basis.captured_mass, "rank": R},
    )
    return JSampler(basis, i2, trace, sampler)


@dataclass
class TiltedSample:
    """Draws of ``I_K`` with importance weights ``exp(J)``."""

    values: np.ndarray
    weights: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def ess(self) -> float:
        w = self.weights
        return float(w.sum() ** 2 / np.sum(w ** 2))

    def weighted_moment(self, p):
        w = self.weights
        return float(np.sum(w * self.values ** p) / np.sum(w))

    def mass(self, blocks=20):
        return median_of_means(self.weights, blocks)


def tilted_iK_sampler(op, terms, n, seed=None, mass=0.99, ess_warn=0.05) -> TiltedSample:
    """Draw ``I_K(phi_sym)`` and ``exp(J)`` from one Gaussian field.

    ``terms`` is passed to :func:`iK_truncated`; the lifted factor values
    must be evaluated at the operator's sample tuples.  A warning is issued
    when the effective sample size falls below ``ess_warn`` of the draws.
    """
    js = sample_J(op, seed, mass)
    ik = iK_truncated(js.basis, terms)
    both = sample_joint([ik, js.sampler], n)
    out = TiltedSample(both[:, 0], np.exp(both[:, 1]))
    out.meta = {
        "draws": n,
        "ess": out.ess,
        "J_captured_mass": js.basis.captured_mass,
        "seed": js.basis.seed,
        "ik_second_moment": ik.second_moment,
    }
    if out.ess < ess_warn * n:
        warnings.warn(f"effective sample size {out.ess:.0f} is below {ess_warn:.0%} of {n} draws", RuntimeWarning)
        out.meta["warning"] = "low effective sample size"
    return out
