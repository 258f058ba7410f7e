"""Path functionals, fluctuation statistics and empirical-measure distances."""
import hashlib
import json
import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import Callable, Optional

import numpy as np
from scipy import optimize, stats

from .expr import FUNCTIONS, Call, ExpressionError, Var, evaluate, parse, to_text
from .model import ConfigError

__all__ = [
    "PathFunctional",
    "KPathFunctional",
    "FluctuationSample",
    "functional_from_expression",
    "terminal",
    "lln_statistic",
    "xi_alpha",
    "xi_multitype",
    "center_functional",
    "m_phi_alpha",
    "v_alpha",
    "dbl_distance",
    "sample_covariance",
    "ks_normality",
    "ks_two_sample",
    "TupleCapError",
    "FactorMismatchError",
]

DEFAULT_TUPLE_CAP = 10 ** 8


class TupleCapError(RuntimeError):
    """A tuple sum would exceed the configured evaluation cap."""


class FactorMismatchError(ValueError):
    """Interacting ensemble and conditional reference use different factor noise."""


# ---------------------------------------------------------------------------
# functionals


@dataclass(frozen=True)
class PathFunctional:
    """Real functional of one discrete path.

    ``fn(X, grid)`` receives paths of shape ``(..., n + 1, d)`` and returns
    ``(...)``.  ``shift`` is subtracted after evaluation; centering produces
    a copy with the appropriate shift.
    """

    fn: Callable
    name: str = "phi"
    centering: str = "none"
    shift: float = 0.0

    def __call__(self, X, grid):
        X = np.asarray(X, dtype=float)
        out = np.asarray(self.fn(X, grid), dtype=float)
        out = np.broadcast_to(out, X.shape[:-2]) if out.shape != X.shape[:-2] else out
        return out - self.shift if self.shift else out

    def scaled(self, a):
        return PathFunctional(lambda X, g: a * self.fn(X, g), f"{a:g}*{self.name}", self.centering, a * self.shift)

    def __add__(self, other):
        return PathFunctional(
            lambda X, g: self(X, g) + other(X, g), f"({self.name} + {other.name})"
        )

    def __mul__(self, a):
        return self.scaled(float(a))

    __rmul__ = __mul__


def terminal(coord=0, name=None) -> PathFunctional:
    """``omega -> omega_T`` (one coordinate)."""
    return PathFunctional(lambda X, g: X[..., -1, coord], name or f"xT[{coord}]")


_PATH_FUNCS = dict(FUNCTIONS)
_PATH_FUNCS["integral"] = (None, 1, 1)


def _names(prefix, d):
    return [prefix] if d == 1 else [f"{prefix}{i + 1}" for i in range(d)]


def functional_from_expression(text: str, d: int = 1, name: Optional[str] = None) -> PathFunctional:
    """Compile a path functional from an expression.

    Outside integrals the identifiers are ``T``, the terminal state ``xT``
    and the initial state ``x0`` (``xT1..xTd``, ``x01..x0d`` when ``d > 1``).
    ``integral(expr)`` is the left-Riemann time integral of ``expr`` in
    ``t`` and ``x`` (``x1..xd``).  Example: ``"xT - integral(sin(x))"``.
    """
    try:
        tree = parse(text, _PATH_FUNCS)
    except ExpressionError as exc:
        raise ConfigError(f"functional {text!r}: {exc}") from exc
    outer = {"T"} | set(_names("xT", d)) | set(_names("x0", d))
    inner = {"T", "t"} | set(_names("x", d))

    def check(node, allowed):
        if isinstance(node, Var):
            if node.name not in allowed:
                raise ConfigError(f"functional {text!r}: identifier {node.name!r} not allowed here")
        elif isinstance(node, Call):
            if node.name == "integral":
                if allowed is inner:
                    raise ConfigError(f"functional {text!r}: nested integral")
                check(node.args[0], inner)
            else:
                for a in node.args:
                    check(a, allowed)
        else:
            for child in getattr(node, "__dict__", {}).values():
                if hasattr(child, "__dataclass_fields__"):
                    check(child, allowed)

    check(tree, outer)

    def fn(X, grid):
        env = {"T": grid.T}
        for i, v in enumerate(_names("xT", d)):
            env[v] = X[..., -1, i]
        for i, v in enumerate(_names("x0", d)):
            env[v] = X[..., 0, i]

        def integral(args, env_outer):
            inner_env = {"T": grid.T, "t": grid.times[:-1]}
            for i, v in enumerate(_names("x", d)):
                inner_env[v] = X[..., :-1, i]
            vals = np.broadcast_to(evaluate(args[0], inner_env, _PATH_FUNCS), X.shape[:-2] + (grid.n,))
            return vals.sum(axis=-1) * grid.dt

        return evaluate(tree, env, _PATH_FUNCS, {"integral": integral})

    return PathFunctional(fn, name or to_text(tree))


@dataclass(frozen=True)
class KPathFunctional:
    """Functional of one path per type.

    Either ``factors`` (a product of single-path functionals, one per type)
    or a general ``fn(paths, grid)`` taking a list of ``K`` arrays that
    broadcast against each other.
    """

    K: int
    factors: Optional[tuple] = None
    fn: Optional[Callable] = None
    name: str = "f"
    centering: str = "none"

    def __post_init__(self):
        if (self.factors is None) == (self.fn is None):
            raise ValueError("give exactly one of factors or fn")
        if self.factors is not None and len(self.factors) != self.K:
            raise ValueError("need one factor per type")

    @property
    def separable(self) -> bool:
        return self.factors is not None

    def __call__(self, paths, grid):
        if self.separable:
            out = 1.0
            for phi, X in zip(self.factors, paths):
                out = out * phi(X, grid)
            return out
        return self.fn(paths, grid)


def _tuple_sum(f: KPathFunctional, groups, grid, cap):
    """Sum of ``f`` over all tuples drawn one from each group of paths."""
    sizes = [g.shape[0] for g in groups]
    total = math.prod(sizes)
    if total > cap:
        raise TupleCapError(f"{total} tuples exceed the cap {cap}")
    K = len(groups)
    acc = 0.0
    # chunk over the first group
    rest = max(1, total // sizes[0])
    step = max(1, 2_000_000 // rest)
    for s in range(0, sizes[0], step):
        shaped = []
        for k, g in enumerate(groups):
            blk = g[s:s + step] if k == 0 else g
            shape = [1] * K + list(blk.shape[1:])
            shape[k] = blk.shape[0]
            shaped.append(blk.reshape(shape))
        acc += float(np.sum(f(shaped, grid)))
    return acc


def lln_statistic(ensemble, f: KPathFunctional, cap=DEFAULT_TUPLE_CAP) -> float:
    """Average of ``f`` over all tuples with one particle of each type."""
    K = ensemble.layout.K
    if f.K != K:
        raise ConfigError(f"functional expects {f.K} types, ensemble has {K}")
    groups = [ensemble.paths(a)[1] for a in range(K)]
    if f.separable:
        return float(np.prod([np.mean(phi(X, ensemble.grid)) for phi, X in zip(f.factors, groups)]))
    return _tuple_sum(f, groups, ensemble.grid, cap) / math.prod(g.shape[0] for g in groups)


def xi_alpha(ensemble, phi: PathFunctional, alpha: int) -> float:
    """``N_a^{-1/2} sum_{i in type a} phi(Z_i)``."""
    X = ensemble.paths(alpha)[1]
    if X.shape[0] == 0:
        raise ConfigError(f"type {alpha} is empty")
    return float(np.sum(phi(X, ensemble.grid)) / np.sqrt(X.shape[0]))


def xi_multitype(ensemble, f: KPathFunctional, cap=DEFAULT_TUPLE_CAP) -> float:
    """``(N_1 ... N_K)^{-1/2}`` times the sum of ``f`` over all type tuples."""
    K = ensemble.layout.K
    groups = [ensemble.paths(a)[1] for a in range(K)]
    if f.separable:
        return float(np.prod([np.sum(phi(X, ensemble.grid)) / np.sqrt(X.shape[0]) for phi, X in zip(f.factors, groups)]))
    return _tuple_sum(f, groups, ensemble.grid, cap) / math.sqrt(math.prod(g.shape[0] for g in groups))


def center_functional(phi, reference, mode="per-type", alpha=None, max_reference=200):
    """Center a functional against reference samples.

    ``per-type``: subtract the sample mean of ``phi`` over the type-``alpha``
    reference paths.  ``multitype``: for a :class:`KPathFunctional`, apply
    the inclusion–exclusion projection so that averaging over the reference
    sample of any single coordinate gives exactly zero.  Products of
    single-path factors are centered factor by factor; general functionals
    use at most ``max_reference`` reference paths per type.
    """
    grid = reference.grid
    if mode in ("per-type", "per_type"):
        if alpha is None:
            raise ConfigError("per-type centering needs the type index")
        vals = phi(reference.flow(alpha), grid)
        mean = float(np.mean(vals))
        return PathFunctional(phi.fn, phi.name, "per-type", phi.shift + mean)
    if mode != "multitype":
        raise ConfigError(f"unknown centering mode {mode!r}")
    if not isinstance(phi, KPathFunctional):
        raise ConfigError("multitype centering needs a K-path functional")
    if phi.separable:
        factors = tuple(center_functional(p, reference, "per-type", a) for a, p in enumerate(phi.factors))
        return KPathFunctional(phi.K, factors=factors, name=phi.name, centering="multitype")
    refs = [reference.flow(a)[:max_reference] for a in range(phi.K)]
    return KPathFunctional(phi.K, fn=_MultitypeCentered(phi, refs, grid), name=phi.name, centering="multitype")


class _MultitypeCentered:
    """``sum_S (-1)^{K-|S|} E_{not S} f`` with empirical reference averages."""

    def __init__(self, f, refs, grid):
        self.f = f
        self.refs = refs
        self.K = f.K

    def __call__(self, paths, grid):
        K = self.K
        shape = np.broadcast_shapes(*(np.shape(p)[:-2] for p in paths))
        out = np.zeros(shape)
        for size in range(K + 1):
            for S in combinations(range(K), size):
                sign = (-1) ** (K - size)
                out = out + sign * self._partial_mean(S, paths, grid, shape)
        return out

    def _partial_mean(self, S, paths, grid, shape):
        K = self.K
        free = [k for k in range(K) if k not in S]
        if not free:
            return self.f(paths, grid)
        # average over reference paths of the free coordinates by looping
        # over their product (kept small by the reference cap)
        extra = len(free)
        ref_shapes = [r.shape[0] for r in (self.refs[k] for k in free)]
        args = []
        for k in range(K):
            p = np.asarray(paths[k])
            if k in S:
                args.append(p.reshape(p.shape[:-2] + (1,) * extra + p.shape[-2:]))
            else:
                r = self.refs[k]
                j = free.index(k)
                rs = [1] * extra
                rs[j] = r.shape[0]
                args.append(r.reshape((1,) * len(shape) + tuple(rs) + r.shape[-2:]))
        vals = self.f(args, grid)
        vals = np.broadcast_to(vals, shape + tuple(ref_shapes))
        return vals.mean(axis=tuple(range(len(shape), len(shape) + extra)))


def m_phi_alpha(phi: PathFunctional, cref, alpha: int) -> float:
    """Conditional sample mean of ``phi`` over type ``alpha`` of a conditional reference."""
    X = cref.flow(alpha)
    if X.shape[0] == 0:
        raise ConfigError(f"type {alpha} is empty")
    return float(np.mean(phi(X, cref.grid)))


def v_alpha(ensemble, phi: PathFunctional, alpha: int, cref) -> float:
    """``sqrt(N_a) (mean_a phi(Z) - m_phi)`` with ``m_phi`` from a matched reference."""
    if not ensemble.has_factor or cref.factor_W is None:
        raise FactorMismatchError("both ensembles must carry a factor path")
    if ensemble.factor_seed != cref.factor_seed or not (
        np.array_equal(ensemble.factor_W, cref.factor_W)
        and np.array_equal(ensemble.factor_Y[0], cref.factor_Y[0])
    ):
        raise FactorMismatchError(
            f"factor seed {ensemble.factor_seed} of the ensemble does not match {cref.factor_seed} of the reference"
        )
    X = ensemble.paths(alpha)[1]
    vals = phi(X, ensemble.grid)
    return float(np.sqrt(X.shape[0]) * (np.mean(vals) - m_phi_alpha(phi, cref, alpha)))


# ---------------------------------------------------------------------------
# replication samples


@dataclass
class FluctuationSample:
    """Replication values ``(R, S)`` of ``S`` statistics with their labels."""

    values: np.ndarray
    labels: list
    seeds: list
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.atleast_2d(np.asarray(self.values, dtype=float))
        if self.values.shape[1] != len(self.labels):
            raise ValueError("one label per column required")
        if len(self.seeds) != self.values.shape[0]:
            raise ValueError("one seed per replication required")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("non-finite statistic values")

    @property
    def R(self) -> int:
        return self.values.shape[0]

    def to_csv(self, path):
        with open(path, "w", newline="\n") as fh:
            fh.write(",".join(["replication", "seed"] + list(self.labels)) + "\n")
            for r, row in enumerate(self.values):
                fh.write(",".join([str(r), str(self.seeds[r])] + [repr(float(v)) for v in row]) + "\n")
        side = {"labels": list(self.labels), "R": self.R, "seeds": [int(s) for s in self.seeds], **self.meta}
        with open(str(path) + ".json", "w", newline="\n") as fh:
            json.dump(side, fh, sort_keys=True, indent=2)
            fh.write("\n")

    @classmethod
    def from_csv(cls, path):
        with open(str(path) + ".json") as fh:
            side = json.load(fh)
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        meta = {k: v for k, v in side.items() if k not in ("labels", "R", "seeds")}
        return cls(data[:, 2:], side["labels"], [int(s) for s in data[:, 1]], meta)


def sample_covariance(values):
    """Sample covariance of the columns with entrywise standard errors.

    The SE of entry ``(a, b)`` is the standard deviation of the centered
    products divided by ``sqrt(R)``; with fewer than two rows all SEs are
    infinite.
    """
    values = np.atleast_2d(np.asarray(values, dtype=float))
    R = values.shape[0]
    S = values.shape[1]
    if R < 2:
        return np.full((S, S), np.nan), np.full((S, S), np.inf)
    c = values - values.mean(axis=0)
    prod = c[:, :, None] * c[:, None, :]
    cov = prod.sum(axis=0) / (R - 1)
    se = prod.std(axis=0, ddof=1) / np.sqrt(R)
    return cov, se


def ks_normality(sample, alpha=0.01):
    """Lilliefors-corrected KS test of normality with estimated mean and variance.

    Returns ``(statistic, p_value, passed)``.
    """
    from statsmodels.stats.diagnostic import lilliefors

    sample = np.asarray(sample, dtype=float)
    stat, p = lilliefors(sample, dist="norm", pvalmethod="table")
    return float(stat), float(p), bool(p > alpha)


def ks_two_sample(a, b, alpha=0.01):
    """Two-sample KS test; returns ``(statistic, p_value, passed)``."""
    res = stats.ks_2samp(np.asarray(a, dtype=float), np.asarray(b, dtype=float))
    return float(res.statistic), float(res.pvalue), bool(res.pvalue > alpha)


# ---------------------------------------------------------------------------
# bounded-Lipschitz distance


def _dbl_exact_1d(a, b):
    """Exact ``sup |int f d(mu_a - mu_b)|`` over ``|f| <= 1``, Lip ``<= 1`` in 1-D.

    Solved as a linear program over the values of ``f`` on the merged
    support; 1-Lipschitz constraints between neighbours suffice on a line.
    """
    pts = np.concatenate([a, b])
    w = np.concatenate([np.full(a.size, 1.0 / a.size), np.full(b.size, -1.0 / b.size)])
    order = np.argsort(pts, kind="mergesort")
    pts, w = pts[order], w[order]
    # merge coincident points
    uniq, inv = np.unique(pts, return_inverse=True)
    wu = np.zeros(uniq.size)
    np.add.at(wu, inv, w)
    p = uniq.size
    if p == 1:
        return 0.0
    gaps = np.diff(uniq)
    rows = np.arange(p - 1)
    from scipy.sparse import coo_matrix, vstack

    D = coo_matrix(
        (np.concatenate([-np.ones(p - 1), np.ones(p - 1)]), (np.concatenate([rows, rows]), np.concatenate([rows, rows + 1]))),
        shape=(p - 1, p),
    )
    A = vstack([D, -D]).tocsr()
    res = optimize.linprog(
        -wu, A_ub=A, b_ub=np.concatenate([gaps, gaps]), bounds=[(-1.0, 1.0)] * p, method="highs"
    )
    if not res.success:  # pragma: no cover - LP is always feasible and bounded
        raise RuntimeError(f"bounded-Lipschitz LP failed: {res.message}")
    return float(min(2.0, max(0.0, -res.fun)))


def _dictionary_features(X, shifts, with_products):
    d = X.shape[1]
    feats = []
    for k in range(d):
        xk = X[:, k]
        feats.append(np.clip(xk, -1.0, 1.0))
        for c in shifts:
            feats.append(np.tanh(xk - c))
    if with_products and d > 1:
        for k, l in combinations(range(d), 2):
            for c in shifts:
                feats.append(np.tanh(X[:, k] - c) * np.tanh(X[:, l] - c) / np.sqrt(2.0))
        for sgn in (1.0, -1.0):
            for c in shifts:
                u = np.ones(d) * sgn / np.sqrt(d)
                feats.append(np.tanh(X @ u - c))
    return np.stack(feats, axis=1)


def dbl_distance(sample_a, sample_b, dictionary_size=9, exact_1d=True):
    """Bounded-Lipschitz distance between two empirical measures.

    In one dimension the exact value is returned.  Otherwise the result is
    the maximum mean discrepancy over a fixed dictionary of functions that
    are bounded by 1 and 1-Lipschitz (clipped coordinates, shifted ``tanh``
    ridges and normalized products), a lower bound that grows with
    ``dictionary_size`` and never exceeds 2.
    """
    a = np.asarray(sample_a, dtype=float)
    b = np.asarray(sample_b, dtype=float)
    a = a[:, None] if a.ndim == 1 else a
    b = b[:, None] if b.ndim == 1 else b
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise ValueError("samples must be non-empty")
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    if a.shape[1] == 1 and exact_1d:
        return _dbl_exact_1d(a[:, 0], b[:, 0])
    shifts = np.linspace(-2.0, 2.0, dictionary_size) if dictionary_size > 1 else np.zeros(1)
    fa = _dictionary_features(a, shifts, True)
    fb = _dictionary_features(b, shifts, True)
    return float(min(2.0, np.max(np.abs(fa.mean(axis=0) - fb.mean(axis=0)))))


def config_hash(obj) -> str:
    """SHA-256 of the canonical JSON form of ``obj``."""
    text = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(text.encode()).hexdigest()
