"""Populations, time grids, coefficient functions and model specifications."""
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import rng
from .expr import Expression, ExpressionError

__all__ = [
    "ConfigError",
    "ConditionError",
    "PopulationLayout",
    "build_layout",
    "TimeGrid",
    "InitialLaw",
    "PairKernel",
    "Drift",
    "LinearModelSpec",
    "CommonFactorModelSpec",
    "ConditionReport",
    "validate_conditions",
    "kernel_preset",
    "drift_preset",
    "initial_law",
    "example31_spec",
    "common_factor_preset",
    "KERNEL_PRESETS",
    "COMMON_FACTOR_PRESETS",
]


class ConfigError(ValueError):
    """Invalid model, layout or experiment configuration."""


class ConditionError(ValueError):
    """A coefficient returned a non-finite value at a probe point."""


# ---------------------------------------------------------------------------
# populations and grids


@dataclass(frozen=True)
class PopulationLayout:
    """Contiguous-block assignment of ``N`` particles to ``K`` types.

    Types are indexed from 0.  ``weights`` are the limit proportions used by
    the operator kernels; they equal ``counts / N`` unless given explicitly.
    """

    counts: tuple
    weights: tuple

    def __post_init__(self):
        if len(self.counts) == 0 or len(self.counts) != len(self.weights):
            raise ConfigError("counts and weights must be non-empty and of equal length")
        if any(int(c) < 1 for c in self.counts):
            raise ConfigError(f"every type needs at least one particle, got {self.counts}")

    @property
    def K(self) -> int:
        return len(self.counts)

    @property
    def N(self) -> int:
        return int(sum(self.counts))

    @property
    def offsets(self):
        return tuple(int(o) for o in np.concatenate([[0], np.cumsum(self.counts)]))

    def slice(self, alpha) -> slice:
        o = self.offsets
        return slice(o[alpha], o[alpha + 1])

    @property
    def slices(self):
        return tuple(self.slice(a) for a in range(self.K))

    @property
    def membership(self) -> np.ndarray:
        return np.repeat(np.arange(self.K), self.counts)

    def to_dict(self):
        return {"counts": list(self.counts), "weights": list(self.weights)}


def build_layout(K, counts=None, N=None, weights=None) -> PopulationLayout:
    """Build a layout from per-type counts or from ``(N, weights)``.

    With weights, ``N_a = floor(weights[a] * N)`` and the remainder goes to
    the last type; the given weights are kept as the limit proportions.
    """
    K = int(K)
    if K < 1:
        raise ConfigError("K must be at least 1")
    if counts is not None:
        counts = tuple(int(c) for c in counts)
        if len(counts) != K:
            raise ConfigError(f"expected {K} counts, got {len(counts)}")
        if any(c < 1 for c in counts):
            raise ConfigError(f"zero or negative count in {counts}")
        total = sum(counts)
        return PopulationLayout(counts, tuple(c / total for c in counts))
    if N is None:
        raise ConfigError("give either counts or N")
    N = int(N)
    if weights is None:
        weights = (1.0 / K,) * K
    weights = tuple(float(w) for w in weights)
    if len(weights) != K:
        raise ConfigError(f"expected {K} weights, got {len(weights)}")
    if abs(sum(weights) - 1.0) > 1e-12:
        raise ConfigError(f"weights must sum to 1, got {sum(weights)!r}")
    if K == 1:
        weights = (1.0,)
    elif any(not (0.0 < w < 1.0) for w in weights):
        raise ConfigError(f"weights must lie in (0, 1), got {weights}")
    counts = [int(np.floor(w * N)) for w in weights[:-1]]
    counts.append(N - sum(counts))
    if any(c < 1 for c in counts):
        raise ConfigError(f"N={N} leaves an empty type with weights {weights}")
    return PopulationLayout(tuple(counts), weights)


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid on ``[0, T]`` with ``n`` steps."""

    T: float
    n: int

    def __post_init__(self):
        if not (self.T > 0) or not np.isfinite(self.T):
            raise ConfigError(f"horizon must be positive, got {self.T}")
        if int(self.n) != self.n or self.n < 1:
            raise ConfigError(f"step count must be a positive integer, got {self.n}")

    @property
    def dt(self) -> float:
        return self.T / self.n

    @property
    def times(self) -> np.ndarray:
        return self.T * np.arange(self.n + 1) / self.n

    @classmethod
    def from_step(cls, T, dt):
        n = int(round(T / dt))
        if n < 1 or abs(n * dt - T) > 1e-9 * T:
            raise ConfigError(f"step {dt} does not divide horizon {T}")
        return cls(float(T), n)

    def to_dict(self):
        return {"T": self.T, "n": self.n}


# ---------------------------------------------------------------------------
# initial laws


@dataclass(frozen=True)
class InitialLaw:
    """Point mass, Gaussian or uniform-box initial distribution in R^d."""

    kind: str
    params: tuple = ()

    def __post_init__(self):
        if self.kind not in ("point", "gaussian", "uniform"):
            raise ConfigError(f"unknown initial law {self.kind!r}")

    def sample(self, gen: np.random.Generator, size: int, d: int) -> np.ndarray:
        p = [np.broadcast_to(np.asarray(v, dtype=float), (d,)) for v in self.params]
        if self.kind == "point":
            loc = p[0] if p else np.zeros(d)
            return np.broadcast_to(loc, (size, d)).copy()
        if self.kind == "gaussian":
            return p[0] + p[1] * gen.standard_normal((size, d))
        return p[0] + (p[1] - p[0]) * gen.random((size, d))

    def mean(self, d):
        p = [np.broadcast_to(np.asarray(v, dtype=float), (d,)) for v in self.params]
        if self.kind == "point":
            return p[0] if p else np.zeros(d)
        if self.kind == "gaussian":
            return p[0]
        return 0.5 * (p[0] + p[1])

    def variance(self, d):
        p = [np.broadcast_to(np.asarray(v, dtype=float), (d,)) for v in self.params]
        if self.kind == "point":
            return np.zeros(d)
        if self.kind == "gaussian":
            return p[1] ** 2
        return (p[1] - p[0]) ** 2 / 12.0

    def to_dict(self):
        return {"law": self.kind, "params": [np.asarray(v).tolist() for v in self.params]}


def initial_law(cfg) -> InitialLaw:
    """Build an initial law from a config entry.

    Accepted forms: a number (point mass), ``{"law": "point", "value": v}``,
    ``{"law": "gaussian", "mean": m, "std": s}`` and
    ``{"law": "uniform", "low": a, "high": b}``.
    """
    if isinstance(cfg, InitialLaw):
        return cfg
    if cfg is None:
        return InitialLaw("point", (0.0,))
    if isinstance(cfg, (int, float, list)):
        return InitialLaw("point", (_tuplify(cfg),))
    if not isinstance(cfg, dict):
        raise ConfigError(f"cannot read initial law from {cfg!r}")
    kind = cfg.get("law", "point")
    try:
        if kind == "point":
            return InitialLaw("point", (_tuplify(cfg.get("value", 0.0)),))
        if kind == "gaussian":
            std = cfg.get("std", 1.0)
            if np.any(np.asarray(std) < 0):
                raise ConfigError("negative standard deviation")
            return InitialLaw("gaussian", (_tuplify(cfg.get("mean", 0.0)), _tuplify(std)))
        if kind == "uniform":
            return InitialLaw("uniform", (_tuplify(cfg.get("low", -1.0)), _tuplify(cfg.get("high", 1.0))))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad initial law {cfg!r}: {exc}") from exc
    raise ConfigError(f"unknown initial law {kind!r}")


def _tuplify(v):
    a = np.asarray(v, dtype=float)
    return float(a) if a.ndim == 0 else tuple(a.tolist())


# ---------------------------------------------------------------------------
# coefficient functions


def _var_names(prefix, d):
    return [prefix] if d == 1 else [f"{prefix}{i + 1}" for i in range(d)]


def _compile_components(texts, groups, d_out):
    """Compile component expressions into a numpy function of array groups.

    ``groups`` lists ``(name, dim)``; ``dim=None`` marks a scalar argument
    such as time.  Vector arguments carry a trailing axis of length ``dim``.
    """
    if isinstance(texts, str):
        texts = [texts]
    texts = list(texts)
    if len(texts) != d_out:
        raise ConfigError(f"expected {d_out} component expression(s), got {len(texts)}")
    names = []
    for name, dim in groups:
        names += [name] if dim is None else _var_names(name, dim)
    try:
        exprs = [Expression(t, names) for t in texts]
    except ExpressionError as exc:
        raise ConfigError(str(exc)) from exc

    def fn(*arrays):
        env = {}
        shape = ()
        for (name, dim), a in zip(groups, arrays):
            a = np.asarray(a, dtype=float)
            if dim is None:
                env[name] = a
                shape = np.broadcast_shapes(shape, a.shape)
            else:
                for k, v in enumerate(_var_names(name, dim)):
                    env[v] = a[..., k]
                shape = np.broadcast_shapes(shape, a.shape[:-1])
        return np.stack([np.broadcast_to(e(**{v: env[v] for v in e.variables}), shape) for e in exprs], axis=-1)

    used = set()
    for e in exprs:
        used |= e.used
    return fn, used, names


class PairKernel:
    """Pairwise interaction kernel ``b(x, y)`` with values in R^d.

    ``terms`` optionally declares a separable form
    ``b(x, y) = sum_k a_k(x) c_k(y)`` with ``a_k(x)`` in R^d and scalar
    ``c_k(y)``.  Separable kernels make mean-field sums linear in the
    particle count instead of quadratic.
    """

    def __init__(self, fn, d, terms=None, name=""):
        self.fn = fn
        self.d = int(d)
        self.terms = None if terms is None else tuple(terms)
        self.name = name

    def __call__(self, x, y):
        return self.fn(np.asarray(x, dtype=float), np.asarray(y, dtype=float))

    @property
    def separable(self) -> bool:
        return self.terms is not None

    @property
    def is_zero(self) -> bool:
        return self.terms is not None and len(self.terms) == 0

    def term_means(self, ys):
        """Means of ``c_k`` over the particle axis: ``(..., M, d) -> (..., n_terms)``."""
        if not self.terms:
            return np.zeros(ys.shape[:-2] + (0,))
        return np.stack([c(ys).mean(axis=-1) for _, c in self.terms], axis=-1)

    def apply_means(self, x, means):
        """``sum_k a_k(x) * means[..., k]`` for ``x`` of shape ``(..., P, d)``."""
        out = np.zeros(np.shape(x))
        for k, (a, _) in enumerate(self.terms):
            out = out + a(x) * means[..., k][..., None, None]
        return out

    def mean_field(self, x, ys, chunk_elems=4_000_000):
        """``(1/M) sum_j b(x_p, y_j)`` for ``x`` ``(..., P, d)``, ``ys`` ``(..., M, d)``."""
        x = np.asarray(x, dtype=float)
        ys = np.asarray(ys, dtype=float)
        if self.terms is not None:
            return self.apply_means(x, self.term_means(ys))
        P, M = x.shape[-2], ys.shape[-2]
        batch = int(np.prod(np.broadcast_shapes(x.shape[:-2], ys.shape[:-2]), dtype=np.int64))
        step = max(1, chunk_elems // max(1, M * self.d * max(batch, 1)))
        out = np.empty(np.broadcast_shapes(x.shape[:-2], ys.shape[:-2]) + (P, self.d))
        for s in range(0, P, step):
            xb = x[..., s:s + step, None, :]
            out[..., s:s + step, :] = self.fn(xb, ys[..., None, :, :]).mean(axis=-2)
        return out

    def __repr__(self):
        return f"PairKernel({self.name or 'custom'}, d={self.d}, separable={self.separable})"


def _unit(d, k):
    e = np.zeros(d)
    e[k] = 1.0
    return lambda x: np.broadcast_to(e, np.shape(x)[:-1] + (d,))


def _ones_scalar(x):
    return np.ones(np.shape(x)[:-1])


def kernel_from_expressions(texts, d, name=None) -> PairKernel:
    """Kernel from component expressions in ``x``/``y`` (or ``x1..xd``, ``y1..yd``).

    Expressions that do not involve ``x`` (or ``y``) are detected and given
    a separable form automatically.
    """
    fn, used, _ = _compile_components(texts, [("x", d), ("y", d)], d)
    xs = set(_var_names("x", d))
    ys = set(_var_names("y", d))
    if isinstance(texts, str):
        texts = [texts]
    comp = [
        _compile_components([t], [("x", d), ("y", d)], 1)[0]
        for t in texts
    ]
    terms = None
    if not used & xs:
        # b(x, y) = sum_k e_k c_k(y)
        terms = [
            (_unit(d, k), (lambda c: lambda y: c(np.zeros_like(y), y)[..., 0])(comp[k]))
            for k in range(d)
        ]
    elif not used & ys:
        terms = [(lambda x: fn(x, np.zeros_like(x)), _ones_scalar)]
    return PairKernel(fn, d, terms, name or " ; ".join(texts))


def _zero_kernel(d):
    return PairKernel(lambda x, y: np.zeros(np.broadcast_shapes(np.shape(x), np.shape(y))), d, [], "zero")


def _beta(name):
    if name == "sin":
        return np.sin
    if name == "tanh":
        return np.tanh
    if name == "zero":
        return np.zeros_like
    raise ConfigError(f"unknown odd profile {name!r}; use sin, tanh or zero")


def kernel_preset(name, d=1, **params) -> PairKernel:
    """Named kernel families.

    ``zero``; ``constant`` (``value``); ``example31`` (``weight * beta(y)``,
    ``beta`` in sin/tanh/zero); ``sine_y`` (``amplitude * sin(y)``);
    ``tanh_y``; ``bounded_sine`` (``amplitude * sin(y - x)``, the attractive
    Kuramoto-type coupling, applied per coordinate).
    """
    if name not in KERNEL_PRESETS:
        raise ConfigError(f"unknown kernel preset {name!r}; known: {sorted(KERNEL_PRESETS)}")
    try:
        return KERNEL_PRESETS[name](d, **params)
    except TypeError as exc:
        raise ConfigError(f"bad parameters for kernel preset {name!r}: {exc}") from exc


def _k_constant(d, value=1.0):
    v = np.broadcast_to(np.asarray(value, dtype=float), (d,)).copy()
    fn = lambda x, y: np.broadcast_to(v, np.broadcast_shapes(np.shape(x), np.shape(y))).copy()
    return PairKernel(fn, d, [(lambda x: np.broadcast_to(v, np.shape(x)), _ones_scalar)], f"constant({v.tolist()})")


def _k_profile(d, weight=1.0, beta="sin", label="example31"):
    b = _beta(beta)
    w = float(weight)
    fn = lambda x, y: np.broadcast_to(w * b(y), np.broadcast_shapes(np.shape(x), np.shape(y))).copy()
    if beta == "zero" or w == 0.0:
        return _zero_kernel(d)
    terms = [
        (_unit(d, k), (lambda k: lambda y: w * b(y[..., k]))(k))
        for k in range(d)
    ]
    return PairKernel(fn, d, terms, f"{label}({w:g}*{beta}(y))")


def _k_example31(d, weight=1.0, beta="sin"):
    return _k_profile(d, weight, beta, "example31")


def _k_sine_y(d, amplitude=1.0):
    return _k_profile(d, amplitude, "sin", "sine_y")


def _k_tanh_y(d, amplitude=1.0):
    return _k_profile(d, amplitude, "tanh", "tanh_y")


def _k_bounded_sine(d, amplitude=1.0):
    a = float(amplitude)
    fn = lambda x, y: a * np.sin(y - x)
    terms = []
    for k in range(d):
        def ak_cos(x, k=k):
            out = np.zeros(np.shape(x))
            out[..., k] = a * np.cos(x[..., k])
            return out

        def ak_sin(x, k=k):
            out = np.zeros(np.shape(x))
            out[..., k] = -a * np.sin(x[..., k])
            return out

        terms.append((ak_cos, lambda y, k=k: np.sin(y[..., k])))
        terms.append((ak_sin, lambda y, k=k: np.cos(y[..., k])))
    return PairKernel(fn, d, terms, f"bounded_sine({a:g}*sin(y-x))")


KERNEL_PRESETS = {
    "zero": lambda d: _zero_kernel(d),
    "constant": _k_constant,
    "example31": _k_example31,
    "sine_y": _k_sine_y,
    "tanh_y": _k_tanh_y,
    "bounded_sine": _k_bounded_sine,
}


def build_kernel(cfg, d) -> PairKernel:
    """Kernel from a config entry: preset dict, expression string(s) or kernel."""
    if isinstance(cfg, PairKernel):
        return cfg
    if cfg is None or cfg == 0 or cfg == "zero":
        return _zero_kernel(d)
    if isinstance(cfg, (str, list)):
        return kernel_from_expressions(cfg, d)
    if isinstance(cfg, dict):
        cfg = dict(cfg)
        name = cfg.pop("preset", None)
        if name is None:
            raise ConfigError(f"kernel entry needs a 'preset' key: {cfg!r}")
        return kernel_preset(name, d, **cfg)
    raise ConfigError(f"cannot read kernel from {cfg!r}")


class Drift:
    """Single-particle drift ``f(t, x)`` with values in R^d."""

    def __init__(self, fn, d, name="", zero=False):
        self.fn = fn
        self.d = int(d)
        self.name = name
        self.is_zero = zero

    def __call__(self, t, x):
        return self.fn(t, np.asarray(x, dtype=float))

    def __repr__(self):
        return f"Drift({self.name})"


def drift_preset(name, d=1, **params) -> Drift:
    """``zero``, ``constant`` (``value``) or ``linear`` (``-rate * x``)."""
    if name == "zero":
        return Drift(lambda t, x: np.zeros(np.shape(x)), d, "zero", zero=True)
    if name == "constant":
        v = np.broadcast_to(np.asarray(params.get("value", 0.0), dtype=float), (d,)).copy()
        return Drift(lambda t, x: np.broadcast_to(v, np.shape(x)).copy(), d, f"constant({v.tolist()})")
    if name == "linear":
        r = float(params.get("rate", 1.0))
        return Drift(lambda t, x: -r * x, d, f"linear(-{r:g}*x)")
    raise ConfigError(f"unknown drift preset {name!r}")


def build_drift(cfg, d) -> Drift:
    if isinstance(cfg, Drift):
        return cfg
    if cfg is None or cfg == 0 or cfg == "zero":
        return drift_preset("zero", d)
    if isinstance(cfg, (str, list)):
        fn, used, _ = _compile_components(cfg, [("t", None), ("x", d)], d)
        return Drift(lambda t, x: fn(t, x), d, str(cfg))
    if isinstance(cfg, dict):
        cfg = dict(cfg)
        name = cfg.pop("preset", None)
        if name is None:
            raise ConfigError(f"drift entry needs a 'preset' key: {cfg!r}")
        return drift_preset(name, d, **cfg)
    raise ConfigError(f"cannot read drift from {cfg!r}")


# ---------------------------------------------------------------------------
# model specifications


@dataclass(frozen=True)
class LinearModelSpec:
    """Multi-type system with drift ``f_a(t, x) + sum_g <b_ag(x, .), mu^g>``.

    ``kernels[a][g]`` is the kernel felt by type ``a`` from type ``g``.
    """

    d: int
    drifts: tuple
    kernels: tuple
    initial: tuple
    bound: float = 1.0
    name: str = ""

    def __post_init__(self):
        K = len(self.drifts)
        if K == 0:
            raise ConfigError("need at least one type")
        if len(self.kernels) != K or any(len(row) != K for row in self.kernels):
            raise ConfigError(f"kernels must form a {K}x{K} table")
        if len(self.initial) != K:
            raise ConfigError(f"need {K} initial laws")
        for obj in list(self.drifts) + [k for row in self.kernels for k in row]:
            if obj.d != self.d:
                raise ConfigError(f"coefficient {obj!r} has dimension {obj.d}, expected {self.d}")

    @property
    def K(self) -> int:
        return len(self.drifts)

    @property
    def interaction_free(self) -> bool:
        return all(k.is_zero for row in self.kernels for k in row)

    @classmethod
    def from_config(cls, cfg):
        """Build from a config mapping (see the README for the key tree)."""
        if "preset" in cfg:
            cfg = dict(cfg)
            name = cfg.pop("preset")
            if name == "example31":
                return example31_spec(**cfg)
            raise ConfigError(f"unknown model preset {name!r}")
        d = int(cfg.get("d", 1))
        K = int(cfg.get("K", 1))
        drifts = cfg.get("drifts", ["zero"] * K)
        if not isinstance(drifts, list):
            drifts = [drifts] * K
        kernels = cfg.get("kernels", [["zero"] * K for _ in range(K)])
        if not isinstance(kernels, list):
            kernels = [[kernels] * K for _ in range(K)]
        initial = cfg.get("initial", [None] * K)
        if not isinstance(initial, list) or (initial and not isinstance(initial[0], (dict, list, type(None), InitialLaw))):
            initial = [initial] * K
        if len(drifts) != K or len(kernels) != K or len(initial) != K:
            raise ConfigError(f"drifts, kernels and initial must each have K={K} entries")
        return cls(
            d=d,
            drifts=tuple(build_drift(f, d) for f in drifts),
            kernels=tuple(tuple(build_kernel(k, d) for k in row) for row in kernels),
            initial=tuple(initial_law(i) for i in initial),
            bound=float(cfg.get("bound", 1.0)),
            name=str(cfg.get("name", "")),
        )


def example31_spec(beta="sin", weights=(0.5, 0.5), x0=0.0, **_) -> LinearModelSpec:
    """Single-type system ``dX = <beta(.), mu_t> dt + dW`` split into two types.

    The kernel felt from type ``g`` is ``weights[g] * beta(y)`` so that the
    two-type system has exactly the single-type dynamics.
    """
    w = tuple(float(v) for v in weights)
    drift = drift_preset("zero", 1)
    kernels = tuple(tuple(_k_example31(1, weight=w[g], beta=beta) for g in range(2)) for _ in range(2))
    init = InitialLaw("point", (float(x0),))
    return LinearModelSpec(1, (drift, drift), kernels, (init, init), 1.0, f"example31-{beta}")


# ---------------------------------------------------------------------------
# common-factor models


@dataclass(frozen=True)
class CommonFactorModelSpec:
    """Particles driven by a shared factor and by moments of the type laws.

    Coefficients depend on the type laws only through the moments
    ``m_l = <f_l, nu_{g_l}>`` listed in ``moments`` as ``(g_l, f_l)``.
    Shapes (leading axes broadcast):

    * ``drift[a](x, y, m)`` -> ``(..., d)``; ``drift_dy[a]`` -> ``(..., d, m)``;
      ``drift_dmom[a]`` -> ``(..., d, k)``
    * ``factor_drift(y, m)`` -> ``(..., m)``; ``factor_drift_dy`` ->
      ``(..., m, m)``; ``factor_drift_dmom`` -> ``(..., m, k)``
    * ``factor_diffusion(y, m)`` -> ``(..., m, m)`` whose column ``c`` is
      the loading on factor noise ``c``; ``factor_diffusion_dy`` ->
      ``(..., c, i, j)`` = d sigma_ic / d y_j; ``factor_diffusion_dmom`` ->
      ``(..., i, c, l)`` = d sigma_ic / d m_l

    The measure derivative of a coefficient ``G`` towards type ``g`` at
    ``x~`` is ``sum_{l: g_l = g} dG/dm_l * f_l(x~)``.
    """

    d: int
    m: int
    moments: tuple
    drift: tuple
    drift_dy: tuple
    drift_dmom: tuple
    factor_drift: Callable
    factor_drift_dy: Callable
    factor_drift_dmom: Callable
    factor_diffusion: Callable
    factor_diffusion_dy: Callable
    factor_diffusion_dmom: Callable
    initial: tuple
    factor_initial: InitialLaw
    bound: float = 1.0
    name: str = ""

    def __post_init__(self):
        K = len(self.drift)
        if K == 0 or len(self.drift_dy) != K or len(self.drift_dmom) != K or len(self.initial) != K:
            raise ConfigError("drift, companions and initial laws need one entry per type")
        for g, _ in self.moments:
            if not 0 <= g < K:
                raise ConfigError(f"moment refers to unknown type {g}")
        y = np.zeros(self.m)
        mom = np.zeros(self.n_moments)
        sig = np.asarray(self.factor_diffusion(y, mom))
        if sig.shape != (self.m, self.m):
            raise ConfigError(f"factor diffusion must be {self.m}x{self.m}, got shape {sig.shape}")
        if np.asarray(self.factor_drift(y, mom)).shape != (self.m,):
            raise ConfigError("factor drift has the wrong shape")
        x = np.zeros(self.d)
        if np.asarray(self.drift[0](x, y, mom)).shape != (self.d,):
            raise ConfigError("particle drift has the wrong shape")

    @property
    def K(self) -> int:
        return len(self.drift)

    @property
    def n_moments(self) -> int:
        return len(self.moments)

    def moments_of_type(self, g):
        return [l for l, (gl, _) in enumerate(self.moments) if gl == g]

    def moment_values(self, states, slices):
        """Empirical moments ``(..., k)`` from states ``(..., P, d)``."""
        out = [f(states[..., slices[g], :]).mean(axis=-1) for g, f in self.moments]
        if not out:
            return np.zeros(states.shape[:-2] + (0,))
        return np.stack(out, axis=-1)


def common_factor_preset(name, K=1, **params) -> CommonFactorModelSpec:
    """Named common-factor toys with ``d = m = 1``.

    ``decoupled``: particles are plain Brownian motions, ``dY = drift dt +
    sigma dW``.  ``factor_drift``: particle drift ``gain * tanh(y)``, factor
    ``dY = -rate * tanh(Y) dt + sigma dW``.  ``meanfield``: particle drift
    ``gain * tanh(y) + coupling * mean_g <sin, nu_g>``, factor drift
    ``-rate * tanh(y) + feedback * mean_g <sin, nu_g>`` and diffusion
    ``sigma + slope * tanh(y)``.  ``linear_factor``: ``dY = a * Y dt`` with
    no noise (particles decoupled), used to check the factor integrator.
    """
    if name not in COMMON_FACTOR_PRESETS:
        raise ConfigError(f"unknown common-factor preset {name!r}; known: {sorted(COMMON_FACTOR_PRESETS)}")
    try:
        return COMMON_FACTOR_PRESETS[name](int(K), **params)
    except TypeError as exc:
        raise ConfigError(f"bad parameters for preset {name!r}: {exc}") from exc


def _lead(*arrays):
    return np.broadcast_shapes(*(np.shape(a)[:-1] for a in arrays))


def _cf_meanfield(K, gain=1.0, coupling=0.0, rate=0.0, feedback=0.0, sigma=1.0, slope=0.0,
                  drift=0.0, x0=None, y0=None, bound=None, label="meanfield"):
    gain, coupling, rate, feedback = float(gain), float(coupling), float(rate), float(feedback)
    sigma, slope, c0 = float(sigma), float(slope), float(drift)
    moments = tuple((g, (lambda x: np.sin(x[..., 0]))) for g in range(K)) if (coupling or feedback) else ()
    k = len(moments)

    def avg(mom):
        return mom.mean(axis=-1) if k else 0.0

    def b(x, y, mom):
        val = gain * np.tanh(y[..., 0]) + coupling * avg(mom)
        return np.broadcast_to(np.asarray(val)[..., None], _lead(x, y, mom) + (1,)).copy()

    def b_dy(x, y, mom):
        val = gain * (1.0 - np.tanh(y[..., 0]) ** 2)
        return np.broadcast_to(np.asarray(val)[..., None, None], _lead(x, y, mom) + (1, 1)).copy()

    def b_dmom(x, y, mom):
        return np.full(_lead(x, y, mom) + (1, k), coupling / k if k else 0.0)

    def fb(y, mom):
        val = -rate * np.tanh(y[..., 0]) + feedback * avg(mom) + c0
        return np.broadcast_to(np.asarray(val)[..., None], _lead(y, mom) + (1,)).copy()

    def fb_dy(y, mom):
        val = -rate * (1.0 - np.tanh(y[..., 0]) ** 2)
        return np.broadcast_to(np.asarray(val)[..., None, None], _lead(y, mom) + (1, 1)).copy()

    def fb_dmom(y, mom):
        return np.full(_lead(y, mom) + (1, k), feedback / k if k else 0.0)

    def sg(y, mom):
        val = sigma + slope * np.tanh(y[..., 0])
        return np.broadcast_to(np.asarray(val)[..., None, None], _lead(y, mom) + (1, 1)).copy()

    def sg_dy(y, mom):
        val = slope * (1.0 - np.tanh(y[..., 0]) ** 2)
        return np.broadcast_to(np.asarray(val)[..., None, None, None], _lead(y, mom) + (1, 1, 1)).copy()

    def sg_dmom(y, mom):
        return np.zeros(_lead(y, mom) + (1, 1, k))

    if bound is None:
        bound = max(abs(gain) + abs(coupling), abs(rate) + abs(feedback) + abs(c0), abs(sigma) + abs(slope), 1.0)
    init = initial_law(x0)
    return CommonFactorModelSpec(
        d=1, m=1, moments=moments,
        drift=(b,) * K, drift_dy=(b_dy,) * K, drift_dmom=(b_dmom,) * K,
        factor_drift=fb, factor_drift_dy=fb_dy, factor_drift_dmom=fb_dmom,
        factor_diffusion=sg, factor_diffusion_dy=sg_dy, factor_diffusion_dmom=sg_dmom,
        initial=(init,) * K, factor_initial=initial_law(y0), bound=float(bound), name=label,
    )


def _cf_decoupled(K, sigma=1.0, drift=0.0, x0=None, y0=None):
    return _cf_meanfield(K, gain=0.0, sigma=sigma, drift=drift, x0=x0, y0=y0, label="decoupled")


def _cf_factor_drift(K, gain=1.0, rate=0.0, sigma=1.0, x0=None, y0=None):
    return _cf_meanfield(K, gain=gain, rate=rate, sigma=sigma, x0=x0, y0=y0, label="factor_drift")


def _cf_linear_factor(K, a=-1.0, y0=1.0, x0=None, bound=10.0):
    a = float(a)
    zero_b = lambda x, y, mom: np.zeros(_lead(x, y, mom) + (1,))
    return CommonFactorModelSpec(
        d=1, m=1, moments=(),
        drift=(zero_b,) * K,
        drift_dy=(lambda x, y, mom: np.zeros(_lead(x, y, mom) + (1, 1)),) * K,
        drift_dmom=(lambda x, y, mom: np.zeros(_lead(x, y, mom) + (1, 0)),) * K,
        factor_drift=lambda y, mom: a * np.asarray(y, dtype=float),
        factor_drift_dy=lambda y, mom: np.full(_lead(y, mom) + (1, 1), a),
        factor_drift_dmom=lambda y, mom: np.zeros(_lead(y, mom) + (1, 0)),
        factor_diffusion=lambda y, mom: np.zeros(_lead(y, mom) + (1, 1)),
        factor_diffusion_dy=lambda y, mom: np.zeros(_lead(y, mom) + (1, 1, 1)),
        factor_diffusion_dmom=lambda y, mom: np.zeros(_lead(y, mom) + (1, 1, 0)),
        initial=(initial_law(x0),) * K, factor_initial=initial_law(y0), bound=float(bound),
        name="linear_factor",
    )


COMMON_FACTOR_PRESETS = {
    "decoupled": _cf_decoupled,
    "factor_drift": _cf_factor_drift,
    "meanfield": _cf_meanfield,
    "linear_factor": _cf_linear_factor,
}


# ---------------------------------------------------------------------------
# condition probes


@dataclass
class ConditionReport:
    """Outcome of numerical probes of the regularity conditions."""

    max_kernel: float = 0.0
    worst_lipschitz: float = 0.0
    worst_growth: float = 0.0
    bound: float = 0.0
    violations: list = field(default_factory=list)
    expansion_orders: dict = field(default_factory=dict)
    probes: int = 0
    seed: int = 0

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_dict(self):
        return {
            "max_kernel": self.max_kernel,
            "worst_lipschitz": self.worst_lipschitz,
            "worst_growth": self.worst_growth,
            "bound": self.bound,
            "violations": list(self.violations),
            "expansion_orders": dict(self.expansion_orders),
            "probes": self.probes,
            "seed": self.seed,
        }


def validate_conditions(spec, probes=256, seed=0, scale=3.0) -> ConditionReport:
    """Probe boundedness, Lipschitz and growth conditions on random points.

    The probes are advisory: they can flag a violated bound but cannot prove
    one holds.  The model is never modified, and the same seed gives the same
    report.
    """
    if probes < 1:
        raise ValueError("probes must be at least 1")
    if isinstance(spec, CommonFactorModelSpec):
        return _validate_common_factor(spec, probes, seed, scale)
    gen = rng.stream(seed, rng.PROBE)
    d = spec.d
    rep = ConditionReport(bound=spec.bound, probes=probes, seed=int(seed))
    x = scale * gen.standard_normal((probes, d))
    y = scale * gen.standard_normal((probes, d))
    near = 1e-3 * gen.standard_normal((2, probes, d))
    xf = scale * gen.standard_normal((probes, d))
    yf = scale * gen.standard_normal((probes, d))
    t = gen.random(probes)
    tol = 1e-9
    rep.worst_growth = -np.inf
    for a in range(spec.K):
        for g in range(spec.K):
            kern = spec.kernels[a][g]
            label = f"kernel[{a}][{g}]"
            bxy = kern(x, y)
            for i in range(probes):
                if not np.all(np.isfinite(bxy[i])):
                    raise ConditionError(f"{label} is not finite at x={x[i].tolist()}, y={y[i].tolist()}")
            nb = float(np.max(np.linalg.norm(bxy, axis=-1)))
            rep.max_kernel = max(rep.max_kernel, nb)
            worst = 0.0
            for x2, y2 in ((x + near[0], y + near[1]), (xf, yf)):
                diff = np.linalg.norm(kern(x2, y2) - bxy, axis=-1)
                dist = np.linalg.norm(x2 - x, axis=-1) + np.linalg.norm(y2 - y, axis=-1)
                worst = max(worst, float(np.max(diff / dist)))
            rep.worst_lipschitz = max(rep.worst_lipschitz, worst)
            if nb > spec.bound * (1 + tol):
                rep.violations.append(f"{label}: sup norm {nb:.6g} exceeds bound {spec.bound:g}")
            if worst > spec.bound * (1 + 1e-3) + tol:
                rep.violations.append(f"{label}: Lipschitz quotient {worst:.6g} exceeds bound {spec.bound:g}")
        f = spec.drifts[a]
        fx = np.broadcast_to(f(t, x), x.shape)
        for i in range(probes):
            if not np.all(np.isfinite(fx[i])):
                raise ConditionError(f"drift[{a}] is not finite at t={t[i]:.6g}, x={x[i].tolist()}")
        growth = float(np.max(np.sum(x * fx, axis=-1) / (1.0 + np.sum(x * x, axis=-1))))
        rep.worst_growth = max(rep.worst_growth, growth)
        if growth > spec.bound * (1 + tol):
            rep.violations.append(f"drift[{a}]: x.f/(1+|x|^2) = {growth:.6g} exceeds bound {spec.bound:g}")
    return rep


def _validate_common_factor(spec, probes, seed, scale):
    gen = rng.stream(seed, rng.PROBE)
    d, m, k = spec.d, spec.m, spec.n_moments
    rep = ConditionReport(bound=spec.bound, probes=probes, seed=int(seed))
    x = scale * gen.standard_normal((probes, d))
    y = scale * gen.standard_normal((probes, m))
    mom = np.clip(gen.standard_normal((probes, k)), -1, 1)
    checks = [(f"drift[{a}]", lambda y_, m_, a=a: spec.drift[a](x, y_, m_)) for a in range(spec.K)]
    checks += [("factor_drift", spec.factor_drift), ("factor_diffusion", spec.factor_diffusion)]
    for label, g in checks:
        val = np.asarray(g(y, mom))
        if not np.all(np.isfinite(val)):
            i = np.argwhere(~np.isfinite(val))[0][0]
            raise ConditionError(f"{label} is not finite at y={y[i].tolist()}, moments={mom[i].tolist()}")
        nb = float(np.max(np.abs(val)))
        rep.max_kernel = max(rep.max_kernel, nb)
        if nb > spec.bound * (1 + 1e-9):
            rep.violations.append(f"{label}: sup norm {nb:.6g} exceeds bound {spec.bound:g}")
    # first-order expansion: residual should shrink like eps^2 along
    # y -> y + eps v and nu -> (1 - eps) nu + eps delta_z
    v = gen.standard_normal((probes, m))
    z = scale * gen.standard_normal((probes, d))
    fz = np.stack([f(z) for _, f in spec.moments], axis=-1) if k else np.zeros((probes, 0))

    def expansion(label, g, g_dy, g_dmom, contract_y, contract_m):
        res = []
        for eps in (1e-2, 5e-3):
            dm = eps * (fz - mom)
            lin = np.einsum(contract_y, g_dy(y, mom), eps * v) + np.einsum(contract_m, g_dmom(y, mom), dm)
            r = np.asarray(g(y + eps * v, mom + dm)) - np.asarray(g(y, mom)) - lin
            res.append(np.linalg.norm(r.reshape(probes, -1), axis=-1))
        r1, r2 = res
        mask = r1 > 1e-13
        if not np.any(mask):
            rep.expansion_orders[label] = float("inf")
            return
        order = float(np.median(np.log2(r1[mask] / np.maximum(r2[mask], 1e-300))))
        rep.expansion_orders[label] = order
        if order < 1.5:
            rep.violations.append(f"{label}: first-order companions inconsistent (observed residual order {order:.3g})")

    for a in range(spec.K):
        expansion(
            f"drift[{a}]",
            lambda y_, m_, a=a: spec.drift[a](x, y_, m_),
            lambda y_, m_, a=a: spec.drift_dy[a](x, y_, m_),
            lambda y_, m_, a=a: spec.drift_dmom[a](x, y_, m_),
            "...ij,...j->...i", "...il,...l->...i",
        )
    expansion("factor_drift", spec.factor_drift, spec.factor_drift_dy, spec.factor_drift_dmom,
              "...ij,...j->...i", "...il,...l->...i")
    expansion("factor_diffusion", spec.factor_diffusion,
              spec.factor_diffusion_dy, spec.factor_diffusion_dmom,
              "...cij,...j->...ic", "...icl,...l->...ic")
    return rep
