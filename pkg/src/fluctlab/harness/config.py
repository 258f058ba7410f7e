"""Experiment configuration: key tree, defaults, file loading and overrides."""
import copy
import json
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Optional

import yaml

from ..model import (
    ConfigError,
    LinearModelSpec,
    TimeGrid,
    build_layout,
    common_factor_preset,
)
from ..statistics import config_hash, functional_from_expression

__all__ = ["ExperimentConfig", "DEFAULTS", "load_config", "apply_overrides", "make_config"]

EXPERIMENTS = (
    "simulate",
    "covariance",
    "clt-verify",
    "example31",
    "common-factor",
    "dynkin-check",
    "operator-diag",
    "mwi-check",
    "chaos-rate",
    "girsanov",
)

_BASE = {
    "seed": 0,
    "model": {"preset": "example31"},
    "layout": {"K": 2, "N": 2000, "weights": [0.5, 0.5]},
    "grid": {"T": 1.0, "dt": 0.01},
    "replications": 2000,
    "batches": 10,
    "reference": {"m_ref": None, "per_particle": 25, "picard_iters": 0},
    "operator": {"M": 2000, "replicas": 8, "factor_draws": 64},
    "functionals": [],
    "tolerances": {},
    "params": {},
    "out": None,
    "threads": 1,
}

# per-experiment defaults layered over the base profile
DEFAULTS = {
    "simulate": {"replications": 1, "params": {"csv_max_particles": 200}},
    "covariance": {
        "functionals": [
            {"expr": "xT - integral(sin(x))", "type": 0, "label": "phi1"},
            {"expr": "xT - integral(sin(x))", "type": 1, "label": "phi2"},
        ],
        "tolerances": {"residual": 1e-10},
    },
    "clt-verify": {
        "functionals": [
            {"expr": "xT - integral(sin(x))", "type": 0, "label": "phi1"},
            {"expr": "xT - integral(sin(x))", "type": 1, "label": "phi2"},
        ],
        "tolerances": {"cov_se": 3.0, "cov_rel": 0.10, "variance_rel": 0.05, "ks_alpha": 0.01, "ks_min_pass": 8},
        "params": {"target_variance": None, "compare_operator": True},
    },
    "example31": {
        "tolerances": {"cov_se": 3.0, "cov_rel": 0.10},
        "params": {"beta": "sin", "kappa1": 1.0, "kappa2": 1.0, "lam": 0.5, "oracle_paths": 1_000_000},
    },
    "common-factor": {
        "model": {"common_factor": "factor_drift", "K": 1, "gain": 2.0, "rate": 0.0, "sigma": 1.0},
        "layout": {"K": 1, "N": 200, "weights": [1.0]},
        "reference": {"m_ref": None, "per_particle": 100, "picard_iters": 0},
        "operator": {"M": 1000, "replicas": 1, "factor_draws": 256},
        "functionals": [{"expr": "tanh(xT)", "type": 0, "label": "tanh_xT"}],
        "tolerances": {"ks_alpha": 0.01, "ks_min_pass": 8, "variance_rel": 0.10},
        "params": {"mixture_draws": 20000, "target_variance": None},
    },
    "dynkin-check": {
        "replications": 20000,
        "tolerances": {"moment_rel": 0.10, "moment_rel_k1": 0.05, "ks_alpha": 0.01},
        "params": {"N": [500, 1000, 4000], "ratio": [2, 1], "base_M": 20000, "draws": 200000, "chunk": 500},
    },
    "operator-diag": {
        "functionals": [
            {"expr": "xT - integral(sin(x))", "type": 0, "label": "phi1"},
            {"expr": "xT - integral(sin(x))", "type": 1, "label": "phi2"},
        ],
        "tolerances": {"trace_se": 3.0, "residual": 1e-10, "neumann_gap": 1e-6, "doubling_se": 3.0},
        "params": {"neumann_terms": 10, "doubling": True, "factor_model": None},
    },
    "mwi-check": {
        "functionals": [{"expr": "xT - integral(sin(x))", "type": 0, "label": "phi1"}],
        "tolerances": {"isometry_rel": 0.05, "isometry_rel_k3": 0.10, "mass_rel": 0.10},
        "params": {"draws": 1_000_000, "isometry_draws": 200_000, "blocks": 20, "mass": 0.99},
    },
    "chaos-rate": {
        "model": {"K": 1, "kernels": {"preset": "bounded_sine", "amplitude": 2.0}, "bound": 2.0},
        "layout": {"K": 1, "weights": [1.0]},
        "replications": 400,
        "functionals": [{"expr": "xT", "type": 0, "label": "xT"}],
        "tolerances": {"slope": -1.0, "slope_tol": 0.4},
        "params": {"N": [100, 400, 1600]},
    },
    "girsanov": {
        "tolerances": {"mass_rel": 0.10, "gap_se": 3.0},
        "params": {"N": [250, 500, 1000], "mass_N": 500, "blocks": 20, "chunk": 50},
    },
}


# keys whose mapping replaces the default instead of merging into it
_REPLACED = ("model",)


def _merge(base, over, top=True):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if top and k in _REPLACED:
            out[k] = copy.deepcopy(v)
        elif isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v, False)
        else:
            out[k] = copy.deepcopy(v)
    return out


@dataclass
class ExperimentConfig:
    """Resolved configuration of one experiment run.

    Every field has an explicit default; seeds are never drawn from the
    clock.  ``params`` holds experiment-specific knobs and ``tolerances``
    the named thresholds each pass/fail decision refers to.
    """

    experiment: str
    seed: int = 0
    model: dict = field(default_factory=dict)
    layout: dict = field(default_factory=dict)
    grid: dict = field(default_factory=dict)
    replications: int = 1
    batches: int = 10
    reference: dict = field(default_factory=dict)
    operator: dict = field(default_factory=dict)
    functionals: list = field(default_factory=list)
    tolerances: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)
    out: Optional[str] = None
    threads: int = 1

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}; known: {', '.join(EXPERIMENTS)}")
        if int(self.seed) != self.seed or self.seed < 0 or self.seed >= 2 ** 64:
            raise ConfigError(f"seed must be an unsigned 64-bit integer, got {self.seed!r}")
        self.seed = int(self.seed)
        if int(self.replications) < 1:
            raise ConfigError("replications must be at least 1")
        self.replications = int(self.replications)
        if int(self.batches) < 1:
            raise ConfigError("batches must be at least 1")
        self.batches = int(self.batches)
        if int(self.threads) < 1:
            raise ConfigError("threads must be at least 1")
        self.threads = int(self.threads)

    def to_dict(self):
        return asdict(self)

    def hash(self) -> str:
        """Hash of everything that affects results (output dir and threads excluded)."""
        d = self.to_dict()
        d.pop("out")
        d.pop("threads")
        return config_hash(d)

    # -- resolved objects ---------------------------------------------------

    def time_grid(self) -> TimeGrid:
        g = self.grid
        T = float(g.get("T", 1.0))
        if "steps" in g and g["steps"] is not None:
            return TimeGrid(T, int(g["steps"]))
        return TimeGrid.from_step(T, float(g.get("dt", 0.01)))

    def is_common_factor(self) -> bool:
        return "common_factor" in self.model

    def model_spec(self):
        m = dict(self.model)
        if "common_factor" in m:
            name = m.pop("common_factor")
            return common_factor_preset(name, **m)
        if m.get("preset") == "example31":
            m.setdefault("weights", self.layout.get("weights", [0.5, 0.5]))
        elif "K" not in m:
            m["K"] = int(self.layout.get("K", 1))
        return LinearModelSpec.from_config(m)

    def population(self, N=None):
        lay = self.layout
        K = int(lay.get("K", 1))
        if N is None and lay.get("counts") is not None:
            return build_layout(K, counts=lay["counts"], weights=lay.get("weights"))
        N = int(lay.get("N", 2000) if N is None else N)
        return build_layout(K, N=N, weights=lay.get("weights"))

    def m_ref(self, N=None) -> int:
        ref = self.reference
        if ref.get("m_ref") is not None:
            return int(ref["m_ref"])
        lay = self.population(N)
        return int(ref.get("per_particle", 25)) * max(lay.counts)

    def functional_list(self):
        """``[(phi, type, label)]`` parsed from the functional declarations."""
        out = []
        for k, f in enumerate(self.functionals):
            if isinstance(f, str):
                f = {"expr": f}
            if "expr" not in f:
                raise ConfigError(f"functional {k} lacks an 'expr' entry")
            label = str(f.get("label", f"f{k}"))
            d = int(self.model.get("d", 1))
            phi = functional_from_expression(str(f["expr"]), d=d, name=label)
            out.append((phi, int(f.get("type", 0)), label))
        return out

    def tol(self, name):
        if name not in self.tolerances:
            raise ConfigError(f"tolerance {name!r} is not configured")
        return self.tolerances[name]


def make_config(experiment, overrides=None, **fields) -> ExperimentConfig:
    """Defaults for ``experiment`` merged with ``fields`` and dotted ``overrides``."""
    if experiment not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {experiment!r}; known: {', '.join(EXPERIMENTS)}")
    data = _merge(_BASE, DEFAULTS.get(experiment, {}))
    data = _merge(data, fields)
    if overrides:
        data = apply_overrides(data, overrides)
    return ExperimentConfig(experiment=experiment, **data)


def load_config(path, experiment=None, overrides=None) -> ExperimentConfig:
    """Read a YAML or JSON config file; ``experiment`` fills a missing key."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (ValueError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    data = data or {}
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must hold a mapping at the top level")
    exp = data.pop("experiment", experiment)
    if exp is None:
        raise ConfigError(f"config {path} does not name an experiment")
    if experiment is not None and exp != experiment:
        raise ConfigError(f"config {path} is for {exp!r}, not {experiment!r}")
    unknown = set(data) - set(_BASE)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    return make_config(exp, overrides, **data)


def apply_overrides(data, overrides):
    """Apply ``key.sub=value`` strings; values are parsed as YAML scalars or lists."""
    data = copy.deepcopy(data)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, raw = item.split("=", 1)
        try:
            value = yaml.safe_load(raw)
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse override value {raw!r}: {exc}") from exc
        parts = key.strip().split(".")
        if parts[0] not in _BASE:
            raise ConfigError(f"unknown config key {parts[0]!r}")
        node = data
        for p in parts[:-1]:
            if not isinstance(node.get(p), dict):
                node[p] = {}
            node = node[p]
        node[parts[-1]] = value
    return data
