"""Verification reports and their byte-stable file outputs."""
import json
import math
import platform
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
import scipy
from scipy import stats

__all__ = ["VerificationReport", "Criterion", "emit_report", "plain", "environment"]


def plain(obj):
    """Recursively convert numpy scalars/arrays and tuples to JSON-ready values."""
    if isinstance(obj, dict):
        return {str(k): plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return plain(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    return obj


def _json_float(v):
    # JSON has no inf/nan; keep them readable and reversible
    if isinstance(v, float) and not math.isfinite(v):
        return {"__float__": repr(v)}
    return v


def _encode(obj):
    if isinstance(obj, dict):
        return {k: _encode(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_encode(v) for v in obj]
    return _json_float(obj)


def _decode(obj):
    if isinstance(obj, dict):
        if set(obj) == {"__float__"}:
            return float(obj["__float__"])
        return {k: _decode(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_decode(v) for v in obj]
    return obj


def environment():
    return {"python": platform.python_version(), "numpy": np.__version__, "scipy": scipy.__version__}


@dataclass
class Criterion:
    """One pass/fail decision tied to a named tolerance."""

    name: str
    passed: bool
    tolerance: str
    detail: dict = field(default_factory=dict)


@dataclass
class VerificationReport:
    """Outcome of one experiment.

    ``estimates`` rows carry ``name``, ``estimate``, ``se`` and optionally
    ``target`` and ``target_se``; ``tests`` rows carry test statistics;
    ``samples`` maps a name to ``{"labels": [...], "values": [[...]]}`` for
    CSV dumps and plot data.
    """

    experiment: str
    config: dict
    config_hash: str
    estimates: list = field(default_factory=list)
    tests: list = field(default_factory=list)
    criteria: list = field(default_factory=list)
    samples: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)
    environment: dict = field(default_factory=environment)

    def __post_init__(self):
        self.config = plain(self.config)
        self.estimates = plain(self.estimates)
        self.tests = plain(self.tests)
        self.samples = plain(self.samples)
        self.criteria = [c if isinstance(c, Criterion) else Criterion(**c) for c in self.criteria]
        for c in self.criteria:
            c.passed = bool(c.passed)
            c.detail = plain(c.detail)
        # in-memory objects (ensembles, covariance reports) for the CLI to persist; not serialized
        self.artifacts = {}

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.criteria)

    def add_estimate(self, name, estimate, se, target=None, target_se=None, **extra):
        row = {"name": name, "estimate": estimate, "se": se}
        if target is not None:
            row["target"] = target
            row["target_se"] = target_se
        row.update(extra)
        self.estimates.append(plain(row))

    def add_test(self, name, **values):
        self.tests.append(plain({"name": name, **values}))

    def add_criterion(self, name, passed, tolerance, **detail):
        self.criteria.append(Criterion(name, bool(passed), tolerance, plain(detail)))
        return bool(passed)

    def add_samples(self, name, labels, values, weights=None):
        values = np.atleast_2d(np.asarray(values, dtype=float))
        if values.shape[0] == 1 and len(labels) != 1:
            values = values.reshape(-1, len(labels))
        entry = {"labels": list(labels), "values": values.tolist()}
        if weights is not None:
            entry["weights"] = np.asarray(weights, dtype=float).tolist()
        self.samples[name] = entry

    def criterion(self, name) -> Criterion:
        for c in self.criteria:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_dict(self):
        d = asdict(self)
        d["passed"] = self.passed
        return d

    def to_json(self) -> str:
        return json.dumps(_encode(self.to_dict()), sort_keys=True, indent=2, allow_nan=False) + "\n"

    @classmethod
    def from_json(cls, text):
        d = _decode(json.loads(text))
        d.pop("passed", None)
        return cls(**d)

    def summary_lines(self):
        lines = []
        for c in self.criteria:
            lines.append(f"{'PASS' if c.passed else 'FAIL'} {self.experiment}:{c.name} [{c.tolerance}]")
        return lines


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.6g}"
    if isinstance(v, list):
        return "[" + ", ".join(_fmt(x) for x in v) + "]"
    return str(v)


def to_markdown(rep: VerificationReport) -> str:
    out = [f"# {rep.experiment}", "", f"config hash: `{rep.config_hash}`", ""]
    out.append(f"overall: {'PASS' if rep.passed else 'FAIL'}")
    out += ["", "## Criteria", "", "| criterion | result | tolerance | detail |", "|---|---|---|---|"]
    for c in rep.criteria:
        detail = "; ".join(f"{k}={_fmt(v)}" for k, v in sorted(c.detail.items()))
        out.append(f"| {c.name} | {'PASS' if c.passed else 'FAIL'} | {c.tolerance} | {detail} |")
    out += ["", "## Estimates", "", "| name | estimate | se | target | target se |", "|---|---|---|---|---|"]
    for e in rep.estimates:
        out.append(
            f"| {e['name']} | {_fmt(e['estimate'])} | {_fmt(e['se'])} | {_fmt(e.get('target', ''))} | {_fmt(e.get('target_se', ''))} |"
        )
    out += ["", "## Tests", ""]
    for t in rep.tests:
        out.append("- " + ", ".join(f"{k}={_fmt(v)}" for k, v in sorted(t.items())))
    if rep.notes:
        out += ["", "## Notes", ""] + [f"- {n}" for n in rep.notes]
    out += ["", "## Environment", ""] + [f"- {k}: {v}" for k, v in sorted(rep.environment.items())]
    return "\n".join(out) + "\n"


def _plot_data(values, bins=40):
    x = np.sort(np.asarray(values, dtype=float))
    x = x[np.isfinite(x)]
    if x.size < 2 or x[0] == x[-1]:
        return [], []
    counts, edges = np.histogram(x, bins=bins)
    width = edges[1] - edges[0]
    hist = [(edges[i], edges[i + 1], counts[i], counts[i] / (x.size * width)) for i in range(bins)]
    p = (np.arange(1, x.size + 1) - 0.5) / x.size
    z = stats.norm.ppf(p)
    sd = x.std(ddof=1)
    qq = [(z[i], (x[i] - x.mean()) / sd if sd > 0 else 0.0) for i in range(x.size)]
    return hist, qq


def emit_report(rep: VerificationReport, out_dir, formats=("json", "md", "csv")):
    """Write the report; returns the list of written paths.

    ``report.json`` and ``report.md`` hold the report, each sample set goes
    to ``samples_<name>.csv`` and every sample column gets histogram and
    normal QQ plot data.  The files depend only on the report contents.
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    written = []
    header_line = f"# config_hash={rep.config_hash}"
    try:
        if "json" in formats:
            p = out / "report.json"
            p.write_text(rep.to_json())
            written.append(p)
        if "md" in formats:
            p = out / "report.md"
            p.write_text(to_markdown(rep))
            written.append(p)
        if "csv" in formats:
            for name in sorted(rep.samples):
                s = rep.samples[name]
                vals = np.asarray(s["values"], dtype=float).reshape(-1, len(s["labels"]))
                header = ["index"] + list(s["labels"]) + (["weight"] if "weights" in s else [])
                rows = []
                for i, row in enumerate(vals):
                    r = [str(i)] + [float(v) for v in row]
                    if "weights" in s:
                        r.append(float(s["weights"][i]))
                    rows.append(r)
                p = out / f"samples_{name}.csv"
                _write_with_hash(p, header_line, header, rows)
                written.append(p)
                for k, label in enumerate(s["labels"]):
                    hist, qq = _plot_data(vals[:, k])
                    p = out / f"hist_{name}_{label}.csv"
                    _write_with_hash(p, header_line, ["left", "right", "count", "density"], hist)
                    written.append(p)
                    p = out / f"qq_{name}_{label}.csv"
                    _write_with_hash(p, header_line, ["normal_quantile", "standardized_value"], qq)
                    written.append(p)
    except OSError as exc:
        raise OSError(f"failed writing report files in {out}: {exc}") from exc
    return written


def _write_with_hash(path, header_line, header, rows):
    with open(path, "w", newline="\n") as fh:
        fh.write(header_line + "\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(v if isinstance(v, str) else repr(float(v)) for v in row) + "\n")
