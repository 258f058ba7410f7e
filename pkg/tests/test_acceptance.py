"""Acceptance criteria run at their stated sizes and tolerances.

Each criterion loads its config from ``configs/acceptance`` and checks the
named pass/fail decisions of the resulting report.  A PASS/FAIL line per
criterion is printed and repeated in the pytest terminal summary.
"""
import time
from pathlib import Path

import pytest

from conftest import ACCEPTANCE_LINES
from fluctlab.harness import cli
from fluctlab.harness.config import EXPERIMENTS, load_config
from fluctlab.harness.experiments import run_experiment
from small_configs import cli_args, output_files

CONFIGS = Path(__file__).resolve().parents[1] / "configs" / "acceptance"


def _record(number, title, passed, detail):
    line = f"{'PASS' if passed else 'FAIL'} criterion {number}: {title} ({detail})"
    ACCEPTANCE_LINES.append(line)
    print(line)


def _check(number, title, config, names):
    start = time.perf_counter()
    rep = run_experiment(load_config(CONFIGS / config))
    elapsed = time.perf_counter() - start
    if callable(names):
        names = names(rep)
    results = {n: rep.criterion(n) for n in names}
    passed = all(c.passed for c in results.values())
    parts = []
    for n, c in results.items():
        shown = ", ".join(f"{k}={v:.4g}" if isinstance(v, float) else f"{k}={v}" for k, v in sorted(c.detail.items())
                          if not isinstance(v, (list, dict)))
        parts.append(f"{n} {'ok' if c.passed else 'failed'}" + (f" [{shown}]" if shown else ""))
    _record(number, title, passed, f"{'; '.join(parts)}; {elapsed:.0f}s")
    return rep, results


def test_criterion_1_example31_three_way():
    _, res = _check(1, "example31 operator, oracle and replications agree", "c1_example31.yaml",
                    ["operator_vs_oracle", "empirical_vs_oracle", "empirical_vs_operator"])
    assert all(c.passed for c in res.values()), res


def test_criterion_2_null_interaction():
    _, res = _check(2, "null interaction variance and normality", "c2_null_interaction.yaml",
                    ["variance_target", "ks_normality"])
    assert all(c.passed for c in res.values()), res


def test_criterion_3_trace_identities():
    _, res = _check(3, "trace identities of the example31 operator", "c3_traces.yaml",
                    ["trace_A2_zero", "trace_AAstar_formula"])
    assert all(c.passed for c in res.values()), res


def test_criterion_4_girsanov_mass():
    _, res = _check(4, "Girsanov mass and moment gaps", "c4_girsanov.yaml", ["exp_J_mass", "moment_gap_monotone"])
    assert all(c.passed for c in res.values()), res


def test_criterion_5_mwi_isometries():
    def names(rep):
        return [c.name for c in rep.criteria if c.name.startswith("isometry_")] + ["exp_J_mass"]

    _, res = _check(5, "multiple Wiener integral isometries and E exp(J)", "c5_mwi.yaml", names)
    assert len(res) >= 4
    assert all(c.passed for c in res.values()), res


def test_criterion_6_dynkin_moments():
    _, res = _check(6, "symmetric statistics moments at N=4000, ratio 2:1", "c6_dynkin.yaml", ["moments_N4000"])
    assert all(c.passed for c in res.values()), res


def test_criterion_7_chaos_rate():
    _, res = _check(7, "pair correlation log-log slope", "c7_chaos_rate.yaml", ["chaos_slope"])
    assert all(c.passed for c in res.values()), res


def test_criterion_8_common_factor():
    _, res = _check(8, "common-factor mixture law and variance", "c8_common_factor.yaml",
                    ["variance_decomposition", "ks_mixture"])
    _, ctl = _check("8c", "factor-decoupled control collapses to the Gaussian case", "c8_control.yaml",
                    ["control_collapse"])
    assert all(c.passed for c in res.values()), res
    assert all(c.passed for c in ctl.values()), ctl


def test_criterion_9_determinism(tmp_path):
    mismatched = []
    for cmd in EXPERIMENTS:
        a, b = tmp_path / cmd / "a", tmp_path / cmd / "b"
        cli.main(cli_args(cmd, a))
        cli.main(cli_args(cmd, b))
        fa, fb = output_files(a), output_files(b)
        if "report.json" not in fa or fa != fb:
            mismatched.append(cmd)
    _record(9, "byte-identical CLI re-runs", not mismatched,
            f"{len(EXPERIMENTS)} commands" + (f"; mismatched: {', '.join(mismatched)}" if mismatched else ""))
    assert not mismatched
