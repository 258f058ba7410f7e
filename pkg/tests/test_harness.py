import json

import numpy as np
import pytest

from fluctlab.harness import cli
from fluctlab.harness.config import EXPERIMENTS, load_config, make_config
from fluctlab.harness.experiments import run_experiment
from fluctlab.harness.report import VerificationReport, emit_report
from fluctlab.model import ConfigError

from small_configs import COMMON, SMALL, cli_args as _args, output_files as _files


@pytest.mark.parametrize("cmd", EXPERIMENTS)
def test_cli_runs_are_byte_identical(cmd, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    ca = cli.main(_args(cmd, a))
    cb = cli.main(_args(cmd, b))
    assert ca == cb and ca in (0, 1)
    fa, fb = _files(a), _files(b)
    assert "report.json" in fa and fa.keys() == fb.keys()
    for name in fa:
        assert fa[name] == fb[name], name
    rep = json.loads(fa["report.json"])
    assert rep["experiment"] == cmd
    for name, data in fa.items():
        if name.endswith(".csv"):
            assert data.startswith(f"# config_hash={rep['config_hash']}".encode())


def test_threads_do_not_change_results(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    cli.main(_args("clt-verify", a, ["threads=1"]))
    cli.main(_args("clt-verify", b, ["threads=3"]))
    assert (a / "report.json").read_bytes() == (b / "report.json").read_bytes()


def test_cli_exit_codes(tmp_path, capsys):
    assert cli.main(_args("simulate", tmp_path / "ok")) == 0
    assert cli.main(["simulate", "--override", "bogus=1"]) == 2
    assert cli.main(["simulate", "--config", str(tmp_path / "missing.yaml")]) == 2
    # an impossible tolerance fails the run without erroring
    fail = _args("clt-verify", tmp_path / "fail", ["tolerances.cov_rel=0.0", "tolerances.cov_se=0.0"])
    assert cli.main(fail) == 1
    assert "FAIL" in capsys.readouterr().out



def test_cli_runtime_error(tmp_path, monkeypatch):
    def boom(cfg):
        raise RuntimeError("boom")

    monkeypatch.setattr(cli, "run_experiment", boom)
    assert cli.main(_args("simulate", tmp_path)) == 3


def test_config_loading(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("experiment: clt-verify\nseed: 3\nlayout: {N: 50}\n")
    cfg = load_config(p, overrides=["replications=7"])
    assert cfg.seed == 3 and cfg.layout["N"] == 50 and cfg.layout["K"] == 2 and cfg.replications == 7
    p.write_text("experiment: clt-verify\nunknown_key: 1\n")
    with pytest.raises(ConfigError):
        load_config(p)
    p.write_text("experiment: simulate\n")
    with pytest.raises(ConfigError):
        load_config(p, "clt-verify")
    for bad in (["seed=-1"], ["replications=0"], ["noequals"]):
        with pytest.raises(ConfigError):
            make_config("simulate", bad)
    with pytest.raises(ConfigError):
        make_config("nope")


def test_model_mapping_replaces_default():
    cfg = make_config("clt-verify", model={"K": 1, "kernels": "zero"})
    assert cfg.model == {"K": 1, "kernels": "zero"}


def test_hash_ignores_output_and_threads():
    a = make_config("simulate", out="x", threads=1)
    b = make_config("simulate", out="y", threads=4)
    c = make_config("simulate", seed=1)
    assert a.hash() == b.hash() != c.hash()


def test_report_round_trip_and_empty(tmp_path):
    rep = VerificationReport("simulate", {"a": np.float64(1.0)}, "h")
    rep.add_estimate("x", np.float64(1.5), float("inf"), target=1.0, target_se=0.1)
    rep.add_criterion("c", np.bool_(True), "tol=1", worst=np.array([1.0, 2.0]))
    rep.add_samples("s", ["u", "v"], np.arange(6.0).reshape(3, 2))
    back = VerificationReport.from_json(rep.to_json())
    assert back.to_json() == rep.to_json()
    assert back.estimates[0]["se"] == float("inf")
    empty = VerificationReport("simulate", {}, "h")
    assert empty.passed
    written = emit_report(empty, tmp_path / "e")
    assert {p.name for p in written} == {"report.json", "report.md"}


def test_single_replication_gives_infinite_se():
    cfg = make_config("clt-verify", COMMON + ["replications=1", "tolerances.ks_min_pass=1"])
    rep = run_experiment(cfg)
    ses = [e["se"] for e in rep.estimates if e["name"].startswith(("mean[", "cov_empirical"))]
    assert len(ses) == 5 and all(np.isinf(s) for s in ses)
    VerificationReport.from_json(rep.to_json())


def _est(rep, name):
    return next(e for e in rep.estimates if e["name"] == name)


def test_example31_with_silent_first_type():
    cfg = make_config("example31", COMMON + SMALL["example31"] + ["params.kappa1=0.0", "replications=50"])
    rep = run_experiment(cfg)
    for src in ("oracle", "operator", "empirical"):
        for cell in ("phi1,phi1", "phi1,phi2"):
            assert _est(rep, f"sigma_{src}[{cell}]")["estimate"] == 0.0
        assert _est(rep, f"sigma_{src}[phi2,phi2]")["estimate"] > 0.0


def test_example31_without_interaction():
    cfg = make_config("example31", COMMON + SMALL["example31"] + ["params.beta=zero", "replications=50"])
    rep = run_experiment(cfg)
    assert _est(rep, "sigma_oracle[phi1,phi2]")["estimate"] == 0.0
    s11 = _est(rep, "sigma_oracle[phi1,phi1]")
    # b = 0: the functional is W_T, variance T
    assert abs(s11["estimate"] - 1.0) < 4 * s11["se"]
    assert _est(rep, "sigma_oracle[phi2,phi2]")["estimate"] == s11["estimate"]
