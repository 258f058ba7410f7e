"""Command line entry point ``fluctlab``.

Exit codes: 0 all criteria passed, 1 a tolerance failed, 2 configuration
error, 3 runtime error.
"""
import argparse
import json
import logging
import sys
from pathlib import Path

from ..model import ConfigError
from ..storage import ensemble_to_csv, save_ensemble
from .config import EXPERIMENTS, load_config, make_config
from .experiments import run_experiment
from .report import emit_report

log = logging.getLogger("fluctlab")

EXIT_PASS, EXIT_FAIL, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3


def build_parser():
    parser = argparse.ArgumentParser(prog="fluctlab", description="Fluctuation experiments for multi-type particle systems.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    for name in EXPERIMENTS:
        p = sub.add_parser(name, help=f"run the {name} experiment")
        p.add_argument("--config", help="YAML or JSON config file")
        p.add_argument("--seed", type=int, help="root seed (unsigned 64-bit)")
        p.add_argument("--out", help="output directory")
        p.add_argument("--threads", type=int, help="worker threads")
        p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                       help="dotted config override, e.g. layout.N=500 (repeatable)")
    return parser


def resolve_config(args):
    overrides = list(args.override)
    for flag, key in ((args.seed, "seed"), (args.out, "out"), (args.threads, "threads")):
        if flag is not None:
            overrides.append(f"{key}={json.dumps(flag)}")
    if args.config:
        return load_config(args.config, args.command, overrides)
    return make_config(args.command, overrides)


def persist(rep, cfg, out):
    """Write the report and any experiment artifacts under ``out``."""
    written = emit_report(rep, out)
    ens = rep.artifacts.get("ensemble")
    if ens is not None:
        written.append(save_ensemble(Path(out) / "ensemble.flx", ens, {"config_hash": rep.config_hash}))
        if ens.layout.N <= int(cfg.params.get("csv_max_particles", 200)):
            written.append(ensemble_to_csv(Path(out) / "ensemble.csv", ens, f"config_hash={rep.config_hash}"))
    cov = rep.artifacts.get("covariance")
    if cov is not None:
        d = cov.to_dict()
        d["config_hash"] = rep.config_hash
        p = Path(out) / "covariance.json"
        p.write_text(json.dumps(d, sort_keys=True, indent=2) + "\n")
        written.append(p)
    return written


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = cfg.out or str(Path("fluctlab-out") / cfg.experiment)
    try:
        log.info("running %s (config hash %s)", cfg.experiment, cfg.hash())
        rep = run_experiment(cfg)
        persist(rep, cfg, out)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # runtime failures map to one exit code
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    for line in rep.summary_lines():
        print(line)
    print(f"report written to {out}")
    return EXIT_PASS if rep.passed else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
