"""Tiny per-command overrides that keep every CLI run to a few seconds."""

COMMON = ["grid.dt=0.1", "layout.N=20", "replications=20", "batches=2", "operator.M=40", "reference.per_particle=5"]
SMALL = {
    "simulate": [],
    "covariance": [],
    "clt-verify": ["tolerances.ks_min_pass=1"],
    "example31": ["params.oracle_paths=2000", "operator.replicas=2"],
    "common-factor": ["operator.factor_draws=2", "params.mixture_draws=500", "tolerances.ks_min_pass=1"],
    "dynkin-check": ["replications=40", "params.N=[20, 40]", "params.base_M=400", "params.draws=2000", "params.chunk=20"],
    "operator-diag": ["params.doubling=false"],
    "mwi-check": ["params.draws=4000", "params.isometry_draws=4000", "params.blocks=2"],
    "chaos-rate": ["params.N=[10, 20]"],
    "girsanov": ["params.N=[10, 20]", "params.mass_N=10", "params.chunk=5", "params.blocks=2"],
}


def cli_args(cmd, out, extra=()):
    argv = [cmd, "--out", str(out), "--seed", "5"]
    for o in COMMON + SMALL[cmd] + list(extra):
        argv += ["--override", o]
    return argv


def output_files(out):
    return {p.name: p.read_bytes() for p in sorted(out.iterdir()) if p.suffix in (".json", ".csv", ".flx", ".md")}
