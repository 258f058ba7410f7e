"""Run a verification experiment from Python and write its report.

The same runs are available from the command line, for example
``fluctlab clt-verify --config configs/acceptance/c2_null_interaction.yaml``.
"""
import sys

from fluctlab.harness import emit_report, make_config, run_experiment

out = sys.argv[1] if len(sys.argv) > 1 else "fluctlab-out/demo-clt"
cfg = make_config("clt-verify", ["layout.N=200", "replications=400", "grid.dt=0.02", "operator.M=500",
                                 "tolerances.ks_min_pass=6"])
rep = run_experiment(cfg)
for line in rep.summary_lines():
    print(line)
print("files:", [p.name for p in emit_report(rep, out)][:6], "...")
