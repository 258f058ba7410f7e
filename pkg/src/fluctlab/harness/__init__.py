"""Experiment configuration, runners, reports and the command line."""
from .config import DEFAULTS, EXPERIMENTS, ExperimentConfig, apply_overrides, load_config, make_config
from .experiments import (
    ExperimentError,
    run_chaos_rate,
    run_clt_experiment,
    run_common_factor_experiment,
    run_covariance,
    run_dynkin_check,
    run_example31,
    run_experiment,
    run_girsanov_check,
    run_mwi_check,
    run_operator_diagnostics,
    run_simulate,
)
from .report import Criterion, VerificationReport, emit_report, to_markdown
