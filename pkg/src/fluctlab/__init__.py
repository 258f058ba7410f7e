"""Simulation and limit-theory toolkit for fluctuations of multi-type
interacting particle systems, with and without a common factor."""
from .model import (
    CommonFactorModelSpec,
    ConfigError,
    LinearModelSpec,
    PopulationLayout,
    TimeGrid,
    build_layout,
    common_factor_preset,
    example31_spec,
    validate_conditions,
)
from .operators import (
    build_random_operator,
    build_sample_operator,
    fredholm_solve,
    limit_covariance,
    mixture_sampler,
    sigma_conditional,
    trace_diagnostics,
)
from .simulate import (
    PathEnsemble,
    ReferenceEnsemble,
    simulate_common_factor_interacting,
    simulate_conditional_reference,
    simulate_interacting,
    simulate_reference,
)
from .statistics import (
    PathFunctional,
    center_functional,
    functional_from_expression,
    sample_covariance,
    terminal,
    v_alpha,
    xi_alpha,
)

__version__ = "0.1.0"
