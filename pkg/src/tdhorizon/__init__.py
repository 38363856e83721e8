"""Multi-step TD horizon analysis for finite Markov decision processes.

The package studies linear value estimation with off-policy sampling and
bootstrapping, where the one-step projected backup can be expansive and the
usual updates diverge. Lengthening the backup to n steps restores both a
contraction (beyond a computable horizon n_star) and a negative definite
expected update (beyond n_bar_star). Everything here is exact linear
algebra on small problems, plus sampled counterparts for the stochastic
updates, with every claim backed by a computed certificate.
"""

from .exceptions import (
    ConfigurationError,
    EnumerationLimitError,
    NumericalError,
    RankError,
    SingularSystemError,
    StationaryDistributionError,
)
from .mdp import (
    EvaluationSetup,
    FeatureMap,
    FiniteMdp,
    Policy,
    PolicyKernel,
    build_setup,
    policy_kernel,
    stationary_distribution,
)
from .operators import (
    HorizonReport,
    HorizonRow,
    NStepSystem,
    ProjectionData,
    SolutionReport,
    bellman_n,
    contraction_horizon,
    error_bounds,
    fixed_point,
    hurwitz_horizon,
    n_step_system,
    projection,
    true_solution,
    weighted_gram,
)
from .solvers import (
    CurvatureReport,
    IterTrace,
    ObjectiveKind,
    curvature,
    find_stable_alpha,
    gradient_descent_run,
    npvi_run,
    objective_value_and_gradient,
    schur_certificate,
    system_iteration_run,
)
from .sampling import (
    DEFAULT_SCHEDULE,
    RNG_LABEL,
    PathEnumerator,
    StepSizeSchedule,
    StochTrace,
    TrajectorySample,
    expected_update,
    make_rng,
    ngtd_step,
    ntd_step,
    ode_direction,
    run_stochastic,
    sample_trajectory,
)
from .problems import (
    BUILTIN_NAMES,
    ProblemSpec,
    builtin_problem,
    hash_problem,
    load_problem,
    problem_from_dict,
    random_problem,
    star_problem,
    twostate_problem,
)
from .reports import (
    atomic_write_text,
    format_float,
    iter_trace_csv,
    json_report,
    stoch_trace_csv,
    write_iter_trace,
    write_json,
    write_stoch_trace,
)
from .estimators import (
    DirectFixedPoint,
    MultiStepGradientTD,
    MultiStepTD,
    ObjectiveGradientDescent,
    ProjectedValueIteration,
    RichardsonIteration,
    check_evaluation_setup,
    check_state_indices,
)
from .cli import SweepConfig, main
from .version import __version__

__all__ = [
    "__version__",
    "BUILTIN_NAMES",
    "DEFAULT_SCHEDULE",
    "RNG_LABEL",
    "ConfigurationError",
    "CurvatureReport",
    "DirectFixedPoint",
    "EnumerationLimitError",
    "EvaluationSetup",
    "FeatureMap",
    "FiniteMdp",
    "HorizonReport",
    "HorizonRow",
    "IterTrace",
    "MultiStepGradientTD",
    "MultiStepTD",
    "NStepSystem",
    "NumericalError",
    "ObjectiveGradientDescent",
    "ObjectiveKind",
    "PathEnumerator",
    "Policy",
    "PolicyKernel",
    "ProblemSpec",
    "ProjectedValueIteration",
    "ProjectionData",
    "RankError",
    "RichardsonIteration",
    "SingularSystemError",
    "SolutionReport",
    "StationaryDistributionError",
    "StepSizeSchedule",
    "StochTrace",
    "SweepConfig",
    "TrajectorySample",
    "atomic_write_text",
    "bellman_n",
    "build_setup",
    "builtin_problem",
    "format_float",
    "iter_trace_csv",
    "json_report",
    "stoch_trace_csv",
    "write_iter_trace",
    "write_json",
    "write_stoch_trace",
    "check_evaluation_setup",
    "check_state_indices",
    "contraction_horizon",
    "curvature",
    "error_bounds",
    "expected_update",
    "find_stable_alpha",
    "fixed_point",
    "gradient_descent_run",
    "hurwitz_horizon",
    "load_problem",
    "main",
    "make_rng",
    "n_step_system",
    "ngtd_step",
    "npvi_run",
    "ntd_step",
    "objective_value_and_gradient",
    "ode_direction",
    "policy_kernel",
    "problem_from_dict",
    "projection",
    "random_problem",
    "hash_problem",
    "star_problem",
    "twostate_problem",
    "run_stochastic",
    "sample_trajectory",
    "schur_certificate",
    "stationary_distribution",
    "system_iteration_run",
    "true_solution",
    "weighted_gram",
]
