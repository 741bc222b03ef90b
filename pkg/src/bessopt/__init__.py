"""Battery dispatch optimization with input-convex efficiency surrogates."""

from .battery import (
    BatteryParams,
    DispatchSchedule,
    Trajectory,
    charge_efficiency,
    charge_transfer,
    discharge_efficiency,
    discharge_transfer,
    net_pv_power,
    ramp_objective,
    revenue,
    simulate_plant,
    smoothing_mse,
    soc_series,
    soc_step,
)
from .formulations import (
    PV_SMOOTHING,
    REVENUE_MAX,
    DispatchResult,
    UseCase,
    VariableLayout,
    bigm_activation_audit,
    build_bigm_icnn,
    build_linear,
    build_nlp,
    build_relaxed_icnn,
    extract_result,
    feasibility_gap,
    result_from_nlp,
    two_stage_linear_solve,
    usecase_metric,
    usecase_objective,
)
from .icnn import (
    ConvexityReport,
    Icnn,
    Layer,
    TrainHyper,
    TrainingError,
    TrainingSet,
    adam_train,
    check_convexity,
    forward,
    generate_training_data,
    load_icnn,
    project_nonneg,
    rmse,
    save_icnn,
)
from .miqp import MixedIntegerProgram, solve_miqp
from .nlp import NlpProblem, NlpResult, SolverError, solve_nlp_multistart
from .qp import QuadraticProgram, Solution, kkt_residuals, solve_qp
from .timeseries import ParseError, load_timeseries_csv, synth_lmp, synth_pv, write_timeseries_csv

__version__ = "0.1.0"
