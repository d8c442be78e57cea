"""Straggler-aware federated learning simulator.

Core pieces: a small dense-network training stack (nn), neuron-level
sub-models and masked aggregation (submodel), the three dropout policies and
the invariance threshold controller (strategies), the synchronous round
simulator (simulator), dataset tooling (data), and gradient-sparsification
variance analysis (variance). The service module wraps everything in an HTTP
API and cli is a thin client over it.
"""

__version__ = "0.1.0"

from .config import ExperimentConfig, load_config, validate_config
from .data import Dataset, PartitionSpec, load_csv, partition, save_csv, synth_blobs
from .errors import (
    AggregationError,
    AnalysisError,
    ConfigError,
    DimensionError,
    InputError,
    MaskError,
    NumericError,
    RateError,
    SimulatorError,
)
from .experiment import RunResult, run_config
from .nn import (
    DataBatch,
    DenseLayerParams,
    Hyperparams,
    ModelParams,
    evaluate,
    forward,
    init_model,
    local_train,
    loss_and_grads,
    sgd_step,
)
from .simulator import (
    ClientProfile,
    RateChoice,
    RoundRecord,
    RunState,
    SimConfig,
    StrategyParams,
    choose_rate,
    profile_stragglers,
    required_speedup,
    run_experiment,
    run_round,
    simulate_time,
)
from .strategies import (
    ThresholdState,
    UpdateStats,
    collect_update_stats,
    init_thresholds,
    invariant_fraction,
    invariant_mask,
    majority_invariant,
    ordered_mask,
    percent_change,
    random_mask,
    update_thresholds,
)
from .submodel import (
    CoordinateUpdate,
    NeuronMask,
    aggregate,
    cost_fraction,
    extract_submodel,
    full_mask,
    masked_param_count,
)
from .variance import (
    BoundCheck,
    RateSolution,
    check_bound,
    estimator_variance,
    keep_probs,
    mc_sparsify,
    solve_r,
)

__all__ = [
    "__version__",
    "AggregationError",
    "AnalysisError",
    "BoundCheck",
    "ClientProfile",
    "ConfigError",
    "CoordinateUpdate",
    "DataBatch",
    "Dataset",
    "DenseLayerParams",
    "DimensionError",
    "ExperimentConfig",
    "Hyperparams",
    "InputError",
    "MaskError",
    "ModelParams",
    "NeuronMask",
    "NumericError",
    "PartitionSpec",
    "RateChoice",
    "RateError",
    "RateSolution",
    "RoundRecord",
    "RunResult",
    "RunState",
    "SimConfig",
    "SimulatorError",
    "StrategyParams",
    "ThresholdState",
    "UpdateStats",
    "aggregate",
    "check_bound",
    "choose_rate",
    "collect_update_stats",
    "cost_fraction",
    "estimator_variance",
    "evaluate",
    "extract_submodel",
    "forward",
    "full_mask",
    "init_model",
    "init_thresholds",
    "invariant_fraction",
    "invariant_mask",
    "keep_probs",
    "load_config",
    "load_csv",
    "local_train",
    "loss_and_grads",
    "majority_invariant",
    "masked_param_count",
    "mc_sparsify",
    "ordered_mask",
    "partition",
    "percent_change",
    "profile_stragglers",
    "random_mask",
    "required_speedup",
    "run_config",
    "run_experiment",
    "run_round",
    "save_csv",
    "sgd_step",
    "simulate_time",
    "solve_r",
    "synth_blobs",
    "update_thresholds",
    "validate_config",
]
