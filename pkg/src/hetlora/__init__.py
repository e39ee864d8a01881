"""Model-heterogeneous personalized federated learning with shared low-rank adapters."""
from .adapter import (
    AdapterMode,
    AdapterSpec,
    LowRankAdapter,
    adapter_forward,
    adapter_param_count,
    build_adapter,
    shape_direct_reduction,
    shape_matrix_decomposition,
)
from .config import ExperimentConfig, RoundConfig, TrainMode, parse_config
from .data import Dataset, generate_synthetic, load_csv_dataset, partition_noniid, split_811
from .errors import ConfigError, NumericalError, TrainingAborted
from .metrics import RoundMetrics, RunLog, evaluate_client
from .model import HeteroModel, ModelSpec, build_model, extract_representation, head_forward
from .protocol import ClientState, ServerState, aggregate, run_experiment, run_round, setup_experiment

__all__ = [
    "AdapterMode", "AdapterSpec", "LowRankAdapter", "adapter_forward", "adapter_param_count",
    "build_adapter", "shape_direct_reduction", "shape_matrix_decomposition",
    "ExperimentConfig", "RoundConfig", "TrainMode", "parse_config",
    "Dataset", "generate_synthetic", "load_csv_dataset", "partition_noniid", "split_811",
    "ConfigError", "NumericalError", "TrainingAborted",
    "RoundMetrics", "RunLog", "evaluate_client",
    "HeteroModel", "ModelSpec", "build_model", "extract_representation", "head_forward",
    "ClientState", "ServerState", "aggregate", "run_experiment", "run_round", "setup_experiment",
]

__version__ = "0.1.0"
