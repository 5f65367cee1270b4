"""Differentiable surrogate of the qubit's measurement response."""
from .checkpoint import FORMAT_VERSION, load_checkpoint, save_checkpoint
from .estimator import PulseEncoder, SurrogateRegressor
from .evaluate import Metrics, compute_metrics, evaluate, length_generalization_report
from .network import (
    PRESETS,
    Network,
    NetworkSpec,
    Normalization,
    count_params,
    encode_batch,
    encode_input,
    get_spec,
    grad_input,
    grad_params,
    loss_and_grads,
    weighted_mae,
)
from .training import Adam, History, TrainConfig, train

__all__ = [
    "FORMAT_VERSION", "load_checkpoint", "save_checkpoint", "PulseEncoder", "SurrogateRegressor",
    "Metrics", "compute_metrics", "evaluate", "length_generalization_report", "PRESETS", "Network",
    "NetworkSpec", "Normalization", "count_params", "encode_batch", "encode_input", "get_spec",
    "grad_input", "grad_params", "loss_and_grads", "weighted_mae", "Adam", "History", "TrainConfig", "train",
]
