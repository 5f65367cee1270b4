"""Ground-truth simulator of a singlet-triplet qubit with pulse distortion
and noise."""
from .config import HoldSpec, QubitConfig, config_hash, load_qubit_config, read_preset_json
from .dynamics import (
    ControlPulse,
    MeasurementStats,
    NoiseRealization,
    NumericError,
    distorted_voltages,
    evolve_exchange,
    measure,
    measure_batch,
    propagate,
)
from .exchange import GHZ, MHZ, ExchangeModel, GeneralExchange, SpecificExchange, exchange_rate
from .gates import (
    IDEAL_GATES,
    entanglement_fidelity,
    euler_zxz,
    global_z_correct,
    infidelity,
    rx,
    ry,
    rz,
    solve_gauge_angle,
    wrap_angle,
)
from .noise import NoiseConfig, sample_fast_noise, sample_fast_noise_batch
from .transfer import (
    TransferKernel,
    apply_transfer,
    causal_kernel,
    convolve_trace,
    gaussian_kernel,
    identity_kernel,
)

__all__ = [
    "ControlPulse", "MeasurementStats", "NoiseRealization", "NumericError", "QubitConfig", "HoldSpec",
    "ExchangeModel", "GeneralExchange", "SpecificExchange", "TransferKernel", "NoiseConfig",
    "exchange_rate", "apply_transfer", "convolve_trace", "gaussian_kernel", "causal_kernel",
    "identity_kernel", "sample_fast_noise", "sample_fast_noise_batch", "propagate", "measure",
    "measure_batch", "evolve_exchange", "distorted_voltages", "entanglement_fidelity", "infidelity",
    "euler_zxz", "global_z_correct", "solve_gauge_angle", "rx", "ry", "rz", "wrap_angle",
    "IDEAL_GATES", "MHZ", "GHZ", "load_qubit_config", "read_preset_json", "config_hash",
]
