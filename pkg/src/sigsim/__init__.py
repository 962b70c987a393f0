"""Timing simulation of digital circuits with sigmoid-shaped signal transitions."""

__version__ = "0.1.0"

from .sigmoid import DigitalTrace, SigmoidTrace, SigmoidTransition, digitize, eval_trace, mismatch_time
from .waveform import SampledWaveform
from .fitting import FitConfig, fit_trace
from .mlp import MlpNetwork, TrainConfig
from .transfer import ModelRegistry, TransferModel, apply_transfer
from .netlist import Circuit, decompose_to_nor, parse_bench
from .engine import simulate_circuit

__all__ = [
    "DigitalTrace", "SigmoidTrace", "SigmoidTransition", "digitize", "eval_trace", "mismatch_time",
    "SampledWaveform", "FitConfig", "fit_trace", "MlpNetwork", "TrainConfig", "ModelRegistry",
    "TransferModel", "apply_transfer", "Circuit", "decompose_to_nor", "parse_bench", "simulate_circuit",
]
