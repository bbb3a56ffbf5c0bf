"""Gated recurrent cells with bilinear tensor products (GRURNTN, LSTMRNTN),
their GRU/LSTM baselines, hand-written BPTT and a language-modeling harness."""
from .cells import CellKind, CellParams, OutputLayer, StepState, step, step_backward
from .model import LanguageModel, count_params, init_model
from .training import TrainConfig, bptt, sequence_nll, train_model

__all__ = [
    "CellKind", "CellParams", "OutputLayer", "StepState", "step", "step_backward",
    "LanguageModel", "count_params", "init_model",
    "TrainConfig", "bptt", "sequence_nll", "train_model",
]
__version__ = "0.1.0"
