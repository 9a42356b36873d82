"""Context-aware recommender: embedding+MLP scoring models, MSE/Adam
training, leave-one-out ranking evaluation, and binary checkpoints."""

__version__ = "0.1.0"

from .data import Dataset, EvalSplit, IdMap, build_dataset, leave_one_out_split
from .evaluation import MetricReport, evaluate
from .model import DainModel, MfModel, ModelConfig, init_model
from .numerics import SeededRng
from .training import TrainConfig, fit, grad_check

__all__ = [
    "Dataset",
    "EvalSplit",
    "IdMap",
    "build_dataset",
    "leave_one_out_split",
    "MetricReport",
    "evaluate",
    "DainModel",
    "MfModel",
    "ModelConfig",
    "init_model",
    "SeededRng",
    "TrainConfig",
    "fit",
    "grad_check",
    "__version__",
]
