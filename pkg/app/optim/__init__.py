from .adam import AdamState, adam_step
from .checkpoint import FORMAT_VERSION, Checkpoint, load_checkpoint, save_checkpoint
from .loader import LoadedBatch, MinibatchLoader
from .trainer import EpochStats, FitResult, TrainConfig, fit, run_phase, train_epoch

__all__ = [
    "AdamState",
    "Checkpoint",
    "EpochStats",
    "FORMAT_VERSION",
    "FitResult",
    "LoadedBatch",
    "MinibatchLoader",
    "TrainConfig",
    "adam_step",
    "fit",
    "load_checkpoint",
    "run_phase",
    "save_checkpoint",
    "train_epoch",
]
