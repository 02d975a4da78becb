from .checkpoint import LoadReport, dumps, load_checkpoint, loads, read_metadata, save_checkpoint
from .experiments import EXPERIMENTS, ExperimentReport, ModelSpec, pretrain_backbone, run_experiment
from .optim import SGD, Adam, cross_entropy_loss, make_optimizer
from .trainer import (CURVE_COLUMNS, EpochStats, KFoldResult, TrainConfig, evaluate, predict, train_kfold,
                      write_curves_csv)

__all__ = [
    "Adam", "CURVE_COLUMNS", "EXPERIMENTS", "EpochStats", "ExperimentReport", "KFoldResult", "LoadReport",
    "ModelSpec", "SGD", "TrainConfig", "cross_entropy_loss", "dumps", "evaluate", "load_checkpoint", "loads",
    "make_optimizer", "predict", "pretrain_backbone", "read_metadata", "run_experiment", "save_checkpoint",
    "train_kfold", "write_curves_csv",
]
