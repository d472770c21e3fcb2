"""Toy tasks, model assembly and the training loop."""

from .model import RecmModel, build_model
from .tasks import Dataset, TaskSpec, gen_shape_classification, gen_twobody, make_dataset
from .training import TrainConfig, TrajectoryLog, evaluate, train

__all__ = [
    "Dataset",
    "RecmModel",
    "TaskSpec",
    "TrainConfig",
    "TrajectoryLog",
    "build_model",
    "evaluate",
    "gen_shape_classification",
    "gen_twobody",
    "make_dataset",
    "train",
]
