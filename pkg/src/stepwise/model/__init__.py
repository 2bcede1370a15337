from .baselines import (
    DecisionTree,
    ForestConfig,
    LogisticRegression,
    RandomForest,
    train_forest,
    train_logreg,
)
from .checkpoint import load_checkpoint, save_checkpoint
from .lstm import (
    ModelConfig,
    TrainedModel,
    TrainingDivergedError,
    embed,
    forward,
    lstm_cell,
    predict,
    train,
)

__all__ = [
    "DecisionTree", "ForestConfig", "LogisticRegression", "RandomForest", "train_forest",
    "train_logreg", "load_checkpoint", "save_checkpoint", "ModelConfig", "TrainedModel",
    "TrainingDivergedError", "embed", "forward", "lstm_cell", "predict", "train",
]
