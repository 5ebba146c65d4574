"""Small numpy network engine: the layer kinds the classifiers need, Adam, BCE."""

from .layers import (
    LSTM,
    Conv1D,
    Conv2D,
    Dense,
    Dropout,
    Flatten,
    InstanceNorm,
    Layer,
    MaxPool1D,
    MaxPool2D,
    ReLU,
    ShapeError,
    Sigmoid,
    layer_from_config,
)
from .model import NonFiniteError, Sequential
from .optim import AdamConfig, AdamState, adam_step, bce_logit_grad, bce_loss
from .train import TrainConfig, TrainingDiverged, train

__all__ = [
    "LSTM", "Conv1D", "Conv2D", "Dense", "Dropout", "Flatten", "InstanceNorm", "Layer", "MaxPool1D",
    "MaxPool2D", "ReLU", "ShapeError", "Sigmoid", "layer_from_config", "NonFiniteError", "Sequential",
    "AdamConfig", "AdamState", "adam_step", "bce_logit_grad", "bce_loss", "TrainConfig",
    "TrainingDiverged", "train",
]
