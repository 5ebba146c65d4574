from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .layers import Sigmoid
from .model import Sequential
from .optim import AdamConfig, AdamState, adam_step, bce_logit_grad, bce_loss

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 50
    max_epochs: int = 20
    seed: int = 0
    adam: AdamConfig = field(default_factory=AdamConfig)
    # stop once an epoch's mean training loss drops below this
    early_stop_loss: float | None = None

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")


def train(model: Sequential, x, y, config: TrainConfig = TrainConfig()) -> list[float]:
    """Mini-batch Adam on mean binary cross-entropy; returns per-epoch training loss.

    When the model ends in a sigmoid, the loss gradient is injected at the
    logit as ``(p - y)`` so saturated outputs still learn.
    """
    x = np.asarray(x, dtype=model.dtype)
    y = np.asarray(y, dtype=np.float64).reshape(len(x), -1)
    if len(x) == 0:
        raise ValueError("empty training set")
    if not np.isin(y, (0.0, 1.0)).all():
        raise ValueError("labels must be binary (0 or 1)")

    rng = np.random.default_rng(config.seed)
    state = AdamState()
    params = model.parameters()
    fused = isinstance(model.layers[-1], Sigmoid)
    history: list[float] = []
    for epoch in range(config.max_epochs):
        order = rng.permutation(len(x))
        total = 0.0
        for start in range(0, len(x), config.batch_size):
            idx = order[start:start + config.batch_size]
            batch_seed = int(rng.integers(2**31))
            pred = model.forward(x[idx], training=True, seed=batch_seed)
            loss, grad = bce_loss(pred, y[idx])
            if not np.isfinite(loss):
                raise TrainingDiverged(f"loss became {loss} at epoch {epoch}")
            if fused:
                model.backward(bce_logit_grad(pred, y[idx]).astype(model.dtype), start=len(model.layers) - 1)
            else:
                model.backward(grad.astype(model.dtype))
            adam_step(params, model.gradients(), state, config.adam)
            total += loss * len(idx)
        epoch_loss = total / len(x)
        history.append(epoch_loss)
        log.info("epoch %d loss %.5f", epoch + 1, epoch_loss)
        if config.early_stop_loss is not None and epoch_loss < config.early_stop_loss:
            break
    model.trained = True
    return history
