from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

EPS_PROB = 1e-7


@dataclass(frozen=True)
class AdamConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState,
              config: AdamConfig = AdamConfig()) -> AdamState:
    """Apply one bias-corrected Adam update to ``params`` in place."""
    state.t += 1
    b1, b2 = config.beta1, config.beta2
    corr1 = 1.0 - b1 ** state.t
    corr2 = 1.0 - b2 ** state.t
    for key, g in grads.items():
        p = params[key]
        m = state.m.setdefault(key, np.zeros_like(p))
        v = state.v.setdefault(key, np.zeros_like(p))
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= (config.learning_rate * (m / corr1) / (np.sqrt(v / corr2) + config.eps)).astype(p.dtype)
    return state


def bce_loss(pred, label):
    """Mean binary cross-entropy and its gradient with respect to ``pred``."""
    p = np.clip(np.asarray(pred, dtype=np.float64), EPS_PROB, 1.0 - EPS_PROB)
    y = np.asarray(label, dtype=np.float64)
    loss = -(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))
    grad = (p - y) / (p * (1.0 - p)) / p.size
    return float(loss.mean()), grad


def bce_logit_grad(pred, label):
    """Gradient of mean BCE through a sigmoid, taken at the logit: (p - y) / n."""
    p = np.asarray(pred, dtype=np.float64)
    return (p - np.asarray(label, dtype=np.float64)) / p.size
