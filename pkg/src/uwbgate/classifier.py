"""LOS/NLOS classification of eCIRs plus per-anchor low-pass filtering."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np

from .channel import ChannelParams, compute_diagnostics, synth_cir
from .ecir import ECIR_LEN, Ecir, extract_ecir
from .neural import (
    Conv1D,
    Dense,
    Dropout,
    Flatten,
    InstanceNorm,
    MaxPool1D,
    ReLU,
    Sequential,
    Sigmoid,
    TrainConfig,
    train,
)
from .types import Condition

LOS_KERNELS = (5, 11, 17, 5)
LOS_FILTERS = (64, 128, 256, 512)
DROPOUT = 0.2
POOL = 2


class UntrainedModelError(RuntimeError):
    pass


def build_los_model(seed: int = 0, dtype="float32", kernels=LOS_KERNELS, filters=LOS_FILTERS) -> Sequential:
    """Four conv blocks (conv1d, instance norm, ReLU, dropout, maxpool), then flatten, dense, sigmoid.

    With valid convolutions the length trace for a 135-sample input is
    135 -> 131 -> 65 -> 55 -> 27 -> 11 -> 5 -> 1 -> 1.
    """
    layers = []
    for k, f in zip(kernels, filters):
        layers += [Conv1D(f, k), InstanceNorm(), ReLU(), Dropout(DROPOUT), MaxPool1D(POOL)]
    layers += [Flatten(), Dense(1), Sigmoid()]
    return Sequential(layers, (1, ECIR_LEN), seed=seed, dtype=dtype)


def los_train_config(seed: int = 0, **overrides) -> TrainConfig:
    return TrainConfig(**{"batch_size": 50, "max_epochs": 20, "seed": seed, **overrides})


def classify_many(model: Sequential, amplitudes) -> np.ndarray:
    """p(NLOS) for a batch of eCIR amplitude vectors, shape (n, 135)."""
    if not model.trained:
        raise UntrainedModelError("LOS/NLOS model has not been trained")
    x = np.asarray(amplitudes, dtype=model.dtype).reshape(-1, 1, ECIR_LEN)
    return model.predict(x)[:, 0].astype(float)


def classify_raw(model: Sequential, ecir: Ecir) -> float:
    return float(classify_many(model, ecir.amplitudes[None, :])[0])


@dataclass(frozen=True)
class LpfState:
    filtered: float = 0.5
    weight: float = 0.8

    def __post_init__(self):
        if not 0.0 <= self.filtered <= 1.0:
            raise ValueError(f"filtered probability {self.filtered} outside [0, 1]")


def lpf_update(state: LpfState, p: float) -> LpfState:
    """Exponentially weighted average; ``weight`` multiplies the previous value."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"probability {p} outside [0, 1]")
    value = state.weight * state.filtered + (1.0 - state.weight) * p
    return replace(state, filtered=min(max(value, 0.0), 1.0))


def decide(state: LpfState) -> Condition:
    # a tie goes to NLOS
    return Condition.NLOS if state.filtered >= 0.5 else Condition.LOS


def flip_delay_updates(weight: float = 0.8, start: float = 1.0, target: float = 0.0) -> int:
    """Updates until the decision flips when a filter at ``start`` sees a constant ``target``.

    ``f_k = target + (start - target) * weight**k`` crosses 0.5 after
    ``log(r) / log(weight)`` updates, ``r = (0.5 - target) / (start - target)``.
    A tie counts as NLOS, so reaching exactly 0.5 flips toward NLOS but not
    toward LOS.
    """
    to_nlos = decide(LpfState(target)) is Condition.NLOS
    if decide(LpfState(start)) is decide(LpfState(target)):
        raise ValueError("start and target give the same decision")
    if weight == 0.0:
        return 1
    if not 0.0 < weight < 1.0:
        raise ValueError("weight must lie in [0, 1) for the decision to flip")
    k = math.log((0.5 - target) / (start - target)) / math.log(weight)
    kr = round(k)
    if abs(k - kr) < 1e-9:  # lands on 0.5 exactly
        return max(1, kr if to_nlos else kr + 1)
    return max(1, math.ceil(k))


@dataclass(frozen=True)
class AnchorBelief:
    filters: Mapping[int, LpfState]
    decisions: Mapping[int, Condition] = field(default_factory=dict)

    @classmethod
    def fresh(cls, anchor_ids, prior: float = 0.5, weight: float = 0.8) -> "AnchorBelief":
        filters = {a: LpfState(prior, weight) for a in anchor_ids}
        return cls(filters, {a: decide(s) for a, s in filters.items()})

    def probability(self, anchor_id: int) -> float:
        return self.filters[anchor_id].filtered

    def probabilities(self) -> dict[int, float]:
        return {a: s.filtered for a, s in self.filters.items()}

    def update(self, anchor_id: int, p: float) -> "AnchorBelief":
        if anchor_id not in self.filters:
            raise KeyError(f"unknown anchor {anchor_id}")
        state = lpf_update(self.filters[anchor_id], p)
        return AnchorBelief({**self.filters, anchor_id: state}, {**self.decisions, anchor_id: decide(state)})


def update_beliefs(beliefs: AnchorBelief, anchor_id: int, ecir: Ecir, model: Sequential) -> AnchorBelief:
    if anchor_id not in beliefs.filters:
        raise KeyError(f"unknown anchor {anchor_id}")
    return beliefs.update(anchor_id, classify_raw(model, ecir))


def make_ecir_dataset(n_per_class: int, seed: int = 0, params: ChannelParams = ChannelParams()):
    """Balanced synthetic eCIR set; returns ``(x, y)`` with x of shape (2n, 135) and y = 1 for NLOS."""
    xs, ys = [], []
    base = int(np.random.default_rng(seed).integers(2**31))
    for cls, cond in ((0, Condition.LOS), (1, Condition.NLOS)):
        for i in range(n_per_class):
            frame = synth_cir(cond, seed=(base + 2 * i + cls) % 2**63, params=params)
            xs.append(extract_ecir(frame, compute_diagnostics(frame)).amplitudes)
            ys.append(cls)
    return np.asarray(xs), np.asarray(ys, dtype=float)


def train_los_model(x, y, seed: int = 0, config: TrainConfig | None = None, dtype="float32"):
    model = build_los_model(seed=seed, dtype=dtype)
    history = train(model, np.asarray(x).reshape(-1, 1, ECIR_LEN), y, config or los_train_config(seed))
    return model, history
