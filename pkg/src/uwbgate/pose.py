"""Device pose from 18x6 IMU windows, routed through one of two CNN-LSTM models.

Dimension trace for one (1, 18, 6) window through the stack (conv2d kernel 2
with same padding, so the narrow feature axis survives three poolings)::

    input      (1, 18, 6)
    block 1    conv (64, 18, 6)  -> pool (64, 9, 3)
    block 2    conv (128, 9, 3)  -> pool (128, 4, 1)
    block 3    conv (256, 4, 1)  -> pool (256, 2, 1)
    flatten    (2, 256)   time axis kept, channel x feature per step
    lstm       (128,)
    dense      (1,) -> sigmoid
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .neural import (
    LSTM,
    Conv2D,
    Dense,
    Dropout,
    Flatten,
    InstanceNorm,
    MaxPool2D,
    ReLU,
    Sequential,
    Sigmoid,
    TrainConfig,
    train,
)
from .scenario import GRAVITY, IMU_PERIOD_MS, ImuParams, ImuStream, PoseSchedule, synth_imu, treadmill_trajectory
from .types import Condition, Pose

WINDOW_STEPS = 18
N_FEATURES = 6
POSE_KERNELS = (2, 2, 2)
POSE_FILTERS = (64, 128, 256)
DROPOUT = 0.2
POOL = 2
LSTM_UNITS = 128

# per branch: (label 0, label 1); the sigmoid is the probability of the pocket pose
BRANCH_POSES = {Condition.LOS: (Pose.LOS, Pose.FRONT), Condition.NLOS: (Pose.NLOS, Pose.BACK)}


class InsufficientHistoryError(ValueError):
    pass


class UntrainedPoseModelError(RuntimeError):
    pass


@dataclass(frozen=True)
class ImuWindow:
    t_ms: np.ndarray  # (18,)
    values: np.ndarray  # (18, 6): accel xyz, gravity xyz

    def __post_init__(self):
        if self.values.shape != (WINDOW_STEPS, N_FEATURES) or self.t_ms.shape != (WINDOW_STEPS,):
            raise ValueError(f"IMU window must be {WINDOW_STEPS}x{N_FEATURES}, got {self.values.shape}")


def window_imu(stream: ImuStream, t: float) -> ImuWindow:
    """The 18 most recent samples at or before ``t``."""
    end = int(np.searchsorted(stream.t_ms, t, side="right"))
    if end < WINDOW_STEPS:
        raise InsufficientHistoryError(f"need {WINDOW_STEPS} IMU samples at or before t={t} ms, have {end}")
    sl = slice(end - WINDOW_STEPS, end)
    return ImuWindow(stream.t_ms[sl].copy(), stream.features[sl].copy())


def window_input(values) -> np.ndarray:
    """Model input for one or more windows: (n, 1, 18, 6), scaled by standard gravity."""
    x = np.asarray(values, dtype=float).reshape(-1, 1, WINDOW_STEPS, N_FEATURES)
    return x / GRAVITY


def build_pose_model(seed: int = 0, dtype="float32", filters=POSE_FILTERS, lstm_units: int = LSTM_UNITS) -> Sequential:
    layers = []
    for k, f in zip(POSE_KERNELS, filters):
        layers += [Conv2D(f, k, padding="same"), InstanceNorm(), ReLU(), Dropout(DROPOUT), MaxPool2D(POOL)]
    layers += [Flatten(time_axis=1), LSTM(lstm_units), Dense(1), Sigmoid()]
    return Sequential(layers, (1, WINDOW_STEPS, N_FEATURES), seed=seed, dtype=dtype)


def pose_train_config(seed: int = 0, **overrides) -> TrainConfig:
    return TrainConfig(**{"batch_size": 100, "max_epochs": 100, "seed": seed, **overrides})


@dataclass(frozen=True)
class PoseModels:
    los_model: Sequential
    nlos_model: Sequential

    def branch(self, condition: Condition) -> Sequential:
        return self.los_model if Condition(condition) is Condition.LOS else self.nlos_model


def predict_pose_many(values, condition: Condition, models: PoseModels) -> tuple[list[Pose], np.ndarray]:
    condition = Condition(condition)
    model = models.branch(condition)
    if not model.trained:
        raise UntrainedPoseModelError(f"{condition.value} pose model has not been trained")
    p = model.predict(window_input(values).astype(model.dtype))[:, 0].astype(float)
    hand, pocket = BRANCH_POSES[condition]
    return [pocket if q >= 0.5 else hand for q in p], p


def predict_pose(window: ImuWindow, condition: Condition, models: PoseModels) -> tuple[Pose, float]:
    """Route to the branch model; p >= 0.5 means the pocket pose.  No filtering."""
    poses, p = predict_pose_many(window.values[None], condition, models)
    return poses[0], float(p[0])


def synth_windows(pose: Pose, n: int, seed: int = 0, params: ImuParams = ImuParams()) -> np.ndarray:
    """``n`` independent (18, 6) windows of walking with a fixed pose."""
    span = WINDOW_STEPS * IMU_PERIOD_MS
    traj = treadmill_trajectory(span)
    sched = PoseSchedule.constant(pose, 0.0, span)
    base = int(np.random.default_rng(seed).integers(2**31))
    out = np.empty((n, WINDOW_STEPS, N_FEATURES))
    for i in range(n):
        out[i] = synth_imu(traj, sched, seed=base + i, params=params).features
    return out


def make_pose_dataset(condition: Condition, n_per_class: int, seed: int = 0, params: ImuParams = ImuParams()):
    """Balanced windows for one branch; y = 1 for the pocket pose."""
    hand, pocket = BRANCH_POSES[Condition(condition)]
    x0 = synth_windows(hand, n_per_class, seed=seed * 2 + 1, params=params)
    x1 = synth_windows(pocket, n_per_class, seed=seed * 2 + 2, params=params)
    return np.concatenate([x0, x1]), np.concatenate([np.zeros(n_per_class), np.ones(n_per_class)])


def train_pose_model(x, y, seed: int = 0, config: TrainConfig | None = None, dtype="float32"):
    model = build_pose_model(seed=seed, dtype=dtype)
    history = train(model, window_input(x).astype(dtype), y, config or pose_train_config(seed))
    return model, history


def write_pose_log(path, rows) -> None:
    """``rows``: iterable of (timestamp_ms, gated_condition, pose, probability)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["timestamp_ms", "gated_condition", "pose", "probability"])
        for t, cond, pose, p in rows:
            w.writerow([f"{float(t):.1f}", Condition(cond).value, Pose(pose).value, f"{float(p):.6f}"])
