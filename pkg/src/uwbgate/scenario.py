"""World geometry, walk-in trajectories, pose schedules and synthetic IMU streams."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np
import yaml

from .types import Pose

GRAVITY = 9.81
IMU_PERIOD_MS = 60.0


class LayoutError(ValueError):
    pass


@dataclass(frozen=True)
class Rect:
    xmin: float
    ymin: float
    xmax: float
    ymax: float

    def __post_init__(self):
        if self.xmax <= self.xmin or self.ymax <= self.ymin:
            raise LayoutError(f"degenerate rectangle {self}")

    @property
    def size(self) -> tuple[float, float]:
        return (self.xmax - self.xmin, self.ymax - self.ymin)

    @property
    def centroid(self) -> np.ndarray:
        return np.array([(self.xmin + self.xmax) / 2, (self.ymin + self.ymax) / 2])

    def contains(self, p) -> bool:
        x, y = p
        return self.xmin <= x <= self.xmax and self.ymin <= y <= self.ymax

    def contains_rect(self, other: "Rect") -> bool:
        return self.contains((other.xmin, other.ymin)) and self.contains((other.xmax, other.ymax))


@dataclass(frozen=True)
class Anchor:
    id: int
    position: np.ndarray
    is_initiator: bool = False


@dataclass(frozen=True)
class Gate:
    id: int
    position: np.ndarray


@dataclass(frozen=True)
class WorldLayout:
    area_size: tuple[float, float]
    anchors: tuple[Anchor, ...]
    gates: tuple[Gate, ...]
    localization_zone: Rect
    gate_access_zone: Rect

    @property
    def initiator(self) -> Anchor:
        return next(a for a in self.anchors if a.is_initiator)

    @property
    def anchor_ids(self) -> list[int]:
        return [a.id for a in self.anchors]

    def anchor_positions(self) -> dict[int, np.ndarray]:
        return {a.id: a.position for a in self.anchors}

    def gate(self, gate_id: int) -> Gate:
        for g in self.gates:
            if g.id == gate_id:
                return g
        raise LayoutError(f"unknown gate {gate_id}")

    def in_area(self, p) -> bool:
        return 0.0 <= p[0] <= self.area_size[0] and 0.0 <= p[1] <= self.area_size[1]


# 9 x 9 m hall, six anchors (one initiator), four gates along the top wall and
# a 1 m x 2 m gate access zone in front of gates 2 and 3.
DEFAULT_LAYOUT: dict = {
    "area": [9.0, 9.0],
    # initiator sits on the gate wall close to the standing point (6.5, 8); any
    # single responder can be dropped and a 4-subset still encloses that point
    "anchors": [
        {"id": 1, "pos": [7.5, 9.0], "initiator": True},
        {"id": 2, "pos": [3.0, 9.0]},
        {"id": 3, "pos": [0.0, 9.0]},
        {"id": 4, "pos": [0.0, 0.0]},
        {"id": 5, "pos": [9.0, 0.0]},
        {"id": 6, "pos": [9.0, 4.0]},
    ],
    "gates": [
        {"id": 1, "pos": [5.0, 9.0]},
        {"id": 2, "pos": [6.0, 9.0]},
        {"id": 3, "pos": [7.0, 9.0]},
        {"id": 4, "pos": [8.0, 9.0]},
    ],
    "localization_zone": [0.5, 0.5, 8.5, 9.0],
    "gate_access_zone": [6.0, 7.0, 7.0, 9.0],
}


def build_layout(config: Mapping | None = None) -> WorldLayout:
    """Validate a layout config (see ``DEFAULT_LAYOUT`` for the schema)."""
    cfg = DEFAULT_LAYOUT if config is None else config
    try:
        area = tuple(float(v) for v in cfg["area"])
        anchors = tuple(
            Anchor(int(a["id"]), np.asarray(a["pos"], dtype=float), bool(a.get("initiator", False)))
            for a in cfg["anchors"]
        )
        gates = tuple(Gate(int(g["id"]), np.asarray(g["pos"], dtype=float)) for g in cfg.get("gates", []))
        loc = Rect(*map(float, cfg["localization_zone"]))
        access = Rect(*map(float, cfg["gate_access_zone"]))
    except (KeyError, TypeError) as exc:
        raise LayoutError(f"malformed layout config: {exc}") from None

    if len(anchors) < 4:
        raise LayoutError(f"need at least 4 anchors for TDoA localization, got {len(anchors)}")
    n_init = sum(a.is_initiator for a in anchors)
    if n_init != 1:
        raise LayoutError(f"exactly one initiator anchor required, got {n_init}")
    if len({a.id for a in anchors}) != len(anchors):
        raise LayoutError("anchor ids must be distinct")
    if len({g.id for g in gates}) != len(gates):
        raise LayoutError("gate ids must be distinct")
    area_rect = Rect(0.0, 0.0, *area)
    for a in anchors:
        if not area_rect.contains(a.position):
            raise LayoutError(f"anchor {a.id} at {a.position.tolist()} lies outside the area")
    for g in gates:
        if not area_rect.contains(g.position):
            raise LayoutError(f"gate {g.id} at {g.position.tolist()} lies outside the area")
    if not area_rect.contains_rect(loc):
        raise LayoutError("localization zone extends outside the area")
    if not loc.contains_rect(access):
        raise LayoutError("gate access zone is not inside the localization zone")
    return WorldLayout(area, anchors, gates, loc, access)


def load_layout(path) -> WorldLayout:
    with open(path) as fh:
        return build_layout(yaml.safe_load(fh))


@dataclass(frozen=True)
class Trajectory:
    t_ms: np.ndarray  # (n,)
    xy: np.ndarray  # (n, 2) metres
    heading: np.ndarray  # (n,) radians

    def __len__(self) -> int:
        return len(self.t_ms)

    @property
    def duration_ms(self) -> float:
        return float(self.t_ms[-1] - self.t_ms[0])

    def position_at(self, t: float) -> np.ndarray:
        return np.array([np.interp(t, self.t_ms, self.xy[:, 0]), np.interp(t, self.t_ms, self.xy[:, 1])])

    def heading_at(self, t: float) -> float:
        i = int(np.clip(np.searchsorted(self.t_ms, t, side="right") - 1, 0, len(self) - 1))
        return float(self.heading[i])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["timestamp_ms", "x_m", "y_m", "heading_rad"])
            for t, (x, y), h in zip(self.t_ms, self.xy, self.heading):
                w.writerow([f"{t:.3f}", f"{x:.6f}", f"{y:.6f}", f"{h:.6f}"])


@dataclass(frozen=True)
class WalkParams:
    target_gate: int = 2
    start: tuple[float, float] | None = None
    # used when ``start`` is None: begin this far before ``end`` along ``approach_heading``
    start_distance: float = 3.0
    approach_heading: float = math.pi / 2
    end: tuple[float, float] | None = None
    speed: float = 1.4
    step_hz: float = 3.0
    lateral_sigma: float = 0.05
    sample_ms: float = 20.0


def gen_trajectory(layout: WorldLayout, walk: WalkParams = WalkParams(), seed: int = 0) -> Trajectory:
    """Straight walk toward the target with per-step lateral jitter.

    The walk ends at ``walk.end`` (default: the target gate position).  Lateral
    offsets are drawn once per step, clipped to two sigma, zero at both ends,
    and interpolated linearly between steps.
    """
    end = np.asarray(walk.end if walk.end is not None else layout.gate(walk.target_gate).position, dtype=float)
    if walk.start is not None:
        start = np.asarray(walk.start, dtype=float)
    else:
        start = end - walk.start_distance * np.array([math.cos(walk.approach_heading), math.sin(walk.approach_heading)])
    if not layout.in_area(start):
        raise LayoutError(f"walk start {start.tolist()} lies outside the area")
    if not layout.localization_zone.contains(start):
        raise LayoutError(f"walk start {start.tolist()} lies outside the localization zone")

    delta = end - start
    dist = float(np.hypot(*delta))
    if dist == 0.0:
        return Trajectory(np.zeros(1), start[None, :].copy(), np.array([walk.approach_heading]))

    direction = delta / dist
    normal = np.array([-direction[1], direction[0]])
    heading = math.atan2(direction[1], direction[0])
    duration = dist / walk.speed * 1000.0
    t = np.arange(0.0, duration, walk.sample_ms)
    if duration - t[-1] > 1e-9:
        t = np.append(t, duration)

    rng = np.random.default_rng(seed)
    step_ms = 1000.0 / walk.step_hz
    knots_t = np.append(np.arange(0.0, duration, step_ms), duration)
    offsets = np.clip(rng.normal(0.0, walk.lateral_sigma, len(knots_t)), -2 * walk.lateral_sigma, 2 * walk.lateral_sigma)
    offsets[0] = offsets[-1] = 0.0
    lateral = np.interp(t, knots_t, offsets)
    along = t / duration * dist
    xy = start + along[:, None] * direction + lateral[:, None] * normal
    return Trajectory(t, xy, np.full(len(t), heading))


def treadmill_trajectory(duration_ms: float, speed: float = 1.4, sample_ms: float = 20.0,
                         heading: float = 0.0) -> Trajectory:
    """Unbounded straight walk, used where only timing and heading matter (IMU datasets)."""
    t = np.arange(0.0, duration_ms + 1e-9, sample_ms)
    d = np.array([math.cos(heading), math.sin(heading)])
    return Trajectory(t, (speed * t / 1000.0)[:, None] * d, np.full(len(t), heading))


@dataclass(frozen=True)
class PoseSchedule:
    segments: tuple[tuple[float, float, Pose], ...]

    def __post_init__(self):
        if not self.segments:
            raise ValueError("empty pose schedule")
        for (s0, e0, _), (s1, _, _) in zip(self.segments, self.segments[1:]):
            if s1 != e0:
                raise ValueError(f"pose schedule has a gap or overlap at {e0} ms")
        for s, e, _ in self.segments:
            if e <= s:
                raise ValueError(f"pose segment [{s}, {e}) is empty")

    @classmethod
    def constant(cls, pose: Pose, start_ms: float, end_ms: float) -> "PoseSchedule":
        return cls(((start_ms, end_ms, Pose(pose)),))

    @property
    def start_ms(self) -> float:
        return self.segments[0][0]

    @property
    def end_ms(self) -> float:
        return self.segments[-1][1]

    def covers(self, start: float, end: float) -> bool:
        return self.start_ms <= start and end <= self.end_ms

    def pose_at(self, t: float) -> Pose:
        """Segments are half-open [start, end); the final end is inclusive."""
        for s, e, p in self.segments:
            if s <= t < e:
                return p
        if t == self.end_ms:
            return self.segments[-1][2]
        raise ValueError(f"time {t} ms outside pose schedule")


@dataclass(frozen=True)
class PoseCarry:
    """How the device sits for one pose: gravity orientation and gait coupling."""

    pitch_deg: float  # 0 = upright, 90 = screen up
    roll_deg: float
    accel_factor: float
    sway_deg: float  # orientation wobble amplitude at stride frequency


# Orientation defaults are assumptions: upright-ish in the hand, upside down in
# the pocket with the screen toward (front) or away from (back) the body.
DEFAULT_CARRY: dict[Pose, PoseCarry] = {
    Pose.LOS: PoseCarry(pitch_deg=40.0, roll_deg=0.0, accel_factor=1.0, sway_deg=4.0),
    Pose.NLOS: PoseCarry(pitch_deg=65.0, roll_deg=15.0, accel_factor=1.0, sway_deg=4.0),
    Pose.FRONT: PoseCarry(pitch_deg=165.0, roll_deg=10.0, accel_factor=2.5, sway_deg=15.0),
    Pose.BACK: PoseCarry(pitch_deg=-165.0, roll_deg=-10.0, accel_factor=2.5, sway_deg=15.0),
}


@dataclass(frozen=True)
class ImuParams:
    period_ms: float = IMU_PERIOD_MS
    step_hz: float = 3.0
    step_hz_jitter: float = 0.1
    # body-frame gait amplitudes (m/s^2) for a hand-held device
    vertical_amp: float = 1.2
    forward_amp: float = 0.7
    lateral_amp: float = 0.4
    amp_jitter: float = 0.15
    accel_noise: float = 0.15
    orientation_noise_deg: float = 1.0
    carry: Mapping[Pose, PoseCarry] = field(default_factory=lambda: dict(DEFAULT_CARRY))


@dataclass(frozen=True)
class ImuStream:
    t_ms: np.ndarray  # (n,)
    accel: np.ndarray  # (n, 3) linear acceleration, m/s^2
    gravity: np.ndarray  # (n, 3) m/s^2

    def __len__(self) -> int:
        return len(self.t_ms)

    @property
    def features(self) -> np.ndarray:
        return np.hstack([self.accel, self.gravity])


def _gravity_dir(pitch_deg: float, roll_deg: float) -> np.ndarray:
    th, ph = math.radians(pitch_deg), math.radians(roll_deg)
    return np.array([math.cos(th) * math.sin(ph), math.cos(th) * math.cos(ph), math.sin(th)])


def _frame(up: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    ref = np.array([1.0, 0.0, 0.0]) if abs(up[0]) < 0.9 else np.array([0.0, 0.0, 1.0])
    e1 = np.cross(up, ref)
    e1 /= np.linalg.norm(e1)
    return e1, np.cross(up, e1)


def synth_imu(traj: Trajectory, sched: PoseSchedule, seed: int = 0, params: ImuParams = ImuParams()) -> ImuStream:
    """Sample accelerometer and gravity readings every 60 ms along ``traj``.

    Samples fall at ``t0 + k * period`` for the half-open span of the
    trajectory (a zero-length trajectory yields one sample).  Linear
    acceleration is a step-frequency sinusoid per body axis plus noise,
    scaled by the pose's ``accel_factor``; gravity keeps |g| = 9.81 with a
    pose-dependent orientation that sways at stride frequency.
    """
    t0 = float(traj.t_ms[0])
    n = max(1, math.ceil(traj.duration_ms / params.period_ms - 1e-9))
    t = t0 + params.period_ms * np.arange(n)
    if not sched.covers(t[0], t[-1]):
        raise ValueError("pose schedule does not cover the trajectory")

    rng = np.random.default_rng(seed)
    f = params.step_hz * (1.0 + params.step_hz_jitter * rng.uniform(-1, 1))
    phase = rng.uniform(0, 2 * math.pi, size=4)
    amp_scale = 1.0 + params.amp_jitter * rng.uniform(-1, 1, size=3)
    ts = t / 1000.0
    vertical = params.vertical_amp * amp_scale[0] * np.sin(2 * math.pi * f * ts + phase[0])
    forward = params.forward_amp * amp_scale[1] * np.sin(2 * math.pi * f * ts + phase[1])
    lateral = params.lateral_amp * amp_scale[2] * np.sin(math.pi * f * ts + phase[2])
    sway = np.sin(math.pi * f * ts + phase[3])

    accel = np.empty((n, 3))
    gravity = np.empty((n, 3))
    for k, tk in enumerate(t):
        carry = params.carry[sched.pose_at(tk)]
        pitch = carry.pitch_deg + carry.sway_deg * sway[k] + rng.normal(0, params.orientation_noise_deg)
        roll = carry.roll_deg + rng.normal(0, params.orientation_noise_deg)
        up = _gravity_dir(pitch, roll)
        e1, e2 = _frame(_gravity_dir(carry.pitch_deg, carry.roll_deg))
        body = vertical[k] * up + forward[k] * e1 + lateral[k] * e2
        accel[k] = carry.accel_factor * body + rng.normal(0, params.accel_noise, 3)
        gravity[k] = GRAVITY * up / np.linalg.norm(up)
    return ImuStream(t, accel, gravity)
