"""Tagless-gate state machine and the pose-adaptive opening rule."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Mapping

import numpy as np

from .channel import RangeErrorModel
from .scenario import WorldLayout
from .types import Pose


class Zone(str, Enum):
    OUTSIDE = "OUTSIDE"
    LOCALIZATION = "LOCALIZATION"
    GATE_ACCESS = "GATE_ACCESS"


class Phase(str, Enum):
    IDLE = "IDLE"
    LOCALIZING = "LOCALIZING"
    ACCESS_ZONE = "ACCESS_ZONE"
    RANGING = "RANGING"
    OPEN = "OPEN"
    CLOSED = "CLOSED"


class Decision(str, Enum):
    OPEN = "OPEN"
    HOLD = "HOLD"


EVENT_KINDS = ("position_fix", "zone_change", "twr_result", "pose_update", "timeout")

DEFAULT_POSE_OFFSETS_CM = {Pose.LOS: 0.0, Pose.NLOS: 10.0, Pose.FRONT: -15.0, Pose.BACK: 25.0}
# where the device sits relative to the body's leading edge, cm; negative is ahead
BODY_PLACEMENT_CM = {Pose.LOS: 0.0, Pose.NLOS: 0.0, Pose.FRONT: -15.0, Pose.BACK: 25.0}


class GateEventError(ValueError):
    """An event the machine cannot accept in its current phase or at its timestamp."""


def zone_of(position, layout: WorldLayout) -> Zone:
    p = np.asarray(position, dtype=float)
    if layout.gate_access_zone.contains(p):
        return Zone.GATE_ACCESS
    if layout.localization_zone.contains(p):
        return Zone.LOCALIZATION
    return Zone.OUTSIDE


def nearest_gate(position, gates) -> int:
    """Closest gate id; ties go to the lowest id."""
    gates = list(gates)
    if not gates:
        raise ValueError("no gates to choose from")
    p = np.asarray(position, dtype=float)
    return min(gates, key=lambda g: (float(np.linalg.norm(g.position - p)), g.id)).id


@dataclass(frozen=True)
class OpenPolicy:
    base_open_distance: float = 100.0
    pose_offset: Mapping[Pose, float] = field(default_factory=lambda: dict(DEFAULT_POSE_OFFSETS_CM))

    def __post_init__(self):
        missing = set(Pose) - set(self.pose_offset)
        if missing:
            raise ValueError(f"pose offsets missing for {sorted(p.value for p in missing)}")
        for pose, off in self.pose_offset.items():
            if self.base_open_distance + off <= 0:
                raise ValueError(f"open threshold for {Pose(pose).value} is not positive")

    def threshold(self, pose: Pose) -> float:
        return self.base_open_distance + self.pose_offset[Pose(pose)]

    @classmethod
    def pose_agnostic(cls, base: float = 100.0) -> "OpenPolicy":
        return cls(base, {p: 0.0 for p in Pose})

    @classmethod
    def from_error_model(cls, err_model: RangeErrorModel = RangeErrorModel(), base: float = 100.0,
                         placement: Mapping[Pose, float] = BODY_PLACEMENT_CM) -> "OpenPolicy":
        """Offsets cancelling each pose's expected range excess relative to the LOS hand pose."""
        def excess(p: Pose) -> float:
            return err_model.params(p.condition)[0] + placement[p]
        return cls(base, {p: excess(p) - excess(Pose.LOS) for p in Pose})


def gate_decision(measured_distance: float, pose: Pose, policy: OpenPolicy = OpenPolicy()) -> Decision:
    if measured_distance < 0:
        raise ValueError("measured distance must be non-negative")
    return Decision.OPEN if measured_distance <= policy.threshold(pose) else Decision.HOLD


@dataclass(frozen=True)
class GateEvent:
    t_ms: float
    kind: str
    position: tuple[float, float] | None = None  # position_fix
    zone: Zone | None = None  # zone_change
    distance_cm: float | None = None  # twr_result
    pose: Pose | None = None  # pose_update

    def __post_init__(self):
        if self.kind not in EVENT_KINDS:
            raise ValueError(f"unknown gate event kind {self.kind!r}")


@dataclass(frozen=True)
class Session:
    gate_id: int
    started_ms: float
    n_ranges: int = 0
    last_distance_cm: float | None = None


@dataclass(frozen=True)
class GateContext:
    layout: WorldLayout
    policy: OpenPolicy = OpenPolicy()
    timeout_ms: float = 3000.0


@dataclass(frozen=True)
class GateState:
    phase: Phase = Phase.IDLE
    active_gate: int | None = None
    session: Session | None = None
    t_ms: float = float("-inf")
    pose: Pose = Pose.LOS
    last_position: tuple[float, float] | None = None
    opened_ms: float | None = None
    visited_ranging: bool = False  # a session reached RANGING before the current OPEN


def step(state: GateState, event: GateEvent, ctx: GateContext) -> tuple[GateState, Decision | None]:
    """Advance the machine by one event; returns the new state and any open/hold decision."""
    if event.t_ms < state.t_ms:
        raise GateEventError(f"event at {event.t_ms} ms precedes the last event at {state.t_ms} ms")
    st = replace(state, t_ms=event.t_ms)
    phase = st.phase

    if event.kind == "pose_update":
        if event.pose is None:
            raise GateEventError("pose_update without a pose")
        return replace(st, pose=Pose(event.pose)), None

    if event.kind == "timeout":
        if phase is Phase.OPEN and event.t_ms - st.opened_ms >= ctx.timeout_ms:
            return replace(st, phase=Phase.CLOSED, active_gate=None, session=None, visited_ranging=False), None
        return st, None

    if event.kind == "position_fix":
        if event.position is None:
            raise GateEventError("position_fix without a position")
        pos = (float(event.position[0]), float(event.position[1]))
        st = replace(st, last_position=pos)
        if phase in (Phase.IDLE, Phase.CLOSED):
            return replace(st, phase=Phase.LOCALIZING), None
        if phase is Phase.ACCESS_ZONE:
            gate_id = nearest_gate(pos, ctx.layout.gates)
            return replace(st, phase=Phase.RANGING, active_gate=gate_id,
                           session=Session(gate_id, event.t_ms), visited_ranging=True), None
        return st, None

    if event.kind == "zone_change":
        if event.zone is None:
            raise GateEventError("zone_change without a zone")
        zone = Zone(event.zone)
        if phase is Phase.IDLE:
            raise GateEventError("zone_change before any position fix")
        if zone is Zone.GATE_ACCESS:
            if phase is Phase.LOCALIZING:
                return replace(st, phase=Phase.ACCESS_ZONE), None
            return st, None
        if phase in (Phase.ACCESS_ZONE, Phase.RANGING):
            # left the access zone before opening: drop the session
            return replace(st, phase=Phase.LOCALIZING, active_gate=None, session=None, visited_ranging=False), None
        return st, None

    # twr_result
    if phase is not Phase.RANGING:
        raise GateEventError(f"twr_result is only valid while RANGING, not {phase.value}")
    if event.distance_cm is None:
        raise GateEventError("twr_result without a distance")
    session = replace(st.session, n_ranges=st.session.n_ranges + 1, last_distance_cm=float(event.distance_cm))
    decision = gate_decision(max(float(event.distance_cm), 0.0), st.pose, ctx.policy)
    if decision is Decision.OPEN:
        return replace(st, phase=Phase.OPEN, session=session, opened_ms=event.t_ms), decision
    return replace(st, session=session), decision


def check_state(state: GateState) -> None:
    """Structural invariants; raises AssertionError on violation."""
    gated = state.phase in (Phase.RANGING, Phase.OPEN)
    assert (state.active_gate is not None) == gated, f"active_gate inconsistent with {state.phase}"
    assert (state.session is not None) == gated, f"session inconsistent with {state.phase}"
    if state.phase is Phase.OPEN:
        assert state.visited_ranging and state.session.n_ranges > 0


@dataclass(frozen=True)
class TraceEntry:
    t_ms: float
    event: str
    phase: Phase
    decision: Decision | None
    rejected: bool = False

    def as_dict(self) -> dict[str, Any]:
        return {"timestamp": self.t_ms, "event": self.event, "phase": self.phase.value,
                "decision": None if self.decision is None else self.decision.value, "rejected": self.rejected}


def run_events(events, ctx: GateContext, state: GateState = GateState(), strict: bool = True):
    """Feed events in order; returns ``(final_state, trace)``.

    With ``strict=False`` rejected events are logged and skipped instead of raised.
    """
    trace = []
    for ev in events:
        try:
            state, decision = step(state, ev, ctx)
        except GateEventError:
            if strict:
                raise
            trace.append(TraceEntry(ev.t_ms, ev.kind, state.phase, None, rejected=True))
            continue
        trace.append(TraceEntry(ev.t_ms, ev.kind, state.phase, decision))
    return state, trace


def phase_sequence(trace, initial: Phase = Phase.IDLE) -> list[Phase]:
    """Distinct consecutive phases visited, starting from ``initial``."""
    seq = [initial]
    for e in trace:
        if e.phase is not seq[-1]:
            seq.append(e.phase)
    return seq


def write_trace(path, trace) -> None:
    with open(path, "w") as fh:
        for e in trace:
            fh.write(json.dumps(e.as_dict(), sort_keys=True) + "\n")


def simulate_open_distance(pose: Pose, policy: OpenPolicy, err_model: RangeErrorModel = RangeErrorModel(),
                           seed: int = 0, start_cm: float = 300.0, speed_m_s: float = 1.4,
                           interval_ms: float = 200.0, dwell_ms: float = 1000.0,
                           placement: Mapping[Pose, float] = BODY_PLACEMENT_CM):
    """Straight approach to a gate unit with DS-TWR every ``interval_ms``.

    The walker stops at the gate and keeps ranging for ``dwell_ms``.  Returns
    the true body-to-gate distance (cm) at the first OPEN decision, or
    ``None`` if the gate never opens.
    """
    pose = Pose(pose)
    rng = np.random.default_rng(seed)
    bias, sigma = err_model.params(pose.condition)
    step_cm = speed_m_s * interval_ms / 10.0
    body = start_cm - rng.uniform(0.0, step_cm)  # random ranging phase
    n_dwell = int(dwell_ms // interval_ms)
    while n_dwell >= 0:
        if body <= 0.0:
            body, n_dwell = 0.0, n_dwell - 1
        measured = max(body + placement[pose] + bias + sigma * rng.standard_normal(), 0.0)
        if gate_decision(measured, pose, policy) is Decision.OPEN:
            return body
        body -= step_cm
    return None
