import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from uwbgate.channel import RangeErrorModel
from uwbgate.gate import (
    Decision,
    GateContext,
    GateEvent,
    GateEventError,
    GateState,
    OpenPolicy,
    Phase,
    Zone,
    check_state,
    gate_decision,
    nearest_gate,
    phase_sequence,
    run_events,
    simulate_open_distance,
    step,
    write_trace,
    zone_of,
)
from uwbgate.scenario import Gate, build_layout
from uwbgate.types import Pose

from oracles import random_gate_events

LAYOUT = build_layout()
CTX = GateContext(LAYOUT)


def test_zone_examples():
    assert zone_of((6.5, 8.0), LAYOUT) is Zone.GATE_ACCESS
    assert zone_of(LAYOUT.localization_zone.centroid, LAYOUT) is Zone.LOCALIZATION
    assert zone_of((-1.0, -1.0), LAYOUT) is Zone.OUTSIDE


def test_nearest_gate():
    assert nearest_gate((6.4, 8.0), LAYOUT.gates) == 2
    assert nearest_gate((6.5, 8.0), LAYOUT.gates) == 2  # equidistant from 2 and 3
    assert nearest_gate((0.0, 0.0), [Gate(7, np.array([5.0, 5.0]))]) == 7
    with pytest.raises(ValueError):
        nearest_gate((0, 0), [])


@pytest.mark.parametrize("dist, pose, expected", [
    (110.0, Pose.BACK, Decision.OPEN),
    (90.0, Pose.FRONT, Decision.HOLD),
    (0.0, Pose.LOS, Decision.OPEN),
    (0.0, Pose.FRONT, Decision.OPEN),
])
def test_gate_decision(dist, pose, expected):
    assert gate_decision(dist, pose) is expected


def test_negative_distance_rejected():
    with pytest.raises(ValueError):
        gate_decision(-1.0, Pose.LOS)


def test_policy_validation():
    with pytest.raises(ValueError):
        OpenPolicy(10.0, {Pose.LOS: 0, Pose.NLOS: 0, Pose.FRONT: -15, Pose.BACK: 0})
    with pytest.raises(ValueError, match="missing"):
        OpenPolicy(100.0, {Pose.LOS: 0})


def test_calibrated_offsets():
    pol = OpenPolicy.from_error_model(RangeErrorModel())
    assert pol.pose_offset == {Pose.LOS: 0.0, Pose.NLOS: 47.0, Pose.FRONT: -15.0, Pose.BACK: 72.0}


def walk_in():
    return [
        GateEvent(0, "position_fix", position=(6.5, 5.0)),
        GateEvent(500, "position_fix", position=(6.5, 6.0)),
        GateEvent(1000, "position_fix", position=(6.5, 7.2)),
        GateEvent(1000, "zone_change", zone=Zone.GATE_ACCESS),
        GateEvent(1500, "position_fix", position=(6.5, 7.9)),
        GateEvent(1600, "twr_result", distance_cm=150.0),
        GateEvent(1800, "twr_result", distance_cm=95.0),
    ]


def test_scripted_walk_in_phase_sequence():
    state, trace = run_events(walk_in(), CTX)
    assert phase_sequence(trace) == [Phase.IDLE, Phase.LOCALIZING, Phase.ACCESS_ZONE, Phase.RANGING, Phase.OPEN]
    assert state.active_gate == 2 and state.session.n_ranges == 2
    check_state(state)


def test_timeout_closes():
    events = walk_in() + [GateEvent(3000, "timeout"), GateEvent(4800, "timeout")]
    state, trace = run_events(events, CTX)
    assert [e.phase for e in trace[-2:]] == [Phase.OPEN, Phase.CLOSED]
    assert state.active_gate is None
    state, _ = step(state, GateEvent(5000, "position_fix", position=(6.5, 5.0)), CTX)
    assert state.phase is Phase.LOCALIZING


def test_turning_away_drops_session():
    events = walk_in()[:5] + [GateEvent(1700, "zone_change", zone=Zone.LOCALIZATION)]
    state, _ = run_events(events, CTX)
    assert state.phase is Phase.LOCALIZING and state.session is None and state.active_gate is None


def test_twr_in_idle_rejected():
    with pytest.raises(GateEventError):
        step(GateState(), GateEvent(0, "twr_result", distance_cm=10.0), CTX)


def test_out_of_order_event_rejected():
    state, _ = step(GateState(), GateEvent(100, "position_fix", position=(1, 1)), CTX)
    with pytest.raises(GateEventError, match="precedes"):
        step(state, GateEvent(50, "position_fix", position=(1, 1)), CTX)


def test_pose_update_changes_threshold():
    events = walk_in()[:5] + [GateEvent(1550, "pose_update", pose=Pose.FRONT),
                              GateEvent(1600, "twr_result", distance_cm=95.0)]
    state, trace = run_events(events, CTX)
    assert state.phase is Phase.RANGING and trace[-1].decision is Decision.HOLD


def test_unknown_event_kind():
    with pytest.raises(ValueError):
        GateEvent(0, "teleport")


def test_trace_json_lines(tmp_path):
    _, trace = run_events(walk_in(), CTX)
    write_trace(tmp_path / "t.jsonl", trace)
    rows = [json.loads(line) for line in (tmp_path / "t.jsonl").read_text().splitlines()]
    assert rows[-1] == {"timestamp": 1800, "event": "twr_result", "phase": "OPEN", "decision": "OPEN",
                        "rejected": False}


def test_state_machine_deterministic():
    a = run_events(walk_in(), CTX)[1]
    b = run_events(walk_in(), CTX)[1]
    assert a == b


def test_open_only_through_ranging_random_streams():
    rng = np.random.default_rng(2024)
    opened = 0
    for _ in range(10_000):
        state, trace = run_events(random_gate_events(rng, 25), CTX, strict=False)
        prev = Phase.IDLE
        for e in trace:
            if e.phase is Phase.OPEN and prev is not Phase.OPEN:
                assert prev is Phase.RANGING and not e.rejected and e.event == "twr_result"
                opened += 1
            prev = e.phase
        check_state(state)
    assert opened > 0


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_state_invariants_hold_after_every_step(seed):
    state = GateState()
    for ev in random_gate_events(np.random.default_rng(seed), 40):
        try:
            state, _ = step(state, ev, CTX)
        except GateEventError:
            continue
        check_state(state)


def mean_open(pose, policy, n=400):
    d = [simulate_open_distance(pose, policy, seed=s) for s in range(n)]
    assert all(x is not None for x in d)
    return float(np.mean(d))


def test_pose_adaptive_open_distance_matches_los():
    pol = OpenPolicy.from_error_model(RangeErrorModel())
    assert abs(mean_open(Pose.BACK, pol) - mean_open(Pose.LOS, pol)) <= 20.0


def test_pose_agnostic_gap_exceeds_nlos_bias():
    pol = OpenPolicy.pose_agnostic()
    assert mean_open(Pose.LOS, pol) - mean_open(Pose.BACK, pol) > 47.0
