import copy

import numpy as np
import pytest

from uwbgate.pose import (
    BRANCH_POSES,
    ImuWindow,
    InsufficientHistoryError,
    PoseModels,
    UntrainedPoseModelError,
    build_pose_model,
    predict_pose,
    predict_pose_many,
    synth_windows,
    window_imu,
    write_pose_log,
)
from uwbgate.scenario import PoseSchedule, synth_imu, treadmill_trajectory
from uwbgate.types import Condition, Pose


def stream(duration_ms):
    return synth_imu(treadmill_trajectory(duration_ms), PoseSchedule.constant(Pose.LOS, 0.0, duration_ms), seed=0)


def test_full_window_at_last_sample():
    s = stream(1080.0)
    w = window_imu(s, s.t_ms[-1])
    assert w.values.shape == (18, 6)
    np.testing.assert_array_equal(w.values, s.features)


def test_seventeen_samples_is_insufficient():
    s = stream(1020.0)
    assert len(s) == 17
    with pytest.raises(InsufficientHistoryError):
        window_imu(s, s.t_ms[-1])


def test_window_aligns_to_latest_sample_before_t():
    s = stream(3000.0)
    w = window_imu(s, s.t_ms[25] + 30.0)
    assert w.t_ms[-1] == s.t_ms[25]
    assert np.all(np.diff(w.t_ms) == 60.0)
    assert w.t_ms[-1] - w.t_ms[0] == 17 * 60.0


def test_window_shape_enforced():
    with pytest.raises(ValueError):
        ImuWindow(np.zeros(17), np.zeros((17, 6)))


def test_pose_model_dimension_trace():
    m = build_pose_model()
    trace = dict((i, s) for i, (_, s) in enumerate(m.shape_trace()))
    shapes = [s for _, s in m.shape_trace()]
    assert shapes[0] == (1, 18, 6)
    assert (64, 9, 3) in shapes and (128, 4, 1) in shapes and (256, 2, 1) in shapes
    assert ("flatten", (2, 256)) in m.shape_trace()
    assert ("lstm", (128,)) in m.shape_trace()
    assert shapes[-1] == (1,)
    assert all(min(s) >= 1 for s in trace.values())


def test_untrained_branch_rejected():
    m = PoseModels(build_pose_model(filters=(2, 2, 2), lstm_units=2), build_pose_model(filters=(2, 2, 2), lstm_units=2))
    w = synth_windows(Pose.LOS, 1)[0]
    with pytest.raises(UntrainedPoseModelError):
        predict_pose(ImuWindow(np.arange(18.0), w), Condition.LOS, m)


@pytest.mark.parametrize("cond", list(Condition))
def test_branch_outputs_only_its_poses(small_pose_models, cond):
    windows = np.concatenate([synth_windows(p, 20, seed=7) for p in Pose])
    poses, p = predict_pose_many(windows, cond, small_pose_models)
    assert set(poses) <= set(BRANCH_POSES[cond])
    assert np.all((p > 0) & (p < 1))


@pytest.mark.parametrize("pose", list(Pose))
def test_small_models_learn_each_branch(small_pose_models, pose):
    windows = synth_windows(pose, 60, seed=321)
    poses, _ = predict_pose_many(windows, pose.condition, small_pose_models)
    assert np.mean([q is pose for q in poses]) >= 0.9


def test_inference_is_deterministic(small_pose_models):
    w = ImuWindow(np.arange(18.0), synth_windows(Pose.BACK, 1, seed=5)[0])
    assert predict_pose(w, Condition.NLOS, small_pose_models) == predict_pose(w, Condition.NLOS, small_pose_models)


def test_branch_isolation(small_pose_models):
    windows = synth_windows(Pose.FRONT, 30, seed=8)
    before = predict_pose_many(windows, Condition.LOS, small_pose_models)
    scrambled = copy.deepcopy(small_pose_models.nlos_model)
    rng = np.random.default_rng(0)
    for p in scrambled.parameters().values():
        p[...] = rng.normal(size=p.shape)
    after = predict_pose_many(windows, Condition.LOS, PoseModels(small_pose_models.los_model, scrambled))
    assert before[0] == after[0]
    np.testing.assert_array_equal(before[1], after[1])


def test_pose_log(tmp_path):
    write_pose_log(tmp_path / "p.csv", [(0.0, Condition.LOS, Pose.FRONT, 0.7), (200.0, "NLOS", "BACK", 0.9)])
    lines = (tmp_path / "p.csv").read_text().splitlines()
    assert lines[0] == "timestamp_ms,gated_condition,pose,probability"
    assert lines[2] == "200.0,NLOS,BACK,0.900000"
