"""Acceptance criteria 1-11.  Each test carries ``criterion(n)``; a one-line verdict per
criterion is printed in the terminal summary."""

import time
import zlib
from fractions import Fraction

import numpy as np
import pytest

from uwbgate.channel import RangeErrorModel, sample_range_bias
from uwbgate.classifier import LpfState, decide, flip_delay_updates, lpf_update
from uwbgate.ecir import transfer_latency
from uwbgate.gate import GateContext, GateEvent, Phase, Zone, check_state, phase_sequence, run_events
from uwbgate.harness import experiment as ex
from uwbgate.harness.config import config_from_dict
from uwbgate.localization import DegenerateGeometryError, graham_hull, md_inside, solve_tdoa
from uwbgate.neural import LSTM, Conv1D, Conv2D, Dense, Dropout, Flatten, InstanceNorm, MaxPool1D, MaxPool2D, ReLU, Sigmoid
from uwbgate.neural.gradcheck import check_layer
from uwbgate.ranging import TwrTimestamps, ds_twr_tof, simulate_dltdoa_round
from uwbgate.scenario import build_layout
from uwbgate.types import Condition, Pose

from oracles import brute_hull_vertices, exact, inside_halfplanes, non_collinear, random_gate_events

# 2,500 per pose leaves 4,000 training eCIRs per class after the 80/20 split
CFG = config_from_dict({"classifier": {"n_per_pose": 2500}})
LAYOUT = CFG.world()
POS = LAYOUT.anchor_positions()


@pytest.fixture(scope="module")
def cir_data():
    return ex.prepare_cir_data(CFG)


@pytest.fixture(scope="module")
def trained_classifier(cir_data):
    t0 = time.perf_counter()
    model, _ = ex.train_classifier(CFG, cir_data)
    return model, time.perf_counter() - t0


@pytest.fixture(scope="module")
def classifier_eval(trained_classifier, cir_data):
    return ex.evaluate_classifier(trained_classifier[0], cir_data, CFG)


@pytest.fixture(scope="module")
def pose_models():
    imu = ex.prepare_imu_data(CFG)
    models, _ = ex.train_pose_models(CFG, imu)
    return models, imu


# ---------------------------------------------------------------- 1. DS-TWR


@pytest.mark.criterion(1)
def test_dstwr_unit_suite():
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    for _ in range(1000):
        r, p = rng.uniform(100, 1e6), rng.uniform(10, 1e5)
        r = max(r, p + 1.0)
        assert abs(ds_twr_tof(TwrTimestamps(r, p, r, p)) - (r - p) / 2) <= 1e-12 * r

    def rel(a, b):
        return abs(a - b) / max(abs(a), abs(b))

    # real-valued timestamps: exact rational oracle, swap symmetry, power-of-two scaling
    for _ in range(1000):
        p1, p2 = rng.uniform(1e3, 1e6, 2)
        tof = rng.uniform(1.0, 100.0)
        r1, r2 = p2 + 2 * tof + rng.normal(0, 1), p1 + 2 * tof + rng.normal(0, 1)
        base = ds_twr_tof(TwrTimestamps(r1, p1, r2, p2))
        oracle = (Fraction(r1) * Fraction(r2) - Fraction(p1) * Fraction(p2)) / (
            Fraction(r1) + Fraction(r2) + Fraction(p1) + Fraction(p2))
        assert rel(base, float(oracle)) <= 1e-12
        assert rel(ds_twr_tof(TwrTimestamps(r2, p2, r1, p1)), base) <= 1e-12
        k = 2.0 ** int(rng.integers(-20, 21))
        assert rel(ds_twr_tof(TwrTimestamps(k * r1, k * p1, k * r2, k * p2)), k * base) <= 1e-12

    # integer device ticks with integer scale factors, so the scaled inputs are exact too
    for _ in range(1000):
        p1, p2 = (int(v) for v in rng.integers(10**5, 10**8, 2))
        flight = int(rng.integers(2, 2000))
        r1, r2 = p2 + flight + int(rng.integers(-50, 51)), p1 + flight + int(rng.integers(-50, 51))
        k = int(rng.integers(2, 100))
        base = ds_twr_tof(TwrTimestamps(r1, p1, r2, p2))
        assert rel(ds_twr_tof(TwrTimestamps(k * r1, k * p1, k * r2, k * p2)), k * base) <= 1e-12
        assert rel(ds_twr_tof(TwrTimestamps(r2, p2, r1, p1)), base) <= 1e-12
    assert time.perf_counter() - t0 < 1.0


# ---------------------------------------------------------------- 2. noise model


@pytest.mark.criterion(2)
def test_noise_model_statistics():
    t0 = time.perf_counter()
    model = RangeErrorModel()
    los = sample_range_bias(model, Condition.LOS, seed=20, size=10_000)
    nlos = sample_range_bias(model, Condition.NLOS, seed=21, size=10_000)
    assert abs(los.std() - 4.0) <= 0.2
    assert abs(nlos.mean() - 47.0) <= 1.0
    assert abs(nlos.std() - 26.0) <= 1.0
    assert time.perf_counter() - t0 < 5.0


# ---------------------------------------------------------------- 3. gradient oracle


def _spread(rng, shape, gap=0.1):
    """Random input with all entries at least ``gap / 2`` apart and away from zero."""
    n = int(np.prod(shape))
    vals = (rng.permutation(n) - n // 2 + 0.5) * gap + rng.uniform(-gap / 4, gap / 4, n)
    return vals.reshape(shape)


LAYER_KINDS = {
    "conv1d": lambda r: (Conv1D(int(r.integers(1, 4)), int(r.integers(1, 4)),
                                padding=str(r.choice(["valid", "same"]))), (int(r.integers(1, 3)), int(r.integers(4, 8)))),
    "conv2d": lambda r: (Conv2D(int(r.integers(1, 3)), int(r.integers(1, 3)),
                                padding=str(r.choice(["valid", "same"]))),
                         (int(r.integers(1, 3)), int(r.integers(3, 5)), int(r.integers(3, 5)))),
    "instance_norm": lambda r: (InstanceNorm(), (int(r.integers(1, 4)), int(r.integers(3, 7)))),
    "relu": lambda r: (ReLU(), (int(r.integers(1, 4)), int(r.integers(2, 6)))),
    "dropout": lambda r: (Dropout(float(r.uniform(0.1, 0.6))), (int(r.integers(1, 4)), int(r.integers(2, 6)))),
    "maxpool1d": lambda r: (MaxPool1D(int(r.integers(2, 4))), (int(r.integers(1, 3)), int(r.integers(4, 9)))),
    "maxpool2d": lambda r: (MaxPool2D(2), (int(r.integers(1, 3)), int(r.integers(2, 5)), int(r.integers(2, 5)))),
    "flatten": lambda r: (Flatten(time_axis=[None, 0, 1][int(r.integers(0, 3))]), (2, int(r.integers(2, 4)), int(r.integers(1, 3)))),
    "dense": lambda r: (Dense(int(r.integers(1, 5))), (int(r.integers(1, 6)),)),
    "sigmoid": lambda r: (Sigmoid(), (int(r.integers(1, 6)),)),
    "lstm": lambda r: (LSTM(int(r.integers(1, 4))), (int(r.integers(1, 4)), int(r.integers(1, 3)))),
}
GRAD_TRIALS = 50


@pytest.fixture(scope="module")
def gradcheck_clock():
    return {"elapsed": 0.0}


@pytest.mark.criterion(3)
@pytest.mark.parametrize("kind", list(LAYER_KINDS))
def test_gradient_oracle(kind, gradcheck_clock):
    t0 = time.perf_counter()
    rng = np.random.default_rng(zlib.crc32(kind.encode()))
    worst = 0.0
    for trial in range(GRAD_TRIALS):
        layer, shape = LAYER_KINDS[kind](rng)
        layer.build(shape, np.random.default_rng(trial), np.float64)
        batch = int(rng.integers(1, 3))
        x = _spread(rng, (batch,) + shape) if kind in ("relu", "maxpool1d", "maxpool2d") \
            else rng.standard_normal((batch,) + shape)
        worst = max(worst, check_layer(layer, x, rng, training=kind == "dropout", dropout_seed=trial))
    gradcheck_clock["elapsed"] += time.perf_counter() - t0
    assert worst <= 1e-3, f"{kind}: max relative error {worst:.2e}"
    assert gradcheck_clock["elapsed"] < 60.0


# ---------------------------------------------------------------- 4. classifier


@pytest.mark.slow
@pytest.mark.criterion(4)
def test_classifier_desk_scale(cir_data, trained_classifier, classifier_eval):
    for label in (0.0, 1.0):
        assert int((cir_data.train_y == label).sum()) >= 4000
    assert cfg_is_table_one()
    metrics, _ = classifier_eval
    print(f"raw {metrics['overall']['raw']:.4f}  lpf {metrics['overall']['lpf']:.4f}  "
          f"train {trained_classifier[1]:.0f}s")
    assert metrics["overall"]["raw"] >= 0.83
    assert metrics["overall"]["lpf"] >= 0.95
    assert trained_classifier[1] < 30 * 60


def cfg_is_table_one():
    tc = CFG.classifier.train_config(0)
    return tc.batch_size == 50 and tc.max_epochs == 20 and tc.adam.learning_rate == 1e-3


# ---------------------------------------------------------------- 5. LPF transition


@pytest.mark.criterion(5)
def test_lpf_transition_closed_form_and_simulated():
    assert flip_delay_updates(0.8, 1.0, 0.0) == 4
    assert flip_delay_updates(0.8, 0.0, 1.0) == 4
    for start, target, want in ((1.0, 0.0, Condition.LOS), (0.0, 1.0, Condition.NLOS)):
        st, k = LpfState(start, 0.8), 0
        while decide(st) is not want:
            st, k = lpf_update(st, target), k + 1
        assert k == 4
    ms = 4 * CFG.intervals.ds_twr_ms
    assert ms == 800.0
    assert 734.8 - 200.0 <= ms <= 851.2 + 200.0


@pytest.mark.slow
@pytest.mark.criterion(5)
def test_lpf_transition_with_trained_classifier(trained_classifier, cir_data):
    delays = ex.transition_delays(trained_classifier[0], cir_data, CFG)
    for pair, row in delays.items():
        assert row["trials"] > 0
        assert 734.8 - 200.0 <= row["mean_ms"] <= 851.2 + 200.0, pair


# ---------------------------------------------------------------- 6. hull oracle


@pytest.mark.criterion(6)
def test_hull_and_inside_match_brute_force():
    t0 = time.perf_counter()
    rng = np.random.default_rng(6)
    checked = 0
    for i in range(1000):
        n = int(rng.integers(3, 10))
        pts = rng.integers(0, 8, (n, 2)).astype(float) if i % 2 else rng.uniform(0, 10, (n, 2))
        if not non_collinear(pts):
            with pytest.raises(DegenerateGeometryError):
                graham_hull(pts)
            continue
        hull = graham_hull(pts)
        assert {exact(pts[j]) for j in hull.indices} == brute_hull_vertices([exact(p) for p in pts])
        anchors = pts[:4] if n >= 4 and non_collinear(pts[:4]) else pts
        md = rng.integers(-1, 10, 2).astype(float) if i % 2 else rng.uniform(-1, 11, 2)
        assert md_inside(anchors, md) is inside_halfplanes(anchors, md)
        checked += 1
    assert checked > 900
    assert time.perf_counter() - t0 < 10.0


# ---------------------------------------------------------------- 7. solver


@pytest.mark.criterion(7)
def test_solver_recovery():
    truth = np.asarray(CFG.localization.standing_point)
    ids = LAYOUT.anchor_ids
    start = LAYOUT.localization_zone.centroid
    clean = simulate_dltdoa_round(LAYOUT, truth, {a: "LOS" for a in ids}, RangeErrorModel.noiseless(),
                                  sync_sigma_ns=0.0)
    assert np.linalg.norm(solve_tdoa(clean, POS, start).position - truth) < 1e-6
    rng = np.random.default_rng(7)
    errs = []
    for r in range(1000):
        t = simulate_dltdoa_round(LAYOUT, truth, {a: "LOS" for a in ids}, RangeErrorModel(), seed=rng,
                                  sync_sigma_ns=CFG.noise.sync_sigma_ns, round_id=r)
        errs.append(np.linalg.norm(solve_tdoa(t, POS, start).position - truth) * 100.0)
    print(f"mean LOS error {np.mean(errs):.3f} cm")
    assert np.mean(errs) <= 4.0


# ---------------------------------------------------------------- 8. headline comparison


@pytest.mark.slow
@pytest.mark.criterion(8)
def test_headline_paired_comparison(trained_classifier):
    assert CFG.iterations == 100
    t0 = time.perf_counter()
    res = ex.run_localization(CFG, trained_classifier[0])
    elapsed = time.perf_counter() - t0
    mean = {m: {s: res[m][s]["mean_cm"] for s in ex.SCENARIOS} for m in ex.MODES}
    print("  ".join(f"{m}: LOS {v['LOS']:.2f} NLOS {v['NLOS']:.2f}" for m, v in mean.items()) + f"  ({elapsed:.0f}s)")
    assert all(res[m][s]["iterations"] == 100 for m in ex.MODES for s in ex.SCENARIOS)
    assert mean["full"]["NLOS"] <= 0.5 * mean["legacy"]["NLOS"]
    assert mean["full"]["LOS"] <= mean["legacy"]["LOS"]
    assert mean["asa"]["LOS"] > mean["legacy"]["LOS"]
    assert elapsed < 10 * 60


# ---------------------------------------------------------------- 9. pose pipeline


@pytest.mark.slow
@pytest.mark.criterion(9)
def test_pose_pipeline(pose_models, classifier_eval):
    models, imu = pose_models
    _, stream = classifier_eval
    out, _ = ex.evaluate_pose(models, stream, imu)
    for p in Pose:
        row = out[p.value]
        print(f"{p.value}: pose {row['accuracy']:.4f} upstream {row['upstream_accuracy']:.4f}")
        assert row["accuracy"] >= 0.90
        assert row["accuracy"] <= row["upstream_accuracy"]
        assert row["upstream_accuracy"] - row["accuracy"] <= 0.03


# ---------------------------------------------------------------- 10. latency


@pytest.mark.criterion(10)
def test_latency_budget():
    assert transfer_latency(1016).ms == 223.4
    assert transfer_latency(135).ms == 17.8
    assert transfer_latency(135).ms < CFG.intervals.ds_twr_ms == 200.0


# ---------------------------------------------------------------- 11. gate


@pytest.mark.criterion(11)
def test_scripted_walk_in_sequence():
    ctx = GateContext(build_layout())
    events = [
        GateEvent(0, "position_fix", position=(6.5, 5.0)),
        GateEvent(500, "position_fix", position=(6.5, 7.2)),
        GateEvent(500, "zone_change", zone=Zone.GATE_ACCESS),
        GateEvent(1000, "position_fix", position=(6.5, 7.9)),
        GateEvent(1200, "twr_result", distance_cm=140.0),
        GateEvent(1400, "twr_result", distance_cm=90.0),
    ]
    _, trace = run_events(events, ctx)
    assert phase_sequence(trace) == [Phase.IDLE, Phase.LOCALIZING, Phase.ACCESS_ZONE, Phase.RANGING, Phase.OPEN]
    for seed in range(10):
        _, sim_trace, _ = ex.gate_walkin(CFG, Pose.LOS, seed=seed)
        seq = [Phase.IDLE]
        for _, phase, _ in sim_trace:
            if phase is not seq[-1]:
                seq.append(phase)
        assert seq[:5] == [Phase.IDLE, Phase.LOCALIZING, Phase.ACCESS_ZONE, Phase.RANGING,
                                                 Phase.OPEN]


@pytest.mark.criterion(11)
def test_open_never_reached_without_ranging():
    ctx = GateContext(build_layout())
    rng = np.random.default_rng(11)
    for _ in range(10_000):
        state, trace = run_events(random_gate_events(rng, 25), ctx, strict=False)
        prev = Phase.IDLE
        for e in trace:
            if e.phase is Phase.OPEN and prev is not Phase.OPEN:
                assert prev is Phase.RANGING
            prev = e.phase
        check_state(state)
