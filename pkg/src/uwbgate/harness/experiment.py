"""End-to-end desk-scale experiment: data synthesis, training, evaluation, metrics."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from ..channel import compute_diagnostics, synth_cir
from ..classifier import AnchorBelief, LpfState, build_los_model, classify_many, decide, flip_delay_updates, lpf_update
from ..ecir import extract_ecir, transfer_latency
from ..gate import (
    BODY_PLACEMENT_CM,
    GateContext,
    GateEvent,
    GateState,
    OpenPolicy,
    Phase,
    Zone,
    simulate_open_distance,
    step,
    zone_of,
)
from ..localization import LocalizerState, localize_round, solve_tdoa
from ..neural import Sequential, train
from ..pose import BRANCH_POSES, PoseModels, build_pose_model, predict_pose_many, synth_windows, window_input
from ..ranging import DsTwrParams, simulate_dltdoa_round, simulate_dstwr
from ..scenario import PoseSchedule, WalkParams, gen_trajectory
from ..types import Condition, Pose
from .config import ExperimentConfig
from .datasets import CirDataset, stratified_split, synth_cir_dataset
from .report import MetricsReport

log = logging.getLogger(__name__)

MODES = ("legacy", "asa", "full")
SCENARIOS = ("LOS", "NLOS")
# transition pairs: hand-NLOS / back pocket against hand-LOS / front pocket
TRANSITION_PAIRS = ((Pose.NLOS, Pose.LOS), (Pose.NLOS, Pose.FRONT), (Pose.BACK, Pose.LOS), (Pose.BACK, Pose.FRONT))


def child_seeds(master: int, n: int, stream: int) -> list[int]:
    """Independent per-item seeds derived from the master seed and a stream tag."""
    ss = np.random.SeedSequence([master, stream])
    return [int(s.generate_state(1, np.uint64)[0] % 2**63) for s in ss.spawn(n)]


# ---------------------------------------------------------------- data


@dataclass
class CirSplit:
    train_x: np.ndarray
    train_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray
    test_poses: tuple[Pose, ...]


def prepare_cir_data(cfg: ExperimentConfig, dataset: CirDataset | None = None) -> CirSplit:
    ds = dataset if dataset is not None else synth_cir_dataset(cfg.cirs_per_pose, seed=cfg.seed)
    groups = ds.poses if ds.poses is not None else ds.labels
    tr, te = stratified_split(groups, 0.2, seed=cfg.seed)
    x = ds.ecirs()
    poses = ds.poses if ds.poses is not None else tuple(Pose.NLOS if y else Pose.LOS for y in ds.labels)
    return CirSplit(x[tr], ds.labels[tr].astype(float), x[te], ds.labels[te].astype(float),
                    tuple(poses[i] for i in te))


@dataclass
class ImuSplit:
    train: dict  # Condition -> (x, y)
    test: dict  # Pose -> windows


def prepare_imu_data(cfg: ExperimentConfig) -> ImuSplit:
    n = cfg.pose.n_per_pose
    n_test = int(round(n * 0.2))
    windows = {p: synth_windows(p, n, seed=cfg.seed * 10 + k) for k, p in enumerate(Pose)}
    train_sets, test = {}, {}
    for cond, (hand, pocket) in BRANCH_POSES.items():
        x = np.concatenate([windows[hand][n_test:], windows[pocket][n_test:]])
        y = np.concatenate([np.zeros(n - n_test), np.ones(n - n_test)])
        train_sets[cond] = (x, y)
    for p in Pose:
        test[p] = windows[p][:n_test]
    return ImuSplit(train_sets, test)


# ---------------------------------------------------------------- training


def train_classifier(cfg: ExperimentConfig, data: CirSplit) -> tuple[Sequential, list[float]]:
    model = build_los_model(seed=cfg.seed)
    history = train(model, data.train_x.reshape(-1, 1, data.train_x.shape[1]), data.train_y,
                    cfg.classifier.train_config(cfg.seed))
    return model, history


def train_pose_models(cfg: ExperimentConfig, data: ImuSplit) -> tuple[PoseModels, dict]:
    models, histories = {}, {}
    for k, cond in enumerate(Condition):
        x, y = data.train[cond]
        model = build_pose_model(seed=cfg.seed + 1 + k)
        histories[cond.value] = train(model, window_input(x).astype(model.dtype), y,
                                      cfg.pose.train_config(cfg.seed + 1 + k))
        models[cond] = model
    return PoseModels(models[Condition.LOS], models[Condition.NLOS]), histories


# ---------------------------------------------------------------- evaluation


def block_stream(poses, block_len: int, seed: int) -> np.ndarray:
    """Order test indices into constant-pose blocks of ``block_len`` in a seeded random block order."""
    poses = list(poses)
    blocks = []
    for p in Pose:
        idx = [i for i, q in enumerate(poses) if q is p]
        blocks += [idx[s:s + block_len] for s in range(0, len(idx), block_len)]
    order = np.random.default_rng(seed).permutation(len(blocks))
    return np.array([i for b in order for i in blocks[b]], dtype=int)


def lpf_decisions(probs, weight: float) -> tuple[np.ndarray, np.ndarray]:
    """Filtered values and decisions (1 = NLOS) for a single stream."""
    st = LpfState(0.5, weight)
    filt, dec = np.empty(len(probs)), np.empty(len(probs), dtype=int)
    for i, p in enumerate(probs):
        st = lpf_update(st, float(p))
        filt[i] = st.filtered
        dec[i] = decide(st).label
    return filt, dec


@dataclass
class StreamEval:
    order: np.ndarray
    poses: list
    raw_prob: np.ndarray
    decisions: np.ndarray


def evaluate_classifier(model: Sequential, data: CirSplit, cfg: ExperimentConfig) -> tuple[dict, StreamEval]:
    probs = classify_many(model, data.test_x)
    order = block_stream(data.test_poses, cfg.classifier.block_len, cfg.seed)
    _, dec = lpf_decisions(probs[order], cfg.lpf_weight)
    labels = data.test_y[order].astype(int)
    poses = [data.test_poses[i] for i in order]
    raw_ok = (probs[order] >= 0.5).astype(int) == labels
    lpf_ok = dec == labels
    out = {}
    for p in Pose:
        m = np.array([q is p for q in poses])
        if m.any():
            out[p.value] = {"raw": float(raw_ok[m].mean()), "lpf": float(lpf_ok[m].mean()), "n": int(m.sum())}
    out["overall"] = {"raw": float(raw_ok.mean()), "lpf": float(lpf_ok.mean()), "n": int(len(order))}
    return out, StreamEval(order, poses, probs[order], dec)


def evaluate_pose(models: PoseModels, stream: StreamEval, imu: ImuSplit) -> tuple[dict, list]:
    """End-to-end: each stream frame gates one held-out IMU window of the same true pose.

    Returns per-pose accuracies and the per-frame ``(gated_condition, pose, probability)`` log.
    """
    cursor = {p: 0 for p in Pose}
    windows, truth = [], []
    for p in stream.poses:
        w = imu.test[p]
        windows.append(w[cursor[p] % len(w)])
        cursor[p] += 1
        truth.append(p)
    windows = np.asarray(windows)
    predicted, prob = [None] * len(truth), np.zeros(len(truth))
    for cond in Condition:
        idx = np.flatnonzero(stream.decisions == cond.label)
        if idx.size:
            poses, p = predict_pose_many(windows[idx], cond, models)
            prob[idx] = p
            for i, q in zip(idx, poses):
                predicted[i] = q
    out = {}
    for p in Pose:
        m = [i for i, t in enumerate(truth) if t is p]
        if m:
            pose_ok = np.mean([predicted[i] is p for i in m])
            gate_ok = np.mean([stream.decisions[i] == p.condition.label for i in m])
            out[p.value] = {"accuracy": float(pose_ok), "upstream_accuracy": float(gate_ok), "n": len(m)}
    out["overall"] = {"accuracy": float(np.mean([a is b for a, b in zip(predicted, truth)])),
                      "upstream_accuracy": float(np.mean([stream.decisions[i] == t.condition.label
                                                          for i, t in enumerate(truth)]))}
    frames = [(Condition.NLOS if d else Condition.LOS, q, float(pr))
              for d, q, pr in zip(stream.decisions, predicted, prob)]
    return out, frames


def transition_delays(model: Sequential, data: CirSplit, cfg: ExperimentConfig) -> dict:
    """Measured LPF decision-flip delay for each transition pose pair, both directions pooled."""
    probs = classify_many(model, data.test_x)
    by_pose = {p: probs[[i for i, q in enumerate(data.test_poses) if q is p]] for p in Pose}
    rng = np.random.default_rng(child_seeds(cfg.seed, 1, 7)[0])
    tc, dt = cfg.transition, cfg.intervals.ds_twr_ms
    out = {}
    for a, b in TRANSITION_PAIRS:
        delays = []
        for src, dst in ((a, b), (b, a)):
            if not len(by_pose[src]) or not len(by_pose[dst]):
                continue
            for _ in range(tc.trials):
                st = LpfState(0.5, cfg.lpf_weight)
                for p in rng.choice(by_pose[src], tc.settle_updates):
                    st = lpf_update(st, float(p))
                want = dst.condition
                for k, p in enumerate(rng.choice(by_pose[dst], tc.max_updates), start=1):
                    st = lpf_update(st, float(p))
                    if decide(st) is want:
                        delays.append(k * dt)
                        break
        key = f"{a.value}-{b.value}"
        out[key] = {"mean_ms": float(np.mean(delays)) if delays else float("nan"),
                    "std_ms": float(np.std(delays)) if delays else float("nan"),
                    "trials": len(delays),
                    "closed_form_ms": flip_delay_updates(cfg.lpf_weight, 1.0, 0.0) * dt}
    return out


# ---------------------------------------------------------------- localization


def _walk(cfg: ExperimentConfig, layout, seed: int):
    lc = cfg.localization
    traj = gen_trajectory(layout, WalkParams(end=lc.standing_point, start_distance=lc.start_distance_m), seed=seed)
    dt = cfg.intervals.dl_tdoa_ms
    walk_t = np.arange(0.0, traj.duration_ms + 1e-9, dt)
    truths = [traj.position_at(t) for t in walk_t] + [np.asarray(lc.standing_point, float)] * lc.dwell_rounds
    dwell = np.r_[np.zeros(len(walk_t), bool), np.ones(lc.dwell_rounds, bool)]
    return truths, dwell


def localization_iteration(cfg: ExperimentConfig, model: Sequential, scenario: str, seed: int,
                           keep_rounds: bool = False) -> dict:
    """One walk-in; every mode consumes the same measurement and belief stream."""
    layout = cfg.world()
    ids = layout.anchor_ids
    conds = {a: Condition.LOS for a in ids}
    if scenario == "NLOS":
        conds[cfg.localization.nlos_anchor] = Condition.NLOS
    rng = np.random.default_rng(seed)
    truths, dwell = _walk(cfg, layout, int(rng.integers(2**31)))

    # eCIRs for every (round, anchor) first, then one batched inference
    ecirs = []
    for _ in truths:
        for a in ids:
            frame = synth_cir(conds[a], seed=int(rng.integers(2**63)))
            ecirs.append(extract_ecir(frame, compute_diagnostics(frame)).amplitudes)
    probs = classify_many(model, np.asarray(ecirs)).reshape(len(truths), len(ids))

    err_model = cfg.noise.error_model()
    oc = cfg.outlier
    states = {m: LocalizerState(oc.buffer_size, oc.threshold_cm, oc.interval_scale) for m in MODES}
    beliefs = AnchorBelief.fresh(ids, weight=cfg.lpf_weight)
    errors = {m: [] for m in MODES}
    rounds = []
    for r, truth in enumerate(truths):
        for j, a in enumerate(ids):
            beliefs = beliefs.update(a, float(probs[r, j]))
        tdoa = simulate_dltdoa_round(layout, truth, conds, err_model, seed=rng,
                                     sync_sigma_ns=cfg.noise.sync_sigma_ns, round_id=r)
        for m in MODES:
            res, states[m] = localize_round(beliefs, tdoa, states[m], layout, m)
            err = float(np.linalg.norm(res.raw_position - truth)) * 100.0
            if dwell[r] and res.accepted:
                errors[m].append(err)
            if keep_rounds:
                rounds.append((m, res, truth))
    out = {"errors": errors}
    if keep_rounds:
        out["rounds"] = rounds
    return out


def _loc_job(args):
    cfg, model, scenario, seed = args
    return localization_iteration(cfg, model, scenario, seed)["errors"]


def run_localization(cfg: ExperimentConfig, model: Sequential) -> dict:
    results = {}
    for s_idx, scenario in enumerate(SCENARIOS):
        seeds = child_seeds(cfg.seed, cfg.iterations, 100 + s_idx)
        jobs = [(cfg, model, scenario, s) for s in seeds]
        if cfg.workers > 1:
            with ProcessPoolExecutor(cfg.workers) as ex:
                per_iter = list(ex.map(_loc_job, jobs))
        else:
            per_iter = [_loc_job(j) for j in jobs]
        for m in MODES:
            errs = np.concatenate([np.asarray(it[m], float) for it in per_iter])
            results.setdefault(m, {})[scenario] = {
                "mean_cm": float(errs.mean()) if errs.size else float("nan"),
                "std_cm": float(errs.std()) if errs.size else float("nan"),
                "fixes": int(errs.size),
                "iterations": len(per_iter),
            }
        log.info("localization %s done", scenario)
    return results


# ---------------------------------------------------------------- gate


def gate_walkin(cfg: ExperimentConfig, pose: Pose, seed: int, policy: OpenPolicy | None = None):
    """A scripted walk through the gate lane, driving the state machine with simulated fixes and ranges.

    Returns ``(final_state, trace, events)``.
    """
    layout = cfg.world()
    ctx = GateContext(layout, policy or cfg.gate.policy(), cfg.gate.timeout_ms)
    rng = np.random.default_rng(seed)
    end = (cfg.localization.standing_point[0], layout.gate_access_zone.ymax)
    traj = gen_trajectory(layout, WalkParams(end=end, start_distance=cfg.localization.start_distance_m),
                          seed=int(rng.integers(2**31)))
    err_model = cfg.noise.error_model()
    conds = {a: Condition.LOS for a in layout.anchor_ids}
    sched = PoseSchedule.constant(pose, 0.0, traj.duration_ms + 1.0)
    dt_fix, dt_twr = cfg.intervals.dl_tdoa_ms, cfg.intervals.ds_twr_ms
    t_end = traj.duration_ms + 1000.0  # stand at the gate for a second

    state, trace_all, events = GateState(), [], []
    zone = None
    loc_state = LocalizerState()
    t_fix, t_twr = 0.0, None

    def emit(ev):
        nonlocal state
        events.append(ev)
        state, decision = step(state, ev, ctx)
        trace_all.append((ev, state.phase, decision))

    t = 0.0
    while t <= t_end + 1e-9:
        body = traj.position_at(min(t, traj.duration_ms))
        if abs(t - t_fix) < 1e-9:
            tdoa = simulate_dltdoa_round(layout, body, conds, err_model, seed=rng,
                                         sync_sigma_ns=cfg.noise.sync_sigma_ns)
            prev = loc_state.last_position if loc_state.last_position is not None else body
            fix = solve_tdoa(tdoa, layout.anchor_positions(), prev).position
            loc_state.last_position = fix
            emit(GateEvent(t, "position_fix", position=tuple(fix)))
            z = zone_of(fix, layout)
            if z is not zone and state.phase is not Phase.IDLE:
                emit(GateEvent(t, "zone_change", zone=z))
                if z is Zone.GATE_ACCESS and state.phase is Phase.ACCESS_ZONE:
                    emit(GateEvent(t, "position_fix", position=tuple(fix)))
            zone = z
            t_fix += dt_fix
            if state.phase is Phase.RANGING and t_twr is None:
                t_twr = t
        if t_twr is not None and abs(t - t_twr) < 1e-9 and state.phase is Phase.RANGING:
            emit(GateEvent(t, "pose_update", pose=sched.pose_at(min(t, sched.end_ms))))
            gate_pos = layout.gate(state.active_gate).position
            heading = traj.heading_at(min(t, traj.duration_ms))
            ahead = np.array([math.cos(heading), math.sin(heading)])
            device = body - BODY_PLACEMENT_CM[pose] / 100.0 * ahead
            bias = err_model.params(pose.condition)
            extra = bias[0] + bias[1] * rng.standard_normal()
            _, est = simulate_dstwr(float(np.linalg.norm(device - gate_pos)),
                                    DsTwrParams(range_error_cm=extra), seed=int(rng.integers(2**31)))
            emit(GateEvent(t, "twr_result", distance_cm=max(est * 100.0, 0.0)))
            t_twr += dt_twr
        if state.phase is Phase.OPEN:
            emit(GateEvent(state.opened_ms + ctx.timeout_ms, "timeout"))
            break
        nxt = [x for x in (t_fix, t_twr) if x is not None and x > t + 1e-9]
        t = min(nxt)
    return state, trace_all, events


def gate_summary(cfg: ExperimentConfig) -> dict:
    err_model = cfg.noise.error_model()
    seeds = child_seeds(cfg.seed, cfg.gate.walkins, 300)
    policies = {"configured": cfg.gate.policy(), "pose_agnostic": OpenPolicy.pose_agnostic(cfg.gate.base_open_distance_cm),
                "calibrated": OpenPolicy.from_error_model(err_model, cfg.gate.base_open_distance_cm)}
    out = {}
    for name, pol in policies.items():
        row = {}
        for p in Pose:
            d = [simulate_open_distance(p, pol, err_model, seed=s, interval_ms=cfg.intervals.ds_twr_ms) for s in seeds]
            opened = [x for x in d if x is not None]
            row[p.value] = {"mean_open_distance_cm": float(np.mean(opened)) if opened else float("nan"),
                            "open_rate": len(opened) / len(d)}
        out[name] = row
    return out


def latency_summary(cfg: ExperimentConfig) -> dict:
    full, eff = transfer_latency(1016), transfer_latency(135)
    return {"full_cir_ms": full.ms, "ecir_ms": eff.ms, "ds_twr_interval_ms": cfg.intervals.ds_twr_ms,
            "ecir_fits_interval": bool(eff.ms < cfg.intervals.ds_twr_ms),
            "full_cir_fits_interval": bool(full.ms < cfg.intervals.ds_twr_ms)}


# ---------------------------------------------------------------- orchestration


@dataclass
class TrainedModels:
    classifier: Sequential
    pose: PoseModels


def run_experiment(cfg: ExperimentConfig, models: TrainedModels | None = None,
                   cir_data: CirSplit | None = None, imu_data: ImuSplit | None = None) -> MetricsReport:
    """Synthesize, train (unless ``models`` is given), evaluate every table, and return the report."""
    cir_data = cir_data or prepare_cir_data(cfg)
    imu_data = imu_data or prepare_imu_data(cfg)
    histories = {}
    if models is None:
        log.info("training LOS/NLOS classifier on %d eCIRs", len(cir_data.train_x))
        clf, histories["classifier"] = train_classifier(cfg, cir_data)
        log.info("training pose models")
        pose_models, histories["pose"] = train_pose_models(cfg, imu_data)
        models = TrainedModels(clf, pose_models)

    classification, stream = evaluate_classifier(models.classifier, cir_data, cfg)
    pose, _ = evaluate_pose(models.pose, stream, imu_data)
    transition = transition_delays(models.classifier, cir_data, cfg)
    localization = run_localization(cfg, models.classifier)
    return MetricsReport(
        meta={"seed": cfg.seed, "iterations": cfg.iterations, "cirs_per_pose": cfg.cirs_per_pose,
              "imu_windows_per_pose": cfg.pose.n_per_pose, "training_epochs": {
                  k: (len(v) if isinstance(v, list) else {c: len(h) for c, h in v.items()})
                  for k, v in histories.items()}},
        classification=classification,
        pose=pose,
        localization=localization,
        transition=transition,
        latency=latency_summary(cfg),
        gate=gate_summary(cfg),
    )
