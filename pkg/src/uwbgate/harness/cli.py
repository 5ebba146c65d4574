"""Command-line entry point: ``uwbgate <subcommand>``.

Exit codes: 0 success, 2 configuration or input error, 3 training failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from ..gate import TraceEntry, phase_sequence, write_trace
from ..localization import write_round_log
from ..neural import Sequential, TrainingDiverged
from ..pose import PoseModels, write_pose_log
from ..scenario import LayoutError, WalkParams, gen_trajectory
from ..types import Pose
from . import experiment as ex
from .config import ConfigError, ExperimentConfig, load_config
from .datasets import DatasetError, export_dataset, import_dataset, synth_cir_dataset
from .report import MetricsReport, ReportError, export_metrics

EXIT_OK, EXIT_CONFIG, EXIT_TRAINING = 0, 2, 3
MODEL_FILES = {"classifier": "los_nlos.npz", "pose_los": "pose_los.npz", "pose_nlos": "pose_nlos.npz"}

log = logging.getLogger("uwbgate")


class MissingModelsError(FileNotFoundError):
    pass


def _common(parser: argparse.ArgumentParser, suppress: bool) -> None:
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    parser.add_argument("--seed", type=int, default=d(None), help="master seed (overrides the config)")
    parser.add_argument("--config", type=Path, default=d(None), help="YAML experiment config")
    parser.add_argument("--out", type=Path, default=d(Path("out")), help="output directory")
    parser.add_argument("--single-thread", action="store_true", default=d(False),
                        help="run Monte-Carlo iterations in one process (bit-reproducible)")
    parser.add_argument("--full-scale", action="store_true", default=d(False),
                        help="12,500 synthetic CIRs per pose (50,000 total) instead of the desk-scale count")
    parser.add_argument("-v", "--verbose", action="store_true", default=d(False))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="uwbgate", description="UWB tagless-gate simulation and evaluation")
    _common(p, suppress=False)
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, help_):
        sp = sub.add_parser(name, help=help_)
        _common(sp, suppress=True)
        return sp

    sp = add("synth-data", "write a synthetic CIR dataset, IMU windows and a walk trajectory")
    sp.add_argument("--n-per-pose", type=int, default=None)
    sp = add("train", "train the LOS/NLOS classifier and both pose models")
    sp.add_argument("--dataset", type=Path, default=None, help="CIR CSV to train on instead of synthetic data")
    sp = add("eval-classifier", "held-out LOS/NLOS accuracy with and without the low-pass filter")
    sp.add_argument("--dataset", type=Path, default=None)
    add("eval-pose", "end-to-end pose accuracy on block-constant synthetic streams")
    sp = add("run-localization", "legacy / ASA-always / full-pipeline walk-ins")
    sp.add_argument("--iterations", type=int, default=None)
    sp = add("run-gate", "scripted walk-in through the gate state machine")
    sp.add_argument("--pose", choices=[p.value for p in Pose], default=Pose.LOS.value)
    add("report", "run the whole experiment and export the metrics report")
    return p


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.single_thread:
        cfg = replace(cfg, workers=1)
    if args.full_scale:
        cfg = replace(cfg, full_scale=True)
    return cfg


def _save_models(models: ex.TrainedModels, out: Path) -> None:
    d = out / "models"
    d.mkdir(parents=True, exist_ok=True)
    models.classifier.save(d / MODEL_FILES["classifier"])
    models.pose.los_model.save(d / MODEL_FILES["pose_los"])
    models.pose.nlos_model.save(d / MODEL_FILES["pose_nlos"])


def _load_models(out: Path) -> ex.TrainedModels:
    d = out / "models"
    missing = [f for f in MODEL_FILES.values() if not (d / f).exists()]
    if missing:
        raise MissingModelsError(f"missing trained models in {d}: {', '.join(missing)}; run `uwbgate train` first")
    return ex.TrainedModels(Sequential.load(d / MODEL_FILES["classifier"]),
                            PoseModels(Sequential.load(d / MODEL_FILES["pose_los"]),
                                       Sequential.load(d / MODEL_FILES["pose_nlos"])))


def cmd_synth_data(args, cfg: ExperimentConfig) -> None:
    n = args.n_per_pose or cfg.cirs_per_pose
    export_dataset(synth_cir_dataset(n, seed=cfg.seed), args.out / "cir_dataset.csv")
    imu = ex.prepare_imu_data(cfg)
    np.savez(args.out / "imu_windows.npz", **{f"train_{c.value}_x": v[0] for c, v in imu.train.items()},
             **{f"train_{c.value}_y": v[1] for c, v in imu.train.items()},
             **{f"test_{p.value}": w for p, w in imu.test.items()})
    lc = cfg.localization
    gen_trajectory(cfg.world(), WalkParams(end=lc.standing_point, start_distance=lc.start_distance_m),
                   seed=cfg.seed).to_csv(args.out / "trajectory.csv")


def _cir_data(args, cfg):
    dataset = import_dataset(args.dataset) if getattr(args, "dataset", None) else None
    return ex.prepare_cir_data(cfg, dataset)


def cmd_train(args, cfg: ExperimentConfig) -> None:
    cir = _cir_data(args, cfg)
    clf, h_clf = ex.train_classifier(cfg, cir)
    pose_models, h_pose = ex.train_pose_models(cfg, ex.prepare_imu_data(cfg))
    _save_models(ex.TrainedModels(clf, pose_models), args.out)
    (args.out / "train_history.json").write_text(json.dumps({"classifier": h_clf, "pose": h_pose}, indent=2) + "\n")


def cmd_eval_classifier(args, cfg: ExperimentConfig) -> None:
    models = _load_models(args.out)
    result, _ = ex.evaluate_classifier(models.classifier, _cir_data(args, cfg), cfg)
    report = MetricsReport(classification=result)
    (args.out / "classification.json").write_text(json.dumps(report.to_dict()["classification"], indent=2) + "\n")
    for k, v in result.items():
        print(f"{k:8s} raw={v['raw']:.3f} lpf={v['lpf']:.3f} n={v['n']}")


def cmd_eval_pose(args, cfg: ExperimentConfig) -> None:
    models = _load_models(args.out)
    cir = ex.prepare_cir_data(cfg)
    _, stream = ex.evaluate_classifier(models.classifier, cir, cfg)
    result, frames = ex.evaluate_pose(models.pose, stream, ex.prepare_imu_data(cfg))
    (args.out / "pose.json").write_text(json.dumps(MetricsReport(pose=result).to_dict()["pose"], indent=2) + "\n")
    for k, v in result.items():
        print(f"{k:8s} pose={v['accuracy']:.3f} upstream={v['upstream_accuracy']:.3f}")
    write_pose_log(args.out / "pose_stream.csv",
                   [(i * cfg.intervals.ds_twr_ms, *frame) for i, frame in enumerate(frames)])


def cmd_run_localization(args, cfg: ExperimentConfig) -> None:
    if args.iterations:
        cfg = replace(cfg, iterations=args.iterations)
    models = _load_models(args.out)
    result = ex.run_localization(cfg, models.classifier)
    (args.out / "localization.json").write_text(
        json.dumps(MetricsReport(localization=result).to_dict()["localization"], indent=2) + "\n")
    for m, scen in result.items():
        for s, c in scen.items():
            print(f"{m:7s} {s:5s} mean={c['mean_cm']:.2f} cm std={c['std_cm']:.2f} cm")
    first = ex.localization_iteration(cfg, models.classifier, "NLOS", ex.child_seeds(cfg.seed, 1, 101)[0],
                                      keep_rounds=True)
    full = [(res, truth) for m, res, truth in first["rounds"] if m == "full"]
    write_round_log(args.out / "rounds_nlos_full.csv", [r for r, _ in full], [t for _, t in full])


def cmd_run_gate(args, cfg: ExperimentConfig) -> None:
    state, trace, _ = ex.gate_walkin(cfg, Pose(args.pose), seed=cfg.seed)
    entries = [TraceEntry(ev.t_ms, ev.kind, phase, dec) for ev, phase, dec in trace]
    write_trace(args.out / "gate_trace.jsonl", entries)
    print(" -> ".join(p.value for p in phase_sequence(entries)))


def cmd_report(args, cfg: ExperimentConfig) -> None:
    try:
        models = _load_models(args.out)
    except MissingModelsError:
        models = None
    report = ex.run_experiment(cfg, models=models)
    for path in export_metrics(report, args.out):
        print(path)


COMMANDS = {
    "synth-data": cmd_synth_data, "train": cmd_train, "eval-classifier": cmd_eval_classifier,
    "eval-pose": cmd_eval_pose, "run-localization": cmd_run_localization, "run-gate": cmd_run_gate,
    "report": cmd_report,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
        args.out.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](args, cfg)
    except (ConfigError, LayoutError, DatasetError, MissingModelsError, ReportError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingDiverged as exc:
        print(f"training failed: {exc}", file=sys.stderr)
        return EXIT_TRAINING
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
