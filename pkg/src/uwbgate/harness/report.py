from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

import jsonschema


class ReportError(ValueError):
    pass


@dataclass
class MetricsReport:
    meta: dict = field(default_factory=dict)
    classification: dict = field(default_factory=dict)  # pose -> {raw, lpf, n}
    pose: dict = field(default_factory=dict)  # pose -> {accuracy, upstream_accuracy, n}
    localization: dict = field(default_factory=dict)  # mode -> scenario -> {mean_cm, std_cm, fixes, iterations}
    transition: dict = field(default_factory=dict)  # "A-B" -> {mean_ms, std_ms, trials, closed_form_ms}
    latency: dict = field(default_factory=dict)
    gate: dict = field(default_factory=dict)  # policy -> pose -> {mean_open_distance_cm, open_rate}

    def to_dict(self) -> dict:
        return _clean({"meta": self.meta, "classification": self.classification, "pose": self.pose,
                       "localization": self.localization, "transition": self.transition,
                       "latency": self.latency, "gate": self.gate})


def _clean(obj: Any) -> Any:
    """JSON-safe copy: NaN becomes null, floats are rounded to 6 decimals, keys are strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, bool) or obj is None or isinstance(obj, str):
        return obj
    if isinstance(obj, int):
        return obj
    if isinstance(obj, float) or hasattr(obj, "__float__"):
        v = float(obj)
        return None if math.isnan(v) else round(v, 6)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def report_schema() -> dict:
    return json.loads(resources.files("uwbgate.harness").joinpath("report.schema.json").read_text())


def validate_report(report: MetricsReport | dict) -> dict:
    data = report.to_dict() if isinstance(report, MetricsReport) else report
    loc = data.get("localization", {})
    if not loc or any(cell.get("iterations", 0) < 1 for scen in loc.values() for cell in scen.values()):
        raise ReportError("report has no localization iterations")
    try:
        jsonschema.validate(data, report_schema())
    except jsonschema.ValidationError as exc:
        where = "/".join(map(str, exc.absolute_path)) or "<root>"
        raise ReportError(f"report invalid at {where}: {exc.message}") from None
    return data


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def export_metrics(report: MetricsReport, out_dir) -> list[Path]:
    """Write ``report.json`` plus one CSV per table; returns the written paths."""
    data = validate_report(report)
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        paths = [out / "report.json"]
        paths[0].write_text(json.dumps(data, indent=2) + "\n")

        def fmt(v):
            return "" if v is None else v

        tables = {
            "classification.csv": (["pose", "accuracy_raw", "accuracy_lpf", "n"],
                                   [[k, fmt(v["raw"]), fmt(v["lpf"]), v["n"]] for k, v in data["classification"].items()]),
            "pose.csv": (["pose", "accuracy", "upstream_accuracy"],
                         [[k, fmt(v["accuracy"]), fmt(v["upstream_accuracy"])] for k, v in data["pose"].items()]),
            "localization.csv": (["algorithm", "condition", "mean_cm", "std_cm", "fixes", "iterations"],
                                 [[m, s, fmt(c["mean_cm"]), fmt(c["std_cm"]), c["fixes"], c["iterations"]]
                                  for m, scen in data["localization"].items() for s, c in scen.items()]),
            "transition.csv": (["pair", "mean_ms", "std_ms", "trials", "closed_form_ms"],
                               [[k, fmt(v["mean_ms"]), fmt(v["std_ms"]), v["trials"], v["closed_form_ms"]]
                                for k, v in data["transition"].items()]),
            "latency.csv": (["quantity", "value"], [[k, v] for k, v in data["latency"].items()]),
            "gate.csv": (["policy", "pose", "mean_open_distance_cm", "open_rate"],
                         [[pol, p, fmt(v["mean_open_distance_cm"]), v["open_rate"]]
                          for pol, row in data["gate"].items() for p, v in row.items()]),
        }
        for name, (header, rows) in tables.items():
            _write_csv(out / name, header, rows)
            paths.append(out / name)
    except OSError as exc:
        raise ReportError(f"cannot write metrics to {out}: {exc}") from None
    return paths
