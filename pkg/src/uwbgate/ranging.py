"""DS-TWR time of flight and simulated DL-TDoA rounds."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping

import numpy as np

from .channel import RangeErrorModel
from .scenario import WorldLayout
from .types import Condition

C_CM_PER_NS = 29.9792458
C_M_PER_NS = C_CM_PER_NS / 100.0
DW_TICK_NS = 0.01565


@dataclass(frozen=True)
class TwrTimestamps:
    t_round1: float
    t_reply1: float
    t_round2: float
    t_reply2: float


def ds_twr_tof(ts: TwrTimestamps) -> float:
    """Time of flight in ns from the two round-trip / reply-time pairs."""
    denom = ts.t_round1 + ts.t_round2 + ts.t_reply1 + ts.t_reply2
    if denom <= 0:
        raise ValueError("DS-TWR timestamps must have a positive sum")
    # evaluated exactly and rounded once: r1*r2 - p1*p2 cancels badly in float
    r1, p1, r2, p2 = (Fraction(t) for t in (ts.t_round1, ts.t_reply1, ts.t_round2, ts.t_reply2))
    return float((r1 * r2 - p1 * p2) / (r1 + r2 + p1 + p2))


@dataclass(frozen=True)
class DsTwrParams:
    drift_ppm: tuple[float, float] = (0.0, 0.0)  # (initiator, responder)
    reply_delays_ns: tuple[float, float] = (300_000.0, 300_000.0)  # responder, then initiator
    tick_ns: float | None = DW_TICK_NS
    range_error_cm: float = 0.0  # extra one-way error folded into the flight time


def _quantize(t: float, tick: float | None) -> float:
    return t if not tick else np.floor(t / tick) * tick


def simulate_dstwr(true_distance: float, params: DsTwrParams = DsTwrParams(), seed: int = 0):
    """Run one RIM/RRM/RFM exchange; returns ``(timestamps, estimated_distance_m)``.

    Each device timestamps with its own skewed clock, quantized to ``tick_ns``.
    Reply delays are nominal durations in the replying device's clock.
    """
    if true_distance < 0:
        raise ValueError("distance must be non-negative")
    rng = np.random.default_rng(seed)
    tof = (true_distance / C_M_PER_NS) + params.range_error_cm / C_CM_PER_NS
    k_init = 1.0 + params.drift_ppm[0] * 1e-6
    k_resp = 1.0 + params.drift_ppm[1] * 1e-6
    off_i, off_r = rng.uniform(0, 1e6, 2)

    # true (global) event times
    t_rim_tx = rng.uniform(0, 1e3)
    t_rim_rx = t_rim_tx + tof
    t_rrm_tx = t_rim_rx + params.reply_delays_ns[0] / k_resp
    t_rrm_rx = t_rrm_tx + tof
    t_rfm_tx = t_rrm_rx + params.reply_delays_ns[1] / k_init
    t_rfm_rx = t_rfm_tx + tof

    def local_i(t):
        return _quantize(off_i + t * k_init, params.tick_ns)

    def local_r(t):
        return _quantize(off_r + t * k_resp, params.tick_ns)

    ts = TwrTimestamps(
        t_round1=local_i(t_rrm_rx) - local_i(t_rim_tx),
        t_reply1=local_r(t_rrm_tx) - local_r(t_rim_rx),
        t_round2=local_r(t_rfm_rx) - local_r(t_rrm_tx),
        t_reply2=local_i(t_rfm_tx) - local_i(t_rrm_rx),
    )
    return ts, ds_twr_tof(ts) * C_M_PER_NS


@dataclass(frozen=True)
class TdoaMeasurement:
    responder_id: int
    tdoa: float  # ns
    range_diff: float  # cm


@dataclass(frozen=True)
class TdoaSet:
    round_id: int
    initiator_id: int
    measurements: tuple[TdoaMeasurement, ...]
    conditions: Mapping[int, Condition] = field(default_factory=dict)

    def __post_init__(self):
        ids = [m.responder_id for m in self.measurements]
        if len(set(ids)) != len(ids):
            raise ValueError("responder ids in a TDoA set must be distinct")
        if self.initiator_id in ids:
            raise ValueError("the initiator cannot appear as a responder")

    @property
    def responder_ids(self) -> list[int]:
        return [m.responder_id for m in self.measurements]

    def restrict(self, anchor_ids) -> "TdoaSet":
        keep = set(anchor_ids)
        if self.initiator_id not in keep:
            raise ValueError("a TDoA subset must keep the initiator")
        return TdoaSet(self.round_id, self.initiator_id,
                       tuple(m for m in self.measurements if m.responder_id in keep), self.conditions)

    def csv_rows(self) -> list[list]:
        return [[self.round_id, m.responder_id, f"{m.range_diff:.4f}",
                 self.conditions.get(m.responder_id, Condition.LOS).value] for m in self.measurements]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["round_id", "responder_id", "range_diff_cm", "condition"])
            w.writerows(self.csv_rows())


def simulate_dltdoa_round(layout: WorldLayout, md_pos, conditions: Mapping[int, Condition | str],
                          err_model: RangeErrorModel = RangeErrorModel(), seed=0, sync_sigma_ns: float = 0.1,
                          round_id: int = 0) -> TdoaSet:
    """One listen-only round: range differences of every responder against the initiator.

    Each anchor-device path draws its own condition-dependent error (the
    initiator path included); one Gaussian synchronization residual is added
    per responder.
    """
    md = np.asarray(md_pos, dtype=float)
    if not layout.in_area(md):
        raise ValueError(f"device position {md.tolist()} lies outside the area")
    missing = [a.id for a in layout.anchors if a.id not in conditions]
    if missing:
        raise ValueError(f"no channel condition for anchors {missing}")
    conds = {aid: Condition(conditions[aid]) for aid in layout.anchor_ids}
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)

    errors = {}
    for a in layout.anchors:
        bias, sigma = err_model.params(conds[a.id])
        errors[a.id] = bias + sigma * rng.standard_normal()
    init = layout.initiator
    d_init = float(np.linalg.norm(md - init.position)) * 100.0
    meas = []
    for a in layout.anchors:
        if a.is_initiator:
            continue
        d = float(np.linalg.norm(md - a.position)) * 100.0
        rd = d - d_init + errors[a.id] - errors[init.id] + C_CM_PER_NS * sync_sigma_ns * rng.standard_normal()
        meas.append(TdoaMeasurement(a.id, rd / C_CM_PER_NS, rd))
    return TdoaSet(round_id, init.id, tuple(meas), conds)
