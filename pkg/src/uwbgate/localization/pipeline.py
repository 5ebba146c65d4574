from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np

from ..classifier import AnchorBelief
from ..ranging import TdoaSet
from ..scenario import WorldLayout
from .outlier import LocalizerState, outlier_filter
from .selection import asa_gate, select_anchors
from .solver import solve_tdoa

MODES = ("full", "legacy", "asa")


@dataclass(frozen=True)
class RoundResult:
    round_id: int
    raw_position: np.ndarray
    used_ids: tuple[int, ...]
    asa_active: bool
    hull_satisfied: bool
    accepted: bool
    converged: bool

    @property
    def position(self) -> np.ndarray | None:
        return self.raw_position if self.accepted else None


def localize_round(beliefs: AnchorBelief, tdoa: TdoaSet, state: LocalizerState, layout: WorldLayout,
                   mode: str = "full") -> tuple[RoundResult, LocalizerState]:
    """One DL-TDoA fix.

    ``full``: selection only when some anchor is judged NLOS, then outlier
    filtering.  ``legacy``: every anchor, no filtering.  ``asa``: selection
    on every round, no filtering.
    """
    if mode not in MODES:
        raise ValueError(f"unknown localization mode {mode!r}")
    positions = layout.anchor_positions()
    prev = state.last_position if state.last_position is not None else layout.localization_zone.centroid
    available = [tdoa.initiator_id] + tdoa.responder_ids

    active = mode == "asa" or (mode == "full" and asa_gate(beliefs.decisions))
    hull_ok = True
    if active:
        probs = {a: beliefs.probability(a) for a in available}
        subset = select_anchors(probs, positions, tdoa.initiator_id, prev)
        used = tuple(sorted(subset.ids))
        hull_ok = subset.hull_satisfied
        tdoa = tdoa.restrict(used)
    else:
        used = tuple(sorted(available))

    sol = solve_tdoa(tdoa, positions, prev)
    if mode == "full":
        accepted, new_state = outlier_filter(state, sol.position)
    else:
        accepted, new_state = True, replace(state.copy(), last_position=sol.position.copy())
    return RoundResult(tdoa.round_id, sol.position, used, active, hull_ok, accepted, sol.converged), new_state


def write_round_log(path, results, truths) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["round_id", "used_anchor_ids", "x", "y", "accepted_flag", "error_vs_truth_cm"])
        for res, truth in zip(results, truths):
            err = float(np.linalg.norm(res.raw_position - np.asarray(truth))) * 100.0
            w.writerow([res.round_id, " ".join(map(str, res.used_ids)), f"{res.raw_position[0]:.4f}",
                        f"{res.raw_position[1]:.4f}", int(res.accepted), f"{err:.3f}"])
