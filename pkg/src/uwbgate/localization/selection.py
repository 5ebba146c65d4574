from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from typing import Mapping

import numpy as np

from ..types import Condition
from .hull import md_inside

SUBSET_SIZE = 4


@dataclass(frozen=True)
class AnchorSubset:
    ids: tuple[int, ...]
    selection_rank: int  # position in the initiator-containing combination list
    hull_satisfied: bool = True


def ordered_candidates(probabilities: Mapping[int, float], initiator_id: int) -> list[tuple[int, ...]]:
    """Initiator-containing 4-subsets, lexicographic over ascending-probability ranks."""
    order = sorted(probabilities, key=lambda a: (probabilities[a], a))
    return [tuple(order[i] for i in combo) for combo in combinations(range(len(order)), SUBSET_SIZE)
            if initiator_id in (order[i] for i in combo)]


def select_anchors(probabilities: Mapping[int, float], positions: Mapping[int, np.ndarray],
                   initiator_id: int, prev_md) -> AnchorSubset:
    """Pick the first low-NLOS subset whose convex hull encloses ``prev_md``.

    Falls back to the first initiator-containing subset, flagged
    ``hull_satisfied=False``, when no subset encloses the device.
    """
    if len(probabilities) < SUBSET_SIZE:
        raise ValueError(f"anchor selection needs at least {SUBSET_SIZE} anchors, got {len(probabilities)}")
    if initiator_id not in probabilities:
        raise ValueError(f"initiator {initiator_id} has no NLOS probability")
    candidates = ordered_candidates(probabilities, initiator_id)
    for rank, ids in enumerate(candidates):
        if md_inside([positions[a] for a in ids], prev_md):
            return AnchorSubset(ids, rank, True)
    return AnchorSubset(candidates[0], 0, False)


def asa_gate(decisions: Mapping[int, Condition]) -> bool:
    """Selection is active when any anchor path is currently judged NLOS."""
    return any(Condition(d) is Condition.NLOS for d in decisions.values())
