from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np


@dataclass
class LocalizerState:
    """Outlier-detection buffers.

    ``dsb`` receives every candidate fix; ``idb`` only accepted ones.  Both
    hold ``(round, position_cm)`` pairs and evict oldest-first.  ``recent``
    is how many of the newest entries feed the velocity and the reference.
    """

    buffer_size: int = 10
    threshold_cm: float = 50.0
    interval_scale: float = 2.0
    dsb: deque = field(default=None)
    idb: deque = field(default=None)
    last_position: np.ndarray | None = None
    round: int = 0
    rejected_streak: int = 0
    recent: int = 3

    def __post_init__(self):
        if self.buffer_size < 2:
            raise ValueError("buffer_size must be >= 2")
        if self.recent < 1:
            raise ValueError("recent must be >= 1")
        self.recent = min(self.recent, self.buffer_size)
        if self.dsb is None:
            self.dsb = deque(maxlen=self.buffer_size)
        if self.idb is None:
            self.idb = deque(maxlen=self.buffer_size)

    @property
    def max_streak(self) -> int:
        return math.ceil(self.buffer_size / 2)

    def copy(self) -> "LocalizerState":
        return LocalizerState(self.buffer_size, self.threshold_cm, self.interval_scale,
                              deque(self.dsb, maxlen=self.buffer_size), deque(self.idb, maxlen=self.buffer_size),
                              None if self.last_position is None else self.last_position.copy(),
                              self.round, self.rejected_streak, self.recent)


def _motion(dsb, recent: int) -> tuple[float, np.ndarray]:
    """Mean step length over the stream buffer and median of its last ``recent`` step vectors (cm per round)."""
    if len(dsb) < 2:
        return 0.0, np.zeros(2)
    rounds = np.array([r for r, _ in dsb], dtype=float)
    pts = np.array([p for _, p in dsb])
    steps = np.diff(pts, axis=0) / np.diff(rounds)[:, None]
    return float(np.linalg.norm(steps, axis=1).mean()), np.median(steps[-recent:], axis=0)


def reference_point(state: LocalizerState, velocity: np.ndarray) -> np.ndarray:
    """Mean of the newest inliers, each carried forward along the current step vector."""
    newest = list(state.idb)[-state.recent:]
    return np.mean([p + velocity * (state.round - r) for r, p in newest], axis=0)


def outlier_filter(state: LocalizerState, candidate) -> tuple[bool, LocalizerState]:
    """Accept or reject a fix (metres) against the inlier buffer; returns a new state.

    The acceptance radius is ``threshold_cm`` plus the stream's mean step
    length times ``interval_scale``.  The reference is the mean of the newest
    inliers advanced by the median of the newest stream steps, so walking is
    not mistaken for outliers and a stop is picked up within a few rounds.
    After ``ceil(buffer_size / 2)`` consecutive rejections the inlier buffer is
    re-seeded from the stream buffer, which follows a genuine shift.
    """
    st = state.copy()
    st.round += 1
    fix = np.array(candidate, dtype=float)
    p = fix * 100.0
    st.dsb.append((st.round, p))
    if not st.idb:
        accept = True
    else:
        mean_step, velocity = _motion(st.dsb, st.recent)
        radius = st.threshold_cm + mean_step * st.interval_scale
        accept = float(np.linalg.norm(p - reference_point(st, velocity))) <= radius
    if accept:
        st.idb.append((st.round, p))
        st.rejected_streak = 0
        st.last_position = fix
    elif st.rejected_streak + 1 > st.max_streak:
        recent = list(st.dsb)[-st.max_streak:]
        st.idb = deque(recent, maxlen=st.buffer_size)
        st.rejected_streak = 0
        st.last_position = fix
        accept = True
    else:
        st.rejected_streak += 1
    return accept, st
