from __future__ import annotations

from enum import Enum


class Condition(str, Enum):
    LOS = "LOS"
    NLOS = "NLOS"

    @property
    def label(self) -> int:
        return int(self is Condition.NLOS)


class Pose(str, Enum):
    """Where the device is carried: in the hand (clear or blocked) or in a pocket."""

    LOS = "LOS"
    NLOS = "NLOS"
    FRONT = "FRONT"
    BACK = "BACK"

    @property
    def condition(self) -> Condition:
        return Condition.LOS if self in (Pose.LOS, Pose.FRONT) else Condition.NLOS

    @property
    def in_pocket(self) -> bool:
        return self in (Pose.FRONT, Pose.BACK)
