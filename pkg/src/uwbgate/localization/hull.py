from __future__ import annotations

import functools
import logging
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)


class DegenerateGeometryError(ValueError):
    pass


@dataclass(frozen=True)
class Hull:
    indices: tuple[int, ...]  # into the input point list, counter-clockwise
    vertices: np.ndarray


def _cross(o, a, b) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def graham_hull(points) -> Hull:
    """Convex hull by Graham scan; collinear boundary points are not vertices.

    Duplicate points keep only their first occurrence.
    """
    pts = [tuple(map(float, p)) for p in points]
    if len(pts) < 3:
        raise DegenerateGeometryError("a hull needs at least 3 points")
    seen: dict[tuple[float, float], int] = {}
    for i, p in enumerate(pts):
        seen.setdefault(p, i)
    idx = list(seen.values())

    pivot = min(idx, key=lambda i: (pts[i][1], pts[i][0]))
    px, py = pts[pivot]
    rest = [i for i in idx if i != pivot]

    def by_angle(i, j):
        # every other point lies at polar angle [0, pi) from the pivot
        c = _cross(pts[pivot], pts[i], pts[j])
        if c != 0:
            return -1 if c > 0 else 1
        di = (pts[i][0] - px) ** 2 + (pts[i][1] - py) ** 2
        dj = (pts[j][0] - px) ** 2 + (pts[j][1] - py) ** 2
        return (di > dj) - (di < dj)

    rest.sort(key=functools.cmp_to_key(by_angle))

    stack = [pivot]
    for i in rest:
        while len(stack) >= 2 and _cross(pts[stack[-2]], pts[stack[-1]], pts[i]) <= 0:
            stack.pop()
        stack.append(i)
    if len(stack) < 3:
        raise DegenerateGeometryError("all points are collinear")
    return Hull(tuple(stack), np.array([pts[i] for i in stack]))


def md_inside(anchors, md) -> bool:
    """True when ``md`` is not a vertex of hull(anchors + [md]); on an edge counts as inside."""
    anchors = [tuple(map(float, a)) for a in anchors]
    try:
        graham_hull(anchors)
    except DegenerateGeometryError:
        log.warning("anchor set %s is degenerate; treating device as outside", anchors)
        return False
    hull = graham_hull(anchors + [tuple(map(float, md))])
    return len(anchors) not in hull.indices
