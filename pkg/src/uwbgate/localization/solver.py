from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from ..ranging import TdoaSet
from .hull import DegenerateGeometryError


@dataclass(frozen=True)
class SolveResult:
    position: np.ndarray
    iterations: int
    converged: bool
    cost: float


def _tdoa_arrays(tdoa: TdoaSet, anchor_positions: Mapping[int, np.ndarray]):
    if len(tdoa.measurements) < 3:
        raise ValueError(f"need at least 3 TDoA measurements, got {len(tdoa.measurements)}")
    ref = np.asarray(anchor_positions[tdoa.initiator_id], dtype=float)
    resp = np.array([anchor_positions[m.responder_id] for m in tdoa.measurements], dtype=float)
    rd = np.array([m.range_diff for m in tdoa.measurements]) / 100.0
    allpts = np.vstack([ref, resp])
    if np.linalg.matrix_rank(allpts - allpts.mean(axis=0), tol=1e-9) < 2:
        raise DegenerateGeometryError("anchor geometry is collinear")
    return ref, resp, rd


def tdoa_residuals(x, ref, resp, rd) -> np.ndarray:
    """Measured minus modelled range differences (metres)."""
    return rd - (np.linalg.norm(resp - x, axis=1) - np.linalg.norm(ref - x))


def _jacobian(x, ref, resp) -> np.ndarray:
    """Jacobian of the modelled range differences with respect to ``x``."""
    du = resp - x
    nu = np.maximum(np.linalg.norm(du, axis=1), 1e-12)[:, None]
    dr = ref - x
    nr = max(float(np.linalg.norm(dr)), 1e-12)
    return -du / nu + dr / nr


def solve_tdoa(tdoa: TdoaSet, anchor_positions: Mapping[int, np.ndarray], initial,
               tol: float = 1e-3, max_iter: int = 50) -> SolveResult:
    """Levenberg-Marquardt on hyperbolic range-difference residuals.

    Stops when a step shorter than ``tol`` metres is accepted, or after
    ``max_iter`` iterations with ``converged=False``.
    """
    ref, resp, rd = _tdoa_arrays(tdoa, anchor_positions)
    x = np.asarray(initial, dtype=float).copy()
    r = tdoa_residuals(x, ref, resp, rd)
    cost = float(r @ r)
    lam = 1e-3
    for it in range(1, max_iter + 1):
        J = _jacobian(x, ref, resp)
        A = J.T @ J
        g = J.T @ r
        while True:
            step = np.linalg.solve(A + lam * (np.diag(np.diag(A)) + 1e-12 * np.eye(2)), g)
            x_new = x + step
            r_new = tdoa_residuals(x_new, ref, resp, rd)
            cost_new = float(r_new @ r_new)
            if cost_new <= cost or lam > 1e8:
                break
            lam *= 10.0
        if cost_new <= cost:
            x, r, cost = x_new, r_new, cost_new
            lam = max(lam / 10.0, 1e-9)
            if np.linalg.norm(step) < tol:
                # one undamped polish step; Gauss-Newton converges quadratically here
                x_pol = x + np.linalg.lstsq(_jacobian(x, ref, resp), r, rcond=None)[0]
                r_pol = tdoa_residuals(x_pol, ref, resp, rd)
                if float(r_pol @ r_pol) <= cost:
                    x, cost = x_pol, float(r_pol @ r_pol)
                return SolveResult(x, it, True, cost)
        else:
            # no damping level reduces the cost: x is already a local minimum
            return SolveResult(x, it, True, cost)
    return SolveResult(x, max_iter, False, cost)
