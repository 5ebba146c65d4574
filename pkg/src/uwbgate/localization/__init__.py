"""TDoA position solving, NLOS-aware anchor selection and outlier rejection."""

from .hull import DegenerateGeometryError, Hull, graham_hull, md_inside
from .outlier import LocalizerState, outlier_filter
from .pipeline import RoundResult, localize_round, write_round_log
from .selection import AnchorSubset, asa_gate, ordered_candidates, select_anchors
from .solver import SolveResult, solve_tdoa, tdoa_residuals

__all__ = [
    "DegenerateGeometryError", "Hull", "graham_hull", "md_inside", "LocalizerState", "outlier_filter",
    "RoundResult", "localize_round", "write_round_log", "AnchorSubset", "asa_gate", "ordered_candidates",
    "select_anchors", "SolveResult", "solve_tdoa", "tdoa_residuals",
]
