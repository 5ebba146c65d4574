"""Effective-CIR window extraction and the CIR transfer-latency model."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .channel import CIR_LEN, ECIR_POST, ECIR_PRE, CirFrame, Diagnostics

ECIR_LEN = ECIR_PRE + ECIR_POST


@dataclass(frozen=True)
class Ecir:
    amplitudes: np.ndarray  # (135,)
    origin_index: int

    @property
    def fp_index(self) -> int:
        return self.origin_index + ECIR_PRE


def extract_ecir(frame: CirFrame, diag: Diagnostics, normalize: bool = True) -> Ecir:
    """Amplitudes of CIR samples ``[fp_index - 5, fp_index + 130)``, in units of ``max_noise``."""
    lo, hi = diag.fp_index - ECIR_PRE, diag.fp_index + ECIR_POST
    if lo < 0 or hi > CIR_LEN:
        raise IndexError(f"eCIR window [{lo}, {hi}) falls outside the {CIR_LEN}-sample CIR")
    amp = frame.amplitude[lo:hi]
    if normalize:
        amp = amp / diag.max_noise
    return Ecir(amp, lo)


def ecirs_to_csv(path, ecirs, labels) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["label", "origin_index"] + [f"e{i}" for i in range(ECIR_LEN)])
        for e, y in zip(ecirs, labels):
            w.writerow([y, e.origin_index, *(f"{v:.6f}" for v in e.amplitudes)])


@dataclass(frozen=True)
class LatencyModel:
    """Affine transfer time ``overhead + per_sample * n`` in ms.

    The default is the straight line through the two measured points
    (1016 samples, 223.4 ms) and (135 samples, 17.8 ms).  Its intercept is
    negative, so it is only trusted inside ``[valid_min, valid_max]``.
    """

    n1: int = 1016
    ms1: float = 223.4
    n2: int = 135
    ms2: float = 17.8
    valid_min: int = 60
    valid_max: int = 1016

    @property
    def per_sample(self) -> float:
        return (self.ms1 - self.ms2) / (self.n1 - self.n2)

    @property
    def overhead(self) -> float:
        return self.ms2 - self.per_sample * self.n2


@dataclass(frozen=True)
class LatencyEstimate:
    ms: float
    extrapolated: bool


def transfer_latency(n_samples: int, model: LatencyModel = LatencyModel()) -> LatencyEstimate:
    """Transfer latency for ``n_samples`` CIR samples; clamps to the valid range and flags it."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    n = int(np.clip(n_samples, model.valid_min, model.valid_max))
    if n == model.n1:
        ms = model.ms1
    elif n == model.n2:
        ms = model.ms2
    else:
        ms = model.overhead + model.per_sample * n
    return LatencyEstimate(ms, extrapolated=n != n_samples)
