from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from ..channel import CIR_LEN, CSV_HEADER, ChannelParams, CirFrame, Diagnostics, compute_diagnostics, synth_cir
from ..ecir import extract_ecir
from ..types import Pose

N_COLUMNS = len(CSV_HEADER)


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class CirDataset:
    """Labelled CIR amplitudes with chip diagnostics; label 1 means NLOS."""

    labels: np.ndarray  # (n,) int
    fp_index: np.ndarray  # (n,) int
    fp_ampl: np.ndarray  # (n, 3)
    max_noise: np.ndarray  # (n,)
    cir: np.ndarray  # (n, 1016) amplitudes
    poses: tuple[Pose, ...] | None = None  # synthetic sets only; not part of the CSV layout

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, idx) -> "CirDataset":
        idx = np.asarray(idx, dtype=int)
        poses = None if self.poses is None else tuple(self.poses[i] for i in idx)
        return CirDataset(self.labels[idx], self.fp_index[idx], self.fp_ampl[idx], self.max_noise[idx],
                          self.cir[idx], poses)

    def ecirs(self) -> np.ndarray:
        """Normalized 135-sample eCIR windows, shape (n, 135)."""
        out = []
        for i in range(len(self)):
            frame = CirFrame(self.cir[i].astype(complex))
            diag = Diagnostics(int(self.fp_index[i]), tuple(self.fp_ampl[i]), float(self.max_noise[i]))
            out.append(extract_ecir(frame, diag).amplitudes)
        return np.asarray(out)


def synth_cir_dataset(n_per_pose: int, seed: int = 0, params: ChannelParams = ChannelParams()) -> CirDataset:
    """``n_per_pose`` frames for each of the four poses; the channel follows the pose's condition."""
    base = int(np.random.default_rng(seed).integers(2**31))
    labels, fps, ampls, noise, cirs, poses = [], [], [], [], [], []
    for k, pose in enumerate(Pose):
        for i in range(n_per_pose):
            frame = synth_cir(pose.condition, seed=base + 4 * i + k, params=params)
            diag = compute_diagnostics(frame)
            labels.append(pose.condition.label)
            fps.append(diag.fp_index)
            ampls.append(diag.fp_ampl)
            noise.append(diag.max_noise)
            cirs.append(frame.amplitude)
            poses.append(pose)
    return CirDataset(np.array(labels), np.array(fps), np.array(ampls, dtype=float), np.array(noise),
                      np.array(cirs), tuple(poses))


def stratified_split(groups, test_fraction: float = 0.2, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Disjoint train/test indices holding ``test_fraction`` of every group out."""
    groups = np.asarray([getattr(g, "value", g) for g in groups])
    rng = np.random.default_rng(seed)
    train, test = [], []
    for g in sorted(set(groups.tolist())):
        idx = rng.permutation(np.flatnonzero(groups == g))
        n_test = int(round(len(idx) * test_fraction))
        test.extend(idx[:n_test])
        train.extend(idx[n_test:])
    return np.sort(np.array(train, dtype=int)), np.sort(np.array(test, dtype=int))


def export_dataset(ds: CirDataset, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        for i in range(len(ds)):
            w.writerow([int(ds.labels[i]), int(ds.fp_index[i]), *(repr(float(a)) for a in ds.fp_ampl[i]),
                        repr(float(ds.max_noise[i])), *(repr(float(a)) for a in ds.cir[i])])


def import_dataset(path) -> CirDataset:
    """Read the CSV layout ``label, fp_index, fp_ampl1..3, max_noise, cir0..cir1015``.

    A header row is optional.  Errors name the offending line.
    """
    labels, fps, ampls, noise, cirs = [], [], [], [], []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            if lineno == 1 and row[0].strip().lower() == "label":
                continue
            if len(row) != N_COLUMNS:
                raise DatasetError(f"{path}:{lineno}: expected {N_COLUMNS} columns "
                                   f"({CIR_LEN} CIR samples), got {len(row)}")
            try:
                vals = [float(v) for v in row]
            except ValueError as exc:
                raise DatasetError(f"{path}:{lineno}: non-numeric field ({exc})") from None
            if vals[0] not in (0.0, 1.0):
                raise DatasetError(f"{path}:{lineno}: label must be 0 or 1, got {row[0]}")
            if vals[1] != int(vals[1]) or not 0 <= vals[1] < CIR_LEN:
                raise DatasetError(f"{path}:{lineno}: fp_index {row[1]} is not a valid sample index")
            labels.append(int(vals[0]))
            fps.append(int(vals[1]))
            ampls.append(vals[2:5])
            noise.append(vals[5])
            cirs.append(vals[6:])
    if not labels:
        raise DatasetError(f"{path}: no data rows")
    return CirDataset(np.array(labels), np.array(fps), np.array(ampls), np.array(noise), np.array(cirs))
