"""Sample-level CIR synthesis, chip-style diagnostics and the TDoA error model."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .types import Condition

CIR_LEN = 1016
ECIR_PRE = 5
ECIR_POST = 130


class NoFirstPathError(ValueError):
    pass


@dataclass(frozen=True)
class CirFrame:
    samples: np.ndarray  # complex, CIR_LEN, 1 ns spacing
    condition_truth: Condition | None = None
    true_fp_index: int | None = None

    def __post_init__(self):
        if self.samples.shape != (CIR_LEN,):
            raise ValueError(f"CIR frame needs {CIR_LEN} samples, got {self.samples.shape}")

    @property
    def amplitude(self) -> np.ndarray:
        return np.abs(self.samples)


@dataclass(frozen=True)
class Diagnostics:
    fp_index: int
    fp_ampl: tuple[float, float, float]
    max_noise: float


@dataclass(frozen=True)
class ChannelParams:
    noise_sigma: float = 400.0  # per quadrature component, 16-bit counts
    los_peak: float = 16000.0
    peak_jitter: float = 0.05  # log-normal sigma of the path gain
    # leading-edge / first-path / trailing sample shape
    pulse: tuple[float, float, float] = (0.05, 1.0, 0.5)
    los_tail_ratio: float = 0.5
    los_tau: float = 36.0
    los_echoes: tuple[int, int] = (0, 2)
    nlos_first_ratio: float = 0.35
    nlos_peaks: tuple[int, int] = (3, 8)
    nlos_peak_gap: float = 8.0  # mean Poisson inter-arrival, samples
    nlos_peak_ratio: tuple[float, float] = (0.4, 0.8)
    nlos_tail_ratio: float = 0.5
    nlos_tau: float = 150.0
    nlos_cutoff: tuple[float, float, float] = (126.0, 2.5, 129.0)  # mean, sd, max (samples after fp)
    nlos_cutoff_tau: float = 1.5
    default_fp: int = 745
    fp_jitter: int = 5
    min_fp: int = 300


@dataclass(frozen=True)
class DetectorParams:
    detection_factor: float = 1.6
    # samples at the head of the CIR that always seed the noise estimate
    noise_window: int = 256
    # floor on the noise estimate, as a multiple of the noise-window median amplitude
    median_floor: float = 4.5


def _tail(k: np.ndarray, tau: float) -> np.ndarray:
    return np.exp(-k / tau)


def fp_index_for_delay(first_path_delay: float) -> int:
    return int(round(first_path_delay))


def synth_cir(condition: Condition | str, first_path_delay: float | None = None, seed: int = 0,
              params: ChannelParams = ChannelParams()) -> CirFrame:
    """Synthesize one 1016-sample CIR with a simplified exponential power-delay profile.

    ``first_path_delay`` is in ns (1 sample per ns); ``None`` draws one near
    ``params.default_fp``.  The path gain and noise depend only on ``seed``, so
    LOS and NLOS frames built from the same seed share them.
    """
    condition = Condition(condition)
    rng = np.random.default_rng(seed)
    gain = params.los_peak * math.exp(params.peak_jitter * rng.standard_normal())
    jitter = int(rng.integers(-params.fp_jitter, params.fp_jitter + 1))
    noise = rng.normal(0.0, params.noise_sigma, (2, CIR_LEN))
    path_rng = np.random.default_rng([seed, 1 if condition is Condition.NLOS else 0])

    fp = fp_index_for_delay(first_path_delay) if first_path_delay is not None else params.default_fp + jitter
    if not params.min_fp <= fp <= CIR_LEN - ECIR_POST:
        raise ValueError(f"first path delay {first_path_delay} ns maps outside the representable window")

    env = np.zeros(CIR_LEN)
    k = np.arange(CIR_LEN - fp, dtype=float)  # samples after the first path

    if condition is Condition.LOS:
        first = gain
        diffuse = params.los_tail_ratio * gain * _tail(k, params.los_tau)
        diffuse[0] = 0.0
        env[fp:] += diffuse
        for _ in range(path_rng.integers(params.los_echoes[0], params.los_echoes[1] + 1)):
            d = int(path_rng.integers(8, 45))
            env[fp + d] += path_rng.uniform(0.1, 0.3) * gain * _tail(d, params.los_tau)
    else:
        first = params.nlos_first_ratio * gain
        mean, sd, hi = params.nlos_cutoff
        cut = min(path_rng.normal(mean, sd), hi)
        diffuse = params.nlos_tail_ratio * gain * _tail(k, params.nlos_tau)
        after = k > cut
        diffuse[after] *= np.exp(-(k[after] - cut) / params.nlos_cutoff_tau)
        diffuse[0] = 0.0
        env[fp:] += diffuse
        n_peaks = int(path_rng.integers(params.nlos_peaks[0], params.nlos_peaks[1] + 1))
        delays = np.cumsum(1 + path_rng.exponential(params.nlos_peak_gap, n_peaks)).astype(int)
        for d in delays[delays < cut]:
            env[fp + d] += path_rng.uniform(*params.nlos_peak_ratio) * gain

    for offset, weight in zip((-1, 0, 1), params.pulse):
        env[fp + offset] += weight * first

    phase = path_rng.uniform(0, 2 * np.pi, CIR_LEN)
    re = np.round(env * np.cos(phase) + noise[0])
    im = np.round(env * np.sin(phase) + noise[1])
    samples = np.clip(re, -32768, 32767) + 1j * np.clip(im, -32768, 32767)
    return CirFrame(samples, condition, fp)


def compute_diagnostics(frame: CirFrame, params: DetectorParams = DetectorParams()) -> Diagnostics:
    """Leading-edge detection against a running noise maximum.

    The noise estimate at sample ``i`` is the maximum amplitude before ``i``,
    floored at ``median_floor`` times the median of the noise window so a lone
    noise spike cannot trigger detection.  ``fp_index`` is the first sample
    after the noise window exceeding ``detection_factor`` times that estimate;
    ``max_noise`` is the maximum over the pre-crossing region.
    """
    amp = frame.amplitude
    w = params.noise_window
    floor = params.median_floor * float(np.median(amp[:w]))
    noise = np.maximum(np.maximum.accumulate(amp)[w - 1:-1], floor)
    crossing = np.flatnonzero(amp[w:] > params.detection_factor * noise)
    if crossing.size == 0:
        raise NoFirstPathError("no first path: no sample crosses the detection threshold")
    fp = int(crossing[0]) + w
    if fp + 3 >= CIR_LEN:
        raise NoFirstPathError(f"first path at {fp} leaves no room for the amplitude triple")
    max_noise = float(amp[:fp].max())
    return Diagnostics(fp, tuple(float(a) for a in amp[fp + 1:fp + 4]), max_noise)


def count_above_noise(frame: CirFrame, diag: Diagnostics) -> int:
    """Samples after the first path whose amplitude exceeds ``max_noise``."""
    return int((frame.amplitude[diag.fp_index + 1:] > diag.max_noise).sum())


@dataclass(frozen=True)
class RangeErrorModel:
    """Per-path ranging error (cm) by channel condition."""

    los_bias: float = 0.0
    los_sigma: float = 4.0
    nlos_bias: float = 47.0
    nlos_sigma: float = 26.0

    def __post_init__(self):
        if self.los_sigma < 0 or self.nlos_sigma < 0:
            raise ValueError("range error sigmas must be non-negative")
        if self.nlos_sigma < self.los_sigma:
            raise ValueError("NLOS sigma must not be smaller than LOS sigma")

    def params(self, condition: Condition | str) -> tuple[float, float]:
        if Condition(condition) is Condition.LOS:
            return self.los_bias, self.los_sigma
        return self.nlos_bias, self.nlos_sigma

    @classmethod
    def noiseless(cls) -> "RangeErrorModel":
        return cls(0.0, 0.0, 0.0, 0.0)


def sample_range_bias(model: RangeErrorModel, condition: Condition | str, seed=0, size=None):
    """Gaussian draw(s) of the ranging error in cm for ``condition``."""
    bias, sigma = model.params(condition)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    draw = bias + sigma * rng.standard_normal(size)
    return float(draw) if size is None else draw


CSV_HEADER = ["label", "fp_index", "fp_ampl1", "fp_ampl2", "fp_ampl3", "max_noise"] + [
    f"cir{i}" for i in range(CIR_LEN)
]


def frame_to_row(frame: CirFrame, diag: Diagnostics) -> list:
    """CSV row: label (0 LOS / 1 NLOS), diagnostics, then 1016 amplitudes."""
    label = "" if frame.condition_truth is None else frame.condition_truth.label
    return [label, diag.fp_index, *(f"{a:.4f}" for a in diag.fp_ampl), f"{diag.max_noise:.4f}",
            *(f"{a:.4f}" for a in frame.amplitude)]
