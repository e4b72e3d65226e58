"""Acoustic frame features and whole-signal temporal descriptors.

Frame features (mel filter bank energies, their logs, MFCCs, periodogram
power spectra, mel spectrograms) feed both the forced-parameter regressors
and the tidal classifier. Temporal descriptors are computed on the raw
waveform and on the flow-volume curve.
"""

import io
from dataclasses import dataclass

import numpy as np
from scipy.fft import dct, rfft

from .errors import InvalidInput, RejectedManeuver, SignalTooShort
from .flow_curves import FlowVolumeCurve, ShapeVerdict, shape_check
from .signal_core import AudioRecording, detect_exhalation_start

SCHEMA_VERSION = "spiro-features-v1"
LOG_EPSILON = 1e-10
# Forced pipeline uses the first 10 mean/variance-normalized MFCCs out of
# the 13 computed coefficients.
MFCC_COMPUTED = 13
MFCC_USED_FORCED = 10

FORCED_TARGETS = ("PEF", "FEV1", "FVC")


@dataclass(frozen=True)
class FrameConfig:
    """Framing parameters: 30 ms windows advanced by 15 ms."""

    window_ms: float = 30.0
    step_ms: float = 15.0
    fft_length: int | None = None

    def __post_init__(self):
        if self.window_ms <= 0 or self.step_ms <= 0 or self.step_ms > self.window_ms:
            raise InvalidInput("require 0 < step_ms <= window_ms")
        if self.fft_length is not None and self.fft_length & (self.fft_length - 1):
            raise InvalidInput("fft_length must be a power of two")

    def window_samples(self, rate: int) -> int:
        return round(self.window_ms * rate / 1000.0)

    def step_samples(self, rate: int) -> int:
        return round(self.step_ms * rate / 1000.0)

    def fft_for(self, rate: int) -> int:
        if self.fft_length is not None:
            if self.fft_length < self.window_samples(rate):
                raise InvalidInput("fft_length shorter than the analysis window")
            return self.fft_length
        n = 1
        while n < self.window_samples(rate):
            n *= 2
        return n


@dataclass(frozen=True)
class MelConfig:
    """Mel filterbank sizes; HTK mel scale from fmin to fmax (default Nyquist)."""

    mfe_bands: int = 40
    melspec_bands: int = 64
    mfcc_coeffs: int = MFCC_COMPUTED
    fmin_hz: float = 0.0
    fmax_hz: float | None = None

    def __post_init__(self):
        if self.mfe_bands < 1 or self.melspec_bands < 1 or self.mfcc_coeffs < 1:
            raise InvalidInput("band and coefficient counts must be >= 1")

    def fmax_for(self, rate: int) -> float:
        fmax = rate / 2.0 if self.fmax_hz is None else self.fmax_hz
        if not self.fmin_hz < fmax <= rate / 2.0:
            raise InvalidInput(f"require fmin < fmax <= Nyquist, got [{self.fmin_hz}, {fmax}]")
        return fmax


@dataclass
class FeatureVector:
    """Named, ordered feature values for one maneuver or window."""

    names: tuple
    values: np.ndarray
    target_variant: str = "generic"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if len(self.names) != self.values.size:
            raise InvalidInput("feature names and values must have equal length")
        if len(set(self.names)) != len(self.names):
            raise InvalidInput("feature names must be unique")
        if not np.all(np.isfinite(self.values)):
            raise InvalidInput("feature values must be finite")


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def frame_signal(rec: AudioRecording, cfg: FrameConfig = FrameConfig()) -> np.ndarray:
    """Slice into overlapping frames; returns an (n_frames, window) array."""
    window = cfg.window_samples(rec.sample_rate_hz)
    step = cfg.step_samples(rec.sample_rate_hz)
    n = rec.samples.size
    if n < window:
        raise SignalTooShort(f"recording of {n} samples shorter than one {window}-sample window")
    count = (n - window) // step + 1
    frames = np.empty((count, window))
    for k in range(count):
        frames[k] = rec.samples[k * step : k * step + window]
    return frames


def power_spectrum(frames: np.ndarray, fft_length: int) -> np.ndarray:
    """One-sided periodogram per frame, scaled so that the bins sum to Sum(x^2)."""
    frames = np.atleast_2d(frames)
    spec = np.abs(rfft(frames, n=fft_length, axis=1)) ** 2 / fft_length
    spec[:, 1:] *= 2.0
    if fft_length % 2 == 0:
        spec[:, -1] /= 2.0
    return spec


def mel_filterbank(bands: int, fft_length: int, rate: int, fmin: float, fmax: float) -> np.ndarray:
    """Triangular filters with peaks evenly spaced on the HTK mel scale."""
    edges_hz = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), bands + 2))
    bin_hz = np.arange(fft_length // 2 + 1) * rate / fft_length
    bank = np.zeros((bands, bin_hz.size))
    for b in range(bands):
        lo, mid, hi = edges_hz[b], edges_hz[b + 1], edges_hz[b + 2]
        rising = (bin_hz >= lo) & (bin_hz < mid)
        falling = (bin_hz >= mid) & (bin_hz <= hi)
        if mid > lo:
            bank[b, rising] = (bin_hz[rising] - lo) / (mid - lo)
        if hi > mid:
            bank[b, falling] = (hi - bin_hz[falling]) / (hi - mid)
    return bank


def mfe(
    frames: np.ndarray,
    rate: int,
    cfg: MelConfig = MelConfig(),
    fft_length: int | None = None,
    bands: int | None = None,
) -> np.ndarray:
    """Mel filter bank energies per frame (nonnegative)."""
    frames = np.atleast_2d(frames)
    if fft_length is None:
        fft_length = 1
        while fft_length < frames.shape[1]:
            fft_length *= 2
    bank = mel_filterbank(
        bands or cfg.mfe_bands, fft_length, rate, cfg.fmin_hz, cfg.fmax_for(rate)
    )
    return power_spectrum(frames, fft_length) @ bank.T


def log_mfe(energies: np.ndarray) -> np.ndarray:
    """log(energy + epsilon); the epsilon floors silent frames at log(1e-10)."""
    return np.log(energies + LOG_EPSILON)


def melspectrogram(
    frames: np.ndarray, rate: int, cfg: MelConfig = MelConfig(), fft_length: int | None = None
) -> np.ndarray:
    """64-band mel spectrogram (same machinery as mfe, more bands)."""
    return mfe(frames, rate, cfg, fft_length, bands=cfg.melspec_bands)


def mfcc(
    frames: np.ndarray,
    rate: int,
    cfg: MelConfig = MelConfig(),
    fft_length: int | None = None,
) -> np.ndarray:
    """First ``cfg.mfcc_coeffs`` DCT-II coefficients of the log mel energies."""
    energies = log_mfe(mfe(frames, rate, cfg, fft_length))
    return dct(energies, type=2, norm="ortho", axis=1)[:, : cfg.mfcc_coeffs]


def mean_variance_normalize(coeffs: np.ndarray) -> np.ndarray:
    """Per-coefficient zero mean, unit variance across frames.

    A single frame or a zero-variance coefficient has no defined scaling;
    those columns are returned as zeros.
    """
    coeffs = np.atleast_2d(coeffs)
    mean = coeffs.mean(axis=0)
    std = coeffs.std(axis=0)
    out = np.zeros_like(coeffs)
    # relative floor: a constant column can show std ~ 1e-16 from the mean's
    # own rounding, which must still count as degenerate
    ok = std > 1e-12 * (np.abs(mean) + 1.0)
    out[:, ok] = (coeffs[:, ok] - mean[ok]) / std[ok]
    return out


# The 17 temporal descriptors, in schema order. Formulas (x of length N,
# d = diff(x), sample-index time axis):
#   autocorrelation      Pearson r of (x[:-1], x[1:]); 0 when variance is 0
#   centroid             sum(k * x[k]^2) / sum(x[k]^2); 0 when energy is 0
#   mean_abs_diff        mean(|d|)
#   mean_diff            mean(d)
#   median_abs_diff      median(|d|)
#   median_diff          median(d)
#   distance             sum(sqrt(1 + d^2))  (traveled length)
#   sum_abs_diff         sum(|d|)
#   total_energy         sum(x^2)
#   entropy              Shannon entropy of a 10-bin amplitude histogram,
#                        normalized by log(10); 0 for constant signals
#   peak_to_peak_distance |argmax(x) - argmin(x)| in samples
#   area_under_curve     trapezoidal integral with unit sample spacing
#   absolute_energy      sum(|x|)
#   max_peaks            count of strict local maxima
#   min_peaks            count of strict local minima
#   slope                least-squares line slope over sample index
#   zero_crossing_rate   count of sign changes (zeros counted as positive)
TEMPORAL_NAMES = (
    "autocorrelation",
    "centroid",
    "mean_abs_diff",
    "mean_diff",
    "median_abs_diff",
    "median_diff",
    "distance",
    "sum_abs_diff",
    "total_energy",
    "entropy",
    "peak_to_peak_distance",
    "area_under_curve",
    "absolute_energy",
    "max_peaks",
    "min_peaks",
    "slope",
    "zero_crossing_rate",
)

ENTROPY_BINS = 10


def _autocorrelation(x: np.ndarray) -> float:
    a, b = x[:-1], x[1:]
    sa, sb = a.std(), b.std()
    if sa == 0 or sb == 0:
        return 0.0
    return float(np.mean((a - a.mean()) * (b - b.mean())) / (sa * sb))


def _entropy(x: np.ndarray) -> float:
    counts, _ = np.histogram(x, bins=ENTROPY_BINS)
    p = counts[counts > 0] / x.size
    return float(-np.sum(p * np.log(p)) / np.log(ENTROPY_BINS))


def temporal_features(x: np.ndarray) -> FeatureVector:
    """The 17 temporal descriptors of a 1-D sequence (see formula table above)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.size < 3:
        raise InvalidInput("temporal features need a 1-D sequence of length >= 3")
    d = np.diff(x)
    energy = float(np.sum(x * x))
    signs = np.sign(x)
    signs[signs == 0] = 1.0
    k = np.arange(x.size)
    values = np.array(
        [
            _autocorrelation(x),
            float(np.sum(k * x * x) / energy) if energy > 0 else 0.0,
            float(np.mean(np.abs(d))),
            float(np.mean(d)),
            float(np.median(np.abs(d))),
            float(np.median(d)),
            float(np.sum(np.sqrt(1.0 + d * d))),
            float(np.sum(np.abs(d))),
            energy,
            _entropy(x),
            float(abs(int(np.argmax(x)) - int(np.argmin(x)))),
            float(np.trapezoid(x)),
            float(np.sum(np.abs(x))),
            float(np.sum((d[:-1] > 0) & (d[1:] < 0))),
            float(np.sum((d[:-1] < 0) & (d[1:] > 0))),
            float(np.polyfit(k, x, 1)[0]),
            float(np.sum(np.diff(signs) != 0)),
        ]
    )
    return FeatureVector(names=TEMPORAL_NAMES, values=values, target_variant="generic")


def _frame_feature_block(segment: np.ndarray, rate: int, frame_cfg: FrameConfig, mel_cfg: MelConfig):
    """All per-frame feature families for one waveform segment."""
    rec = AudioRecording(samples=segment, sample_rate_hz=rate, source_id="segment")
    frames = frame_signal(rec, frame_cfg)
    fft_length = frame_cfg.fft_for(rate)
    energies = mfe(frames, rate, mel_cfg, fft_length)
    blocks = [
        ("mfe", energies),
        ("logmfe", log_mfe(energies)),
        (
            "mfccmvn",
            mean_variance_normalize(
                dct(log_mfe(energies), type=2, norm="ortho", axis=1)[:, : mel_cfg.mfcc_coeffs]
            )[:, :MFCC_USED_FORCED],
        ),
        ("ps", power_spectrum(frames, fft_length)),
        ("melspec", melspectrogram(frames, rate, mel_cfg, fft_length)),
    ]
    return blocks


def assemble(
    rec: AudioRecording,
    curve: FlowVolumeCurve,
    target: str,
    onset: int | None = None,
    frame_cfg: FrameConfig = FrameConfig(),
    mel_cfg: MelConfig = MelConfig(),
    verdict: ShapeVerdict | None = None,
) -> FeatureVector:
    """Fixed-schema feature vector for one accepted maneuver and target.

    The waveform segment depends on the target: PEF uses [onset, envelope
    peak] and aggregates each per-frame feature by its cumulative sum over
    frames (evaluated at the final frame); FEV1 uses [onset, onset + 1 s]
    and FVC the full clipped waveform, both aggregated by the mean over
    frames. Every variant appends the temporal descriptors of its segment
    and of the flow-volume curve. ``curve`` must be sample-aligned with
    ``rec`` (built from its smoothed envelope).
    """
    if target not in FORCED_TARGETS:
        raise InvalidInput(f"target must be one of {FORCED_TARGETS}, got {target!r}")
    if verdict is None:
        verdict = shape_check(curve)
    if not verdict.accepted:
        raise RejectedManeuver(f"maneuver failed shape rules: {', '.join(verdict.reasons)}")
    if onset is None:
        onset = detect_exhalation_start(rec)

    rate = rec.sample_rate_hz
    if target == "PEF":
        end = max(curve.pef_index + 1, onset + frame_cfg.window_samples(rate))
        segment = rec.samples[onset:end]
    elif target == "FEV1":
        segment = rec.samples[onset : onset + rate]
    else:
        segment = rec.samples

    names: list = []
    values: list = []
    for prefix, block in _frame_feature_block(segment, rate, frame_cfg, mel_cfg):
        aggregated = block.sum(axis=0) if target == "PEF" else block.mean(axis=0)
        names.extend(f"{prefix}{i:03d}" for i in range(aggregated.size))
        values.append(aggregated)
    wav_temporal = temporal_features(segment)
    fv_temporal = temporal_features(curve.flow)
    names.extend(f"wav_{n}" for n in wav_temporal.names)
    values.append(wav_temporal.values)
    names.extend(f"fv_{n}" for n in fv_temporal.names)
    values.append(fv_temporal.values)

    return FeatureVector(
        names=tuple(names), values=np.concatenate(values), target_variant=target
    )


def vectors_to_csv(vectors: list) -> str:
    """CSV with an embedded schema-version comment and a header row of names."""
    if not vectors:
        raise InvalidInput("no feature vectors to serialize")
    names = vectors[0].names
    for v in vectors:
        if v.names != names:
            raise InvalidInput("feature vectors do not share one schema")
    buf = io.StringIO()
    buf.write(f"# schema_version={SCHEMA_VERSION}\n")
    buf.write(",".join(names) + "\n")
    for v in vectors:
        buf.write(",".join(repr(float(x)) for x in v.values) + "\n")
    return buf.getvalue()
