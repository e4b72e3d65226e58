"""Deterministic DSP primitives shared by the forced and tidal pipelines.

Everything here is a pure function of its inputs: normalization, onset
detection and clipping, Hilbert envelopes, Kaiser-window FIR smoothing,
Butterworth band-passing, moving averages, peak detection, decimation, and
the seeded synthetic-signal generators used as test oracles.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import signal as sps

from .errors import InsufficientPeaks, InvalidInput, OnsetNotFound, SignalTooShort
from .seeds import derive_seed

# Onset detection: short-window RMS length and threshold fraction of max RMS.
ONSET_RMS_WINDOW_S = 0.030
ONSET_THRESHOLD_FRACTION = 0.10
# Pre-roll kept ahead of the detected onset when clipping a forced maneuver.
CLIP_PREROLL_S = 1.0
# Kaiser FIR design: normalized transition width is 2/rate, stopband 10 dB.
FIR_TRANSITION_NUMERATOR = 2.0
FIR_STOPBAND_DB = 10.0
# Default low-pass cutoff when smoothing an envelope (Hz).
ENVELOPE_CUTOFF_HZ = 10.0
# Tidal band-pass corners (Hz) and per-pass Butterworth order.
TIDAL_BAND_HZ = (50.0, 500.0)
TIDAL_BUTTER_ORDER = 4
# Peak detection defaults: max plausible 40 breaths/min -> 1.5 s separation;
# prominence floor at 5 % of the envelope maximum.
PEAK_MIN_SEPARATION_S = 1.5
PEAK_PROMINENCE_FRACTION = 0.05
# Anti-alias cutoff for decimation, as a fraction of the target Nyquist.
DECIMATE_CUTOFF_FRACTION = 0.45
DECIMATE_BUTTER_ORDER = 8


@dataclass
class AudioRecording:
    """Mono PCM samples plus sample rate and provenance."""

    samples: np.ndarray
    sample_rate_hz: int
    channel_count: int = 1
    source_id: str = ""

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.channel_count != 1:
            raise InvalidInput(f"recordings must be mono, got {self.channel_count} channels")
        if self.sample_rate_hz <= 0:
            raise InvalidInput(f"sample rate must be positive, got {self.sample_rate_hz}")
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise InvalidInput("recording must contain a non-empty 1-D sample array")

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate_hz

    def replace_samples(self, samples: np.ndarray, source_suffix: str = "") -> "AudioRecording":
        return AudioRecording(
            samples=samples,
            sample_rate_hz=self.sample_rate_hz,
            source_id=self.source_id + source_suffix,
        )


@dataclass
class Envelope:
    """Nonnegative amplitude envelope, a proxy for flow rate."""

    values: np.ndarray
    sample_rate_hz: int

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.sample_rate_hz <= 0:
            raise InvalidInput(f"sample rate must be positive, got {self.sample_rate_hz}")


@dataclass(frozen=True)
class FirSpec:
    """Kaiser-window FIR design: transition width, attenuation, derived order."""

    transition_width_normalized: float
    stopband_attenuation_db: float
    order: int
    beta: float = field(default=0.0)

    def __post_init__(self):
        if not 0.0 < self.transition_width_normalized < 0.5:
            raise InvalidInput("transition width must lie in (0, 0.5) cycles/sample")
        if self.stopband_attenuation_db <= 0:
            raise InvalidInput("stopband attenuation must be positive (dB magnitude)")
        if self.order < 1:
            raise InvalidInput("filter order must be >= 1")


@dataclass(frozen=True)
class PeakSet:
    """Strictly increasing peak indices and their mean spacing in seconds."""

    indices: tuple
    mean_peak_to_peak_s: float


def normalize(rec: AudioRecording) -> AudioRecording:
    """Scale samples so that max |sample| = 1; all-zero input is returned as-is."""
    peak = float(np.max(np.abs(rec.samples)))
    if peak == 0.0:
        return rec.replace_samples(rec.samples.copy())
    return rec.replace_samples(rec.samples / peak)


def _short_window_rms(x: np.ndarray, window: int) -> np.ndarray:
    return np.sqrt(moving_average(x * x, window))


def detect_exhalation_start(
    rec: AudioRecording, threshold_fraction: float = ONSET_THRESHOLD_FRACTION
) -> int:
    """First sample index where the 30 ms RMS exceeds the given fraction of its max."""
    if not 0.0 < threshold_fraction < 1.0:
        raise InvalidInput(f"threshold fraction must lie in (0, 1), got {threshold_fraction}")
    window = max(1, round(ONSET_RMS_WINDOW_S * rec.sample_rate_hz))
    if window > rec.samples.size:
        raise SignalTooShort("recording shorter than the onset RMS window")
    rms = _short_window_rms(rec.samples, window)
    peak = float(rms.max())
    if peak == 0.0:
        raise OnsetNotFound("silent recording: RMS never exceeds threshold")
    above = np.nonzero(rms > threshold_fraction * peak)[0]
    if above.size == 0:
        raise OnsetNotFound("RMS never exceeds the threshold fraction of its maximum")
    return int(above[0])


def clip_forced(rec: AudioRecording, onset: int) -> AudioRecording:
    """Keep one second of pre-roll before the onset through the end of the recording."""
    if not 0 <= onset < rec.samples.size:
        raise InvalidInput(f"onset {onset} outside recording of {rec.samples.size} samples")
    start = max(0, onset - round(CLIP_PREROLL_S * rec.sample_rate_hz))
    return rec.replace_samples(rec.samples[start:].copy())


def hilbert_envelope(rec: AudioRecording) -> Envelope:
    """Magnitude of the analytic signal, computed by FFT over the full window."""
    if rec.samples.size < 2:
        raise InvalidInput("need at least 2 samples for an analytic signal")
    analytic = sps.hilbert(rec.samples)
    return Envelope(values=np.abs(analytic), sample_rate_hz=rec.sample_rate_hz)


def design_kaiser_fir(sample_rate_hz: int) -> FirSpec:
    """Minimum-order Kaiser design for transition width 2/rate and 10 dB stopband."""
    if sample_rate_hz <= 0:
        raise InvalidInput(f"sample rate must be positive, got {sample_rate_hz}")
    width_norm = FIR_TRANSITION_NUMERATOR / sample_rate_hz
    # kaiserord takes the width as a fraction of Nyquist, i.e. 2x cycles/sample.
    numtaps, beta = sps.kaiserord(FIR_STOPBAND_DB, 2.0 * width_norm)
    if numtaps % 2 == 0:
        numtaps += 1  # type I (odd-length symmetric) keeps an integer group delay
    return FirSpec(
        transition_width_normalized=width_norm,
        stopband_attenuation_db=FIR_STOPBAND_DB,
        order=numtaps - 1,
        beta=float(beta),
    )


def fir_taps(spec: FirSpec, sample_rate_hz: int, cutoff_hz: float = ENVELOPE_CUTOFF_HZ) -> np.ndarray:
    """Low-pass taps realizing ``spec`` at the given cutoff."""
    if not 0.0 < cutoff_hz < sample_rate_hz / 2:
        raise InvalidInput(f"cutoff {cutoff_hz} Hz outside (0, Nyquist)")
    return sps.firwin(
        spec.order + 1,
        cutoff_hz,
        width=spec.transition_width_normalized * sample_rate_hz,
        fs=sample_rate_hz,
    )


def _zero_phase_fir(x: np.ndarray, taps: np.ndarray) -> np.ndarray:
    """Forward-backward FIR application with reflected edges, FFT-based."""
    pad = min(taps.size, x.size - 1)
    ext = np.concatenate([x[pad:0:-1], x, x[-2 : -pad - 2 : -1]]) if pad > 0 else x
    fwd = sps.fftconvolve(ext, taps, mode="same")
    bwd = sps.fftconvolve(fwd[::-1], taps, mode="same")[::-1]
    return bwd[pad : bwd.size - pad] if pad > 0 else bwd


def smooth_fir(env: Envelope, spec: FirSpec, cutoff_hz: float = ENVELOPE_CUTOFF_HZ) -> Envelope:
    """Zero-phase Kaiser low-pass over the envelope; output clamped at 0."""
    if env.values.size == 0:
        raise InvalidInput("empty envelope")
    if spec.order + 1 >= env.values.size:
        raise SignalTooShort(
            f"filter length {spec.order + 1} >= signal length {env.values.size}"
        )
    taps = fir_taps(spec, env.sample_rate_hz, cutoff_hz)
    smoothed = np.maximum(_zero_phase_fir(env.values, taps), 0.0)
    return Envelope(values=smoothed, sample_rate_hz=env.sample_rate_hz)


def bandpass_tidal(rec: AudioRecording, band_hz: tuple = TIDAL_BAND_HZ) -> AudioRecording:
    """Zero-phase Butterworth band-pass (50-500 Hz) isolating tidal breathing."""
    low, high = band_hz
    if rec.sample_rate_hz <= 2 * high:
        raise InvalidInput(
            f"sample rate {rec.sample_rate_hz} Hz puts the {high} Hz band edge at/above Nyquist"
        )
    sos = sps.butter(
        TIDAL_BUTTER_ORDER, [low, high], btype="bandpass", fs=rec.sample_rate_hz, output="sos"
    )
    return rec.replace_samples(sps.sosfiltfilt(sos, rec.samples))


def moving_average(x: np.ndarray, window: int) -> np.ndarray:
    """Centered moving mean; the window shrinks at the edges, length preserved."""
    x = np.asarray(x, dtype=np.float64)
    n = x.size
    if window < 1 or window > n:
        raise InvalidInput(f"window {window} invalid for sequence of length {n}")
    half_left = (window - 1) // 2
    half_right = window // 2
    csum = np.concatenate([[0.0], np.cumsum(x)])
    idx = np.arange(n)
    lo = np.maximum(0, idx - half_left)
    hi = np.minimum(n, idx + half_right + 1)
    return (csum[hi] - csum[lo]) / (hi - lo)


def detect_peaks(
    env: Envelope,
    min_separation_s: float = PEAK_MIN_SEPARATION_S,
    min_prominence: float | None = None,
) -> PeakSet:
    """Local maxima at least ``min_separation_s`` apart with sufficient prominence.

    ``min_prominence`` defaults to 5 % of the envelope maximum. Fewer than two
    peaks raises InsufficientPeaks: the caller decides whether that means
    rejection (it does for respiration-rate estimation).
    """
    values = env.values
    if values.size == 0:
        raise InvalidInput("empty envelope")
    if min_prominence is None:
        min_prominence = PEAK_PROMINENCE_FRACTION * float(values.max())
    distance = max(1, round(min_separation_s * env.sample_rate_hz))
    indices, _ = sps.find_peaks(
        values, distance=distance, prominence=min_prominence if min_prominence > 0 else None
    )
    if indices.size < 2:
        raise InsufficientPeaks(f"found {indices.size} peak(s); need at least 2")
    gaps = np.diff(indices)
    return PeakSet(
        indices=tuple(int(i) for i in indices),
        mean_peak_to_peak_s=float(gaps.mean()) / env.sample_rate_hz,
    )


def decimate(rec: AudioRecording, target_rate_hz: int) -> AudioRecording:
    """Anti-alias low-pass at 0.45x the target Nyquist, then keep every k-th sample."""
    if target_rate_hz <= 0 or rec.sample_rate_hz % target_rate_hz != 0:
        raise InvalidInput(
            f"target rate {target_rate_hz} must divide source rate {rec.sample_rate_hz}"
        )
    factor = rec.sample_rate_hz // target_rate_hz
    if factor == 1:
        return rec.replace_samples(rec.samples.copy())
    cutoff_hz = DECIMATE_CUTOFF_FRACTION * (target_rate_hz / 2.0)
    sos = sps.butter(
        DECIMATE_BUTTER_ORDER, cutoff_hz, btype="lowpass", fs=rec.sample_rate_hz, output="sos"
    )
    filtered = sps.sosfiltfilt(sos, rec.samples)
    return AudioRecording(
        samples=filtered[::factor].copy(),
        sample_rate_hz=target_rate_hz,
        source_id=rec.source_id,
    )


def _bandlimited_noise(
    rng: np.random.Generator, n: int, rate: int, band: tuple
) -> np.ndarray:
    noise = rng.standard_normal(n)
    low, high = band
    high = min(high, 0.45 * rate)
    sos = sps.butter(4, [low, high], btype="bandpass", fs=rate, output="sos")
    out = sps.sosfiltfilt(sos, noise)
    peak = np.max(np.abs(out))
    return out / peak if peak > 0 else out


def synth_am(
    duration_s: float = 3.0,
    sample_rate_hz: int = 12000,
    carrier_hz: float = 1000.0,
    message_hz: float = 2.0,
    depth: float = 0.5,
    harmonics: int = 3,
) -> AudioRecording:
    """Amplitude-modulated harmonic stack; the message is the known envelope oracle."""
    if duration_s <= 0 or carrier_hz <= 0 or message_hz <= 0 or harmonics < 1:
        raise InvalidInput("am: duration, carrier, message and harmonics must be positive")
    if carrier_hz * harmonics >= sample_rate_hz / 2:
        raise InvalidInput("am: highest harmonic at/above Nyquist")
    t = np.arange(round(duration_s * sample_rate_hz)) / sample_rate_hz
    message = 1.0 + depth * np.cos(2.0 * np.pi * message_hz * t)
    carrier = np.zeros_like(t)
    for h in range(1, harmonics + 1):
        carrier += np.sin(2.0 * np.pi * carrier_hz * h * t) / h
    return AudioRecording(
        samples=message * carrier, sample_rate_hz=sample_rate_hz, source_id="synth:am"
    )


def synth_breath(
    duration_s: float = 20.0,
    sample_rate_hz: int = 16000,
    bpm: float = 15.0,
    seed: int = 0,
    burst_width_fraction: float = 0.4,
    noise_floor: float = 0.0,
    band: tuple = (50.0, 400.0),
) -> AudioRecording:
    """Band-limited exhalation bursts at the requested breaths-per-minute.

    Exactly round(bpm * duration / 60) bursts are placed at the centers of
    consecutive breath periods, so the generator parameter is the oracle for
    respiration-rate tests.
    """
    if duration_s <= 0 or bpm <= 0:
        raise InvalidInput("breath: duration and bpm must be positive")
    rng = np.random.default_rng(derive_seed(seed, "synth-breath"))
    n = round(duration_s * sample_rate_hz)
    t = np.arange(n) / sample_rate_hz
    period = 60.0 / bpm
    n_bursts = round(bpm * duration_s / 60.0)
    gate = np.zeros(n)
    width = burst_width_fraction * period
    for i in range(n_bursts):
        center = (i + 0.5) * period
        inside = np.abs(t - center) < width / 2.0
        gate[inside] = 0.5 * (1.0 + np.cos(2.0 * np.pi * (t[inside] - center) / width))
    carrier = _bandlimited_noise(rng, n, sample_rate_hz, band)
    samples = gate * carrier
    if noise_floor > 0.0:
        samples = samples + noise_floor * rng.standard_normal(n)
    return AudioRecording(samples=samples, sample_rate_hz=sample_rate_hz, source_id="synth:breath")


def synth_forced(
    duration_s: float = 8.0,
    sample_rate_hz: int = 16000,
    onset_s: float = 1.5,
    attack_s: float = 0.06,
    decay_tau_s: float = 2.0,
    amplitude: float = 1.0,
    seed: int = 0,
    band: tuple = (300.0, 2000.0),
    noise_floor: float = 1e-4,
) -> AudioRecording:
    """Single forced-exhalation burst: sharp attack at ``onset_s``, exponential decay."""
    if duration_s <= 0 or not 0 <= onset_s < duration_s or attack_s <= 0 or decay_tau_s <= 0:
        raise InvalidInput("forced: inconsistent onset/attack/decay parameters")
    rng = np.random.default_rng(derive_seed(seed, "synth-forced"))
    n = round(duration_s * sample_rate_hz)
    t = np.arange(n) / sample_rate_hz
    env = np.zeros(n)
    rise = (t >= onset_s) & (t < onset_s + attack_s)
    env[rise] = 0.5 * (1.0 - np.cos(np.pi * (t[rise] - onset_s) / attack_s))
    tail = t >= onset_s + attack_s
    env[tail] = np.exp(-(t[tail] - onset_s - attack_s) / decay_tau_s)
    carrier = _bandlimited_noise(rng, n, sample_rate_hz, band)
    samples = amplitude * env * carrier + noise_floor * rng.standard_normal(n)
    return AudioRecording(samples=samples, sample_rate_hz=sample_rate_hz, source_id="synth:forced")


def synth_noise(
    duration_s: float = 20.0,
    sample_rate_hz: int = 16000,
    seed: int = 0,
    amplitude: float = 0.5,
) -> AudioRecording:
    """Seeded white Gaussian noise; identical seeds give bit-identical samples."""
    if duration_s <= 0:
        raise InvalidInput("noise: duration must be positive")
    rng = np.random.default_rng(derive_seed(seed, "synth-noise"))
    n = round(duration_s * sample_rate_hz)
    return AudioRecording(
        samples=amplitude * rng.standard_normal(n),
        sample_rate_hz=sample_rate_hz,
        source_id="synth:noise",
    )


_SYNTH_KINDS = {
    "am": synth_am,
    "breath": synth_breath,
    "forced": synth_forced,
    "noise": synth_noise,
}


def synth(kind: str, **params) -> AudioRecording:
    """Dispatch to one of the synthetic generators: am, breath, forced, noise."""
    try:
        generator = _SYNTH_KINDS[kind]
    except KeyError:
        raise InvalidInput(f"unknown synth kind {kind!r}; expected one of {sorted(_SYNTH_KINDS)}")
    try:
        return generator(**params)
    except TypeError as exc:
        raise InvalidInput(f"invalid parameters for synth kind {kind!r}: {exc}")
