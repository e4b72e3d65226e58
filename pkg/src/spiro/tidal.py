"""Tidal pipeline: window slicing, 3-class CNN, vote threshold, respiration rate.

Recordings are band-passed to 50-500 Hz (when the rate allows), sliced into
overlapping windows, and each window is classified from its mel filter bank
energies. A recording receives a class only when at least 90 % of its
windows agree; otherwise it is `uncertain`. Respiration rate comes from
peak spacing of the smoothed Hilbert envelope of accepted tidal audio.
"""

from dataclasses import dataclass, field

import numpy as np

from . import cnn
from .errors import (
    InsufficientPeaks,
    InvalidDataset,
    InvalidInput,
    SchemaError,
    SignalTooShort,
)
from .features import MelConfig, log_mfe, mfe
from .seeds import derive_seed
from .signal_core import (
    AudioRecording,
    PeakSet,
    TIDAL_BAND_HZ,
    bandpass_tidal,
    decimate,
    design_kaiser_fir,
    detect_peaks,
    hilbert_envelope,
    smooth_fir,
)

VOTE_THRESHOLD = 0.90
CLASS_NAMES = ("noise", "speech", "tidal")
MFE_BANDS = 40
# Envelope smoothing cutoff for respiration (breathing <= 40/min = 0.67 Hz).
RESPIRATION_CUTOFF_HZ = 2.0
STUDY_RATES = (16000, 8000, 4000, 2000, 1000)
FOLD_COUNT = 6


@dataclass(frozen=True)
class TidalWindowHyper:
    """Searched hyperparameters: slice window, offset, and MFE FFT length.

    The MFE inside each slice uses frames of ``fft_len`` samples advanced by
    half, so the FFT length axis controls time-frequency resolution.
    """

    window_s: float = 2.0
    offset_s: float = 1.0
    fft_len: int = 512

    def __post_init__(self):
        if self.window_s <= 0 or self.offset_s <= 0:
            raise InvalidInput("window and offset must be positive")
        if self.offset_s > self.window_s:
            raise InvalidInput("offset cannot exceed the window size")
        if self.fft_len & (self.fft_len - 1) or self.fft_len < 8:
            raise InvalidInput("fft_len must be a power of two >= 8")


DEFAULT_HYPER = TidalWindowHyper()
HYPER_GRID = tuple(
    TidalWindowHyper(window_s=w, offset_s=w * o, fft_len=f)
    for w in (0.5, 1.0, 2.0)
    for o in (0.25, 0.5, 1.0)
    for f in (256, 512)
)


@dataclass
class TidalWindowBatch:
    windows: list  # per-window MFE maps, each (frames, bands)
    window_s: float
    offset_s: float
    fft_len: int
    sample_rate_hz: int
    source: str = ""


@dataclass
class TidalDecision:
    per_window_label: tuple
    voted_label: str
    vote_fraction: float


@dataclass
class RespirationResult:
    rate_bpm: float | None
    peak_set: PeakSet | None
    rejected: bool


@dataclass
class CnnModel:
    class_names: tuple
    window_s: float
    offset_s: float
    fft_len: int
    sample_rate_hz: int
    mel_bands: int
    input_frames: int
    norm_log_mean: np.ndarray
    norm_log_std: np.ndarray
    weights: dict
    train_seed: int
    train_config: cnn.TrainConfig = field(default_factory=cnn.TrainConfig)


def prepare_recording(rec: AudioRecording) -> AudioRecording:
    """Band-pass to the tidal band when the rate allows; pass through otherwise.

    Below 2x the upper band edge the decimation anti-alias filter has
    already confined the signal, so no further band-pass is possible or
    needed.
    """
    if rec.sample_rate_hz > 2 * TIDAL_BAND_HZ[1]:
        return bandpass_tidal(rec)
    return rec


def _frame_by_samples(x: np.ndarray, window: int, step: int) -> np.ndarray:
    if x.size < window:
        raise SignalTooShort(f"{x.size} samples shorter than one {window}-sample frame")
    count = (x.size - window) // step + 1
    out = np.empty((count, window))
    for k in range(count):
        out[k] = x[k * step : k * step + window]
    return out


def slice_windows(
    rec: AudioRecording,
    window_s: float = DEFAULT_HYPER.window_s,
    offset_s: float = DEFAULT_HYPER.offset_s,
    fft_len: int = DEFAULT_HYPER.fft_len,
) -> TidalWindowBatch:
    """Rectangular slicing into count = floor((L - W)/O) + 1 windows, MFE each."""
    hyper = TidalWindowHyper(window_s=window_s, offset_s=offset_s, fft_len=fft_len)
    rate = rec.sample_rate_hz
    window = round(hyper.window_s * rate)
    offset = round(hyper.offset_s * rate)
    if window > rec.samples.size:
        raise SignalTooShort(
            f"window of {window} samples exceeds recording of {rec.samples.size}"
        )
    if hyper.fft_len > window:
        raise SignalTooShort(f"fft_len {hyper.fft_len} exceeds the {window}-sample window")
    mel_cfg = MelConfig(mfe_bands=MFE_BANDS)
    maps = []
    count = (rec.samples.size - window) // offset + 1
    for k in range(count):
        chunk = rec.samples[k * offset : k * offset + window]
        frames = _frame_by_samples(chunk, hyper.fft_len, hyper.fft_len // 2)
        maps.append(mfe(frames, rate, mel_cfg, fft_length=hyper.fft_len))
    return TidalWindowBatch(
        windows=maps,
        window_s=hyper.window_s,
        offset_s=hyper.offset_s,
        fft_len=hyper.fft_len,
        sample_rate_hz=rate,
        source=rec.source_id,
    )


def vote(labels: list, threshold: float = VOTE_THRESHOLD) -> tuple:
    """(voted_label, fraction): the top class wins iff it holds >= threshold."""
    if not labels:
        raise InvalidInput("cannot vote over zero windows")
    counts: dict = {}
    for label in labels:
        counts[label] = counts.get(label, 0) + 1
    top = max(sorted(counts), key=lambda c: counts[c])
    fraction = counts[top] / len(labels)
    if fraction + 1e-12 >= threshold:
        return top, fraction
    return "uncertain", fraction


def _stack_inputs(batch: TidalWindowBatch) -> np.ndarray:
    return np.stack([log_mfe(m) for m in batch.windows])  # (n, frames, bands)


def _normalize_inputs(stacked: np.ndarray, mean: np.ndarray, std: np.ndarray) -> np.ndarray:
    safe = np.where(std > 0, std, 1.0)
    normed = (stacked - mean) / safe
    return normed.transpose(0, 2, 1)  # (n, bands, frames) for 1-D conv


def _sample_stack(rec: AudioRecording, hyper: TidalWindowHyper) -> np.ndarray:
    """Prepared, sliced, log-MFE stack for one recording: (windows, frames, bands)."""
    batch = slice_windows(
        prepare_recording(rec), hyper.window_s, hyper.offset_s, hyper.fft_len
    )
    return _stack_inputs(batch)


def _train_from_stacks(
    stacks: list,
    labels: list,
    rate: int,
    hyper: TidalWindowHyper,
    seed: int,
    train_config: cnn.TrainConfig,
) -> CnnModel:
    X = np.concatenate(stacks)
    window_labels = []
    for stacked, label in zip(stacks, labels):
        window_labels.extend([label] * stacked.shape[0])
    mean = X.mean(axis=(0, 1))
    std = X.std(axis=(0, 1))
    inputs = _normalize_inputs(X, mean, std)
    y = np.array([CLASS_NAMES.index(label) for label in window_labels])
    weights = cnn.train_network(
        inputs, y, len(CLASS_NAMES), train_config, derive_seed(seed, "cnn")
    )
    return CnnModel(
        class_names=CLASS_NAMES,
        window_s=hyper.window_s,
        offset_s=hyper.offset_s,
        fft_len=hyper.fft_len,
        sample_rate_hz=rate,
        mel_bands=MFE_BANDS,
        input_frames=inputs.shape[2],
        norm_log_mean=mean,
        norm_log_std=std,
        weights=weights,
        train_seed=seed,
        train_config=train_config,
    )


def train_cnn(
    samples: list,
    hyper: TidalWindowHyper | None = None,
    seed: int = 0,
    grid: tuple | None = None,
    train_config: cnn.TrainConfig = cnn.TrainConfig(),
    folds: int = FOLD_COUNT,
) -> CnnModel:
    """Train the 3-class window classifier; a grid triggers k-fold selection.

    ``samples`` are LabeledRecording objects covering all three classes with
    at least two recordings each. When ``grid`` is given, each windowing
    config is scored by ``folds``-fold cross-validation and the best one is
    used for the final fit on all samples.
    """
    _validate_classes(samples)
    if grid is not None:
        hyper = select_hyper(samples, grid, seed, train_config, folds)
    elif hyper is None:
        hyper = DEFAULT_HYPER

    rate = samples[0].recording.sample_rate_hz
    for sample in samples:
        if sample.recording.sample_rate_hz != rate:
            raise InvalidDataset("all recordings must share one sample rate")
    stacks = [_sample_stack(s.recording, hyper) for s in samples]
    return _train_from_stacks(
        stacks, [s.label for s in samples], rate, hyper, seed, train_config
    )


def _validate_classes(samples: list):
    counts: dict = {}
    for sample in samples:
        if sample.label not in CLASS_NAMES:
            raise InvalidDataset(f"unknown class {sample.label!r}")
        counts[sample.label] = counts.get(sample.label, 0) + 1
    missing = [c for c in CLASS_NAMES if counts.get(c, 0) < 2]
    if missing:
        raise InvalidDataset(f"need >= 2 examples per class; short on {missing}")


def _classify_stack(model: CnnModel, stacked: np.ndarray) -> TidalDecision:
    inputs = _normalize_inputs(stacked, model.norm_log_mean, model.norm_log_std)
    if inputs.shape[2] != model.input_frames:
        raise SchemaError(
            f"window yields {inputs.shape[2]} frames, model expects {model.input_frames}"
        )
    probs = cnn.predict_proba(model.weights, inputs, len(model.class_names), model.train_config)
    labels = [model.class_names[int(k)] for k in probs.argmax(axis=1)]
    voted, fraction = vote(labels)
    return TidalDecision(
        per_window_label=tuple(labels), voted_label=voted, vote_fraction=fraction
    )


def classify(model: CnnModel, rec: AudioRecording) -> TidalDecision:
    """Per-window argmax labels, then the 90 % vote rule (else `uncertain`)."""
    if rec.sample_rate_hz != model.sample_rate_hz:
        raise SchemaError(
            f"model trained at {model.sample_rate_hz} Hz, recording is {rec.sample_rate_hz} Hz"
        )
    hyper = TidalWindowHyper(model.window_s, model.offset_s, model.fft_len)
    return _classify_stack(model, _sample_stack(rec, hyper))


def window_probabilities(model: CnnModel, rec: AudioRecording) -> np.ndarray:
    """Softmax posteriors per window (rows sum to 1); exposed for tests."""
    batch = slice_windows(
        prepare_recording(rec), model.window_s, model.offset_s, model.fft_len
    )
    inputs = _normalize_inputs(_stack_inputs(batch), model.norm_log_mean, model.norm_log_std)
    return cnn.predict_proba(model.weights, inputs, len(model.class_names), model.train_config)


def respiration_rate(
    rec: AudioRecording,
    min_separation_s: float = 1.5,
    prominence_fraction: float = 0.05,
    cutoff_hz: float = RESPIRATION_CUTOFF_HZ,
) -> RespirationResult:
    """60 / mean peak-to-peak seconds of the smoothed Hilbert envelope.

    A flat envelope yields no usable peaks; such recordings are rejected
    rather than given a rate.
    """
    env = hilbert_envelope(rec)
    spec = design_kaiser_fir(rec.sample_rate_hz)
    smoothed = smooth_fir(env, spec, cutoff_hz=cutoff_hz)
    try:
        peaks = detect_peaks(
            smoothed,
            min_separation_s=min_separation_s,
            min_prominence=prominence_fraction * float(smoothed.values.max()),
        )
    except InsufficientPeaks:
        return RespirationResult(rate_bpm=None, peak_set=None, rejected=True)
    return RespirationResult(
        rate_bpm=60.0 / peaks.mean_peak_to_peak_s, peak_set=peaks, rejected=False
    )


@dataclass(frozen=True)
class MetronomeCheck:
    theoretical_cycles: float
    measured_cycles: float
    deviation_cycles: float


def metronome_theoretical_cycles(bpm_metronome: float, duration_s: float) -> float:
    """Breathing cycles implied by a metronome: two beats per cycle."""
    if bpm_metronome <= 0 or duration_s <= 0:
        raise InvalidInput("metronome bpm and duration must be positive")
    return (bpm_metronome / 2.0) / 60.0 * duration_s


def metronome_check(
    audio_rate: RespirationResult, bpm_metronome: float, duration_s: float
) -> MetronomeCheck:
    """Compare measured cycles (duration / mean gap) with the metronome's."""
    theoretical = metronome_theoretical_cycles(bpm_metronome, duration_s)
    if audio_rate.rejected or audio_rate.peak_set is None:
        raise InvalidInput("cannot run a metronome check on a rejected recording")
    measured = duration_s / audio_rate.peak_set.mean_peak_to_peak_s
    return MetronomeCheck(
        theoretical_cycles=theoretical,
        measured_cycles=measured,
        deviation_cycles=abs(measured - theoretical),
    )


@dataclass(frozen=True)
class CrossvalResult:
    accuracy: float  # recording-level, voted (uncertain counts as wrong)
    window_accuracy: float  # per-window argmax vs the recording's label
    fold_accuracies: tuple
    confusion: dict  # (truth, voted) -> count, voted may be "uncertain"


def crossval_accuracy(
    samples: list,
    hyper: TidalWindowHyper = DEFAULT_HYPER,
    seed: int = 0,
    train_config: cnn.TrainConfig = cnn.TrainConfig(),
    folds: int = FOLD_COUNT,
) -> CrossvalResult:
    """Recording-level voted accuracy over stratified k folds."""
    if folds < 2 or folds > len(samples):
        raise InvalidInput(f"cannot make {folds} folds from {len(samples)} samples")
    _validate_classes(samples)
    rate = samples[0].recording.sample_rate_hz
    stacks = [_sample_stack(s.recording, hyper) for s in samples]
    order = sorted(range(len(samples)), key=lambda i: (samples[i].label, i))
    fold_members = [order[k::folds] for k in range(folds)]
    confusion: dict = {}
    fold_accuracies = []
    correct_total = 0
    window_correct = 0
    window_total = 0
    for k, members in enumerate(fold_members):
        held = set(members)
        train_idx = [i for i in range(len(samples)) if i not in held]
        model = _train_from_stacks(
            [stacks[i] for i in train_idx],
            [samples[i].label for i in train_idx],
            rate,
            hyper,
            derive_seed(seed, "fold", k),
            train_config,
        )
        correct = 0
        for i in members:
            decision = _classify_stack(model, stacks[i])
            truth = samples[i].label
            confusion[(truth, decision.voted_label)] = (
                confusion.get((truth, decision.voted_label), 0) + 1
            )
            if decision.voted_label == truth:
                correct += 1
            window_correct += sum(label == truth for label in decision.per_window_label)
            window_total += len(decision.per_window_label)
        fold_accuracies.append(correct / len(members))
        correct_total += correct
    return CrossvalResult(
        accuracy=correct_total / len(samples),
        window_accuracy=window_correct / window_total,
        fold_accuracies=tuple(fold_accuracies),
        confusion=confusion,
    )


def select_hyper(
    samples: list,
    grid: tuple,
    seed: int = 0,
    train_config: cnn.TrainConfig = cnn.TrainConfig(),
    folds: int = FOLD_COUNT,
) -> TidalWindowHyper:
    """Best windowing config by k-fold accuracy; infeasible configs are skipped."""
    best = None
    for idx, hyper in enumerate(grid):
        try:
            result = crossval_accuracy(samples, hyper, derive_seed(seed, "select", idx),
                                        train_config, folds)
        except (SignalTooShort, InvalidInput):
            continue
        if best is None or result.accuracy > best[0]:
            best = (result.accuracy, hyper)
    if best is None:
        raise InvalidDataset("no windowing configuration in the grid was feasible")
    return best[1]


def make_crossval_eval_fn(
    hyper: TidalWindowHyper = DEFAULT_HYPER,
    train_config: cnn.TrainConfig = cnn.TrainConfig(),
    folds: int = FOLD_COUNT,
):
    """Adapter giving sampling_rate_study a (samples, seed) -> accuracy trainer."""

    def evaluate(samples: list, seed: int) -> float:
        return crossval_accuracy(samples, hyper, seed, train_config, folds).accuracy

    return evaluate


def sampling_rate_study(
    train_eval_fn,
    corpus: list,
    rates: tuple = STUDY_RATES,
    seed: int = 0,
) -> list:
    """Decimate, retrain and re-evaluate per rate; rows of accuracy and rate MAE."""
    source_rate = corpus[0].recording.sample_rate_hz
    rows = []
    for rate in rates:
        if rate == source_rate:
            decimated = corpus
        else:
            decimated = [
                type(s)(
                    recording=decimate(s.recording, rate),
                    label=s.label,
                    true_rate_bpm=s.true_rate_bpm,
                )
                for s in corpus
            ]
        accuracy = train_eval_fn(decimated, derive_seed(seed, "study", rate))
        errors = []
        rejected = 0
        for s in decimated:
            if s.label != "tidal" or s.true_rate_bpm is None:
                continue
            result = respiration_rate(prepare_recording(s.recording))
            if result.rejected:
                rejected += 1
            else:
                errors.append(abs(result.rate_bpm - s.true_rate_bpm))
        rows.append(
            {
                "sample_rate_hz": rate,
                "accuracy": float(accuracy),
                "rate_mae_bpm": float(np.mean(errors)) if errors else None,
                "rejected_tidal": rejected,
            }
        )
    return rows


def decision_record(
    decision: TidalDecision, source: str, rate: RespirationResult | None = None
) -> dict:
    """JSON-ready record: {source, label, vote_fraction, rate_bpm, rejected}."""
    return {
        "source": source,
        "label": decision.voted_label,
        "vote_fraction": decision.vote_fraction,
        "rate_bpm": None if rate is None or rate.rejected else rate.rate_bpm,
        "rejected": bool(rate.rejected) if rate is not None else None,
    }


def serialize_cnn(model: CnnModel) -> dict:
    """Versioned JSON container for the trained classifier."""
    return {
        "format": "spiro-cnn",
        "version": 1,
        "class_names": list(model.class_names),
        "window_s": model.window_s,
        "offset_s": model.offset_s,
        "fft_len": model.fft_len,
        "sample_rate_hz": model.sample_rate_hz,
        "mel_bands": model.mel_bands,
        "input_frames": model.input_frames,
        "norm_log_mean": model.norm_log_mean.tolist(),
        "norm_log_std": model.norm_log_std.tolist(),
        "train_seed": model.train_seed,
        "train_config": {
            "conv1_filters": model.train_config.conv1_filters,
            "conv2_filters": model.train_config.conv2_filters,
            "kernel_size": model.train_config.kernel_size,
            "dropout": model.train_config.dropout,
            "epochs": model.train_config.epochs,
            "batch_size": model.train_config.batch_size,
            "learning_rate": model.train_config.learning_rate,
            "momentum": model.train_config.momentum,
        },
        "weights": {k: v.tolist() for k, v in model.weights.items()},
        "weight_shapes": {k: list(v.shape) for k, v in model.weights.items()},
    }


def deserialize_cnn(doc: dict) -> CnnModel:
    if doc.get("format") != "spiro-cnn" or doc.get("version") != 1:
        raise SchemaError("not a spiro-cnn v1 container")
    weights = {
        k: np.array(v, dtype=np.float32).reshape(doc["weight_shapes"][k])
        for k, v in doc["weights"].items()
    }
    return CnnModel(
        class_names=tuple(doc["class_names"]),
        window_s=doc["window_s"],
        offset_s=doc["offset_s"],
        fft_len=doc["fft_len"],
        sample_rate_hz=doc["sample_rate_hz"],
        mel_bands=doc["mel_bands"],
        input_frames=doc["input_frames"],
        norm_log_mean=np.array(doc["norm_log_mean"]),
        norm_log_std=np.array(doc["norm_log_std"]),
        weights=weights,
        train_seed=doc["train_seed"],
        train_config=cnn.TrainConfig(**doc["train_config"]),
    )
