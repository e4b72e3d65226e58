"""Forced-maneuver pipeline composition and manifest-to-dataset assembly."""

from dataclasses import dataclass

from .errors import OnsetNotFound, RejectedManeuver, SignalTooShort
from .features import FeatureVector, FrameConfig, MelConfig, assemble
from .flow_curves import (
    FlowTimeCurve,
    FlowVolumeCurve,
    ShapeRules,
    ShapeVerdict,
    VolumeTimeCurve,
    flow_volume,
    from_envelope,
    shape_check,
    volume_time,
)
from .ingest_io import load_wav
from .learn import DataRow, Dataset
from .signal_core import (
    AudioRecording,
    ENVELOPE_CUTOFF_HZ,
    Envelope,
    ONSET_THRESHOLD_FRACTION,
    clip_forced,
    design_kaiser_fir,
    detect_exhalation_start,
    hilbert_envelope,
    normalize,
    smooth_fir,
)

TARGET_FIELDS = {"PEF": "pef_ls", "FEV1": "fev1_l", "FVC": "fvc_l"}


@dataclass
class ForcedAnalysis:
    """Everything derived from one forced maneuver recording."""

    recording: AudioRecording  # normalized and clipped
    onset: int  # sample index within `recording`
    envelope: Envelope  # smoothed flow proxy
    flow: FlowTimeCurve
    volume: VolumeTimeCurve
    curve: FlowVolumeCurve
    verdict: ShapeVerdict


def analyze_forced(
    rec: AudioRecording,
    threshold_fraction: float = ONSET_THRESHOLD_FRACTION,
    cutoff_hz: float = ENVELOPE_CUTOFF_HZ,
    rules: ShapeRules = ShapeRules(),
) -> ForcedAnalysis:
    """Normalize, clip around the onset, extract curves, and check shape."""
    normalized = normalize(rec)
    onset = detect_exhalation_start(normalized, threshold_fraction)
    clipped = clip_forced(normalized, onset)
    onset_local = detect_exhalation_start(clipped, threshold_fraction)
    envelope = smooth_fir(
        hilbert_envelope(clipped), design_kaiser_fir(clipped.sample_rate_hz), cutoff_hz
    )
    flow = from_envelope(envelope)
    curve = flow_volume(flow)
    return ForcedAnalysis(
        recording=clipped,
        onset=onset_local,
        envelope=envelope,
        flow=flow,
        volume=volume_time(flow),
        curve=curve,
        verdict=shape_check(curve, rules),
    )


def maneuver_features(
    analysis: ForcedAnalysis,
    target: str,
    frame_cfg: FrameConfig = FrameConfig(),
    mel_cfg: MelConfig = MelConfig(),
) -> FeatureVector:
    """Target-specific feature vector for an analyzed (and accepted) maneuver."""
    return assemble(
        analysis.recording,
        analysis.curve,
        target,
        onset=analysis.onset,
        frame_cfg=frame_cfg,
        mel_cfg=mel_cfg,
        verdict=analysis.verdict,
    )


def build_forced_dataset(
    entries: list,
    target: str,
    frame_cfg: FrameConfig = FrameConfig(),
    mel_cfg: MelConfig = MelConfig(),
    rules: ShapeRules = ShapeRules(),
) -> tuple:
    """(Dataset, rejected) from the forced entries of a manifest.

    Maneuvers failing the shape rules are excluded from training; subjects
    with no surviving maneuver are recorded on the dataset. ``rejected`` maps
    each skipped audio path to the reason.
    """
    target_field = TARGET_FIELDS[target]
    rows = []
    rejected = {}
    all_subjects = set()
    kept_subjects = set()
    for entry in entries:
        if entry.maneuver != "forced":
            continue
        all_subjects.add(entry.subject_id)
        rec = load_wav(entry.audio_path)
        try:
            analysis = analyze_forced(rec, rules=rules)
            fv = maneuver_features(analysis, target, frame_cfg, mel_cfg)
        except (RejectedManeuver, OnsetNotFound, SignalTooShort) as exc:
            rejected[str(entry.audio_path)] = f"{type(exc).__name__}: {exc}"
            continue
        rows.append(
            DataRow(
                subject_id=entry.subject_id,
                features=fv,
                target=float(getattr(entry, target_field)),
                groups=entry.groups,
            )
        )
        kept_subjects.add(entry.subject_id)
    excluded = tuple(sorted(all_subjects - kept_subjects))
    dataset = Dataset(rows=rows, target_kind=target, excluded_subjects=excluded)
    return dataset, rejected
