"""Seeded synthetic corpora used as test fixtures and demo inputs.

Three acoustic classes stand in for the human data: band-limited breathing
bursts (tidal), harmonic stacks with speech-like fundamentals (speech), and
broadband noise. Forced-maneuver corpora pair synthetic exhalations with
ground-truth targets derived from the generator parameters.
"""

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import signal as sps

from .seeds import derive_seed
from .signal_core import AudioRecording, synth_breath, synth_forced, synth_noise

CLASS_NAMES = ("noise", "speech", "tidal")
TIDAL_BPM_RANGE = (8.0, 30.0)
SPEECH_F0_RANGE = (100.0, 300.0)
# Breath bursts sit in the upper half of the tidal band, over a low-frequency
# ambient rumble; decimating below the burst band then costs real information.
TIDAL_BURST_BAND_HZ = (200.0, 450.0)
TIDAL_RUMBLE_BAND_HZ = (30.0, 250.0)
TIDAL_RUMBLE_LEVEL = 0.08


@dataclass
class LabeledRecording:
    recording: AudioRecording
    label: str
    true_rate_bpm: float | None = None


def make_speech_sample(
    seed: int, duration_s: float = 20.0, sample_rate_hz: int = 16000
) -> AudioRecording:
    """Syllable-like bursts of harmonic stacks with 100-300 Hz fundamentals."""
    rng = np.random.default_rng(derive_seed(seed, "speech"))
    n = round(duration_s * sample_rate_hz)
    t = np.arange(n) / sample_rate_hz
    samples = np.zeros(n)
    pos = 0.2
    while pos < duration_s - 0.3:
        length = rng.uniform(0.15, 0.45)
        f0 = rng.uniform(*SPEECH_F0_RANGE)
        inside = (t >= pos) & (t < pos + length)
        tt = t[inside] - pos
        gate = np.sin(np.pi * tt / length) ** 2
        burst = np.zeros_like(tt)
        for h in range(1, 7):
            burst += np.sin(2.0 * np.pi * f0 * h * tt + rng.uniform(0, 2 * np.pi)) / h
        samples[inside] += gate * burst
        pos += length + rng.uniform(0.05, 0.3)
    samples += 0.01 * rng.standard_normal(n)
    return AudioRecording(samples=samples, sample_rate_hz=sample_rate_hz, source_id="synth:speech")


def make_tidal_sample(
    seed: int,
    bpm: float,
    duration_s: float = 20.0,
    sample_rate_hz: int = 16000,
    rumble_level: float = TIDAL_RUMBLE_LEVEL,
) -> AudioRecording:
    """Breathing bursts plus band-limited ambient rumble."""
    rec = synth_breath(
        duration_s=duration_s,
        sample_rate_hz=sample_rate_hz,
        bpm=bpm,
        seed=seed,
        band=TIDAL_BURST_BAND_HZ,
    )
    rng = np.random.default_rng(derive_seed(seed, "rumble"))
    rumble = rng.standard_normal(rec.samples.size)
    sos = sps.butter(4, TIDAL_RUMBLE_BAND_HZ, btype="bandpass", fs=sample_rate_hz, output="sos")
    rumble = sps.sosfiltfilt(sos, rumble)
    rumble /= np.abs(rumble).max()
    return rec.replace_samples(rec.samples + rumble_level * rumble)


def make_noise_sample(
    seed: int, duration_s: float = 20.0, sample_rate_hz: int = 16000
) -> AudioRecording:
    """Broadband noise with a randomly drifting amplitude (crowd/traffic-like)."""
    rng = np.random.default_rng(derive_seed(seed, "noise-sample"))
    rec = synth_noise(duration_s=duration_s, sample_rate_hz=sample_rate_hz, seed=seed)
    n = rec.samples.size
    drift_points = rng.uniform(0.4, 1.0, size=8)
    drift = np.interp(np.arange(n), np.linspace(0, n - 1, drift_points.size), drift_points)
    return rec.replace_samples(rec.samples * drift)


def make_tidal_corpus(
    n_per_class: int = 24,
    seed: int = 0,
    duration_s: float = 20.0,
    sample_rate_hz: int = 16000,
) -> list:
    """Balanced 3-class corpus; tidal samples sweep the plausible bpm range."""
    corpus = []
    lo, hi = TIDAL_BPM_RANGE
    for i in range(n_per_class):
        bpm = lo + (hi - lo) * i / max(1, n_per_class - 1)
        bpm = round(bpm * 2) / 2  # half-bpm grid keeps oracles readable
        corpus.append(
            LabeledRecording(
                recording=make_tidal_sample(
                    derive_seed(seed, "tidal", i), bpm, duration_s, sample_rate_hz
                ),
                label="tidal",
                true_rate_bpm=bpm,
            )
        )
        corpus.append(
            LabeledRecording(
                recording=make_speech_sample(
                    derive_seed(seed, "speech", i), duration_s, sample_rate_hz
                ),
                label="speech",
            )
        )
        corpus.append(
            LabeledRecording(
                recording=make_noise_sample(
                    derive_seed(seed, "noise", i), duration_s, sample_rate_hz
                ),
                label="noise",
            )
        )
    return corpus


@dataclass
class ForcedSample:
    recording: AudioRecording
    subject_id: str
    pef_ls: float
    fev1_l: float
    fvc_l: float


def make_forced_sample(seed: int, subject_scale: float, sample_rate_hz: int = 16000) -> ForcedSample:
    """One forced maneuver whose targets derive from the generated true flow.

    The true flow is the generator's amplitude envelope scaled by the
    subject's lung size, so PEF is its peak, FEV1 the first-second integral
    and FVC the total integral (scaled into plausible liter ranges).
    """
    rng = np.random.default_rng(derive_seed(seed, "forced-sample"))
    onset_s = rng.uniform(1.2, 2.0)
    decay_tau_s = rng.uniform(1.0, 2.0)
    amplitude = subject_scale * rng.uniform(0.9, 1.1)
    duration_s = 8.0
    rec = synth_forced(
        duration_s=duration_s,
        sample_rate_hz=sample_rate_hz,
        onset_s=onset_s,
        attack_s=0.06,
        decay_tau_s=decay_tau_s,
        amplitude=amplitude,
        seed=derive_seed(seed, "audio"),
    )
    # Closed-form flow integral of the generator envelope (attack ~ half area).
    attack_s = 0.06
    tail_s = duration_s - onset_s - attack_s
    total = amplitude * (attack_s / 2.0 + decay_tau_s * (1.0 - np.exp(-tail_s / decay_tau_s)))
    first_second = amplitude * (
        attack_s / 2.0 + decay_tau_s * (1.0 - np.exp(-(1.0 - attack_s) / decay_tau_s))
    )
    pef = amplitude * 2.2  # L/s-scaled peak flow proxy
    return ForcedSample(
        recording=rec,
        subject_id="",
        pef_ls=float(pef),
        fev1_l=float(first_second * 1.8),
        fvc_l=float(total * 1.8),
    )


def write_demo_manifest(
    out_dir,
    n_subjects: int = 5,
    seed: int = 0,
    sample_rate_hz: int = 16000,
    positions: tuple = ("R3",),
    masks: tuple = ("n95",),
    share_audio_across_positions: bool = True,
) -> Path:
    """Synthesize a forced+tidal manifest with WAVs under ``out_dir``.

    Each subject gets one forced and one tidal entry per (mask, position).
    With ``share_audio_across_positions`` the same WAV backs every position,
    which keeps position studies interpretable on synthetic data.
    """
    from .ingest_io import MANIFEST_VERSION, save_wav

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(derive_seed(seed, "demo-manifest"))
    entries = []
    for s in range(n_subjects):
        subject = f"s{s:02d}"
        scale = float(rng.uniform(0.6, 1.4))
        health = "unhealthy" if s % 3 == 2 else "healthy"
        bpm = float(10 + (s * 7) % 18)
        for m, mask in enumerate(masks):
            forced_paths = {}
            tidal_paths = {}
            for p, position in enumerate(positions):
                audio_key = 0 if share_audio_across_positions else p
                if audio_key not in forced_paths:
                    sample = make_forced_sample(
                        derive_seed(seed, "forced", subject, mask, audio_key),
                        subject_scale=scale,
                        sample_rate_hz=sample_rate_hz,
                    )
                    path = out_dir / f"{subject}_{mask}_forced_{audio_key}.wav"
                    save_wav(sample.recording, path)
                    forced_paths[audio_key] = (path, sample)
                    tidal_rec = make_tidal_sample(
                        derive_seed(seed, "tidal", subject, mask, audio_key),
                        bpm=bpm,
                        sample_rate_hz=sample_rate_hz,
                    )
                    tpath = out_dir / f"{subject}_{mask}_tidal_{audio_key}.wav"
                    save_wav(tidal_rec, tpath)
                    tidal_paths[audio_key] = tpath
                fpath, sample = forced_paths[audio_key]
                entries.append(
                    {
                        "subject_id": subject,
                        "mask_type": mask,
                        "maneuver": "forced",
                        "sensor_position": position,
                        "audio_path": fpath.name,
                        "pef_ls": sample.pef_ls,
                        "fev1_l": sample.fev1_l,
                        "fvc_l": sample.fvc_l,
                        "health_status": health,
                    }
                )
                entries.append(
                    {
                        "subject_id": subject,
                        "mask_type": mask,
                        "maneuver": "tidal",
                        "sensor_position": position,
                        "audio_path": tidal_paths[audio_key].name,
                        "rr_bpm": bpm,
                        "health_status": health,
                    }
                )
    manifest_path = out_dir / "manifest.json"
    manifest_path.write_text(
        json.dumps({"schema_version": MANIFEST_VERSION, "entries": entries}, indent=2) + "\n"
    )
    return manifest_path
