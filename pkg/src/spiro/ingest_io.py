"""WAV and accelerometer ingestion, manifests, and report serialization.

The manifest is the adapter between released datasets and the pipelines:
one entry per recording with its ground truth. Loaders never mutate files;
report writers emit byte-identical output for identical inputs.
"""

import csv
import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, InsufficientPeaks, IoError, InvalidInput, ValidationError
from .signal_core import AudioRecording, Envelope, detect_peaks, moving_average
from .tidal import RespirationResult

MANIFEST_VERSION = 1
MASK_TYPES = ("n95", "cloth")
MANEUVERS = ("forced", "tidal")
SENSOR_POSITIONS = ("L1", "C1", "R1", "L3", "R3", "unknown")
HEALTH_STATUSES = ("healthy", "unhealthy")
ACCEL_RATE_HZ = 100
# Fig-5-style smoothing window (samples); the 70-sample convolution variant
# is exposed as an option.
ACCEL_SMOOTH_WINDOW = 20
ACCEL_SMOOTH_WINDOW_ALT = 70
# Dominant-axis selection band: plausible breathing fundamentals.
ACCEL_BREATH_BAND_HZ = (0.1, 0.7)

_PCM_FULL_SCALE = 32768.0


@dataclass
class AccelTrace:
    """Three-axis accelerometer trace at 100 Hz."""

    t_s: np.ndarray
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    rate_hz: int = ACCEL_RATE_HZ

    def __post_init__(self):
        self.t_s = np.asarray(self.t_s, dtype=np.float64)
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64)
        self.z = np.asarray(self.z, dtype=np.float64)
        lengths = {self.t_s.size, self.x.size, self.y.size, self.z.size}
        if len(lengths) != 1 or self.t_s.size == 0:
            raise InvalidInput("accelerometer channels must share one non-zero length")
        if np.any(np.diff(self.t_s) <= 0):
            raise InvalidInput("accelerometer time axis must be strictly increasing")

    @property
    def duration_s(self) -> float:
        return float(self.t_s[-1] - self.t_s[0])


@dataclass
class ManifestEntry:
    subject_id: str
    mask_type: str
    maneuver: str
    audio_path: Path
    sensor_position: str = "unknown"
    pef_ls: float | None = None
    fev1_l: float | None = None
    fvc_l: float | None = None
    rr_bpm: float | None = None
    accel_path: Path | None = None
    health_status: str | None = None
    audio_class: str | None = None  # optional 3-class label for classifier corpora
    demographics: dict = field(default_factory=dict)

    @property
    def groups(self) -> dict:
        out = {"mask_type": self.mask_type, "sensor_position": self.sensor_position}
        if self.health_status:
            out["health_status"] = self.health_status
        return out


def load_wav(path) -> AudioRecording:
    """Read a 16-bit PCM mono WAV; samples scaled into [-1, 1)."""
    data = Path(path).read_bytes()
    if len(data) < 12 or data[0:4] != b"RIFF":
        raise FormatError("missing RIFF header", byte_offset=0)
    if data[8:12] != b"WAVE":
        raise FormatError("not a WAVE file", byte_offset=8)

    pos = 12
    fmt_offset = None
    sample_rate = None
    payload = None
    while pos + 8 <= len(data):
        chunk_id = data[pos : pos + 4]
        (chunk_size,) = struct.unpack_from("<I", data, pos + 4)
        body = pos + 8
        if chunk_id == b"fmt ":
            if chunk_size < 16:
                raise FormatError("fmt chunk too short", byte_offset=pos + 4)
            fmt_offset = body
            audio_format, channels, sample_rate, _, _, bits = struct.unpack_from(
                "<HHIIHH", data, body
            )
            if audio_format != 1:
                raise FormatError(
                    f"compressed WAV (format {audio_format}) not supported", byte_offset=body
                )
            if channels != 1:
                raise FormatError(f"need mono audio, got {channels} channels", byte_offset=body + 2)
            if bits != 16:
                raise FormatError(f"need 16-bit PCM, got {bits}-bit", byte_offset=body + 14)
        elif chunk_id == b"data":
            payload = data[body : body + chunk_size]
            if len(payload) < chunk_size:
                raise FormatError("data chunk truncated", byte_offset=body)
        pos = body + chunk_size + (chunk_size & 1)
    if fmt_offset is None:
        raise FormatError("no fmt chunk found", byte_offset=len(data))
    if payload is None:
        raise FormatError("no data chunk found", byte_offset=len(data))

    samples = np.frombuffer(payload[: len(payload) - (len(payload) % 2)], dtype="<i2")
    if samples.size == 0:
        raise FormatError("empty data chunk", byte_offset=len(data))
    return AudioRecording(
        samples=samples.astype(np.float64) / _PCM_FULL_SCALE,
        sample_rate_hz=int(sample_rate),
        source_id=str(path),
    )


def save_wav(rec: AudioRecording, path) -> Path:
    """Write 16-bit PCM mono; values outside [-1, 1) are clipped."""
    path = Path(path)
    quantized = np.clip(np.round(rec.samples * _PCM_FULL_SCALE), -32768, 32767).astype("<i2")
    body = quantized.tobytes()
    header = b"RIFF" + struct.pack("<I", 36 + len(body)) + b"WAVE"
    header += b"fmt " + struct.pack(
        "<IHHIIHH", 16, 1, 1, rec.sample_rate_hz, rec.sample_rate_hz * 2, 2, 16
    )
    header += b"data" + struct.pack("<I", len(body))
    try:
        path.write_bytes(header + body)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}")
    return path


def dominant_axis(trace: AccelTrace) -> np.ndarray:
    """Axis with the most band power in the breathing band (0.1-0.7 Hz)."""
    best = None
    for axis in (trace.x, trace.y, trace.z):
        centered = axis - axis.mean()
        spectrum = np.abs(np.fft.rfft(centered)) ** 2
        freqs = np.fft.rfftfreq(centered.size, d=1.0 / trace.rate_hz)
        band = (freqs >= ACCEL_BREATH_BAND_HZ[0]) & (freqs <= ACCEL_BREATH_BAND_HZ[1])
        power = float(spectrum[band].sum())
        if best is None or power > best[0]:
            best = (power, axis)
    return best[1]


def accel_rr(trace: AccelTrace, smoothing_window: int = ACCEL_SMOOTH_WINDOW) -> RespirationResult:
    """Ground-truth respiration rate from smoothed chest-motion peaks."""
    if trace.duration_s < 10.0:
        raise InvalidInput(f"need >= 10 s of accelerometer data, got {trace.duration_s:.1f} s")
    axis = dominant_axis(trace)
    smoothed = moving_average(axis, min(smoothing_window, axis.size))
    span = float(np.ptp(smoothed))
    env = Envelope(values=smoothed - smoothed.min(), sample_rate_hz=trace.rate_hz)
    try:
        peaks = detect_peaks(env, min_separation_s=1.5, min_prominence=0.05 * span)
    except InsufficientPeaks:
        return RespirationResult(rate_bpm=None, peak_set=None, rejected=True)
    return RespirationResult(
        rate_bpm=60.0 / peaks.mean_peak_to_peak_s, peak_set=peaks, rejected=False
    )


def load_accel(path) -> AccelTrace:
    """CSV with t_s,x,y,z columns at 100 Hz."""
    try:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            rows = list(reader)
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}")
    if not rows:
        raise FormatError(f"empty accelerometer file {path}")
    try:
        cols = {k: np.array([float(r[k]) for r in rows]) for k in ("t_s", "x", "y", "z")}
    except (KeyError, TypeError, ValueError):
        raise FormatError(f"{path} must have numeric t_s,x,y,z columns")
    return AccelTrace(t_s=cols["t_s"], x=cols["x"], y=cols["y"], z=cols["z"])


_ENTRY_NUMERIC = ("pef_ls", "fev1_l", "fvc_l", "rr_bpm")


def _entry_from_record(record: dict, index: int, base_dir: Path) -> ManifestEntry:
    def fail(msg):
        subject = record.get("subject_id", "?")
        raise ValidationError(f"manifest entry {index} (subject {subject}): {msg}")

    subject = str(record.get("subject_id") or "").strip()
    if not subject:
        fail("missing subject_id")
    mask = str(record.get("mask_type") or "").strip()
    if mask not in MASK_TYPES:
        fail(f"mask_type must be one of {MASK_TYPES}, got {mask!r}")
    maneuver = str(record.get("maneuver") or "").strip()
    if maneuver not in MANEUVERS:
        fail(f"maneuver must be one of {MANEUVERS}, got {maneuver!r}")
    position = str(record.get("sensor_position") or "unknown").strip()
    if position not in SENSOR_POSITIONS:
        fail(f"sensor_position must be one of {SENSOR_POSITIONS}, got {position!r}")
    health = record.get("health_status") or None
    if health is not None and health not in HEALTH_STATUSES:
        fail(f"health_status must be one of {HEALTH_STATUSES}, got {health!r}")

    audio = str(record.get("audio_path") or "").strip()
    if not audio:
        fail("missing audio_path")
    audio_path = (base_dir / audio).resolve()
    if not audio_path.exists():
        fail(f"audio file does not exist: {audio_path}")

    numbers = {}
    for key in _ENTRY_NUMERIC:
        raw = record.get(key)
        if raw in (None, ""):
            numbers[key] = None
            continue
        try:
            numbers[key] = float(raw)
        except (TypeError, ValueError):
            fail(f"{key} must be numeric, got {raw!r}")
        if numbers[key] is not None and numbers[key] <= 0:
            fail(f"{key} must be positive, got {numbers[key]}")

    accel_path = None
    raw_accel = str(record.get("accel_path") or "").strip()
    if raw_accel:
        accel_path = (base_dir / raw_accel).resolve()
        if not accel_path.exists():
            fail(f"accelerometer file does not exist: {accel_path}")

    if maneuver == "forced":
        missing = [k for k in ("pef_ls", "fev1_l", "fvc_l") if numbers[k] is None]
        if missing:
            fail(f"forced entry missing spirometer truth: {', '.join(missing)}")
    else:
        if numbers["rr_bpm"] is None and accel_path is None:
            fail("tidal entry needs rr_bpm or accel_path ground truth")

    audio_class = record.get("audio_class") or None
    demographics = record.get("demographics") or {}
    if not isinstance(demographics, dict):
        fail("demographics must be a mapping")

    return ManifestEntry(
        subject_id=subject,
        mask_type=mask,
        maneuver=maneuver,
        audio_path=audio_path,
        sensor_position=position,
        pef_ls=numbers["pef_ls"],
        fev1_l=numbers["fev1_l"],
        fvc_l=numbers["fvc_l"],
        rr_bpm=numbers["rr_bpm"],
        accel_path=accel_path,
        health_status=health,
        audio_class=audio_class,
        demographics=demographics,
    )


def load_manifest(path) -> list:
    """Validated manifest entries from a JSON or CSV file."""
    path = Path(path)
    base_dir = path.parent
    try:
        text = path.read_text()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}")

    if path.suffix.lower() == ".json":
        doc = json.loads(text)
        if doc.get("schema_version") != MANIFEST_VERSION:
            raise ValidationError(
                f"manifest schema_version must be {MANIFEST_VERSION}, got {doc.get('schema_version')!r}"
            )
        records = doc.get("entries", [])
    else:
        records = list(csv.DictReader(io.StringIO(text)))
    if not records:
        raise ValidationError(f"manifest {path} contains no entries")

    entries = [_entry_from_record(rec, i, base_dir) for i, rec in enumerate(records)]
    seen = {}
    for i, entry in enumerate(entries):
        key = (entry.subject_id, entry.maneuver, entry.mask_type, entry.sensor_position)
        if key in seen:
            raise ValidationError(
                f"manifest entries {seen[key]} and {i} duplicate key {key}"
            )
        seen[key] = i
    return entries


def write_json(payload, path) -> Path:
    """Deterministic JSON: fixed key order from construction, 2-space indent."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(payload, indent=2) + "\n")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}")
    return path


def write_csv(rows: list, fieldnames: list, path) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=fieldnames)
            writer.writeheader()
            writer.writerows(rows)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}")
    return path


def emit_report(report, out_dir, fmt: str = "json", stem: str = "report") -> list:
    """Write an EvalReport or a study table; returns the created paths.

    ``fmt`` selects json or csv. EvalReports in csv mode produce one file of
    per-subject errors and one of Bland-Altman points.
    """
    out_dir = Path(out_dir)
    if fmt not in ("json", "csv"):
        raise InvalidInput(f"format must be json or csv, got {fmt!r}")
    written = []
    if hasattr(report, "to_dict"):  # EvalReport
        if fmt == "json":
            written.append(write_json(report.to_dict(), out_dir / f"{stem}.json"))
        else:
            subjects = sorted(report.per_subject_percent_error)
            written.append(
                write_csv(
                    [
                        {"subject_id": s, "percent_error": repr(report.per_subject_percent_error[s])}
                        for s in subjects
                    ],
                    ["subject_id", "percent_error"],
                    out_dir / f"{stem}_per_subject.csv",
                )
            )
            written.append(
                write_csv(
                    [
                        {"mean_of_pair": repr(m), "difference": repr(d)}
                        for m, d in report.bland_altman.points
                    ],
                    ["mean_of_pair", "difference"],
                    out_dir / f"{stem}_bland_altman.csv",
                )
            )
    elif isinstance(report, list):  # study table rows
        if fmt == "json":
            written.append(write_json(report, out_dir / f"{stem}.json"))
        else:
            fieldnames = list(report[0].keys())
            rows = [{k: ("" if v is None else repr(v) if isinstance(v, float) else v) for k, v in r.items()} for r in report]
            written.append(write_csv(rows, fieldnames, out_dir / f"{stem}.csv"))
    else:
        raise InvalidInput(f"cannot emit report of type {type(report).__name__}")
    return written
