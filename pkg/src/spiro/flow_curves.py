"""Flow-time, volume-time and flow-volume curves, plus maneuver shape rules.

Flow is the smoothed acoustic envelope in arbitrary proxy units; the curves
are never calibrated to liters (the regression models own the physical
units). Shape validation encodes the visual acceptance criteria as three
ratio rules so that maneuver quality is testable.
"""

import io
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInput
from .signal_core import Envelope

SHAPE_MIN_POINTS = 10

RULE_DESCRIPTIONS = {
    "R1": "peak flow must occur within the first 30 % of exhaled volume",
    "R2": "post-peak flow must be predominantly non-increasing (>= 90 % of deltas)",
    "R3": "terminal flow must fall below 10 % of peak flow (curvilinear tail)",
}


@dataclass
class FlowTimeCurve:
    """Nonnegative flow proxy over time."""

    flow: np.ndarray
    sample_rate_hz: int

    def __post_init__(self):
        self.flow = np.asarray(self.flow, dtype=np.float64)
        if self.flow.ndim != 1 or self.flow.size == 0:
            raise InvalidInput("flow curve must be a non-empty 1-D sequence")
        if np.any(self.flow < 0):
            raise InvalidInput("flow values must be nonnegative")


@dataclass
class VolumeTimeCurve:
    """Cumulative flow proxy (non-decreasing)."""

    volume: np.ndarray
    sample_rate_hz: int


@dataclass
class FlowVolumeCurve:
    """(volume, flow) pairs; ``pef_index`` marks the maximum flow.

    Ties on the maximum resolve to the last index, which makes degenerate
    flat curves fail the early-peak rule instead of slipping past it.
    """

    volume: np.ndarray
    flow: np.ndarray
    pef_index: int
    sample_rate_hz: int

    @property
    def points(self) -> list:
        return list(zip(self.volume.tolist(), self.flow.tolist()))

    @property
    def pef(self) -> float:
        return float(self.flow[self.pef_index])


@dataclass(frozen=True)
class ShapeRules:
    """Thresholds for the three acceptance rules (configuration, not constants)."""

    pef_volume_fraction: float = 0.30
    nonincreasing_fraction: float = 0.90
    delta_tolerance_fraction: float = 0.005
    terminal_flow_fraction: float = 0.10
    terminal_window_fraction: float = 0.02


@dataclass(frozen=True)
class ShapeVerdict:
    accepted: bool
    reasons: tuple = field(default_factory=tuple)


def from_envelope(env: Envelope) -> FlowTimeCurve:
    """Treat a smoothed envelope as the flow-rate proxy."""
    return FlowTimeCurve(flow=env.values, sample_rate_hz=env.sample_rate_hz)


def volume_time(f: FlowTimeCurve) -> VolumeTimeCurve:
    """Cumulative sum of flow over time."""
    return VolumeTimeCurve(volume=np.cumsum(f.flow), sample_rate_hz=f.sample_rate_hz)


def flow_volume(f: FlowTimeCurve) -> FlowVolumeCurve:
    """Pair cumulative volume with instantaneous flow."""
    volume = np.cumsum(f.flow)
    flow = f.flow.copy()
    pef_index = int(flow.size - 1 - np.argmax(flow[::-1]))
    return FlowVolumeCurve(
        volume=volume, flow=flow, pef_index=pef_index, sample_rate_hz=f.sample_rate_hz
    )


def shape_check(c: FlowVolumeCurve, rules: ShapeRules = ShapeRules()) -> ShapeVerdict:
    """Apply the three ratio rules; accepted iff no rule fires.

    All rules are ratios of flow or volume, so the verdict is invariant to
    positive scaling of the flow axis.
    """
    n = c.flow.size
    if n < SHAPE_MIN_POINTS:
        raise InvalidInput(f"need at least {SHAPE_MIN_POINTS} points, got {n}")
    pef = c.pef
    total_volume = float(c.volume[-1])
    reasons = []

    volume_at_peak = float(c.volume[c.pef_index])
    peak_fraction = volume_at_peak / total_volume if total_volume > 0 else 1.0
    if peak_fraction > rules.pef_volume_fraction:
        reasons.append("R1")

    post_peak = c.flow[c.pef_index :]
    deltas = np.diff(post_peak)
    if deltas.size > 0:
        ok = np.mean(deltas <= rules.delta_tolerance_fraction * pef)
        if ok < rules.nonincreasing_fraction:
            reasons.append("R2")

    window = max(1, round(rules.terminal_window_fraction * n))
    terminal = float(np.mean(c.flow[-window:]))
    if not terminal < rules.terminal_flow_fraction * pef:
        reasons.append("R3")

    return ShapeVerdict(accepted=not reasons, reasons=tuple(reasons))


def curve_to_csv(c: FlowVolumeCurve) -> str:
    """Serialize as CSV with columns t_s, flow, volume (for external plotting)."""
    buf = io.StringIO()
    buf.write("t_s,flow,volume\n")
    for k in range(c.flow.size):
        t = k / c.sample_rate_hz
        buf.write(f"{t:.6f},{c.flow[k]:.9g},{c.volume[k]:.9g}\n")
    return buf.getvalue()
