import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spiro import flow_curves as fc
from spiro import signal_core as sc
from spiro.errors import InvalidInput


def curve_from(flow, rate=100):
    return fc.flow_volume(fc.FlowTimeCurve(flow=np.asarray(flow, dtype=float), sample_rate_hz=rate))


def synthetic_curve(seed=5):
    maneuver = sc.synth_forced(seed=seed)
    env = sc.smooth_fir(
        sc.hilbert_envelope(sc.normalize(maneuver)),
        sc.design_kaiser_fir(maneuver.sample_rate_hz),
    )
    return fc.flow_volume(fc.from_envelope(env))


class TestVolumeTime:
    def test_cumulative(self):
        out = fc.volume_time(fc.FlowTimeCurve(flow=np.array([1.0, 1.0, 1.0]), sample_rate_hz=1))
        assert np.allclose(out.volume, [1.0, 2.0, 3.0])

    def test_all_zero(self):
        out = fc.volume_time(fc.FlowTimeCurve(flow=np.zeros(5), sample_rate_hz=1))
        assert np.allclose(out.volume, 0.0)

    @given(st.lists(st.floats(0.0, 100.0), min_size=1, max_size=64))
    @settings(max_examples=50, deadline=None)
    def test_nondecreasing_and_total(self, flow):
        out = fc.volume_time(fc.FlowTimeCurve(flow=np.array(flow), sample_rate_hz=1))
        assert np.all(np.diff(out.volume) >= -1e-12)
        assert out.volume[-1] == pytest.approx(sum(flow))


class TestFlowVolume:
    def test_triangular(self):
        curve = curve_from([0.0, 1.0, 2.0, 1.0, 0.0])
        assert curve.pef_index == 2
        assert curve.volume[-1] == pytest.approx(4.0)

    def test_monotone_decay_peak_first(self):
        assert curve_from([5.0, 4.0, 3.0, 2.0, 1.0]).pef_index == 0

    def test_point_count_preserved(self):
        curve = curve_from(np.linspace(0, 1, 37))
        assert len(curve.points) == 37

    def test_synthetic_maneuver_morphology(self):
        curve = synthetic_curve()
        n = curve.flow.size
        # rapid rise: peak in the first quarter of time; long decaying tail after
        assert curve.pef_index < n / 4
        tail = curve.flow[curve.pef_index :]
        assert tail[-1] < 0.1 * curve.pef
        assert np.mean(np.diff(tail) <= 0.005 * curve.pef) > 0.9


class TestShapeCheck:
    def test_synthetic_maneuver_accepted(self):
        verdict = fc.shape_check(synthetic_curve())
        assert verdict.accepted
        assert verdict.reasons == ()

    def test_truncated_tail_rejected_r3(self):
        curve = synthetic_curve()
        tail = curve.flow.size - curve.pef_index
        keep = curve.pef_index + int(0.6 * tail)
        truncated = curve_from(curve.flow[:keep])
        verdict = fc.shape_check(truncated)
        assert not verdict.accepted
        assert "R3" in verdict.reasons

    def test_flat_constant_rejected_r1_r3(self):
        verdict = fc.shape_check(curve_from(np.full(50, 2.0)))
        assert not verdict.accepted
        assert set(verdict.reasons) == {"R1", "R3"}

    def test_scale_invariance(self):
        curve = synthetic_curve()
        for scale in (0.01, 1.0, 250.0):
            scaled = curve_from(curve.flow * scale)
            assert fc.shape_check(scaled) == fc.shape_check(curve)

    def test_too_few_points(self):
        with pytest.raises(InvalidInput):
            fc.shape_check(curve_from(np.ones(5)))

    def test_accepted_iff_no_reasons(self):
        good = fc.shape_check(synthetic_curve())
        bad = fc.shape_check(curve_from(np.full(50, 2.0)))
        assert good.accepted == (not good.reasons)
        assert bad.accepted == (not bad.reasons)


class TestCsv:
    def test_columns_and_rows(self):
        curve = curve_from([0.0, 1.0, 2.0, 1.0, 0.0], rate=10)
        text = fc.curve_to_csv(curve)
        lines = text.strip().splitlines()
        assert lines[0] == "t_s,flow,volume"
        assert len(lines) == 6
        t, flow, volume = lines[3].split(",")
        assert float(t) == pytest.approx(0.2)
        assert float(flow) == 2.0
        assert float(volume) == 3.0
