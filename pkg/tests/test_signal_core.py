import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spiro import signal_core as sc
from spiro.errors import InsufficientPeaks, InvalidInput, OnsetNotFound, SignalTooShort


def rec(samples, rate=16000):
    return sc.AudioRecording(samples=np.asarray(samples, dtype=float), sample_rate_hz=rate)


def tone(freq, duration_s, rate, amplitude=1.0):
    t = np.arange(round(duration_s * rate)) / rate
    return amplitude * np.sin(2 * np.pi * freq * t)


def spectrum_amplitude(x, freq, rate):
    windowed = x * np.hanning(x.size)
    mags = np.abs(np.fft.rfft(windowed))
    freqs = np.fft.rfftfreq(x.size, 1.0 / rate)
    return mags[np.argmin(np.abs(freqs - freq))]


class TestNormalize:
    def test_scales_by_max_abs(self):
        out = sc.normalize(rec([0.0, 0.5, -2.0]))
        assert np.allclose(out.samples, [0.0, 0.25, -1.0])

    def test_all_zero_unchanged(self):
        out = sc.normalize(rec([0.0, 0.0, 0.0]))
        assert np.array_equal(out.samples, [0.0, 0.0, 0.0])

    @given(st.lists(st.floats(-1e6, 1e6), min_size=2, max_size=64),
           st.floats(0.001, 1000.0))
    @settings(max_examples=50, deadline=None)
    def test_idempotent_and_scale_invariant(self, samples, scale):
        base = sc.normalize(rec(samples))
        again = sc.normalize(base)
        scaled = sc.normalize(rec(np.asarray(samples) * scale))
        assert np.allclose(base.samples, again.samples, atol=1e-12)
        assert np.allclose(base.samples, scaled.samples, atol=1e-9)

    def test_empty_rejected(self):
        with pytest.raises(InvalidInput):
            sc.AudioRecording(samples=np.array([]), sample_rate_hz=16000)


class TestOnsetDetection:
    def test_step_function(self):
        rate = 16000
        x = np.concatenate([np.zeros(2 * rate), np.ones(2 * rate)])
        onset = sc.detect_exhalation_start(rec(x), 0.1)
        assert abs(onset - 2 * rate) <= round(0.030 * rate)

    def test_constant_signal_onset_zero(self):
        assert sc.detect_exhalation_start(rec(np.ones(16000)), 0.1) == 0

    def test_synth_forced_onset_within_45ms(self):
        rate = 16000
        maneuver = sc.synth_forced(onset_s=1.5, sample_rate_hz=rate, seed=5)
        onset = sc.detect_exhalation_start(sc.normalize(maneuver))
        assert abs(onset - 1.5 * rate) <= 0.045 * rate

    def test_silence_raises(self):
        with pytest.raises(OnsetNotFound):
            sc.detect_exhalation_start(rec(np.zeros(16000)), 0.1)

    def test_bad_threshold(self):
        with pytest.raises(InvalidInput):
            sc.detect_exhalation_start(rec(np.ones(100)), 1.5)


class TestClipForced:
    def test_one_second_preroll(self):
        rate = 16000
        clipped = sc.clip_forced(rec(np.arange(8 * rate, dtype=float)), onset=2 * rate)
        assert clipped.samples.size == 7 * rate
        assert clipped.samples[0] == 1 * rate  # started at the 1 s mark

    def test_clamped_at_zero(self):
        rate = 16000
        clipped = sc.clip_forced(rec(np.arange(8 * rate, dtype=float)), onset=rate // 2)
        assert clipped.samples[0] == 0.0
        assert clipped.samples.size == 8 * rate

    def test_onset_at_last_sample(self):
        rate = 16000
        n = 8 * rate
        clipped = sc.clip_forced(rec(np.arange(n, dtype=float)), onset=n - 1)
        assert clipped.samples.size == rate + 1

    def test_out_of_range(self):
        with pytest.raises(InvalidInput):
            sc.clip_forced(rec(np.ones(100)), onset=100)


class TestHilbertEnvelope:
    def test_pure_sine_amplitude(self):
        rate = 16000
        env = sc.hilbert_envelope(rec(tone(440, 1.0, rate, amplitude=0.7)))
        interior = env.values[rate // 10 : -rate // 10]
        assert np.max(np.abs(interior - 0.7) / 0.7) < 0.01

    def test_zero_signal(self):
        env = sc.hilbert_envelope(rec(np.zeros(1000)))
        assert np.allclose(env.values, 0.0)

    def test_too_short(self):
        with pytest.raises(InvalidInput):
            sc.hilbert_envelope(rec(np.array([1.0])))

    def test_positive_scaling_linearity(self):
        x = tone(300, 0.5, 16000) + 0.3 * tone(700, 0.5, 16000)
        e1 = sc.hilbert_envelope(rec(x)).values
        e3 = sc.hilbert_envelope(rec(3.0 * x)).values
        assert np.allclose(e3, 3.0 * e1, rtol=1e-9)


class TestKaiserFir:
    def test_transition_width_at_12k(self):
        spec = sc.design_kaiser_fir(12000)
        assert spec.transition_width_normalized == pytest.approx(2.0 / 12000)
        assert spec.stopband_attenuation_db == 10.0

    def test_order_grows_with_rate(self):
        assert sc.design_kaiser_fir(16000).order > sc.design_kaiser_fir(12000).order

    @pytest.mark.parametrize("rate", [12000, 16000])
    def test_stopband_attenuation(self, rate):
        spec = sc.design_kaiser_fir(rate)
        x = tone(100.0, 3.0, rate) + 2.0  # stopband tone above the 10 Hz cutoff
        out = sc.smooth_fir(sc.Envelope(values=x, sample_rate_hz=rate), spec)
        before = spectrum_amplitude(x, 100.0, rate)
        after = spectrum_amplitude(out.values, 100.0, rate)
        assert 20 * np.log10(before / max(after, 1e-30)) >= 10.0


class TestSmoothFir:
    def test_dc_passes_unchanged(self):
        rate = 12000
        spec = sc.design_kaiser_fir(rate)
        env = sc.Envelope(values=np.full(3 * rate, 0.5), sample_rate_hz=rate)
        out = sc.smooth_fir(env, spec)
        assert np.max(np.abs(out.values - 0.5)) < 1e-6

    def test_noise_variance_reduced(self):
        rate = 12000
        rng = np.random.default_rng(0)
        values = np.abs(rng.standard_normal(3 * rate))
        out = sc.smooth_fir(sc.Envelope(values=values, sample_rate_hz=rate),
                            sc.design_kaiser_fir(rate))
        assert out.values.var() < values.var()

    def test_signal_shorter_than_filter(self):
        rate = 12000
        spec = sc.design_kaiser_fir(rate)
        short = sc.Envelope(values=np.ones(spec.order // 2), sample_rate_hz=rate)
        with pytest.raises(SignalTooShort):
            sc.smooth_fir(short, spec)

    def test_zero_phase_peak_unshifted(self):
        rate = 12000
        t = np.arange(3 * rate) / rate
        pulse = np.exp(-0.5 * ((t - 1.5) / 0.15) ** 2)
        out = sc.smooth_fir(sc.Envelope(values=pulse, sample_rate_hz=rate),
                            sc.design_kaiser_fir(rate))
        assert abs(int(np.argmax(out.values)) - int(np.argmax(pulse))) <= 1


class TestBandpassTidal:
    @pytest.mark.parametrize(
        "freq,passes",
        [(200.0, True), (2000.0, False), (10.0, False)],
    )
    def test_band_edges(self, freq, passes):
        rate = 16000
        x = tone(freq, 2.0, rate)
        out = sc.bandpass_tidal(rec(x, rate))
        gain = spectrum_amplitude(out.samples, freq, rate) / spectrum_amplitude(x, freq, rate)
        if passes:
            assert 0.9 <= gain <= 1.0 + 1e-9
        else:
            assert 20 * np.log10(1.0 / max(gain, 1e-30)) >= 20.0

    def test_low_rate_rejected(self):
        with pytest.raises(InvalidInput):
            sc.bandpass_tidal(rec(np.ones(1000), rate=1000))

    def test_zero_phase_burst_peak_unshifted(self):
        rate = 16000
        t = np.arange(2 * rate) / rate
        burst = np.exp(-0.5 * ((t - 1.0) / 0.05) ** 2) * np.sin(2 * np.pi * 200 * t)
        out = sc.bandpass_tidal(rec(burst, rate))
        peak_in = np.argmax(sc.hilbert_envelope(rec(burst, rate)).values)
        peak_out = np.argmax(sc.hilbert_envelope(out).values)
        assert abs(int(peak_in) - int(peak_out)) <= 1


class TestMovingAverage:
    def test_constant_unchanged(self):
        assert np.allclose(sc.moving_average(np.full(10, 3.0), 4), 3.0)

    def test_hand_example(self):
        out = sc.moving_average(np.array([0.0, 0.0, 3.0, 0.0, 0.0]), 3)
        assert np.allclose(out, [0.0, 1.0, 1.0, 1.0, 0.0])

    def test_alternating_window_two(self):
        x = np.array([1.0, -1.0] * 5)
        out = sc.moving_average(x, 2)
        assert np.allclose(out[:-1], 0.0)

    def test_window_too_large(self):
        with pytest.raises(InvalidInput):
            sc.moving_average(np.ones(3), 4)


class TestDetectPeaks:
    def test_periodic_envelope(self):
        rate = 100
        t = np.arange(20 * rate) / rate
        env = sc.Envelope(values=1.0 + np.sin(2 * np.pi * t / 4.0), sample_rate_hz=rate)
        peaks = sc.detect_peaks(env)
        assert len(peaks.indices) == 5
        assert peaks.mean_peak_to_peak_s == pytest.approx(4.0, abs=0.05)

    def test_all_zero_rejected(self):
        env = sc.Envelope(values=np.zeros(2000), sample_rate_hz=100)
        with pytest.raises(InsufficientPeaks):
            sc.detect_peaks(env)

    def test_two_gaussian_bumps(self):
        rate = 100
        t = np.arange(10 * rate) / rate
        values = np.exp(-0.5 * ((t - 3.0) / 0.3) ** 2) + np.exp(-0.5 * ((t - 6.0) / 0.3) ** 2)
        peaks = sc.detect_peaks(sc.Envelope(values=values, sample_rate_hz=rate))
        assert len(peaks.indices) == 2
        assert peaks.mean_peak_to_peak_s == pytest.approx(3.0, abs=0.05)

    @pytest.mark.parametrize("bpm", [10, 15, 24])
    def test_breath_gap_within_5_percent(self, bpm):
        breath = sc.synth_breath(bpm=bpm, duration_s=20, seed=8)
        env = sc.smooth_fir(sc.hilbert_envelope(breath),
                            sc.design_kaiser_fir(breath.sample_rate_hz), cutoff_hz=2.0)
        peaks = sc.detect_peaks(env)
        assert abs(peaks.mean_peak_to_peak_s - 60.0 / bpm) <= 0.05 * (60.0 / bpm)


class TestDecimate:
    def test_halves_sample_count(self):
        out = sc.decimate(rec(np.ones(16000)), 8000)
        assert abs(out.samples.size - 8000) <= 1
        assert out.sample_rate_hz == 8000

    def test_inband_tone_survives(self):
        rate = 16000
        x = tone(100.0, 2.0, rate)
        out = sc.decimate(rec(x, rate), 1000)
        amp = spectrum_amplitude(out.samples, 100.0, 1000) / (out.samples.size / x.size)
        reference = spectrum_amplitude(x, 100.0, rate)
        assert abs(amp - reference) / reference < 0.05

    def test_out_of_band_tone_suppressed(self):
        rate = 16000
        x = tone(3000.0, 2.0, rate)
        out = sc.decimate(rec(x, rate), 4000)
        # 3 kHz aliases to 1 kHz at a 4 kHz rate; all residual bins must be small
        mags = np.abs(np.fft.rfft(out.samples * np.hanning(out.samples.size)))
        reference = spectrum_amplitude(x, 3000.0, rate) * (out.samples.size / x.size)
        assert 20 * np.log10(reference / max(mags.max(), 1e-30)) >= 20.0

    def test_alias_suppression_relative_to_passband(self):
        rate = 16000
        x = tone(100.0, 2.0, rate) + tone(3000.0, 2.0, rate)
        out = sc.decimate(rec(x, rate), 4000)
        passband = spectrum_amplitude(out.samples, 100.0, 4000)
        alias = spectrum_amplitude(out.samples, 1000.0, 4000)
        assert 20 * np.log10(passband / max(alias, 1e-30)) >= 20.0

    def test_non_divisor_rejected(self):
        with pytest.raises(InvalidInput):
            sc.decimate(rec(np.ones(16000)), 7000)


class TestSynth:
    def test_breath_burst_count(self):
        breath = sc.synth_breath(bpm=15, duration_s=20, seed=1)
        env = sc.smooth_fir(sc.hilbert_envelope(breath),
                            sc.design_kaiser_fir(breath.sample_rate_hz), cutoff_hz=2.0)
        active = env.values > 0.5 * env.values.max()
        bursts = int(np.sum(np.diff(active.astype(int)) == 1) + active[0])
        assert bursts == 5

    def test_am_spectral_peak_at_carrier(self):
        am = sc.synth_am(carrier_hz=1000.0, message_hz=2.0)
        mags = np.abs(np.fft.rfft(am.samples))
        freqs = np.fft.rfftfreq(am.samples.size, 1.0 / am.sample_rate_hz)
        assert abs(freqs[np.argmax(mags)] - 1000.0) < 3.0

    def test_noise_reproducible(self):
        a = sc.synth_noise(seed=77)
        b = sc.synth_noise(seed=77)
        assert np.array_equal(a.samples, b.samples)

    def test_unknown_kind(self):
        with pytest.raises(InvalidInput):
            sc.synth("chirp", duration_s=1.0)

    def test_invalid_params(self):
        with pytest.raises(InvalidInput):
            sc.synth("breath", bpm=-3)
