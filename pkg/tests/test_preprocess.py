"""Channel rejection, spherical repair, the band-pass gates, and epoching."""

import numpy as np
import pytest

from eegspat import preprocess
from eegspat.data import ContinuousRecording, Event
from eegspat.errors import ConfigError, PreprocessingError
from eegspat.montage import get_montage
from eegspat.spherical import interpolate_at


def recording(data, events=(), rate=500.0):
    return ContinuousRecording(np.asarray(data, dtype=np.float64), rate, list(events))


class TestRejectBadChannels:
    def test_identical_noise_levels_keep_everything(self):
        rng = np.random.default_rng(0)
        base = rng.normal(size=2000)
        rec = recording(np.tile(base, (64, 1)))
        assert not preprocess.reject_bad_channels(rec).any()

    def test_high_variance_channel_rejected(self):
        rng = np.random.default_rng(1)
        data = rng.normal(size=(64, 2000))
        data[17] *= 100.0
        bad = preprocess.reject_bad_channels(recording(data))
        assert bad[17]
        assert bad.sum() == 1

    def test_flat_channel_rejected(self):
        rng = np.random.default_rng(2)
        data = rng.normal(size=(64, 2000))
        data[5] = 0.0
        bad = preprocess.reject_bad_channels(recording(data))
        assert bad[5]
        assert not bad[[i for i in range(64) if i != 5]].any()

    def test_all_bad_is_an_error(self):
        rng = np.random.default_rng(3)
        data = rng.normal(size=(4, 500))
        with pytest.raises(PreprocessingError):
            preprocess.reject_bad_channels(recording(data), z_low=1.0, z_high=-1.0)


class TestSphericalInterpolate:
    def test_empty_mask_returns_recording_unchanged(self):
        rng = np.random.default_rng(4)
        rec = recording(rng.normal(size=(64, 100)))
        out = preprocess.spherical_interpolate(rec, np.zeros(64, dtype=bool))
        assert out is rec

    def test_constant_field_reproduced(self):
        rec = recording(np.full((64, 10), 3.7))
        bad = np.zeros(64, dtype=bool)
        bad[[3, 40]] = True
        out = preprocess.spherical_interpolate(rec, bad)
        assert np.abs(out.data[[3, 40]] - 3.7).max() < 1e-6

    def test_good_channels_untouched(self):
        rng = np.random.default_rng(5)
        rec = recording(rng.normal(size=(64, 50)))
        bad = np.zeros(64, dtype=bool)
        bad[10] = True
        out = preprocess.spherical_interpolate(rec, bad)
        good = ~bad
        assert out.data[good].tobytes() == rec.data[good].tobytes()

    def test_smooth_field_leave_one_out(self):
        # dipole-like potential sampled on the montage
        montage = get_montage()
        dipole = np.array([0.3, 0.5, 0.8])
        dipole /= np.linalg.norm(dipole)
        field = montage.positions @ dipole + 0.4 * (montage.positions @ dipole) ** 2
        errors = []
        for held_out in (0, 13, 31, 50, 63):
            bad = np.zeros(64, dtype=bool)
            bad[held_out] = True
            rec = recording(field[:, None] * np.ones((1, 3)))
            out = preprocess.spherical_interpolate(rec, bad)
            truth = field[held_out]
            errors.append(abs(out.data[held_out, 0] - truth))
        rms_scale = np.sqrt(np.mean(field**2))
        assert np.sqrt(np.mean(np.square(errors))) < 0.10 * rms_scale

    def test_needs_four_good_channels(self):
        rec = recording(np.zeros((64, 10)))
        bad = np.ones(64, dtype=bool)
        bad[:3] = False
        with pytest.raises(PreprocessingError):
            preprocess.spherical_interpolate(rec, bad)


def measure_gain(freq_hz, rate=500.0, seconds=40.0):
    """Amplitude ratio through the band-pass at one frequency, FFT-measured."""
    t = np.arange(int(seconds * rate)) / rate
    x = np.sin(2 * np.pi * freq_hz * t)
    rec = recording(x[None, :], rate=rate)
    y = preprocess.bandpass(rec).data[0]
    # ignore filter-length edges
    half = 2047 // 2
    window = np.hanning(len(t) - 2 * half)
    spec_in = np.abs(np.fft.rfft(x[half:-half] * window))
    spec_out = np.abs(np.fft.rfft(y[half:-half] * window))
    k = int(round(freq_hz * (len(t) - 2 * half) / rate))
    return spec_out[k] / spec_in[k]


class TestBandpass:
    def test_dc_removed(self):
        rec = recording(np.full((2, 20000), 5.0))
        out = preprocess.bandpass(rec)
        assert np.abs(out.data).max() < 0.05  # < 1% of the DC input

    def test_passband_gain_at_10_hz(self):
        gain = measure_gain(10.0)
        assert 0.89 <= gain <= 1.12  # within +-1 dB

    def test_stopband_at_60_hz(self):
        assert measure_gain(60.0) <= 0.1

    def test_stopband_at_0_1_hz(self):
        assert measure_gain(0.1, seconds=80.0) <= 0.1

    def test_zero_phase_keeps_pulse_symmetric(self):
        rate = 500.0
        n = 20000
        center = n // 2
        x = np.zeros(n)
        width = 200
        x[center - width : center + width + 1] = np.hanning(2 * width + 1)
        out = preprocess.bandpass(recording(x[None, :], rate=rate)).data[0]
        left = out[center - 1500 : center]
        right = out[center + 1 : center + 1501][::-1]
        asym = np.abs(left - right).max() / np.abs(out).max()
        assert asym < 1e-6

    def test_nyquist_guard(self):
        rec = recording(np.zeros((1, 10000)), rate=80.0)
        with pytest.raises(ConfigError):
            preprocess.bandpass(rec, lo=1.0, hi=45.0)


class TestEpoch:
    def test_default_window_yields_350_points(self):
        rng = np.random.default_rng(6)
        events = [Event(500 + 1200 * i, (i % 5) + 1, i % 2) for i in range(4)]
        rec = recording(rng.normal(size=(64, 6000)), events)
        ds = preprocess.epoch(rec)
        assert ds.eeg.shape == (4, 64, 350)
        assert ds.rate == 500.0 and ds.t0 == -0.2

    def test_boundary_events_skipped_and_counted(self, caplog):
        rng = np.random.default_rng(7)
        events = [Event(10, 1, 0), Event(1000, 2, 1), Event(5900, 3, 0)]
        rec = recording(rng.normal(size=(64, 6000)), events)
        with caplog.at_level("WARNING"):
            ds = preprocess.epoch(rec)
        assert len(ds) == 1
        assert ds.speaker[0] == 2
        assert "2" in caplog.text

    def test_impulse_lands_at_window_offset(self):
        data = np.zeros((64, 4000))
        onset = 2000
        data[:, onset] = 7.0
        ds = preprocess.epoch(recording(data, [Event(onset, 1, 0)]))
        # window starts 0.2 s before onset: the impulse sits at index 100
        assert ds.eeg[0, 0, 100] == 7.0
        assert np.count_nonzero(ds.eeg[0, 0]) == 1

    def test_wide_window_resamples_to_350(self):
        rng = np.random.default_rng(8)
        data = rng.normal(size=(64, 4000))
        ds = preprocess.epoch(
            recording(data, [Event(2000, 4, 1)]), window=preprocess.WIDE_WINDOW
        )
        assert ds.eeg.shape == (1, 64, 350)
        assert ds.t0 == -1.2
        np.testing.assert_allclose(ds.rate, 500.0 * 350 / 1200)

    def test_labels_follow_event_order(self):
        rng = np.random.default_rng(9)
        events = [Event(1000, 3, 0), Event(2500, 1, 1), Event(4000, 5, 0)]
        ds = preprocess.epoch(recording(rng.normal(size=(64, 6000)), events))
        np.testing.assert_array_equal(ds.speaker, [3, 1, 5])
        np.testing.assert_array_equal(ds.side, [0, 1, 0])
        np.testing.assert_array_equal(ds.relative, [2, 4, 4])

    def test_window_too_small_for_contract(self):
        rec = recording(np.zeros((64, 6000)), [Event(3000, 1, 0)])
        with pytest.raises(ConfigError):
            preprocess.epoch(rec, window=(-0.1, 0.2))
