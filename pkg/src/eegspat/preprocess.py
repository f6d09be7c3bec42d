"""Continuous-EEG cleanup: bad-channel rejection by SD z-score, spherical
spline repair, zero-phase 1-45 Hz band-pass, and epoching to the fixed
350-point sample contract.
"""

import logging

import numpy as np

from .data import ContinuousRecording, EpochedDataset, relative_label
from .errors import ConfigError, DimensionError, PreprocessingError
from .montage import Montage, get_montage
from .spherical import SphericalSpline

log = logging.getLogger(__name__)

EPOCH_POINTS = 350
DEFAULT_WINDOW = (-0.2, 0.5)  # seconds relative to onset; 350 points at 500 Hz
WIDE_WINDOW = (-1.2, 1.2)  # resampled down to 350 points


def reject_bad_channels(rec: ContinuousRecording, z_low=-2.0, z_high=2.0):
    """Flag channels whose standard deviation is a z-score outlier.

    The 64 per-channel SDs are z-scored against each other; channels outside
    [z_low, z_high] are marked bad.  Returns a boolean mask, True = bad.
    """
    if rec.n_channels < 2:
        raise DimensionError("need at least 2 channels to z-score channel SDs")
    sds = rec.data.std(axis=1)
    spread = sds.std()
    if spread == 0:
        return np.zeros(rec.n_channels, dtype=bool)
    z = (sds - sds.mean()) / spread
    bad = (z < z_low) | (z > z_high)
    if bad.all():
        raise PreprocessingError("every channel was rejected by the SD threshold")
    return bad


def spherical_interpolate(rec: ContinuousRecording, bad_mask,
                          montage: Montage = None, m=4, n_terms=50,
                          ridge=1e-5) -> ContinuousRecording:
    """Reconstruct bad channels from the good ones with a spherical spline.

    The spline system over the good electrodes is factored once and reused
    across all time points.  Good channels pass through untouched.
    """
    bad_mask = np.asarray(bad_mask, dtype=bool)
    if not bad_mask.any():
        return rec
    montage = montage or get_montage(rec.montage_name)
    good = ~bad_mask
    if good.sum() < 4:
        raise PreprocessingError(
            f"spherical interpolation needs at least 4 good channels, "
            f"have {int(good.sum())}"
        )
    spline = SphericalSpline(montage.positions[good], m=m, n_terms=n_terms, ridge=ridge)
    coef = spline.fit(rec.data[good])
    repaired = rec.data.copy()
    repaired[bad_mask] = spline.evaluate(coef, montage.positions[bad_mask])
    return ContinuousRecording(repaired, rec.rate, rec.events, rec.montage_name)


def design_bandpass_fir(rate, lo=1.0, hi=45.0, numtaps=2047):
    """Symmetric windowed-sinc (Hamming) band-pass taps.

    Linear phase; applied centered it is zero-phase.
    """
    if hi >= rate / 2:
        raise ConfigError(f"high cutoff {hi} Hz must be below Nyquist {rate / 2} Hz")
    if not 0 < lo < hi:
        raise ConfigError(f"band edges must satisfy 0 < lo < hi, got ({lo}, {hi})")
    if numtaps % 2 == 0:
        numtaps += 1
    n = np.arange(numtaps) - (numtaps - 1) / 2
    window = np.hamming(numtaps)

    def lowpass(fc):
        f = fc / rate
        return 2 * f * np.sinc(2 * f * n)

    return (lowpass(hi) - lowpass(lo)) * window


def _fft_convolve_same(data, taps):
    """Centered FFT convolution of each row of data with the (odd) taps."""
    half = (len(taps) - 1) // 2
    padded = np.pad(data, ((0, 0), (half, half)), mode="reflect")
    n_full = padded.shape[1] + len(taps) - 1
    n_fft = 1 << (n_full - 1).bit_length()
    spec = np.fft.rfft(padded, n_fft) * np.fft.rfft(taps, n_fft)
    full = np.fft.irfft(spec, n_fft)[:, : n_full]
    start = len(taps) - 1
    return full[:, start : start + data.shape[1]]


def bandpass(rec: ContinuousRecording, lo=1.0, hi=45.0,
             numtaps=2047) -> ContinuousRecording:
    """Zero-phase FIR band-pass with reflected edge padding."""
    taps = design_bandpass_fir(rec.rate, lo, hi, numtaps)
    if rec.n_samples < len(taps) // 8:
        raise ConfigError(
            f"recording too short ({rec.n_samples} samples) for a "
            f"{len(taps)}-tap filter"
        )
    filtered = _fft_convolve_same(rec.data, taps)
    return ContinuousRecording(filtered, rec.rate, rec.events, rec.montage_name)


def epoch(rec: ContinuousRecording, window=DEFAULT_WINDOW,
          out_points=EPOCH_POINTS, split_seed=None, subject=0) -> EpochedDataset:
    """Cut one window per event and bring it to exactly ``out_points``
    samples.

    When the raw window holds more than ``out_points`` samples it is
    resampled by linear interpolation (safe after the 45 Hz low-pass);
    events whose window leaves the recording are skipped with a warning.
    """
    t0, t1 = window
    if t1 <= t0:
        raise ConfigError(f"epoch window must be increasing, got {window}")
    raw_points = int(round((t1 - t0) * rec.rate))
    if raw_points < out_points:
        raise ConfigError(
            f"window {window} at {rec.rate} Hz has {raw_points} samples, "
            f"fewer than the {out_points}-point contract"
        )
    offset = int(round(t0 * rec.rate))
    trials, speakers, sides = [], [], []
    skipped = 0
    for ev in rec.events:
        start = ev.onset_sample + offset
        stop = start + raw_points
        if start < 0 or stop > rec.n_samples:
            skipped += 1
            continue
        cut = rec.data[:, start:stop]
        if raw_points != out_points:
            src = np.arange(raw_points, dtype=np.float64)
            dst = np.linspace(0, raw_points - 1, out_points)
            cut = np.array([np.interp(dst, src, row) for row in cut])
        trials.append(cut.astype(np.float32))
        speakers.append(ev.speaker_index)
        sides.append(ev.attended_side)
    if skipped:
        log.warning("epoching skipped %d events with out-of-bounds windows", skipped)
    n = len(trials)
    out_rate = rec.rate * (out_points / raw_points)
    dataset = EpochedDataset(
        eeg=np.array(trials, dtype=np.float32).reshape(n, rec.n_channels, out_points),
        speaker=np.array(speakers, dtype=np.int64),
        side=np.array(sides, dtype=np.int64),
        subject=np.full(n, subject, dtype=np.int64),
        split=np.zeros(n, dtype=np.int64),
        rate=out_rate,
        t0=t0,
        montage_name=rec.montage_name,
        provenance=f"epoched window=({t0},{t1}) skipped={skipped}",
    )
    return dataset


def run_pipeline(rec: ContinuousRecording, window=DEFAULT_WINDOW,
                 lo=1.0, hi=45.0) -> EpochedDataset:
    """reject -> interpolate -> band-pass -> epoch, in the standard order."""
    bad = reject_bad_channels(rec)
    rec = spherical_interpolate(rec, bad)
    rec = bandpass(rec, lo=lo, hi=hi)
    dataset = epoch(rec, window=window)
    dataset.provenance += f" bad_channels={int(bad.sum())}"
    return dataset
