"""Deterministic synthetic epoched EEG with planted spatial-attention
structure.

Each trial is the sum of three parts on a 64-channel montage:

* a sensory template: three short alternating-polarity peaks at 100-200 ms
  on a fronto-central topography, identical for every trial;
* an attention component in a late window whose amplitude falls linearly
  with the relative-location class (``gradient_slope`` microvolts per 45
  degree step) and whose topography is tilted toward the attended
  hemisphere by ``laterality_gain``;
* spatially correlated pink-plus-white noise at ``noise_sd``.

Optionally a fraction of trials carries a sequence-effect attenuation that
scales the attention component down, making those trials harder to
classify from amplitude alone.  Ground truth records every planted value.
"""

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import ContinuousRecording, EpochedDataset, Event, assign_splits
from .errors import ConfigError
from .fileio import atomic_write_text
from .montage import get_montage

SOA_SECONDS = 2.4  # stimulus onset asynchrony of the paradigm


@dataclass
class SynthConfig:
    n_subjects: int = 5
    trials_per_condition: int = 52  # per (speaker, side) cell and subject
    noise_sd: float = 4.0  # microvolts, per channel
    gradient_slope: float = 1.2  # microvolts per relative-location step
    attention_base: float = 6.0  # attention amplitude at relative class 0
    attention_window: tuple = (0.44, 0.55)  # seconds after onset
    attention_ramp: float = 0.02  # seconds of half-cosine edge inside the window
    sensory_amplitude: float = 5.0
    sensory_latencies: tuple = (0.10, 0.15, 0.20)
    sensory_polarities: tuple = (1.0, -0.8, 0.9)
    sensory_width: float = 0.035  # seconds, half-width of each peak
    laterality_gain: float = 0.6
    sequence_effect_rate: float = 0.0
    sequence_attenuation: float = 0.35  # attention multiplier on affected trials
    pink_fraction: float = 0.5  # share of noise power with a 1/f spectrum
    window: tuple = (-0.1, 0.6)  # epoch extent in seconds relative to onset
    rate: float = 500.0
    split_policy: str = "stratified"
    seed: int = 0

    def n_times(self):
        return int(round((self.window[1] - self.window[0]) * self.rate))

    def validate(self):
        if self.trials_per_condition <= 0:
            raise ConfigError("trials_per_condition must be positive")
        if self.n_subjects <= 0:
            raise ConfigError("n_subjects must be positive")
        if self.n_times() != 350:
            raise ConfigError(
                f"window {self.window} at {self.rate} Hz yields {self.n_times()} "
                "points; the epoch contract is 350"
            )
        a0, a1 = self.attention_window
        if not (self.window[0] <= a0 < a1 <= self.window[1]):
            raise ConfigError("attention_window must lie inside the epoch window")
        if a1 - a0 <= 2 * self.attention_ramp:
            raise ConfigError("attention_window too short for its ramps")
        if not 0.0 <= self.sequence_effect_rate < 1.0:
            raise ConfigError("sequence_effect_rate must be in [0, 1)")
        return self


@dataclass
class GroundTruth:
    """Everything planted: global templates plus per-trial parameters."""

    config: dict
    times: np.ndarray
    sensory_curve: np.ndarray  # (time,)
    attention_envelope: np.ndarray  # (time,), 1.0 on the plateau
    sensory_topo: np.ndarray  # (channels,)
    attention_topo: dict  # side name -> (channels,)
    subject: np.ndarray
    speaker: np.ndarray
    side: np.ndarray
    relative: np.ndarray
    attention_amp: np.ndarray  # per trial, after any attenuation
    sequence_flag: np.ndarray

    def save(self, path):
        doc = {
            "config": self.config,
            "times": self.times.tolist(),
            "sensory_curve": self.sensory_curve.tolist(),
            "attention_envelope": self.attention_envelope.tolist(),
            "sensory_topo": self.sensory_topo.tolist(),
            "attention_topo": {k: v.tolist() for k, v in self.attention_topo.items()},
            "subject": self.subject.tolist(),
            "speaker": self.speaker.tolist(),
            "side": self.side.tolist(),
            "relative": self.relative.tolist(),
            "attention_amp": self.attention_amp.tolist(),
            "sequence_flag": self.sequence_flag.tolist(),
        }
        atomic_write_text(path, json.dumps(doc, sort_keys=True))

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            doc = json.load(fh)
        return cls(
            config=doc["config"],
            times=np.array(doc["times"]),
            sensory_curve=np.array(doc["sensory_curve"]),
            attention_envelope=np.array(doc["attention_envelope"]),
            sensory_topo=np.array(doc["sensory_topo"]),
            attention_topo={k: np.array(v) for k, v in doc["attention_topo"].items()},
            subject=np.array(doc["subject"]),
            speaker=np.array(doc["speaker"]),
            side=np.array(doc["side"]),
            relative=np.array(doc["relative"]),
            attention_amp=np.array(doc["attention_amp"]),
            sequence_flag=np.array(doc["sequence_flag"], dtype=bool),
        )


def _gauss_topo(montage, center_label, width_rad):
    center = montage.positions[montage.index(center_label)]
    arc = np.arccos(np.clip(montage.positions @ center, -1.0, 1.0))
    topo = np.exp(-((arc / width_rad) ** 2))
    return topo / topo.max()


def _hann_bump(times, latency, width):
    out = np.zeros_like(times)
    mask = np.abs(times - latency) <= width
    out[mask] = 0.5 * (1 + np.cos(np.pi * (times[mask] - latency) / width))
    return out


def build_templates(config: SynthConfig, montage):
    """Deterministic signal templates shared by every trial."""
    times = config.window[0] + np.arange(config.n_times()) / config.rate
    sensory = np.zeros_like(times)
    for lat, pol in zip(config.sensory_latencies, config.sensory_polarities):
        sensory += pol * config.sensory_amplitude * _hann_bump(
            times, lat, config.sensory_width
        )
    a0, a1 = config.attention_window
    ramp = config.attention_ramp
    env = np.zeros_like(times)
    plateau = (times >= a0 + ramp) & (times <= a1 - ramp)
    env[plateau] = 1.0
    rise = (times >= a0) & (times < a0 + ramp)
    env[rise] = 0.5 * (1 - np.cos(np.pi * (times[rise] - a0) / ramp))
    fall = (times > a1 - ramp) & (times <= a1)
    env[fall] = 0.5 * (1 - np.cos(np.pi * (a1 - times[fall]) / ramp))

    sensory_topo = _gauss_topo(montage, "FCz", 0.8)
    attn_base = _gauss_topo(montage, "CPz", 0.9)
    x = montage.positions[:, 0]
    attention_topo = {
        "left": attn_base * (1.0 - config.laterality_gain * x),
        "right": attn_base * (1.0 + config.laterality_gain * x),
    }
    return times, sensory, env, sensory_topo, attention_topo


def _noise_mixer(montage, scale_rad=0.7):
    """Symmetric square root of a montage-distance covariance kernel, row
    normalized so each output channel keeps unit variance."""
    arc = montage.pairwise_arc()
    kernel = np.exp(-((arc / scale_rad) ** 2))
    vals, vecs = np.linalg.eigh(kernel)
    mixer = vecs @ np.diag(np.sqrt(np.clip(vals, 0, None))) @ vecs.T
    norms = np.sqrt((mixer * mixer).sum(axis=1))
    return mixer / norms[:, None]


def _pink_white(rng, n_channels, n_times, pink_fraction):
    white = rng.standard_normal((n_channels, n_times))
    spectrum = np.fft.rfft(rng.standard_normal((n_channels, n_times)))
    freqs = np.arange(spectrum.shape[1], dtype=np.float64)
    freqs[0] = np.inf  # kill DC
    pink = np.fft.irfft(spectrum / np.sqrt(freqs), n_times)
    pink_sd = pink.std()
    if pink_sd > 0:
        pink = pink / pink_sd
    return np.sqrt(pink_fraction) * pink + np.sqrt(1 - pink_fraction) * white


def _trial_order(config: SynthConfig):
    """Deterministic (subject, side, speaker, repetition) enumeration."""
    order = []
    for subject in range(config.n_subjects):
        for side in (0, 1):
            for speaker in range(1, 6):
                for rep in range(config.trials_per_condition):
                    order.append((subject, side, speaker, rep))
    return order


def generate(config: SynthConfig):
    """Build the epoched dataset and its ground truth.

    Bit-identical for a fixed config: each subject draws from a seed spawned
    off ``config.seed`` and trials are assembled in a fixed order.
    """
    config.validate()
    montage = get_montage()
    times, sensory, env, sensory_topo, attention_topo = build_templates(config, montage)
    mixer = _noise_mixer(montage) if config.noise_sd > 0 else None
    order = _trial_order(config)
    n = len(order)
    n_ch, n_t = len(montage), config.n_times()

    eeg = np.empty((n, n_ch, n_t), dtype=np.float32)
    subject_arr = np.empty(n, dtype=np.int64)
    speaker_arr = np.empty(n, dtype=np.int64)
    side_arr = np.empty(n, dtype=np.int64)
    amp_arr = np.empty(n)
    seq_arr = np.zeros(n, dtype=bool)

    rngs = [np.random.default_rng(s) for s in np.random.SeedSequence(config.seed).spawn(config.n_subjects)]
    side_names = ("left", "right")
    for i, (subject, side, speaker, _rep) in enumerate(order):
        rng = rngs[subject]
        relative = speaker - 1 if side == 0 else 5 - speaker
        amp = config.attention_base - config.gradient_slope * relative
        seq = config.sequence_effect_rate > 0 and rng.random() < config.sequence_effect_rate
        if seq:
            amp *= config.sequence_attenuation
        signal = (
            sensory_topo[:, None] * sensory[None, :]
            + attention_topo[side_names[side]][:, None] * (amp * env)[None, :]
        )
        if config.noise_sd > 0:
            noise = mixer @ _pink_white(rng, n_ch, n_t, config.pink_fraction)
            signal = signal + config.noise_sd * noise
        eeg[i] = signal.astype(np.float32)
        subject_arr[i] = subject
        speaker_arr[i] = speaker
        side_arr[i] = side
        amp_arr[i] = amp
        seq_arr[i] = seq

    dataset = EpochedDataset(
        eeg=eeg,
        speaker=speaker_arr,
        side=side_arr,
        subject=subject_arr,
        split=np.zeros(n, dtype=np.int64),
        rate=config.rate,
        t0=config.window[0],
        montage_name=montage.name,
        provenance=f"synthetic seed={config.seed}",
    )
    assign_splits(dataset, policy=config.split_policy, seed=config.seed)
    truth = GroundTruth(
        config=asdict(config),
        times=times,
        sensory_curve=sensory,
        attention_envelope=env,
        sensory_topo=sensory_topo,
        attention_topo=attention_topo,
        subject=subject_arr,
        speaker=speaker_arr,
        side=side_arr,
        relative=dataset.relative.copy(),
        attention_amp=amp_arr,
        sequence_flag=seq_arr,
    )
    return dataset, truth


def emit_continuous(config: SynthConfig, corrupt_channels=()):
    """Stitch the trial sequence into one continuous recording with a 2.4 s
    stimulus onset asynchrony and an event list.

    ``corrupt_channels`` get 50x extra noise so channel rejection has
    something to find.  At zero noise the stream holds exactly the
    deterministic trial signals, so epoching it recovers them bit-exactly.
    """
    config.validate()
    montage = get_montage()
    _, sensory, env, sensory_topo, attention_topo = build_templates(config, montage)
    mixer = _noise_mixer(montage) if config.noise_sd > 0 else None
    order = _trial_order(config)
    n = len(order)
    n_ch, n_t = len(montage), config.n_times()
    soa = int(round(SOA_SECONDS * config.rate))
    lead = int(round(2.0 * config.rate))
    total = lead + (n - 1) * soa + n_t + lead
    window_offset = int(round(config.window[0] * config.rate))

    data = np.zeros((n_ch, total))
    events = []
    rngs = [np.random.default_rng(s) for s in np.random.SeedSequence(config.seed).spawn(config.n_subjects)]
    side_names = ("left", "right")
    for i, (subject, side, speaker, _rep) in enumerate(order):
        rng = rngs[subject]
        relative = speaker - 1 if side == 0 else 5 - speaker
        amp = config.attention_base - config.gradient_slope * relative
        if config.sequence_effect_rate > 0 and rng.random() < config.sequence_effect_rate:
            amp *= config.sequence_attenuation
        onset = lead + i * soa
        start = onset + window_offset
        data[:, start : start + n_t] += (
            sensory_topo[:, None] * sensory[None, :]
            + attention_topo[side_names[side]][:, None] * (amp * env)[None, :]
        )
        events.append(Event(onset_sample=onset, speaker_index=speaker, attended_side=side))

    if config.noise_sd > 0:
        stream_rng = np.random.default_rng(np.random.SeedSequence((config.seed, 0xC0)))
        chunk = 4096
        for start in range(0, total, chunk):
            width = min(chunk, total - start)
            noise = mixer @ _pink_white(stream_rng, n_ch, width, config.pink_fraction)
            data[:, start : start + width] += config.noise_sd * noise
    if corrupt_channels:
        bad_rng = np.random.default_rng(np.random.SeedSequence((config.seed, 0xBAD)))
        level = 50.0 * (config.noise_sd if config.noise_sd > 0 else 1.0)
        for ch in corrupt_channels:
            data[ch] += level * bad_rng.standard_normal(total)
    return ContinuousRecording(data, config.rate, events, montage.name)
