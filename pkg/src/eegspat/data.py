"""Dataset containers and label arithmetic.

Two binary containers are defined here and shared by the generator,
preprocessing, and training code:

* epoched dataset — magic ``EEGSPATD``, version, counts (n, channels,
  time points), sample rate, epoch start offset, montage name, provenance
  string; then per-sample labels (speaker u8, side u8, relative u8,
  subject u16, split u8) and the float32 little-endian EEG payload of shape
  (n, channels, time points).
* continuous recording — magic ``EEGSPATC``, version, channel count,
  sample count, rate, montage name; then channel-major float64 samples.
  Events travel in a sibling CSV with columns
  ``onset_sample,speaker_index,attended_side``.
"""

import csv
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ContainerFormatError, LabelError

DATASET_MAGIC = b"EEGSPATD"
CONTINUOUS_MAGIC = b"EEGSPATC"
CONTAINER_VERSION = 1

SIDE_NAMES = ("left", "right")
SPLIT_NAMES = ("train", "val", "test")
N_CLASSES = 5
SPEAKER_ANGLES_DEG = (-90, -45, 0, 45, 90)  # speaker index 1..5, left to right


def side_code(side) -> int:
    if isinstance(side, str):
        try:
            return SIDE_NAMES.index(side)
        except ValueError:
            raise LabelError(f"attended side must be left or right, got {side!r}")
    side = int(side)
    if side not in (0, 1):
        raise LabelError(f"attended side code must be 0 or 1, got {side}")
    return side


def relative_label(attended_side, speaker_index) -> int:
    """Distance class 0-4 of a speaker from the attended location.

    Attending left maps speakers 1..5 (left to right) onto 0..4; attending
    right mirrors the coding, so the attended endpoint is always class 0.
    """
    speaker_index = int(speaker_index)
    if not 1 <= speaker_index <= 5:
        raise LabelError(f"speaker index must be 1..5, got {speaker_index}")
    if side_code(attended_side) == 0:
        return speaker_index - 1
    return 5 - speaker_index


@dataclass
class Sample:
    eeg: np.ndarray  # (channels, time, 1) microvolts
    speaker_index: int
    attended_side: str
    relative_class: int


@dataclass
class EpochedDataset:
    """Epoched trials with labels, split assignment, and provenance."""

    eeg: np.ndarray  # (n, channels, time) float32 microvolts
    speaker: np.ndarray  # (n,) int, 1..5
    side: np.ndarray  # (n,) int, 0=left 1=right
    subject: np.ndarray  # (n,) int
    split: np.ndarray  # (n,) int, 0=train 1=val 2=test
    rate: float = 500.0
    t0: float = -0.1  # epoch start in seconds relative to sound onset
    montage_name: str = "std64"
    provenance: str = ""
    relative: np.ndarray = field(default=None)

    def __post_init__(self):
        self.eeg = np.asarray(self.eeg, dtype=np.float32)
        self.speaker = np.asarray(self.speaker, dtype=np.int64)
        self.side = np.asarray(self.side, dtype=np.int64)
        self.subject = np.asarray(self.subject, dtype=np.int64)
        self.split = np.asarray(self.split, dtype=np.int64)
        if self.eeg.ndim != 3:
            raise ContainerFormatError(
                f"epoched EEG must be (n, channels, time), got {self.eeg.shape}"
            )
        n = self.eeg.shape[0]
        for name in ("speaker", "side", "subject", "split"):
            if getattr(self, name).shape != (n,):
                raise ContainerFormatError(f"label array {name} does not match n={n}")
        if n and (self.speaker.min() < 1 or self.speaker.max() > 5):
            raise LabelError("speaker indices must lie in 1..5")
        derived = np.where(self.side == 0, self.speaker - 1, 5 - self.speaker)
        if self.relative is None:
            self.relative = derived
        elif not np.array_equal(np.asarray(self.relative), derived):
            raise LabelError("relative classes inconsistent with speaker/side labels")
        self.relative = np.asarray(self.relative, dtype=np.int64)

    def __len__(self):
        return self.eeg.shape[0]

    @property
    def n_channels(self):
        return self.eeg.shape[1]

    @property
    def n_times(self):
        return self.eeg.shape[2]

    def times(self):
        """Time axis in seconds relative to onset."""
        return self.t0 + np.arange(self.n_times) / self.rate

    def sample(self, i) -> Sample:
        return Sample(
            eeg=self.eeg[i].astype(np.float64)[:, :, None],
            speaker_index=int(self.speaker[i]),
            attended_side=SIDE_NAMES[self.side[i]],
            relative_class=int(self.relative[i]),
        )

    def indices(self, split=None):
        if split is None:
            return np.arange(len(self))
        if isinstance(split, str):
            split = SPLIT_NAMES.index(split)
        return np.flatnonzero(self.split == split)

    def model_inputs(self, idx):
        """Network input dict for the given sample indices."""
        return {
            "eeg": self.eeg[idx].astype(np.float64)[..., None],
            "speaker": self.speaker[idx],
        }

    def class_histogram(self):
        return {
            "relative": np.bincount(self.relative, minlength=N_CLASSES).tolist(),
            "side": np.bincount(self.side, minlength=2).tolist(),
        }

    # -- persistence --------------------------------------------------------

    def save(self, path):
        n, n_ch, n_t = self.eeg.shape
        with open(path, "wb") as fh:
            fh.write(DATASET_MAGIC)
            fh.write(struct.pack("<IIIIdd", CONTAINER_VERSION, n, n_ch, n_t, self.rate, self.t0))
            for text in (self.montage_name, self.provenance):
                raw = text.encode("utf-8")
                fh.write(struct.pack("<H", len(raw)))
                fh.write(raw)
            labels = np.empty((n, 6), dtype="<u2")
            labels[:, 0] = self.speaker
            labels[:, 1] = self.side
            labels[:, 2] = self.relative
            labels[:, 3] = self.subject
            labels[:, 4] = self.split
            labels[:, 5] = 0
            fh.write(labels.tobytes())
            fh.write(np.ascontiguousarray(self.eeg, dtype="<f4").tobytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            data = fh.read()
        if data[:8] != DATASET_MAGIC:
            raise ContainerFormatError(f"{path}: not an epoched-dataset container")
        off = 8
        try:
            version, n, n_ch, n_t, rate, t0 = struct.unpack_from("<IIIIdd", data, off)
            off += struct.calcsize("<IIIIdd")
            if version != CONTAINER_VERSION:
                raise ContainerFormatError(f"{path}: unsupported version {version}")
            texts = []
            for _ in range(2):
                (ln,) = struct.unpack_from("<H", data, off)
                off += 2
                texts.append(data[off : off + ln].decode("utf-8"))
                off += ln
            labels = np.frombuffer(data, dtype="<u2", count=n * 6, offset=off)
            labels = labels.reshape(n, 6).astype(np.int64)
            off += n * 6 * 2
            eeg = np.frombuffer(data, dtype="<f4", count=n * n_ch * n_t, offset=off)
            off += n * n_ch * n_t * 4
        except (struct.error, ValueError) as exc:
            raise ContainerFormatError(f"{path}: truncated container") from exc
        if off != len(data):
            raise ContainerFormatError(f"{path}: trailing bytes after payload")
        return cls(
            eeg=eeg.reshape(n, n_ch, n_t).copy(),
            speaker=labels[:, 0],
            side=labels[:, 1],
            relative=labels[:, 2],
            subject=labels[:, 3],
            split=labels[:, 4],
            rate=rate,
            t0=t0,
            montage_name=texts[0],
            provenance=texts[1],
        )


def assign_splits(dataset: EpochedDataset, policy="stratified", seed=0,
                  fractions=(0.8, 0.1, 0.1)):
    """Deterministic train/val/test assignment, in place.

    ``stratified`` splits within every (subject, speaker, side) cell so all
    subjects appear in all splits; ``by_subject`` holds whole subjects out.
    """
    rng = np.random.default_rng(seed)
    split = np.zeros(len(dataset), dtype=np.int64)
    if policy == "stratified":
        keys = (
            dataset.subject * 100 + dataset.speaker * 10 + dataset.side
        )
        for key in np.unique(keys):
            cell = np.flatnonzero(keys == key)
            cell = cell[rng.permutation(len(cell))]
            n = len(cell)
            n_tr = int(np.floor(fractions[0] * n))
            n_val = int(np.floor((fractions[0] + fractions[1]) * n)) - n_tr
            if n_val == 0 and n_tr >= 2:
                n_tr -= 1
                n_val = 1
            split[cell[:n_tr]] = 0
            split[cell[n_tr : n_tr + n_val]] = 1
            split[cell[n_tr + n_val :]] = 2
    elif policy == "by_subject":
        subjects = np.unique(dataset.subject)
        if len(subjects) < 3:
            raise ConfigError("by_subject split needs at least 3 subjects")
        subjects = subjects[rng.permutation(len(subjects))]
        n_val = max(1, int(np.floor(fractions[1] * len(subjects))))
        n_te = max(1, int(np.floor(fractions[2] * len(subjects))))
        val_set = set(subjects[:n_val].tolist())
        te_set = set(subjects[n_val : n_val + n_te].tolist())
        for i, subj in enumerate(dataset.subject):
            split[i] = 1 if subj in val_set else 2 if subj in te_set else 0
    else:
        raise ConfigError(f"unknown split policy {policy!r}")
    dataset.split = split
    return dataset


@dataclass
class Event:
    onset_sample: int
    speaker_index: int
    attended_side: int  # 0=left, 1=right


@dataclass
class ContinuousRecording:
    """Multichannel continuous EEG with a sorted stimulus event list."""

    data: np.ndarray  # (channels, samples) float64 microvolts
    rate: float
    events: list
    montage_name: str = "std64"

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2:
            raise ContainerFormatError("continuous data must be (channels, samples)")
        self.events = sorted(self.events, key=lambda e: e.onset_sample)

    @property
    def n_channels(self):
        return self.data.shape[0]

    @property
    def n_samples(self):
        return self.data.shape[1]

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(CONTINUOUS_MAGIC)
            fh.write(
                struct.pack(
                    "<IIQd", CONTAINER_VERSION, self.n_channels, self.n_samples, self.rate
                )
            )
            raw = self.montage_name.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(np.ascontiguousarray(self.data, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path, events=None):
        with open(path, "rb") as fh:
            data = fh.read()
        if data[:8] != CONTINUOUS_MAGIC:
            raise ContainerFormatError(f"{path}: not a continuous-recording container")
        off = 8
        try:
            version, n_ch, n_samp, rate = struct.unpack_from("<IIQd", data, off)
            off += struct.calcsize("<IIQd")
            if version != CONTAINER_VERSION:
                raise ContainerFormatError(f"{path}: unsupported version {version}")
            (ln,) = struct.unpack_from("<H", data, off)
            off += 2
            montage_name = data[off : off + ln].decode("utf-8")
            off += ln
            payload = np.frombuffer(data, dtype="<f8", count=n_ch * n_samp, offset=off)
            off += n_ch * n_samp * 8
        except (struct.error, ValueError) as exc:
            raise ContainerFormatError(f"{path}: truncated container") from exc
        if off != len(data):
            raise ContainerFormatError(f"{path}: trailing bytes after payload")
        return cls(
            data=payload.reshape(n_ch, n_samp).copy(),
            rate=rate,
            events=list(events) if events else [],
            montage_name=montage_name,
        )


def save_events_csv(events, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["onset_sample", "speaker_index", "attended_side"])
        for ev in events:
            writer.writerow([ev.onset_sample, ev.speaker_index, SIDE_NAMES[ev.attended_side]])


def load_events_csv(path):
    events = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        need = {"onset_sample", "speaker_index", "attended_side"}
        if reader.fieldnames is None or not need.issubset(reader.fieldnames):
            raise ContainerFormatError(
                f"{path}: event CSV must have columns {sorted(need)}"
            )
        for row in reader:
            events.append(
                Event(
                    onset_sample=int(row["onset_sample"]),
                    speaker_index=int(row["speaker_index"]),
                    attended_side=side_code(row["attended_side"]),
                )
            )
    return events
