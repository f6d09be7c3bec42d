"""Electrode montage: 64 labeled positions on the unit sphere.

The standard layout is constructed geometrically from the 10-10 placement
rules on a spherical head model: the vertex at +z, nasion toward +y, right
ear toward +x.  Midline and coronal chains are arcs through the vertex, the
outer ring sits at a polar angle of 72 degrees, and intermediate electrodes
are placed by spherical interpolation between their ring and midline
anchors.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError


def _sph(polar_deg, azim_deg):
    th = np.deg2rad(polar_deg)
    az = np.deg2rad(azim_deg)
    return np.array(
        [np.sin(th) * np.cos(az), np.sin(th) * np.sin(az), np.cos(th)]
    )


def _slerp(p0, p1, t):
    omega = np.arccos(np.clip(p0 @ p1, -1.0, 1.0))
    if omega < 1e-12:
        return p0.copy()
    return (np.sin((1 - t) * omega) * p0 + np.sin(t * omega) * p1) / np.sin(omega)


@dataclass
class Montage:
    name: str
    labels: list
    positions: np.ndarray  # (n, 3), unit radius

    def __post_init__(self):
        if len(self.labels) != len(set(self.labels)):
            raise ConfigError("montage labels must be unique")
        norms = np.linalg.norm(self.positions, axis=1)
        self.positions = self.positions / norms[:, None]

    def __len__(self):
        return len(self.labels)

    def index(self, label):
        try:
            return self.labels.index(label)
        except ValueError:
            raise ConfigError(f"electrode {label!r} not in montage {self.name}")

    def project_2d(self):
        """Azimuthal-equidistant projection: radius equals polar angle
        normalized so the equator maps to r = 1; nose toward +y."""
        pos = self.positions
        polar = np.arccos(np.clip(pos[:, 2], -1.0, 1.0))
        rho = np.hypot(pos[:, 0], pos[:, 1])
        r = polar / (np.pi / 2)
        with np.errstate(invalid="ignore", divide="ignore"):
            ux = np.where(rho > 1e-12, pos[:, 0] / rho, 0.0)
            uy = np.where(rho > 1e-12, pos[:, 1] / rho, 0.0)
        return np.column_stack([r * ux, r * uy])

    def pairwise_arc(self):
        """Great-circle distance (radians) between every electrode pair."""
        cosang = np.clip(self.positions @ self.positions.T, -1.0, 1.0)
        return np.arccos(cosang)


def _build_standard_64():
    chans = {}

    # midline: 10% arc steps from nasion over the vertex to the inion
    midline = ["Fpz", "AFz", "Fz", "FCz", "Cz", "CPz", "Pz", "POz", "Oz", "Iz"]
    for i, label in enumerate(midline):
        frac = 0.1 * (i + 1)
        polar = abs(frac - 0.5) * 180.0
        azim = 90.0 if frac <= 0.5 else 270.0
        chans[label] = _sph(polar, azim)

    # outer ring at polar 72 degrees, 18-degree azimuth steps from Fpz
    ring_left = ["Fp1", "AF7", "F7", "FT7", "T7", "TP7", "P7", "PO7", "O1"]
    ring_right = ["Fp2", "AF8", "F8", "FT8", "T8", "TP8", "P8", "PO8", "O2"]
    for i, (ll, rl) in enumerate(zip(ring_left, ring_right)):
        step = 18.0 * (i + 1)
        chans[ll] = _sph(72.0, 90.0 + step)
        chans[rl] = _sph(72.0, 90.0 - step)

    # intermediate chains: fractions of the arc from the ring anchor to the
    # midline electrode of the same row
    rows = [
        ("AF7", "AFz", ["AF3"], "AF8", ["AF4"]),
        ("F7", "Fz", ["F5", "F3", "F1"], "F8", ["F6", "F4", "F2"]),
        ("FT7", "FCz", ["FC5", "FC3", "FC1"], "FT8", ["FC6", "FC4", "FC2"]),
        ("T7", "Cz", ["C5", "C3", "C1"], "T8", ["C6", "C4", "C2"]),
        ("TP7", "CPz", ["CP5", "CP3", "CP1"], "TP8", ["CP6", "CP4", "CP2"]),
        ("P7", "Pz", ["P5", "P3", "P1"], "P8", ["P6", "P4", "P2"]),
        ("PO7", "POz", ["PO3"], "PO8", ["PO4"]),
    ]
    for left_anchor, mid, left_names, right_anchor, right_names in rows:
        n = len(left_names) + 1
        for i, label in enumerate(left_names):
            chans[label] = _slerp(chans[left_anchor], chans[mid], (i + 1) / n)
        for i, label in enumerate(right_names):
            chans[label] = _slerp(chans[right_anchor], chans[mid], (i + 1) / n)

    # inferior parietal pair one ring further down, on the equator
    chans["P9"] = _sph(90.0, 90.0 + 126.0)
    chans["P10"] = _sph(90.0, 90.0 - 126.0)

    labels = sorted(chans, key=lambda c: (round(-chans[c][1], 6), round(chans[c][0], 6)))
    positions = np.array([chans[c] for c in labels])
    return Montage("std64", labels, positions)


_REGISTRY = {}


def get_montage(name="std64") -> Montage:
    if name not in _REGISTRY:
        if name != "std64":
            raise ConfigError(f"unknown montage {name!r}")
        _REGISTRY[name] = _build_standard_64()
    return _REGISTRY[name]


def check_weights(weights, montage: Montage):
    weights = np.asarray(weights, dtype=np.float64).reshape(-1)
    if weights.shape[0] != len(montage):
        raise DimensionError(
            f"weight vector length {weights.shape[0]} does not match montage "
            f"size {len(montage)}"
        )
    return weights
