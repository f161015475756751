"""Electrode montages: unit-sphere positions, mastoid flags and scalp regions.

A montage file is tab separated with a header row::

    label  x  y  z  region  is_mastoid

Coordinates use x toward the right ear, y toward the nose and z up.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

REGIONS = ("frontal", "central", "parietal", "temporal", "occipital")
_COLUMNS = ("label", "x", "y", "z", "region", "is_mastoid")


class MontageError(ValueError):
    pass


@dataclass
class Montage:
    labels: list[str]
    positions: np.ndarray  # (n, 3), unit radius
    regions: list[str]
    mastoids: list[int]

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64)
        n = len(self.labels)
        if self.positions.shape != (n, 3):
            raise MontageError(f"positions must be ({n}, 3), got {self.positions.shape}")
        if len(self.regions) != n:
            raise MontageError("one region label per channel is required")
        bad = sorted(set(self.regions) - set(REGIONS))
        if bad:
            raise MontageError(f"unknown region labels {bad}")
        radii = np.linalg.norm(self.positions, axis=1)
        if np.any(np.abs(radii - 1.0) > 1e-6):
            raise MontageError("electrode positions must lie on the unit sphere")
        if any(not 0 <= m < n for m in self.mastoids):
            raise MontageError("mastoid index out of range")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def scalp(self) -> list[int]:
        """Indices of non-mastoid channels, in file order."""
        mastoids = set(self.mastoids)
        return [i for i in range(len(self.labels)) if i not in mastoids]

    def without_mastoids(self) -> "Montage":
        keep = self.scalp
        return Montage(
            [self.labels[i] for i in keep], self.positions[keep], [self.regions[i] for i in keep], []
        )


def load_montage(path) -> Montage:
    lines = Path(path).read_text().splitlines()
    if not lines or tuple(lines[0].split("\t")) != _COLUMNS:
        raise MontageError(f"{path}: expected header {' '.join(_COLUMNS)}")
    labels, positions, regions, mastoids = [], [], [], []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != len(_COLUMNS):
            raise MontageError(f"{path}:{lineno}: expected {len(_COLUMNS)} fields")
        try:
            xyz = [float(v) for v in fields[1:4]]
        except ValueError as exc:
            raise MontageError(f"{path}:{lineno}: missing or malformed position") from exc
        if fields[5] not in ("0", "1"):
            raise MontageError(f"{path}:{lineno}: is_mastoid must be 0 or 1")
        if fields[5] == "1":
            mastoids.append(len(labels))
        labels.append(fields[0])
        positions.append(xyz)
        regions.append(fields[4])
    return Montage(labels, np.array(positions).reshape(-1, 3), regions, mastoids)


def save_montage(montage: Montage, path) -> None:
    mastoids = set(montage.mastoids)
    rows = ["\t".join(_COLUMNS)]
    for i, label in enumerate(montage.labels):
        x, y, z = montage.positions[i]
        rows.append(f"{label}\t{x:.9f}\t{y:.9f}\t{z:.9f}\t{montage.regions[i]}\t{int(i in mastoids)}")
    Path(path).write_text("\n".join(rows) + "\n")


def builtin_montage(name: str) -> Montage:
    """Load one of the shipped layouts: ``biosemi128`` or ``biosemi64``."""
    ref = resources.files("neuromatch") / "data" / f"{name}.tsv"
    if not ref.is_file():
        raise MontageError(f"no shipped montage called {name!r}")
    with resources.as_file(ref) as p:
        return load_montage(p)


# -- layout construction -------------------------------------------------------
# Positions below are an idealised 10-10 geometry: each electrode is placed in
# an azimuthal-equidistant plane (degrees from Cz) and lifted onto the sphere.

_ROW_OFFSET = {"Fp": 72, "AF": 54, "F": 36, "FC": 18, "C": 0, "T": 0, "CP": -18,
               "TP": -18, "FT": 18, "P": -36, "PO": -54, "O": -72, "I": -90}
# azimuth (degrees from the front midline) of the outer-ring electrode per row
_ROW_AZIMUTH = {"Fp": 18, "AF": 36, "F": 54, "FT": 72, "FC": 72, "C": 90, "T": 90,
                "TP": 108, "CP": 108, "P": 126, "PO": 144, "O": 162, "I": 180}

_LANDMARKS = {
    "frontal": ["Fpz", "Fp1", "Fp2", "AF7", "AF8", "AFz", "Fz", "F3", "F4", "F7", "F8"],
    "central": ["Cz", "C3", "C4", "C5", "C6", "FCz", "CPz"],
    "parietal": ["Pz", "P3", "P4", "CP5", "CP6"],
    "temporal": ["T7", "T8", "FT7", "FT8", "TP7", "TP8"],
    "occipital": ["Oz", "O1", "O2", "Iz", "PO7", "PO8"],
}


def _plane_to_sphere(front_deg: float, lateral_deg: float) -> np.ndarray:
    rho = math.radians(math.hypot(front_deg, lateral_deg))
    if rho == 0.0:
        return np.array([0.0, 0.0, 1.0])
    az = math.atan2(lateral_deg, front_deg)
    return np.array([math.sin(rho) * math.sin(az), math.sin(rho) * math.cos(az), math.cos(rho)])


def position_1010(label: str) -> np.ndarray:
    """Idealised unit-sphere position of a 10-10 label such as ``FC3`` or ``Oz``."""
    row = label.rstrip("0123456789z")
    col = label[len(row):]
    if row not in _ROW_OFFSET or not col:
        raise MontageError(f"not a 10-10 label: {label!r}")
    front = float(_ROW_OFFSET[row])
    if col == "z":
        return _plane_to_sphere(front, 0.0)
    n = int(col)
    side = -1.0 if n % 2 else 1.0
    frac = math.ceil(n / 2) / 4.0
    az = math.radians(_ROW_AZIMUTH[row])
    outer = np.array([72.0 * math.cos(az), 72.0 * math.sin(az)])
    mid = np.array([front, 0.0])
    f, l = mid + frac * (outer - mid)
    return _plane_to_sphere(f, side * l)


def nearest_region(position: np.ndarray) -> str:
    best, best_angle = None, math.inf
    for region, names in _LANDMARKS.items():
        for name in names:
            angle = math.acos(float(np.clip(np.dot(position, position_1010(name)), -1.0, 1.0)))
            if angle < best_angle:
                best, best_angle = region, angle
    return best


BIOSEMI64_LABELS = (
    "Fp1 AF7 AF3 F1 F3 F5 F7 FT7 FC5 FC3 FC1 C1 C3 C5 T7 TP7 CP5 CP3 CP1 P1 P3 P5 P7 P9 "
    "PO7 PO3 O1 Iz Oz POz Pz CPz Fpz Fp2 AF8 AF4 AFz Fz F2 F4 F6 F8 FT8 FC6 FC4 FC2 FCz Cz "
    "C2 C4 C6 T8 TP8 CP6 CP4 CP2 P2 P4 P6 P8 P10 PO8 PO4 O2"
).split()


def make_1010_montage(labels=BIOSEMI64_LABELS) -> Montage:
    positions = np.array([position_1010(lb) for lb in labels])
    return Montage(list(labels), positions, [nearest_region(p) for p in positions], [])


def make_cap_montage(n_channels: int, mastoids: bool = False, max_polar_deg: float = 105.0) -> Montage:
    """Roughly equidistant cap layout (Fibonacci spiral) with labels A1, A2, ...

    With ``mastoids`` two extra channels M1/M2 are appended behind the ears.
    """
    golden = math.pi * (3.0 - math.sqrt(5.0))
    z_min = math.cos(math.radians(max_polar_deg))
    positions, labels = [], []
    for i in range(n_channels):
        z = 1.0 - (i + 0.5) / n_channels * (1.0 - z_min)
        r = math.sqrt(max(0.0, 1.0 - z * z))
        theta = golden * i
        positions.append([r * math.cos(theta), r * math.sin(theta), z])
        labels.append(f"{'ABCDEFGH'[i // 32]}{i % 32 + 1}")
    positions = np.array(positions)
    regions = [nearest_region(p) for p in positions]
    idx = []
    if mastoids:
        for label, sign in (("M1", -1.0), ("M2", 1.0)):
            idx.append(len(labels))
            labels.append(label)
            positions = np.vstack([positions, _plane_to_sphere(-30.0, sign * 112.0)])
            regions.append("temporal")
    return Montage(labels, positions, regions, idx)
