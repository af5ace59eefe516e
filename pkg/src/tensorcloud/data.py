"""Point-cloud ingestion, the synthetic shape benchmark, and augmentation.

Cloud files come in two flavors: CSV (one ``x,y,z`` line per point, an
optional header detected by a non-numeric first token) and XYZ
(whitespace-separated triples, ``#`` comments skipped).  A labeled
directory pairs cloud files with a ``labels.csv`` manifest of
``path,label`` rows.

The synthetic benchmark has four classes told apart only by
rotation-invariant geometry: sphere, prolate 3:1:1 ellipsoid, oblate
3:3:1 ellipsoid, and two separated spherical clusters.  Every sample is
independently rotated, permuted, translated and jittered, and the whole
dataset is a pure function of the seed.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .tensor_algebra import random_rotation

__all__ = [
    "DataError",
    "Dataset",
    "load_cloud",
    "load_labeled_dir",
    "synth_shapes",
    "SYNTH_CLASS_NAMES",
    "rotation_z",
    "augment",
]

SYNTH_CLASS_NAMES = ("sphere", "prolate", "oblate", "clusters")

AUGMENT_PROTOCOLS = ("none", "z", "so3")


class DataError(ValueError):
    """Malformed input data (bad cloud file, manifest, or label)."""


@dataclass
class Dataset:
    """Point clouds with integer class labels or float regression targets."""

    clouds: list[np.ndarray]
    labels: np.ndarray
    num_classes: int | None = None  # None marks a regression dataset
    split: str = "train"

    def __post_init__(self):
        for i, c in enumerate(self.clouds):
            if c.ndim != 2 or c.shape[0] != 3:
                raise DataError(f"cloud {i} has shape {c.shape}, expected (3, n)")
        if len(self.clouds) != len(self.labels):
            raise DataError("label count does not match cloud count")
        if self.num_classes is not None:
            labels = np.asarray(self.labels)
            if labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
                raise DataError("class label out of range")

    def __len__(self) -> int:
        return len(self.clouds)


def _parse_csv_cloud(lines: list[str], path: str) -> list[list[float]]:
    points = []
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line:
            continue
        tokens = [t.strip() for t in line.split(",")]
        try:
            points.append([float(t) for t in tokens])
        except ValueError:
            if lineno == 1 and not points:
                continue  # header line
            raise DataError(f"{path}: line {lineno}: cannot parse {line!r}") from None
        if len(tokens) != 3:
            raise DataError(f"{path}: line {lineno}: expected 3 fields, got {len(tokens)}")
    return points


def _parse_xyz_cloud(lines: list[str], path: str) -> list[list[float]]:
    points = []
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        tokens = line.split()
        if len(tokens) != 3:
            raise DataError(f"{path}: line {lineno}: expected 3 fields, got {len(tokens)}")
        try:
            points.append([float(t) for t in tokens])
        except ValueError:
            raise DataError(f"{path}: line {lineno}: cannot parse {line!r}") from None
    return points


def load_cloud(path: str, fmt: str | None = None) -> np.ndarray:
    """Read one cloud file into a (3, n) array, points in file order."""
    if fmt is None:
        ext = os.path.splitext(path)[1].lower().lstrip(".")
        fmt = ext if ext in ("csv", "xyz") else "csv"
    if fmt not in ("csv", "xyz"):
        raise DataError(f"unsupported cloud format {fmt!r}")
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.readlines()
    points = (_parse_csv_cloud if fmt == "csv" else _parse_xyz_cloud)(lines, path)
    if not points:
        raise DataError(f"{path}: no points found")
    return np.asarray(points, dtype=float).T


def load_labeled_dir(root: str, split: str = "train") -> Dataset:
    """Load clouds listed in ``<root>/labels.csv`` (``path,label`` rows)."""
    manifest = os.path.join(root, "labels.csv")
    if not os.path.exists(manifest):
        raise DataError(f"missing manifest {manifest}")
    clouds, labels = [], []
    with open(manifest, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            parts = [p.strip() for p in line.split(",")]
            if len(parts) != 2:
                raise DataError(f"{manifest}: line {lineno}: expected 'path,label'")
            rel, label_text = parts
            try:
                label = int(label_text)
            except ValueError:
                if lineno == 1 and rel.lower() == "path":
                    continue  # header line
                raise DataError(f"{manifest}: line {lineno}: bad label {label_text!r}") from None
            clouds.append(load_cloud(os.path.join(root, rel)))
            labels.append(label)
    if not clouds:
        raise DataError(f"{manifest}: no samples listed")
    labels_arr = np.asarray(labels, dtype=int)
    return Dataset(clouds, labels_arr, num_classes=int(labels_arr.max()) + 1, split=split)


def _unit_sphere(rng: np.random.Generator, m: int) -> np.ndarray:
    g = rng.standard_normal((3, m))
    return g / np.linalg.norm(g, axis=0, keepdims=True)


def _base_shape(rng: np.random.Generator, label: int, m: int) -> np.ndarray:
    if label == 0:  # sphere
        return _unit_sphere(rng, m)
    if label == 1:  # prolate 3:1:1
        return np.diag([1.0, 1.0 / 3.0, 1.0 / 3.0]) @ _unit_sphere(rng, m)
    if label == 2:  # oblate 3:3:1
        return np.diag([1.0, 1.0, 1.0 / 3.0]) @ _unit_sphere(rng, m)
    # two separated spherical clusters
    half = m // 2
    pts = 0.25 * _unit_sphere(rng, m)
    pts[0, :half] -= 0.55
    pts[0, half:] += 0.55
    return pts


def synth_shapes(seed: int, n_per_class: int, points_per_cloud: int, split: str = "train") -> Dataset:
    """Four balanced classes of individually rotated, permuted, translated
    and jittered unit-scale shapes (noise sigma 0.02)."""
    if points_per_cloud < 8:
        raise DataError("points_per_cloud must be >= 8")
    rng = np.random.default_rng(seed)
    clouds, labels = [], []
    for label in range(4):
        for _ in range(n_per_class):
            pts = _base_shape(rng, label, points_per_cloud)
            pts = random_rotation(rng) @ pts
            pts = pts[:, rng.permutation(points_per_cloud)]
            pts = pts + rng.uniform(-0.5, 0.5, size=(3, 1))
            pts = pts + 0.02 * rng.standard_normal(pts.shape)
            clouds.append(pts)
            labels.append(label)
    return Dataset(clouds, np.asarray(labels, dtype=int), num_classes=4, split=split)


def rotation_z(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def augment(x: np.ndarray, protocol: str, rng: np.random.Generator) -> np.ndarray:
    """Apply a protocol rotation (before centralization): 'none', 'z'
    (uniform angle about the vertical axis) or 'so3' (Haar rotation)."""
    if protocol == "none":
        return np.asarray(x, dtype=float)
    if protocol == "z":
        return rotation_z(rng.uniform(0.0, 2.0 * np.pi)) @ x
    if protocol == "so3":
        return random_rotation(rng) @ x
    raise ValueError(f"unknown augmentation protocol {protocol!r}")
