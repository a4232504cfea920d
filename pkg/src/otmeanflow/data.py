"""Seeded samplers for the 2D toy distribution pairs, plus CSV point I/O.

All generated datasets are standardized to roughly unit scale with fixed,
documented constants so that squared-Wasserstein magnitudes are stable across
runs.  Bounding boxes (after standardization, excluding additive noise):

* gaussian          -- standard normal, practically inside |x| < 6
* eight_gaussians   -- modes on a radius-8 circle with component std 0.5,
                       divided by sqrt(8^2/2 + 0.5^2); inside |x| < 1.7 + noise
* moons             -- two interleaving half-circles, noise std 0.05,
                       centered at (0.5, 0.25) and divided by 0.705
* scurve            -- 2D projection (x, z) of the S-curve manifold,
                       noise std 0.05, divided by 1.101
* checkerboard      -- uniform over "on" squares of a 4x4 unit grid on [-2, 2]^2
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

DATASET_KINDS = ("gaussian", "eight_gaussians", "moons", "scurve", "checkerboard", "file")

EIGHT_GAUSSIANS_RADIUS = 8.0
EIGHT_GAUSSIANS_STD = 0.5
# per-coordinate std of the mixture: sqrt(R^2 / 2 + sigma^2)
EIGHT_GAUSSIANS_SCALE = float(np.sqrt(EIGHT_GAUSSIANS_RADIUS**2 / 2 + EIGHT_GAUSSIANS_STD**2))

MOONS_NOISE = 0.05
MOONS_CENTER = np.array([0.5, 0.25])
MOONS_SCALE = 0.705

SCURVE_NOISE = 0.05
SCURVE_SCALE = 1.101

CHECKERBOARD_EXTENT = 2.0

# generous post-standardization boxes, asserted in tests (noise included)
BOUNDING_BOXES = {
    "gaussian": (6.0, 6.0),
    "eight_gaussians": (2.0, 2.0),
    "moons": (2.5, 1.6),
    "scurve": (1.2, 2.1),
    "checkerboard": (2.0, 2.0),
}


@dataclass
class PointBatch:
    """An ordered set of d-dimensional points with implicit uniform weights."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[0] < 1:
            raise ValueError(f"points must be a nonempty (n, d) array, got shape {pts.shape}")
        if not np.isfinite(pts).all():
            raise ValueError("points contain NaN/Inf")
        self.points = pts

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]


@dataclass
class DatasetSpec:
    kind: str
    scale: float = 1.0
    path: str | None = None

    def __post_init__(self):
        if self.kind not in DATASET_KINDS:
            raise ValueError(f"unknown dataset kind {self.kind!r}")
        if self.kind == "file" and not self.path:
            raise ValueError("file dataset requires a path")
        if self.kind != "file" and self.path:
            raise ValueError(f"path given for non-file dataset {self.kind!r}")
        if self.scale <= 0:
            raise ValueError("scale must be positive")


def _sample_gaussian(n, rng):
    return rng.standard_normal((n, 2))


def _sample_eight_gaussians(n, rng):
    angles = np.arange(8) * (2 * np.pi / 8)
    centers = EIGHT_GAUSSIANS_RADIUS * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    which = rng.integers(0, 8, size=n)
    pts = centers[which] + EIGHT_GAUSSIANS_STD * rng.standard_normal((n, 2))
    return pts / EIGHT_GAUSSIANS_SCALE


def _sample_moons(n, rng):
    n_outer = n // 2
    n_inner = n - n_outer
    theta_out = rng.uniform(0.0, np.pi, size=n_outer)
    theta_in = rng.uniform(0.0, np.pi, size=n_inner)
    outer = np.stack([np.cos(theta_out), np.sin(theta_out)], axis=1)
    inner = np.stack([1.0 - np.cos(theta_in), 0.5 - np.sin(theta_in)], axis=1)
    pts = np.concatenate([outer, inner], axis=0)
    rng.shuffle(pts, axis=0)
    pts += MOONS_NOISE * rng.standard_normal((n, 2))
    return (pts - MOONS_CENTER) / MOONS_SCALE


def _sample_scurve(n, rng):
    t = rng.uniform(-1.5 * np.pi, 1.5 * np.pi, size=n)
    pts = np.stack([np.sin(t), np.sign(t) * (np.cos(t) - 1.0)], axis=1)
    pts += SCURVE_NOISE * rng.standard_normal((n, 2))
    return pts / SCURVE_SCALE


def _sample_checkerboard(n, rng):
    # "on" squares of the 4x4 grid on [-2, 2]^2 are those with even i+j
    i = rng.integers(0, 4, size=n)
    j = 2 * rng.integers(0, 2, size=n) + (i % 2)
    xy = rng.uniform(0.0, 1.0, size=(n, 2))
    pts = np.stack([i + xy[:, 0], j + xy[:, 1]], axis=1) - CHECKERBOARD_EXTENT
    return pts


_SAMPLERS = {
    "gaussian": _sample_gaussian,
    "eight_gaussians": _sample_eight_gaussians,
    "moons": _sample_moons,
    "scurve": _sample_scurve,
    "checkerboard": _sample_checkerboard,
}


def sample(spec: DatasetSpec, n: int, rng: np.random.Generator) -> PointBatch:
    """Draw n i.i.d. points from the dataset; deterministic given the rng state."""
    if n < 1:
        raise ValueError("need at least one sample")
    if spec.kind == "file":
        batch = load_csv(spec.path)
        if batch.n < n:
            raise ValueError(f"file dataset has {batch.n} points, requested {n}")
        idx = rng.choice(batch.n, size=n, replace=False)
        return PointBatch(batch.points[idx] * spec.scale)
    pts = _SAMPLERS[spec.kind](n, rng)
    return PointBatch(pts * spec.scale)


def checkerboard_on_square(points: np.ndarray) -> np.ndarray:
    """Boolean membership of points in the analytic 'on' squares (unit scale)."""
    ij = np.floor(points + CHECKERBOARD_EXTENT).astype(int)
    inside = np.all((points >= -CHECKERBOARD_EXTENT) & (points < CHECKERBOARD_EXTENT), axis=1)
    return inside & ((ij[:, 0] + ij[:, 1]) % 2 == 0)


def load_csv(path) -> PointBatch:
    """Load points from CSV, one point per row, preserving row order."""
    rows = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            try:
                rows.append([float(v) for v in row])
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: cannot parse row {row!r}") from exc
            if len(rows[-1]) != len(rows[0]):
                raise ValueError(f"{path}:{lineno}: ragged row of length {len(rows[-1])}")
    if not rows:
        raise ValueError(f"{path}: no points")
    return PointBatch(np.array(rows, dtype=float))


def save_csv(path, batch: PointBatch) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for row in batch.points:
            writer.writerow([repr(float(v)) for v in row])
