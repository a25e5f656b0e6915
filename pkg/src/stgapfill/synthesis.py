"""Synthetic gap patterns and toy scenes, all pure functions of their seeds.

Stripe gaps imitate scan-line dropouts: periodic diagonal bands whose width
grows away from the image's center line, so gaps pinch shut near the middle.
Cloud gaps are unions of smooth elliptical blobs. Both hit the requested
coverage by thresholding a smooth field at the matching quantile, so the
achieved coverage is exact to within one pixel's worth of area per frame.
All bands of a frame share one mask, matching sensors where every band
drops out together.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import MaskCube, SequenceCube
from .errors import UnreachableCoverage

COVERAGE_FLOOR = 0.01
COVERAGE_CEIL = 0.95
COVERAGE_TOL = 0.05


@dataclass(frozen=True)
class GapSpec:
    """Parameters of one synthetic gap pattern; deterministic in `seed`."""

    kind: str                 # "slc_stripes" | "cloud_blobs"
    target_coverage: float
    seed: int
    stripe_angle: float = 15.0          # degrees off the row axis
    stripe_period: float = 14.0         # pixels between stripe center lines
    stripe_max_width: float = 8.0       # band width at the image edge
    blob_count: tuple[int, int] = (3, 7)
    blob_smoothness: float = 1.0        # scales blob radii
    blob_drift: float = 2.0             # cloud advection, pixels per frame

    def __post_init__(self):
        if self.kind not in ("slc_stripes", "cloud_blobs"):
            raise ValueError(f"unknown gap kind {self.kind!r}")
        if not 0.0 < self.target_coverage < 1.0:
            raise ValueError("target_coverage must lie in (0, 1)")
        if self.blob_count[0] < 1 or self.blob_count[1] < self.blob_count[0]:
            raise ValueError("blob_count must be an increasing range from >= 1")


def _check_target(target: float) -> None:
    if not COVERAGE_FLOOR <= target <= COVERAGE_CEIL:
        raise UnreachableCoverage(
            f"coverage {target} outside supported range "
            f"[{COVERAGE_FLOOR}, {COVERAGE_CEIL}]"
        )


def _threshold_field(field: np.ndarray, target: float) -> np.ndarray:
    """Missing = the `target` fraction of pixels with the smallest field value."""
    k = int(round(target * field.size))
    k = min(max(k, 0), field.size)
    if k == 0:
        return np.ones_like(field, dtype=np.uint8)
    cut = np.partition(field.reshape(-1), k - 1)[k - 1]
    missing = field <= cut
    return (~missing).astype(np.uint8)


def _coverage_of(frame_mask: np.ndarray) -> float:
    return float(np.mean(frame_mask == 0))


def synth_slc_mask(t: int, c: int, h: int, w: int, spec: GapSpec) -> MaskCube:
    """Diagonal stripe gaps widening from the image center, one phase per frame."""
    _check_target(spec.target_coverage)
    rng = np.random.default_rng((spec.seed & 0xFFFFFFFFFFFFFFFF, 0x51C))
    theta = math.radians(spec.stripe_angle)
    rows = np.arange(h, dtype=np.float64)[:, None]
    cols = np.arange(w, dtype=np.float64)[None, :]
    across = math.cos(theta) * rows - math.sin(theta) * cols
    along = math.sin(theta) * rows + math.cos(theta) * cols
    center = (math.sin(theta) * (h - 1) + math.cos(theta) * (w - 1)) / 2.0
    d_edge = np.abs(along - center)
    width = spec.stripe_max_width * d_edge / max(d_edge.max(), 1.0)
    frames = np.empty((t, h, w), dtype=np.uint8)
    for f in range(t):
        phase = rng.uniform(0.0, spec.stripe_period)
        offset = (across - phase) % spec.stripe_period
        dist = np.minimum(offset, spec.stripe_period - offset)
        with np.errstate(divide="ignore"):
            field = np.where(width > 0.25, dist / np.maximum(width, 1e-9), np.inf)
        if np.isfinite(field).mean() < spec.target_coverage:
            raise UnreachableCoverage(
                "stripe geometry cannot reach the requested coverage; "
                "increase stripe_max_width or lower the target"
            )
        frames[f] = _threshold_field(field, spec.target_coverage)
        achieved = _coverage_of(frames[f])
        if abs(achieved - spec.target_coverage) > COVERAGE_TOL:
            raise UnreachableCoverage(
                f"achieved {achieved:.3f} vs target {spec.target_coverage:.3f}"
            )
    return MaskCube(np.repeat(frames[:, None, :, :], c, axis=1))


def synth_cloud_mask(t: int, c: int, h: int, w: int, spec: GapSpec) -> MaskCube:
    """Blob gaps: seeded elliptical cloud field thresholded to the target.

    Clouds persist: each blob keeps its shape and advects by `blob_drift`
    pixels per frame, so gaps are temporally correlated the way real cloud
    cover is. Each frame is thresholded independently, keeping per-frame
    coverage on target.
    """
    _check_target(spec.target_coverage)
    rng = np.random.default_rng((spec.seed & 0xFFFFFFFFFFFFFFFF, 0xC10D))
    rows = np.arange(h, dtype=np.float64)[:, None]
    cols = np.arange(w, dtype=np.float64)[None, :]
    base_r = spec.blob_smoothness * 0.25 * min(h, w)
    count = int(rng.integers(spec.blob_count[0], spec.blob_count[1] + 1))
    centers = _spread_centers(rng, count, h, w)
    radii = [(base_r * rng.uniform(0.6, 1.4), base_r * rng.uniform(0.6, 1.4))
             for _ in centers]
    drift = rng.uniform(-spec.blob_drift, spec.blob_drift, size=(count, 2))
    frames = np.empty((t, h, w), dtype=np.uint8)
    for f in range(t):
        field = np.full((h, w), np.inf)
        for (ci, cj), (ri, rj), (di, dj) in zip(centers, radii, drift):
            d = np.sqrt(((rows - ci - di * f) / ri) ** 2
                        + ((cols - cj - dj * f) / rj) ** 2)
            field = np.minimum(field, d)
        frames[f] = _threshold_field(field, spec.target_coverage)
        achieved = _coverage_of(frames[f])
        if abs(achieved - spec.target_coverage) > COVERAGE_TOL:
            raise UnreachableCoverage(
                f"achieved {achieved:.3f} vs target {spec.target_coverage:.3f}"
            )
    return MaskCube(np.repeat(frames[:, None, :, :], c, axis=1))


def _spread_centers(rng: np.random.Generator, count: int, h: int, w: int) -> list:
    """Greedily pick `count` centers keeping them apart when space allows."""
    min_dist = 0.5 * min(h, w) / max(count ** 0.5, 1.0)
    centers: list[tuple[float, float]] = []
    for _ in range(count * 20):
        cand = (rng.uniform(0, h - 1), rng.uniform(0, w - 1))
        if all(math.hypot(cand[0] - a, cand[1] - b) >= min_dist for a, b in centers):
            centers.append(cand)
            if len(centers) == count:
                break
    while len(centers) < count:
        centers.append((rng.uniform(0, h - 1), rng.uniform(0, w - 1)))
    return centers


def synth_gap_mask(t: int, c: int, h: int, w: int, spec: GapSpec) -> MaskCube:
    if spec.kind == "slc_stripes":
        return synth_slc_mask(t, c, h, w, spec)
    return synth_cloud_mask(t, c, h, w, spec)


def synth_scene(t: int, c: int, h: int, w: int, seed: int) -> SequenceCube:
    """Smooth multi-band scene: static terrain, drifting features, band trends.

    Terrain is a mixture of low-frequency sinusoids; on top of it a few
    elliptical features drift a little every frame, and each band carries a
    slow brightness trend. Values are clamped to [0, 1].
    """
    rng = np.random.default_rng((seed & 0xFFFFFFFFFFFFFFFF, 0x5CE2E))
    rows = np.arange(h, dtype=np.float64)[:, None]
    cols = np.arange(w, dtype=np.float64)[None, :]

    terrain = np.zeros((h, w))
    for _ in range(4):
        fi = rng.uniform(0.5, 2.5) / h
        fj = rng.uniform(0.5, 2.5) / w
        phase = rng.uniform(0, 2 * math.pi)
        amp = rng.uniform(0.05, 0.12)
        terrain += amp * np.sin(2 * math.pi * (fi * rows + fj * cols) + phase)

    n_features = 5
    centers = rng.uniform(0.1, 0.9, size=(n_features, 2)) * [h, w]
    velocity = rng.uniform(-2.5, 2.5, size=(n_features, 2))
    radii = rng.uniform(0.08, 0.20, size=n_features) * min(h, w)
    amps = rng.uniform(0.15, 0.35, size=n_features) * rng.choice([-1.0, 1.0], n_features)
    band_gain = 1.0 + 0.15 * rng.standard_normal(c)
    band_trend = rng.uniform(-0.02, 0.02, size=c)

    data = np.empty((t, c, h, w), dtype=np.float64)
    for f in range(t):
        frame = terrain.copy()
        for k in range(n_features):
            ci = centers[k, 0] + velocity[k, 0] * f
            cj = centers[k, 1] + velocity[k, 1] * f
            d2 = ((rows - ci) ** 2 + (cols - cj) ** 2) / (radii[k] ** 2)
            frame = frame + amps[k] * np.exp(-d2)
        for b in range(c):
            data[f, b] = 0.5 + band_gain[b] * frame + band_trend[b] * f
    return SequenceCube(np.clip(data, 0.0, 1.0))
