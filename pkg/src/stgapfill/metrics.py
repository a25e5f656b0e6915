"""Evaluation metrics over synthetic-gap regions, plus the trivial baselines.

By default metrics are computed over gap pixels only (where ground truth was
synthetically removed, so it is known); full-image evaluation is available
behind the `region` flag. The structural similarity metric here is the
conventional windowed form (11x11 Gaussian, sigma 1.5); the global-statistics
variant used for training lives in the losses module.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import convolve

from .core import MaskCube, SequenceCube
from .errors import DimMismatch, EmptyRegion, TooSmall

EVAL_CSV_COLUMNS = ("mae", "sam_degrees", "psnr_db", "ssim", "pixel_count", "region")


@dataclass(frozen=True)
class EvalReport:
    """One row of evaluation results."""

    mae: float
    sam_degrees: float
    psnr_db: float
    ssim: float
    pixel_count: int
    region: str  # "gap-only" | "full"

    def to_json(self) -> str:
        return json.dumps({
            "mae": self.mae,
            "sam_degrees": self.sam_degrees,
            "psnr_db": self.psnr_db,
            "ssim": self.ssim,
            "pixel_count": self.pixel_count,
            "region": self.region,
        })

    def to_csv_row(self) -> str:
        return ",".join(str(getattr(self, c)) for c in EVAL_CSV_COLUMNS)


def _arrays(pred, truth, region_mask):
    p = pred.data if isinstance(pred, SequenceCube) else np.asarray(pred)
    t = truth.data if isinstance(truth, SequenceCube) else np.asarray(truth)
    r = region_mask.flags if isinstance(region_mask, MaskCube) else np.asarray(region_mask)
    if p.shape != t.shape or p.shape != r.shape:
        raise DimMismatch(
            f"shape mismatch: pred {p.shape}, truth {t.shape}, region {r.shape}"
        )
    return p, t, r.astype(bool)


def gap_region(m: MaskCube) -> np.ndarray:
    """Boolean region selecting the missing entries of a mask cube."""
    return m.flags == 0


def mae(pred, truth, region_mask) -> float:
    """Mean absolute error over the region."""
    p, t, r = _arrays(pred, truth, region_mask)
    if not r.any():
        raise EmptyRegion("region selects no pixels")
    return float(np.mean(np.abs(p[r] - t[r])))


def psnr(pred, truth, region_mask, peak: float = 1.0) -> float:
    """Per-frame 10*log10(peak^2 / MSE), averaged over frames with region pixels.

    A frame with zero error contributes +inf, making the mean +inf.
    """
    p, t, r = _arrays(pred, truth, region_mask)
    if not r.any():
        raise EmptyRegion("region selects no pixels")
    values = []
    for f in range(p.shape[0]):
        sel = r[f]
        if not sel.any():
            continue
        mse = float(np.mean((p[f][sel] - t[f][sel]) ** 2))
        values.append(math.inf if mse == 0.0 else 10.0 * math.log10(peak * peak / mse))
    return float(np.mean(values))


def sam(pred, truth, region_mask) -> float:
    """Mean spectral angle (degrees) over pixels with any region entry.

    The angle is between the C-band spectra at each (t, i, j); pixels where
    either spectrum has zero norm are skipped.
    """
    p, t, r = _arrays(pred, truth, region_mask)
    if not r.any():
        raise EmptyRegion("region selects no pixels")
    pixel_sel = r.any(axis=1)                       # (T, H, W)
    a = np.moveaxis(p, 1, -1)[pixel_sel]            # (K, C)
    b = np.moveaxis(t, 1, -1)[pixel_sel]
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    ok = (na > 0) & (nb > 0)
    if not ok.any():
        raise EmptyRegion("every selected pixel has a zero-norm spectrum")
    cosine = np.clip(np.sum(a[ok] * b[ok], axis=1) / (na[ok] * nb[ok]), -1.0, 1.0)
    return float(np.degrees(np.arccos(cosine)).mean())


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    half = size // 2
    coords = np.arange(-half, half + 1, dtype=np.float64)
    g = np.exp(-(coords ** 2) / (2 * sigma * sigma))
    window = np.outer(g, g)
    return window / window.sum()


_SSIM_WINDOW = _gaussian_window()


def _ssim_slice(a: np.ndarray, b: np.ndarray, c1: float, c2: float) -> float:
    """Windowed SSIM of one (H, W) slice; window means, valid region only."""
    w = _SSIM_WINDOW
    half = w.shape[0] // 2
    crop = (slice(half, a.shape[0] - half), slice(half, a.shape[1] - half))
    mu_a = convolve(a, w)[crop]
    mu_b = convolve(b, w)[crop]
    var_a = convolve(a * a, w)[crop] - mu_a ** 2
    var_b = convolve(b * b, w)[crop] - mu_b ** 2
    cov = convolve(a * b, w)[crop] - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def ssim_metric(pred, truth, c1: float = 1e-4, c2: float = 9e-4) -> float:
    """Windowed SSIM (11x11 Gaussian, sigma 1.5), mean over frame-channel slices."""
    p = pred.data if isinstance(pred, SequenceCube) else np.asarray(pred)
    t = truth.data if isinstance(truth, SequenceCube) else np.asarray(truth)
    if p.shape != t.shape:
        raise DimMismatch(f"shape mismatch: {p.shape} vs {t.shape}")
    if p.shape[2] < 11 or p.shape[3] < 11:
        raise TooSmall("windowed SSIM needs H, W >= 11")
    values = [
        _ssim_slice(p[f, c].astype(np.float64), t[f, c].astype(np.float64), c1, c2)
        for f in range(p.shape[0]) for c in range(p.shape[1])
    ]
    return float(np.mean(values))


def evaluate(pred, truth, m: MaskCube, region: str = "gap-only") -> EvalReport:
    """Compute the full report over the gap region or the whole cube."""
    if region not in ("gap-only", "full"):
        raise ValueError("region must be 'gap-only' or 'full'")
    sel = gap_region(m) if region == "gap-only" else np.ones(m.dims, dtype=bool)
    return EvalReport(
        mae=mae(pred, truth, sel),
        sam_degrees=sam(pred, truth, sel),
        psnr_db=psnr(pred, truth, sel),
        ssim=ssim_metric(pred, truth),
        pixel_count=int(sel.sum()),
        region=region,
    )


def baseline_impute(x: SequenceCube, m: MaskCube, method: str) -> SequenceCube:
    """Fill gaps along time per pixel-band series: last / nearest / linear.

    last: forward fill, then backward fill for leading gaps. nearest: the
    temporally closest observation, earlier on ties. linear: interpolate
    between bracketing observations, held constant past the ends. A series
    with no observations at all is filled with 0.5.
    """
    if method not in ("last", "nearest", "linear"):
        raise ValueError(f"unknown baseline {method!r}")
    t = x.dims[0]
    values = x.data.reshape(t, -1).astype(np.float64)
    observed = m.flags.reshape(t, -1).astype(bool)

    steps = np.arange(t)[:, None]
    # Index of the latest observation at or before t (-1: none yet).
    prev_idx = np.where(observed, steps, -1)
    prev_idx = np.maximum.accumulate(prev_idx, axis=0)
    # Index of the earliest observation at or after t (t: none remaining).
    next_idx = np.where(observed, steps, t)
    next_idx = np.minimum.accumulate(next_idx[::-1], axis=0)[::-1]

    has_prev = prev_idx >= 0
    has_next = next_idx < t
    col = np.arange(values.shape[1])[None, :]
    prev_val = np.where(has_prev, values[np.clip(prev_idx, 0, t - 1), col], 0.0)
    next_val = np.where(has_next, values[np.clip(next_idx, 0, t - 1), col], 0.0)

    if method == "last":
        out = np.where(has_prev, prev_val, next_val)
    elif method == "nearest":
        d_prev = np.where(has_prev, steps - prev_idx, t + 1)
        d_next = np.where(has_next, next_idx - steps, t + 1)
        out = np.where(d_prev <= d_next, prev_val, next_val)
        out = np.where(has_prev | has_next, out, 0.0)
    else:
        both = has_prev & has_next
        span = np.maximum(np.where(both, next_idx - prev_idx, 1), 1)
        frac = np.where(both, (steps - prev_idx) / span, 0.0)
        interp = prev_val + frac * (next_val - prev_val)
        out = np.where(both, interp,
                       np.where(has_prev, prev_val, next_val))

    none_at_all = ~(observed.any(axis=0))[None, :]
    out = np.where(none_at_all, 0.5, out)
    out = np.where(observed, values, out)
    return SequenceCube(out.reshape(x.dims).astype(x.data.dtype))
