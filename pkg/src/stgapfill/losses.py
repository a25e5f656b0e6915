"""Pixel, structural, and perceptual losses plus their per-scale combination.

The structural term uses whole-slice statistics (one mean/variance/covariance
per frame-channel slice), which is the form the training objective is written
in; the conventional windowed similarity lives in the metrics module. The
perceptual term compares activations of a fixed, seeded, three-layer conv
stack; weights are drawn once and never trained, so the term is a
deterministic function of its inputs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, relu
from .core import ModelConfig, SequenceCube
from .errors import DimMismatch
from .network import RestorationTrace

SSIM_C1 = 1e-4   # (0.01 * range)^2 with unit dynamic range
SSIM_C2 = 9e-4   # (0.03 * range)^2


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    if isinstance(x, SequenceCube):
        return Tensor(x.data)
    return Tensor(np.asarray(x))


def _check_same_dims(a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise DimMismatch(f"loss inputs differ in shape: {a.shape} vs {b.shape}")


def pixel_loss(eta, y) -> Tensor:
    """Mean squared error over every entry, observed and missing alike."""
    eta, y = _as_tensor(eta), _as_tensor(y)
    _check_same_dims(eta, y)
    diff = ad.sub(eta, y)
    return ad.tmean(ad.mul(diff, diff))


def structural_loss(eta, y) -> Tensor:
    """1 - SSIM from whole-slice statistics, averaged over T*C slices."""
    eta, y = _as_tensor(eta), _as_tensor(y)
    _check_same_dims(eta, y)
    axes = (2, 3)
    mu_e = ad.tmean(eta, axis=axes, keepdims=True)
    mu_y = ad.tmean(y, axis=axes, keepdims=True)
    ce = ad.sub(eta, mu_e)
    cy = ad.sub(y, mu_y)
    var_e = ad.tmean(ad.mul(ce, ce), axis=axes, keepdims=True)
    var_y = ad.tmean(ad.mul(cy, cy), axis=axes, keepdims=True)
    cov = ad.tmean(ad.mul(ce, cy), axis=axes, keepdims=True)
    num = ad.mul(ad.add(ad.mul(ad.mul(mu_e, mu_y), Tensor(2.0)), Tensor(SSIM_C1)),
                 ad.add(ad.mul(cov, Tensor(2.0)), Tensor(SSIM_C2)))
    den = ad.mul(ad.add(ad.add(ad.mul(mu_e, mu_e), ad.mul(mu_y, mu_y)), Tensor(SSIM_C1)),
                 ad.add(ad.add(var_e, var_y), Tensor(SSIM_C2)))
    ssim = ad.div(num, den)
    return ad.sub(Tensor(1.0), ad.tmean(ssim))


@dataclass(frozen=True)
class FeatureNetwork:
    """Fixed conv stack: 3x3 kernels, stride 2, widths (16, 32, 64), ReLU between.

    Weights are a pure function of (seed, bands); they are immutable after
    construction and shared freely across threads.
    """

    weights: tuple[np.ndarray, ...]
    bands: int
    seed: int

    WIDTHS = (16, 32, 64)

    @classmethod
    def build(cls, bands: int, seed: int) -> "FeatureNetwork":
        rng = np.random.default_rng((seed & 0xFFFFFFFFFFFFFFFF, 0x5EED))
        weights = []
        c_in = bands
        for c_out in cls.WIDTHS:
            fan_in = c_in * 9
            w = rng.standard_normal((c_out, c_in, 3, 3)) / np.sqrt(fan_in)
            w.setflags(write=False)
            weights.append(w)
            c_in = c_out
        return cls(weights=tuple(weights), bands=bands, seed=seed)

    def features(self, x: Tensor) -> Tensor:
        """Apply the stack to a (T, C, H, W) batch of frames."""
        if x.shape[1] != self.bands:
            raise DimMismatch(f"feature network built for {self.bands} bands, got {x.shape[1]}")
        cur = x
        for i, w in enumerate(self.weights):
            cur = _conv2d_s2p1(cur, w.astype(cur.dtype))
            if i < len(self.weights) - 1:
                cur = relu(cur)
        return cur


_CONV_INDEX_CACHE: dict[tuple, np.ndarray] = {}


def _conv_window_index(shape: tuple[int, int, int, int]) -> np.ndarray:
    """Flat gather index turning a padded (T,C,Hp,Wp) array into conv columns."""
    if shape in _CONV_INDEX_CACHE:
        return _CONV_INDEX_CACHE[shape]
    t, c, hp, wp = shape
    ho = (hp - 3) // 2 + 1
    wo = (wp - 3) // 2 + 1
    rows = (np.arange(ho) * 2)[:, None] + np.arange(3)[None, :]      # (ho, 3)
    cols = (np.arange(wo) * 2)[:, None] + np.arange(3)[None, :]      # (wo, 3)
    per_frame = (np.arange(c)[None, None, :, None, None] * hp * wp
                 + rows[:, None, None, :, None] * wp
                 + cols[None, :, None, None, :])                     # (ho, wo, c, 3, 3)
    per_frame = per_frame.reshape(ho * wo, c * 9)
    idx = (np.arange(t)[:, None, None] * (c * hp * wp) + per_frame[None])
    _CONV_INDEX_CACHE[shape] = idx
    return idx


def _conv2d_s2p1(x: Tensor, w: np.ndarray) -> Tensor:
    """3x3 convolution, stride 2, zero padding 1, via gather + matmul."""
    t, c, h, wi = x.shape
    c_out = w.shape[0]
    padded = ad.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    idx = _conv_window_index(padded.shape)
    ho = (h + 2 - 3) // 2 + 1
    wo = (wi + 2 - 3) // 2 + 1
    cols = ad.take_flat(padded, idx)                       # (t, ho*wo, c*9)
    out = ad.matmul(cols, Tensor(w.reshape(c_out, -1).T))  # (t, ho*wo, c_out)
    return ad.transpose(ad.reshape(out, (t, ho, wo, c_out)), (0, 3, 1, 2))


def perceptual_loss(eta, y, feat: FeatureNetwork) -> Tensor:
    """Per frame, mean squared feature difference; averaged over frames."""
    eta, y = _as_tensor(eta), _as_tensor(y)
    _check_same_dims(eta, y)
    diff = ad.sub(feat.features(eta), feat.features(y))
    return ad.tmean(ad.mul(diff, diff))


@dataclass
class LossBreakdown:
    """Scalar summary of one joint-loss evaluation.

    `pixel` / `structural` / `perceptual` are means of the per-scale
    components; `per_scale` lists each scale's weighted combination and
    `total` is their mean. `node` carries the differentiable total.
    """

    pixel: float
    structural: float
    perceptual: float
    per_scale: list[float]
    total: float
    node: Optional[Tensor] = None


def joint_loss(trace: RestorationTrace, y, config: ModelConfig,
               feat: Optional[FeatureNetwork] = None) -> LossBreakdown:
    """Weighted pixel/structural/perceptual loss per scale, averaged over scales.

    Components with a zero weight are skipped (reported as 0.0), so pure
    pixel-wise training never builds the structural or perceptual graphs.
    """
    lam1, lam2, lam3 = config.loss_weights
    if lam3 > 0 and feat is None:
        raise ValueError("perceptual weight is positive but no feature network given")
    y_t = _as_tensor(y)
    pix_vals, str_vals, per_vals = [], [], []
    scale_nodes = []
    for node in trace.nodes:
        terms = []
        pl = pixel_loss(node, y_t)
        pix_vals.append(float(pl.data))
        terms.append(ad.mul(pl, Tensor(lam1)))
        if lam2 > 0:
            sl = structural_loss(node, y_t)
            str_vals.append(float(sl.data))
            terms.append(ad.mul(sl, Tensor(lam2)))
        else:
            str_vals.append(0.0)
        if lam3 > 0:
            pc = perceptual_loss(node, y_t, feat)
            per_vals.append(float(pc.data))
            terms.append(ad.mul(pc, Tensor(lam3)))
        else:
            per_vals.append(0.0)
        combined = terms[0]
        for t in terms[1:]:
            combined = ad.add(combined, t)
        scale_nodes.append(combined)
    total_node = scale_nodes[0]
    for node in scale_nodes[1:]:
        total_node = ad.add(total_node, node)
    total_node = ad.div(total_node, Tensor(float(len(scale_nodes))))
    per_scale = [float(n.data) for n in scale_nodes]
    return LossBreakdown(
        pixel=float(np.mean(pix_vals)),
        structural=float(np.mean(str_vals)),
        perceptual=float(np.mean(per_vals)),
        per_scale=per_scale,
        total=float(total_node.data),
        node=total_node,
    )
