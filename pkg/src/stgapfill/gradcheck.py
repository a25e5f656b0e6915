"""Central-finite-difference verification of every differentiable operation.

Each registered check builds a seeded 64-bit toy problem, reduces the op's
output to a scalar through a fixed random projection, and compares the
engine's reverse-mode gradients against central differences. Error is
reported per parameter tensor as max|analytic - numeric| normalized by the
largest gradient magnitude seen in that tensor, so near-zero entries are
judged on the op's own gradient scale.

Purely linear ops (embed, unembed) must agree to 1e-6; everything that goes
through a softmax, ReLU, or quotient gets 1e-4.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .attention import (AttentionMaskFlags, feature_extractor, ffn,
                        masked_attention, masked_spatial_attention,
                        masked_temporal_attention, spatiotemporal_block)
from .core import (MaskCube, ModelConfig, ScaleConfig, SequenceCube,
                   init_parameters, parameter_shapes)
from .embedding import TokenSequence, embed, unembed
from .losses import FeatureNetwork, perceptual_loss, pixel_loss, structural_loss
from .network import multiscale_forward, scale_forward

LINEAR_TOL = 1e-6
NONLINEAR_TOL = 1e-4
DEFAULT_EPS = 1e-5


@dataclass
class CheckResult:
    name: str
    max_rel_err: float
    tol: float
    worst_tensor: str
    worst_coord: tuple

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tol


def finite_difference(f: Callable[[], float], array: np.ndarray,
                      eps: float = DEFAULT_EPS) -> np.ndarray:
    """Central differences of scalar f with respect to `array`, in place."""
    grad = np.zeros_like(array)
    flat = array.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + eps
        hi = f()
        flat[i] = keep - eps
        lo = f()
        flat[i] = keep
        gflat[i] = (hi - lo) / (2.0 * eps)
    return grad


def compare_gradients(name: str, forward: Callable[[], Tensor],
                      leaves: dict[str, Tensor], tol: float,
                      eps: float = DEFAULT_EPS) -> CheckResult:
    """Backward pass vs central differences over every leaf tensor."""
    for leaf in leaves.values():
        leaf.grad = None
    forward().backward()
    analytic = {k: (t.grad if t.grad is not None else np.zeros_like(t.data))
                for k, t in leaves.items()}

    worst = 0.0
    worst_tensor = ""
    worst_coord: tuple = ()
    for key, leaf in leaves.items():
        numeric = finite_difference(lambda: float(forward().data), leaf.data, eps)
        scale = max(np.max(np.abs(analytic[key])), np.max(np.abs(numeric)), 1e-12)
        err = np.abs(analytic[key] - numeric) / scale
        idx = np.unravel_index(np.argmax(err), err.shape) if err.size else ()
        if err.size and err[idx] > worst:
            worst = float(err[idx])
            worst_tensor = key
            worst_coord = tuple(int(v) for v in idx)
    return CheckResult(name, worst, tol, worst_tensor, worst_coord)


# -- toy builders -----------------------------------------------------------------


def _projection(rng: np.random.Generator, shape) -> Tensor:
    return Tensor(rng.standard_normal(shape))


def _leaf(rng: np.random.Generator, shape, scale: float = 0.5) -> Tensor:
    return Tensor(rng.standard_normal(shape) * scale, requires_grad=True)


def _toy_scale(patch=2, d_emb=8, heads=2, d_qkv=4, layers=1) -> ScaleConfig:
    return ScaleConfig(patch=patch, d_emb=d_emb, heads=heads, d_qkv=d_qkv, layers=layers)


def _scale_leaves(rng, scale: ScaleConfig, bands: int, prefix: str) -> dict[str, Tensor]:
    """Randomized 64-bit parameters for one scale (unembedding included)."""
    cfg = ModelConfig(scales=(scale,), bands=bands)
    leaves = {}
    for name, (shape, kind) in parameter_shapes(cfg).items():
        name = prefix + name.split(".", 1)[1]
        if kind == "ones":
            base = np.ones(shape) + 0.1 * rng.standard_normal(shape)
        else:
            base = rng.standard_normal(shape) * 0.4
        leaves[name] = Tensor(base, requires_grad=True)
    return leaves


def _toy_sequence(rng, t=2, n=4, d_emb=8, masked=None) -> tuple[TokenSequence, AttentionMaskFlags]:
    tokens = _leaf(rng, (t * n, d_emb))
    pos = np.arange(t * n)
    mr = rng.uniform(0.0, 1.0, size=t * n)
    if masked is not None:
        mr = np.where(masked, 0.9, 0.1)
    seq = TokenSequence(tokens=tokens, t_coords=pos // n, n_coords=pos % n,
                        missing_rate=mr, frames=t, patches_per_frame=n, patch=2)
    return seq, AttentionMaskFlags.from_missing_rate(mr, 0.5)


def _check_embed(seed: int) -> CheckResult:
    rng = np.random.default_rng(seed)
    scale = _toy_scale(patch=2, d_emb=6)
    t, c, h, w = 2, 1, 4, 4
    x = Tensor(rng.uniform(0, 1, (t, c, h, w)))
    m = (rng.uniform(size=(t, c, h, w)) > 0.3).astype(float)
    leaves = {
        "embed.weight": _leaf(rng, (2 * c * 4, scale.d_emb)),
        "embed.bias": _leaf(rng, (scale.d_emb,)),
    }
    proj = _projection(rng, (t * 4, scale.d_emb))

    def forward():
        seq = embed(x, m, scale, leaves, "")
        return ad.tsum(ad.mul(seq.tokens, proj))

    return compare_gradients("embed", forward, leaves, LINEAR_TOL)


def _check_unembed(seed: int) -> CheckResult:
    rng = np.random.default_rng(seed)
    scale = _toy_scale(patch=2, d_emb=6)
    t, c, h, w = 1, 1, 4, 4
    seq, _ = _toy_sequence(rng, t=t, n=4, d_emb=scale.d_emb)
    leaves = {
        "unembed.weight": _leaf(rng, (scale.d_emb, c * 4)),
        "unembed.bias": _leaf(rng, (c * 4,)),
        "tokens": seq.tokens,
    }
    proj = _projection(rng, (t, c, h, w))

    def forward():
        return ad.tsum(ad.mul(unembed(seq, scale, leaves, "", c, h, w), proj))

    return compare_gradients("unembed", forward, leaves, LINEAR_TOL)


def _attention_leaves(rng, d, heads, d_qkv, prefix) -> dict[str, Tensor]:
    return {
        prefix + "qkv.weight": _leaf(rng, (d, 3 * heads * d_qkv)),
        prefix + "proj.weight": _leaf(rng, (heads * d_qkv, d)),
    }


def _check_masked_attention(seed: int) -> CheckResult:
    rng = np.random.default_rng(seed)
    n, d, heads, d_qkv = 5, 6, 2, 3
    x = _leaf(rng, (n, d))
    flags = AttentionMaskFlags(np.array([False, True, False, False, True]))
    leaves = _attention_leaves(rng, d, heads, d_qkv, "")
    leaves["x"] = x
    proj = _projection(rng, (n, d))

    def forward():
        return ad.tsum(ad.mul(masked_attention(x, flags, leaves, "", heads, d_qkv), proj))

    return compare_gradients("masked_attention", forward, leaves, NONLINEAR_TOL)


def _check_axis(seed: int, which: str) -> CheckResult:
    rng = np.random.default_rng(seed)
    scale = _toy_scale(d_emb=8, heads=2, d_qkv=4)
    seq, flags = _toy_sequence(rng, t=3, n=4, d_emb=8)
    prefix = "temporal." if which == "mta" else "spatial."
    leaves = _attention_leaves(rng, 8, 2, 4, prefix)
    leaves["tokens"] = seq.tokens
    proj = _projection(rng, (12, 8))
    op = masked_temporal_attention if which == "mta" else masked_spatial_attention

    def forward():
        return ad.tsum(ad.mul(op(seq, flags, leaves, "", scale).tokens, proj))

    return compare_gradients(which, forward, leaves, NONLINEAR_TOL)


def _check_ffn(seed: int) -> CheckResult:
    rng = np.random.default_rng(seed)
    n, d = 4, 6
    x = _leaf(rng, (n, d))
    leaves = {
        "w1": _leaf(rng, (d, 4 * d)),
        "b1": _leaf(rng, (4 * d,), 0.2),
        "w2": _leaf(rng, (4 * d, d)),
        "b2": _leaf(rng, (d,), 0.2),
        "x": x,
    }
    proj = _projection(rng, (n, d))

    def forward():
        return ad.tsum(ad.mul(ffn(x, leaves, ""), proj))

    return compare_gradients("ffn", forward, leaves, NONLINEAR_TOL)


def _check_block(seed: int, depth: str) -> CheckResult:
    rng = np.random.default_rng(seed)
    layers = 1 if depth == "msta" else 2
    scale = _toy_scale(d_emb=8, heads=2, d_qkv=4, layers=layers)
    seq, flags = _toy_sequence(rng, t=2, n=4, d_emb=8)
    leaves = _scale_leaves(rng, scale, bands=1, prefix="")
    for name in ("embed.weight", "embed.bias", "unembed.weight", "unembed.bias"):
        del leaves[name]
    leaves["tokens"] = seq.tokens
    proj = _projection(rng, (8, 8))

    if depth == "msta":
        def forward():
            return ad.tsum(ad.mul(
                spatiotemporal_block(seq, flags, scale, leaves, "layer0.").tokens, proj))
    else:
        def forward():
            return ad.tsum(ad.mul(
                feature_extractor(seq, flags, scale, leaves, "").tokens, proj))

    return compare_gradients(depth, forward, leaves, NONLINEAR_TOL)


def _check_scale_forward(seed: int) -> CheckResult:
    rng = np.random.default_rng(seed)
    scale = _toy_scale(patch=4, d_emb=8, heads=2, d_qkv=4, layers=1)
    t, c, h, w = 2, 1, 8, 8
    x = Tensor(rng.uniform(0, 1, (t, c, h, w)))
    m = MaskCube((rng.uniform(size=(t, c, h, w)) > 0.4).astype(float))
    leaves = _scale_leaves(rng, scale, bands=c, prefix="")
    proj = _projection(rng, (t, c, h, w))

    def forward():
        return ad.tsum(ad.mul(scale_forward(x, m, scale, leaves, ""), proj))

    return compare_gradients("scale_forward", forward, leaves, NONLINEAR_TOL)


def _full_model_problem(seed: int):
    rng = np.random.default_rng(seed)
    config = ModelConfig(
        scales=(_toy_scale(patch=4, d_emb=8, heads=2, d_qkv=4, layers=1),
                _toy_scale(patch=2, d_emb=6, heads=2, d_qkv=3, layers=1)),
        bands=1,
    )
    t, c, h, w = 2, 1, 8, 8
    x = SequenceCube(rng.uniform(0, 1, (t, c, h, w)))
    m = MaskCube((rng.uniform(size=(t, c, h, w)) > 0.4).astype(float))
    y = SequenceCube(rng.uniform(0, 1, (t, c, h, w)))
    store = init_parameters(config, seed, dtype=np.float64)
    leaves = {}
    for name, arr in store.values.items():
        base = arr.copy()
        if not base.any():  # zero-initialized entries would hide gradient paths
            base = rng.standard_normal(base.shape) * 0.3
        leaves[name] = Tensor(base, requires_grad=True)
    return config, x, m, y, leaves


def _check_full_model(seed: int) -> CheckResult:
    from .losses import joint_loss  # local import to keep module load light

    config, x, m, y, leaves = _full_model_problem(seed)
    feat = FeatureNetwork.build(config.bands, config.feature_seed)

    def forward():
        trace = multiscale_forward(x, m, config, leaves)
        return joint_loss(trace, y, config, feat).node

    return compare_gradients("full_model", forward, leaves, NONLINEAR_TOL)


def _check_loss(seed: int, which: str) -> CheckResult:
    rng = np.random.default_rng(seed)
    t, c, h, w = 1, 1, 8, 8
    eta = _leaf(rng, (t, c, h, w), 0.3)
    y = Tensor(rng.uniform(0, 1, (t, c, h, w)))
    leaves = {"eta": eta}
    if which == "pixel_loss":
        forward = lambda: pixel_loss(eta, y)
        tol = LINEAR_TOL * 100  # quadratic, still kink-free
    elif which == "structural_loss":
        forward = lambda: structural_loss(eta, y)
        tol = NONLINEAR_TOL
    else:
        feat = FeatureNetwork.build(c, 7)
        forward = lambda: perceptual_loss(eta, y, feat)
        tol = NONLINEAR_TOL
    return compare_gradients(which, forward, leaves, tol)


CHECKS: dict[str, Callable[[int], CheckResult]] = {
    "embed": _check_embed,
    "unembed": _check_unembed,
    "masked_attention": _check_masked_attention,
    "mta": lambda s: _check_axis(s, "mta"),
    "msa": lambda s: _check_axis(s, "msa"),
    "ffn": _check_ffn,
    "msta": lambda s: _check_block(s, "msta"),
    "mfe": lambda s: _check_block(s, "mfe"),
    "scale_forward": _check_scale_forward,
    "full_model": _check_full_model,
    "pixel_loss": lambda s: _check_loss(s, "pixel_loss"),
    "structural_loss": lambda s: _check_loss(s, "structural_loss"),
    "perceptual_loss": lambda s: _check_loss(s, "perceptual_loss"),
}

MODULE_SUITES = {
    "embedding": ("embed", "unembed"),
    "attention": ("masked_attention", "mta", "msa", "ffn", "msta", "mfe"),
    "network": ("scale_forward", "full_model"),
    "losses": ("pixel_loss", "structural_loss", "perceptual_loss"),
}


def run_suite(names=None, seed: int = 20240501) -> list[CheckResult]:
    """Run named checks (default: all) and return their results."""
    if names is None:
        names = list(CHECKS)
    return [CHECKS[name](seed) for name in names]
