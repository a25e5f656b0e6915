"""Masked multi-head self-attention applied along the time and patch axes.

Attention scores are masked two ways before the softmax: the diagonal is
always removed so no token can attend to itself, and tokens whose patch
missing rate exceeds the configured ceiling are removed as keys so gap-heavy
patches cannot contaminate the others. A row whose every score is masked
falls back to a zero attention vector, letting the residual pass its input
through unchanged.

The temporal variant regroups the pos = t*N + n token sequence into N
independent length-T sequences; the spatial variant into T independent
length-N sequences. Running both in turn costs h*d_qkv*(N*T^2 + T*N^2) score
multiply-accumulates per block instead of h*d_qkv*(T*N)^2 for attention over
the joint sequence; the module-level counter tracks the exact count so the
benchmark can verify it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, layer_norm, relu
from .core import ScaleConfig
from .embedding import TokenSequence, positional_encoding
from .errors import ShapeMismatch


class ScoreMacCounter:
    """Running count of attention-score multiply-accumulates."""

    __slots__ = ("count",)

    def __init__(self):
        self.count = 0

    def reset(self) -> None:
        self.count = 0

    def add(self, n: int) -> None:
        self.count += int(n)


SCORE_MACS = ScoreMacCounter()


def joint_score_macs(t: int, n: int, heads: int, d_qkv: int) -> int:
    """Score MACs for one attention pass over the joint T*N sequence."""
    return heads * d_qkv * (t * n) ** 2


def separated_score_macs(t: int, n: int, heads: int, d_qkv: int) -> int:
    """Score MACs for one temporal pass plus one spatial pass."""
    return heads * d_qkv * (n * t * t + t * n * n)


@dataclass(frozen=True)
class AttentionMaskFlags:
    """Per-token mask decisions; True marks a token exceeding the missing-rate cap.

    Flags are computed once per scale from the original mask cube and stay
    fixed across all layers. Under the default "key" mode a flagged token is
    removed as an attention key; the "query" ablation removes its row instead.
    """

    key_masked: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "key_masked", np.asarray(self.key_masked, dtype=bool))

    @classmethod
    def from_missing_rate(cls, missing_rate: np.ndarray, c_max: float) -> "AttentionMaskFlags":
        return cls(np.asarray(missing_rate) > c_max)


def _mask_bool(key_masked: np.ndarray, mode: str) -> np.ndarray:
    n = key_masked.shape[-1]
    diagonal = np.eye(n, dtype=bool)
    if mode == "key":
        return key_masked[..., None, :] | diagonal
    if mode == "query":
        return key_masked[..., :, None] | diagonal
    raise ValueError(f"unknown mask mode {mode!r}")


def apply_mask(scores, flags: AttentionMaskFlags | np.ndarray, mode: str = "key"):
    """Set masked score entries to -inf: the diagonal always, plus every
    column of a flagged key (or row of a flagged query in "query" mode)."""
    key_masked = flags.key_masked if isinstance(flags, AttentionMaskFlags) else np.asarray(flags, dtype=bool)
    is_tensor = isinstance(scores, Tensor)
    shape = scores.shape if is_tensor else np.asarray(scores).shape
    if len(shape) < 2 or shape[-1] != shape[-2]:
        raise ShapeMismatch(f"scores must be square in the last two dims, got {shape}")
    if key_masked.shape[-1] != shape[-1]:
        raise ShapeMismatch(
            f"flags cover {key_masked.shape[-1]} tokens, scores are {shape[-1]}x{shape[-1]}"
        )
    bad = _mask_bool(key_masked, mode)
    if is_tensor:
        return ad.mask_fill(scores, bad, -np.inf)
    return np.where(np.broadcast_to(bad, shape), -np.inf, np.asarray(scores, dtype=float))


def masked_attention(seq, flags, params: dict[str, Tensor], prefix: str,
                     heads: int, d_qkv: int, mode: str = "key") -> Tensor:
    """Multi-head attention with masking, output projection, and residual add.

    `seq` is (..., n, d); leading axes are independent sequences sharing
    parameters. `flags` covers the same leading axes with one bool per token.
    """
    x = seq if isinstance(seq, Tensor) else Tensor(np.asarray(seq))
    key_masked = flags.key_masked if isinstance(flags, AttentionMaskFlags) else np.asarray(flags, dtype=bool)
    *lead, n, d = x.shape
    w_qkv = params[prefix + "qkv.weight"]
    w_proj = params[prefix + "proj.weight"]
    if w_qkv.shape != (d, 3 * heads * d_qkv):
        raise ShapeMismatch(
            f"qkv weight {w_qkv.shape} inconsistent with d={d}, heads={heads}, d_qkv={d_qkv}"
        )
    groups = int(np.prod(lead)) if lead else 1
    x3 = ad.reshape(x, (groups, n, d))
    km = np.broadcast_to(key_masked, tuple(lead) + (n,)).reshape(groups, n)

    qkv = ad.reshape(ad.matmul(x3, w_qkv), (groups, n, 3, heads, d_qkv))
    parts = []
    for k in range(3):
        piece = ad.reshape(ad.narrow(qkv, 2, k, 1), (groups, n, heads, d_qkv))
        parts.append(ad.transpose(piece, (0, 2, 1, 3)))  # (groups, heads, n, d_qkv)
    q, k_, v = parts

    scores = ad.mul(ad.matmul(q, ad.transpose(k_, (0, 1, 3, 2))),
                    Tensor(1.0 / math.sqrt(d_qkv)))
    SCORE_MACS.add(groups * heads * n * n * d_qkv)
    weights = ad.softmax(apply_mask(scores, km[:, None, :], mode), axis=-1)
    context = ad.matmul(weights, v)  # (groups, heads, n, d_qkv)
    merged = ad.reshape(ad.transpose(context, (0, 2, 1, 3)), (groups, n, heads * d_qkv))
    out = ad.add(ad.matmul(merged, w_proj), x3)
    return ad.reshape(out, x.shape)


def masked_temporal_attention(seq: TokenSequence, flags: AttentionMaskFlags,
                              params: dict[str, Tensor], prefix: str,
                              scale: ScaleConfig, mode: str = "key") -> TokenSequence:
    """Attend along time: one independent length-T sequence per patch site."""
    t, n = seq.frames, seq.patches_per_frame
    d = seq.tokens.shape[-1]
    grouped = ad.transpose(ad.reshape(seq.tokens, (t, n, d)), (1, 0, 2))
    km = flags.key_masked.reshape(t, n).T
    out = masked_attention(grouped, km, params, prefix + "temporal.",
                           scale.heads, scale.d_qkv, mode)
    tokens = ad.reshape(ad.transpose(out, (1, 0, 2)), (t * n, d))
    return seq.with_tokens(tokens)


def masked_spatial_attention(seq: TokenSequence, flags: AttentionMaskFlags,
                             params: dict[str, Tensor], prefix: str,
                             scale: ScaleConfig, mode: str = "key") -> TokenSequence:
    """Attend across patches: one independent length-N sequence per frame."""
    t, n = seq.frames, seq.patches_per_frame
    d = seq.tokens.shape[-1]
    grouped = ad.reshape(seq.tokens, (t, n, d))
    km = flags.key_masked.reshape(t, n)
    out = masked_attention(grouped, km, params, prefix + "spatial.",
                           scale.heads, scale.d_qkv, mode)
    return seq.with_tokens(ad.reshape(out, (t * n, d)))


def ffn(x, params: dict[str, Tensor], prefix: str) -> Tensor:
    """Two linear layers around a ReLU, with a residual connection."""
    x = x if isinstance(x, Tensor) else Tensor(np.asarray(x))
    hidden = relu(ad.add(ad.matmul(x, params[prefix + "w1"]), params[prefix + "b1"]))
    return ad.add(ad.add(ad.matmul(hidden, params[prefix + "w2"]), params[prefix + "b2"]), x)


def spatiotemporal_block(seq: TokenSequence, flags: AttentionMaskFlags,
                         scale: ScaleConfig, params: dict[str, Tensor],
                         prefix: str, mode: str = "key") -> TokenSequence:
    """One unit: temporal attention, spatial attention, then the FFN.

    Each sub-block is fed a layer-normalized input and adds that same
    normalized input back through its residual, following the block
    equations literally rather than the usual pre-norm wiring.
    """
    normed = layer_norm(seq.tokens, params[prefix + "temporal.ln.gain"],
                        params[prefix + "temporal.ln.bias"])
    u = masked_temporal_attention(seq.with_tokens(normed), flags, params, prefix, scale, mode)

    normed = layer_norm(u.tokens, params[prefix + "spatial.ln.gain"],
                        params[prefix + "spatial.ln.bias"])
    v = masked_spatial_attention(u.with_tokens(normed), flags, params, prefix, scale, mode)

    normed = layer_norm(v.tokens, params[prefix + "ffn.ln.gain"],
                        params[prefix + "ffn.ln.bias"])
    return v.with_tokens(ffn(normed, params, prefix + "ffn."))


def feature_extractor(seq: TokenSequence, flags: AttentionMaskFlags,
                      scale: ScaleConfig, params: dict[str, Tensor],
                      prefix: str, mode: str = "key") -> TokenSequence:
    """Add positional encoding once, then stack the scale's attention blocks."""
    pe = positional_encoding(seq.frames, seq.patches_per_frame,
                             seq.tokens.shape[-1], dtype=seq.tokens.dtype)
    cur = seq.with_tokens(ad.add(seq.tokens, Tensor(pe)))
    for layer in range(scale.layers):
        cur = spatiotemporal_block(cur, flags, scale, params,
                                   prefix + f"layer{layer}.", mode)
    return cur
