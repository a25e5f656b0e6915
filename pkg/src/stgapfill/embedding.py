"""Patch partitioning, token embedding, its inverse, and positional encoding.

Frames are split into P x P patches in row-major grid order; each patch is
flattened channel-major, i.e. (c, i, j) row-major. Tokens across a sequence
are ordered pos = t * N + n, frames first, then patches within a frame. That
ordering is relied on by the attention regrouping, so it must never change.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .core import MaskCube, ScaleConfig, SequenceCube
from .errors import IndivisibleSize, OddDimension, ShapeMismatch


@dataclass(frozen=True)
class TokenSequence:
    """TN tokens with their (t, n) coordinates and per-token missing rate."""

    tokens: Tensor                # (T*N, d_emb)
    t_coords: np.ndarray          # (T*N,) frame index of each token
    n_coords: np.ndarray          # (T*N,) patch index within the frame
    missing_rate: np.ndarray      # (T*N,) fraction of missing mask entries
    frames: int                   # T
    patches_per_frame: int        # N
    patch: int                    # P used to produce this sequence

    def with_tokens(self, tokens: Tensor) -> "TokenSequence":
        return replace(self, tokens=tokens)


def _check_divisible(h: int, w: int, patch: int) -> None:
    if h % patch or w % patch:
        raise IndivisibleSize(f"patch {patch} does not divide spatial dims ({h}, {w})")


def patchify(frame: np.ndarray, patch: int) -> np.ndarray:
    """Split a (C, H, W) frame into (N, C*P*P) flattened patch vectors."""
    frame = np.asarray(frame)
    if frame.ndim != 3:
        raise ShapeMismatch(f"frame must be (C, H, W), got {frame.shape}")
    c, h, w = frame.shape
    _check_divisible(h, w, patch)
    gh, gw = h // patch, w // patch
    tiles = frame.reshape(c, gh, patch, gw, patch).transpose(1, 3, 0, 2, 4)
    return tiles.reshape(gh * gw, c * patch * patch)


def unpatchify(patches: np.ndarray, patch: int, c: int, h: int, w: int) -> np.ndarray:
    """Exact inverse of patchify."""
    patches = np.asarray(patches)
    _check_divisible(h, w, patch)
    gh, gw = h // patch, w // patch
    if patches.shape != (gh * gw, c * patch * patch):
        raise ShapeMismatch(
            f"expected {(gh * gw, c * patch * patch)} patches array, got {patches.shape}"
        )
    tiles = patches.reshape(gh, gw, c, patch, patch).transpose(2, 0, 3, 1, 4)
    return tiles.reshape(c, h, w)


def _patchify_cube(cube: Tensor, patch: int) -> Tensor:
    """Differentiable (T, C, H, W) -> (T*N, C*P*P) in pos = t*N + n order."""
    t, c, h, w = cube.shape
    _check_divisible(h, w, patch)
    gh, gw = h // patch, w // patch
    tiles = ad.reshape(cube, (t, c, gh, patch, gw, patch))
    tiles = ad.transpose(tiles, (0, 2, 4, 1, 3, 5))
    return ad.reshape(tiles, (t * gh * gw, c * patch * patch))


def _unpatchify_cube(tokens: Tensor, patch: int, t: int, c: int, h: int, w: int) -> Tensor:
    """Differentiable inverse of `_patchify_cube`."""
    gh, gw = h // patch, w // patch
    tiles = ad.reshape(tokens, (t, gh, gw, c, patch, patch))
    tiles = ad.transpose(tiles, (0, 3, 1, 4, 2, 5))
    return ad.reshape(tiles, (t, c, h, w))


def _as_cube_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    if isinstance(x, SequenceCube):
        return Tensor(x.data)
    return Tensor(np.asarray(x))


def embed(x, m: MaskCube | np.ndarray, scale: ScaleConfig, params: dict[str, Tensor],
          prefix: str = "") -> TokenSequence:
    """Project each patch's values and mask entries into a d_emb token.

    The patch values and the corresponding mask entries are concatenated
    along the feature axis (2*C*P*P inputs) before one affine projection, so
    the network sees where the gaps are, not only masked attention scores.
    The per-token missing rate counts zero mask entries over all C*P*P
    positions of the patch.
    """
    cube = _as_cube_tensor(x)
    flags = m.flags if isinstance(m, MaskCube) else np.asarray(m)
    t, c, h, w = cube.shape
    if flags.shape != cube.shape:
        raise ShapeMismatch(f"mask shape {flags.shape} != cube shape {cube.shape}")
    patch = scale.patch
    _check_divisible(h, w, patch)
    n = (h // patch) * (w // patch)

    value_patches = _patchify_cube(cube, patch)
    mask_patches = _patchify_cube(Tensor(flags.astype(cube.dtype)), patch)
    feats = ad.concat([value_patches, mask_patches], axis=-1)
    tokens = ad.add(ad.matmul(feats, params[prefix + "embed.weight"]),
                    params[prefix + "embed.bias"])

    missing_rate = 1.0 - mask_patches.data.mean(axis=1)
    pos = np.arange(t * n)
    return TokenSequence(
        tokens=tokens,
        t_coords=pos // n,
        n_coords=pos % n,
        missing_rate=missing_rate,
        frames=t,
        patches_per_frame=n,
        patch=patch,
    )


def unembed(seq: TokenSequence, scale: ScaleConfig, params: dict[str, Tensor],
            prefix: str, c: int, h: int, w: int) -> Tensor:
    """Project tokens back to patch vectors and reassemble (T, C, H, W)."""
    patch = scale.patch
    expected_n = (h // patch) * (w // patch)
    if seq.patches_per_frame != expected_n:
        raise ShapeMismatch(
            f"sequence built with N={seq.patches_per_frame}, target dims give N={expected_n}"
        )
    flat = ad.add(ad.matmul(seq.tokens, params[prefix + "unembed.weight"]),
                  params[prefix + "unembed.bias"])
    return _unpatchify_cube(flat, patch, seq.frames, c, h, w)


def positional_encoding(t: int, n: int, d_emb: int, dtype=np.float64) -> np.ndarray:
    """Sinusoidal encoding over the joint coordinate pos = t*N + n.

    Column 2i holds sin(pos * 10000^(-2i/d_emb)), column 2i+1 the matching
    cosine at the same frequency.
    """
    if d_emb % 2 != 0:
        raise OddDimension(f"d_emb must be even, got {d_emb}")
    pos = np.arange(t * n, dtype=np.float64)[:, None]
    even = np.arange(0, d_emb, 2, dtype=np.float64)
    freq = 10000.0 ** (-even / d_emb)
    enc = np.empty((t * n, d_emb), dtype=np.float64)
    enc[:, 0::2] = np.sin(pos * freq)
    enc[:, 1::2] = np.cos(pos * freq)
    return enc.astype(dtype)
