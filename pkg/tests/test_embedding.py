"""Patch bookkeeping, embedding contracts, and positional encoding values."""

import numpy as np
import pytest

from stgapfill import autodiff as ad
from stgapfill.autodiff import Tensor
from stgapfill.core import ScaleConfig
from stgapfill.embedding import (embed, patchify, positional_encoding,
                                 unembed, unpatchify)
from stgapfill.errors import IndivisibleSize, OddDimension, ShapeMismatch


def _leaves(rng, scale, bands):
    feats = bands * scale.patch ** 2
    return {
        "embed.weight": Tensor(rng.standard_normal((2 * feats, scale.d_emb)), requires_grad=True),
        "embed.bias": Tensor(rng.standard_normal(scale.d_emb), requires_grad=True),
        "unembed.weight": Tensor(rng.standard_normal((scale.d_emb, feats)), requires_grad=True),
        "unembed.bias": Tensor(rng.standard_normal(feats), requires_grad=True),
    }


def test_patchify_index_bookkeeping():
    frame = np.arange(16.0).reshape(1, 4, 4)
    patches = patchify(frame, 2)
    assert patches.shape == (4, 4)
    # patch 0 covers rows 0..1, cols 0..1, flattened (c, i, j) row-major
    assert patches[0].tolist() == [0, 1, 4, 5]
    assert patches[1].tolist() == [2, 3, 6, 7]
    assert patches[2].tolist() == [8, 9, 12, 13]


def test_patch_count_at_published_scale():
    frame = np.zeros((1, 120, 120))
    assert patchify(frame, 8).shape[0] == 225
    assert patchify(frame, 10).shape[0] == 144
    assert patchify(frame, 12).shape[0] == 100


def test_patchify_rejects_indivisible():
    with pytest.raises(IndivisibleSize):
        patchify(np.zeros((1, 5, 5)), 2)


def test_unpatchify_round_trip_property():
    rng = np.random.default_rng(0)
    for _ in range(25):
        c = int(rng.integers(1, 4))
        patch = int(rng.choice([1, 2, 3, 4]))
        h = patch * int(rng.integers(1, 5))
        w = patch * int(rng.integers(1, 5))
        frame = rng.standard_normal((c, h, w)).astype(np.float32)
        back = unpatchify(patchify(frame, patch), patch, c, h, w)
        assert np.array_equal(back, frame)


def test_unpatchify_zero_and_shape_errors():
    assert not unpatchify(np.zeros((4, 4)), 2, 1, 4, 4).any()
    with pytest.raises(ShapeMismatch):
        unpatchify(np.zeros((3, 4)), 2, 1, 4, 4)


def test_missing_rate_counting():
    scale = ScaleConfig(patch=2, d_emb=4, heads=1, d_qkv=2, layers=1)
    rng = np.random.default_rng(1)
    leaves = _leaves(rng, scale, bands=1)
    x = np.zeros((1, 1, 2, 2), dtype=np.float64)
    m = np.array([[[[0.0, 0.0], [0.0, 1.0]]]])
    seq = embed(x, m, scale, leaves, "")
    assert seq.missing_rate.tolist() == [0.75]

    all_obs = embed(x, np.ones_like(m), scale, leaves, "")
    assert np.all(all_obs.missing_rate == 0.0)


def test_missing_rate_spans_bands():
    scale = ScaleConfig(patch=2, d_emb=4, heads=1, d_qkv=2, layers=1)
    rng = np.random.default_rng(2)
    leaves = _leaves(rng, scale, bands=2)
    x = np.zeros((1, 2, 2, 2))
    m = np.stack([np.zeros((2, 2)), np.ones((2, 2))])[None]  # band 0 missing, band 1 observed
    seq = embed(x, m, scale, leaves, "")
    assert seq.missing_rate.tolist() == [0.5]


def test_missing_rate_ignores_values():
    scale = ScaleConfig(patch=2, d_emb=4, heads=1, d_qkv=2, layers=1)
    rng = np.random.default_rng(3)
    leaves = _leaves(rng, scale, bands=1)
    m = (rng.uniform(size=(2, 1, 4, 4)) > 0.5).astype(float)
    a = embed(rng.uniform(size=(2, 1, 4, 4)), m, scale, leaves, "")
    b = embed(rng.uniform(size=(2, 1, 4, 4)), m, scale, leaves, "")
    assert np.array_equal(a.missing_rate, b.missing_rate)


def test_embed_affine_linearity_in_values():
    """With the bias/mask contribution subtracted, embedding is linear in x."""
    scale = ScaleConfig(patch=2, d_emb=6, heads=1, d_qkv=2, layers=1)
    rng = np.random.default_rng(4)
    leaves = _leaves(rng, scale, bands=1)
    m = (rng.uniform(size=(2, 1, 4, 4)) > 0.4).astype(float)
    x1 = rng.standard_normal((2, 1, 4, 4))
    x2 = rng.standard_normal((2, 1, 4, 4))
    alpha, beta = 0.7, -1.3

    def tok(x):
        return embed(x, m, scale, leaves, "").tokens.data

    zero = tok(np.zeros_like(x1))
    lhs = tok(alpha * x1 + beta * x2) - zero
    rhs = alpha * (tok(x1) - zero) + beta * (tok(x2) - zero)
    assert np.allclose(lhs, rhs, atol=1e-12)


def test_token_ordering_is_frames_then_patches():
    scale = ScaleConfig(patch=2, d_emb=4, heads=1, d_qkv=2, layers=1)
    rng = np.random.default_rng(5)
    leaves = _leaves(rng, scale, bands=1)
    seq = embed(rng.uniform(size=(3, 1, 4, 4)), np.ones((3, 1, 4, 4)), scale, leaves, "")
    n = seq.patches_per_frame
    assert n == 4
    pos = np.arange(3 * n)
    assert np.array_equal(seq.t_coords, pos // n)
    assert np.array_equal(seq.n_coords, pos % n)


def test_unembed_shapes_and_zero_weights():
    scale = ScaleConfig(patch=2, d_emb=6, heads=1, d_qkv=2, layers=1)
    rng = np.random.default_rng(6)
    leaves = _leaves(rng, scale, bands=2)
    x = rng.uniform(size=(4, 2, 8, 8))
    seq = embed(x, np.ones_like(x), scale, leaves, "")
    out = unembed(seq, scale, leaves, "", 2, 8, 8)
    assert out.shape == (4, 2, 8, 8)

    leaves["unembed.weight"] = Tensor(np.zeros((6, 8)))
    leaves["unembed.bias"] = Tensor(np.zeros(8))
    out = unembed(seq, scale, leaves, "", 2, 8, 8)
    assert not out.data.any()


def test_embed_unembed_round_trip_with_pseudoinverse():
    """unembed can exactly invert embed when its weights solve the linear map."""
    scale = ScaleConfig(patch=2, d_emb=16, heads=1, d_qkv=2, layers=1)
    rng = np.random.default_rng(7)
    w = rng.standard_normal((4, 16))  # value-part weights, full row rank
    leaves = {
        "embed.weight": Tensor(np.vstack([w, np.zeros((4, 16))])),
        "embed.bias": Tensor(np.zeros(16)),
        "unembed.weight": Tensor(np.linalg.pinv(w)),
        "unembed.bias": Tensor(np.zeros(4)),
    }
    x = rng.standard_normal((2, 1, 4, 4))
    seq = embed(x, np.ones_like(x), scale, leaves, "")
    back = unembed(seq, scale, leaves, "", 1, 4, 4)
    assert np.allclose(back.data, x, atol=1e-10)


def test_positional_encoding_values():
    enc = positional_encoding(2, 3, 8)
    assert enc.shape == (6, 8)
    assert np.allclose(enc[0, 0::2], 0.0)
    assert np.allclose(enc[0, 1::2], 1.0)
    assert np.isclose(enc[1, 0], np.sin(1.0))
    assert np.isclose(enc[1, 1], np.cos(1.0))
    k = 4  # even column index uses frequency 10000^(-k/d)
    assert np.isclose(enc[3, k], np.sin(3 * 10000.0 ** (-k / 8)))
    assert np.all(enc >= -1.0) and np.all(enc <= 1.0)


def test_positional_encoding_rejects_odd_dim():
    with pytest.raises(OddDimension):
        positional_encoding(1, 2, 5)
