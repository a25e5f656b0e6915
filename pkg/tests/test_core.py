"""Data-model checks: pair validation, parameter init determinism and scheme."""

import numpy as np
import pytest

from stgapfill.core import (MaskCube, ModelConfig, ScaleConfig, SequenceCube,
                            init_parameters, parameter_shapes, preset_config,
                            preset_names, toy_config, validate_pair)
from stgapfill.errors import DimMismatch, NonBinaryMask


def _pair(dims=(4, 2, 8, 8), mask_dims=None, mask_value=1.0):
    x = SequenceCube(np.zeros(dims, dtype=np.float32))
    m = MaskCube(np.full(mask_dims or dims, mask_value, dtype=np.float32))
    return x, m


def test_validate_pair_accepts_matching_binary():
    validate_pair(*_pair())


def test_validate_pair_rejects_dim_mismatch():
    x, m = _pair(mask_dims=(4, 2, 8, 4))
    with pytest.raises(DimMismatch):
        validate_pair(x, m)


def test_validate_pair_rejects_non_binary():
    x, m = _pair(mask_value=0.5)
    with pytest.raises(NonBinaryMask):
        validate_pair(x, m)


def test_cube_requires_positive_dims():
    with pytest.raises(DimMismatch):
        SequenceCube(np.zeros((0, 1, 4, 4)))
    with pytest.raises(DimMismatch):
        SequenceCube(np.zeros((4, 4)))


def test_init_is_deterministic():
    cfg = toy_config()
    a = init_parameters(cfg, seed=123)
    b = init_parameters(cfg, seed=123)
    assert a.names() == b.names()
    for name in a.names():
        assert np.array_equal(a.values[name], b.values[name])
    c = init_parameters(cfg, seed=124)
    assert any(not np.array_equal(a.values[n], c.values[n]) for n in a.names())


def test_init_name_isolation():
    """Each entry's values depend only on (seed, name, shape), not on the rest."""
    small = ModelConfig(scales=(ScaleConfig(2, 8, 2, 4, 1),), bands=1)
    big = ModelConfig(scales=(ScaleConfig(2, 8, 2, 4, 1), ScaleConfig(2, 8, 2, 4, 2)), bands=1)
    a = init_parameters(small, seed=9)
    b = init_parameters(big, seed=9)
    for name in a.names():
        assert np.array_equal(a.values[name], b.values[name])


def test_biases_zero_and_final_projection_zero():
    cfg = toy_config()
    store = init_parameters(cfg, seed=5)
    for name, arr in store.values.items():
        if name.endswith((".bias", ".b1", ".b2")) and "ln" not in name:
            assert not arr.any(), name
        if "unembed" in name:
            assert not arr.any(), name
        if name.endswith("ln.gain"):
            assert np.all(arr == 1.0), name


def test_weight_scale_follows_fan_in():
    cfg = toy_config()
    store = init_parameters(cfg, seed=0, dtype=np.float64)
    w = store.values["scale0.layer0.ffn.w1"]
    expected = 1.0 / np.sqrt(w.shape[0])
    assert abs(w.std() - expected) / expected < 0.15


def test_gradient_buffers_match_value_shapes():
    store = init_parameters(toy_config(), seed=1)
    for name in store.names():
        assert store.grads[name].shape == store.values[name].shape
        assert not store.grads[name].any()


def test_parameter_shapes_cover_all_scales():
    cfg = preset_config("ms2tan", bands=6)
    shapes = parameter_shapes(cfg)
    assert "scale2.unembed.weight" in shapes
    assert shapes["scale0.embed.weight"][0] == (2 * 6 * 12 * 12, 256)


@pytest.mark.parametrize("name,n_scales,patches", [
    ("ms2tan", 3, (12, 10, 8)),
    ("ms2tan-l", 3, (12, 10, 8)),
    ("ms2tan-s", 2, (12, 10)),
])
def test_presets_match_published_rows(name, n_scales, patches):
    cfg = preset_config(name, bands=4)
    assert cfg.n_scales == n_scales
    assert tuple(s.patch for s in cfg.scales) == patches
    assert cfg.c_max == 0.5
    assert cfg.loss_weights == (0.9, 0.05, 0.05)


def test_preset_details():
    cfg = preset_config("ms2tan", bands=4)
    assert tuple(s.d_emb for s in cfg.scales) == (256, 192, 128)
    assert tuple(s.heads for s in cfg.scales) == (8, 6, 4)
    assert tuple(s.d_qkv for s in cfg.scales) == (32, 32, 32)
    assert tuple(s.layers for s in cfg.scales) == (2, 2, 2)
    large = preset_config("ms2tan-l", bands=4)
    assert tuple(s.d_emb for s in large.scales) == (384, 256, 192)
    assert tuple(s.d_qkv for s in large.scales) == (48, 48, 48)
    assert tuple(s.layers for s in large.scales) == (4, 4, 4)
    small = preset_config("ms2tan-s", bands=4)
    assert tuple(s.d_emb for s in small.scales) == (192, 128)
    assert tuple(s.d_qkv for s in small.scales) == (24, 24)
    assert "toy" in preset_names()


def test_model_config_round_trip():
    cfg = preset_config("ms2tan-s", bands=4)
    again = ModelConfig.from_dict(cfg.to_dict())
    assert again == cfg


def test_model_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(scales=(), bands=2)
    with pytest.raises(ValueError):
        ModelConfig(scales=(ScaleConfig(2, 8, 2, 4, 1),), bands=2, c_max=1.5)
    with pytest.raises(ValueError):
        ModelConfig(scales=(ScaleConfig(2, 8, 2, 4, 1),), bands=2,
                    loss_weights=(0.0, 0.0, 0.0))
