"""Metric values against closed forms and the windowed-SSIM equivalence oracle."""

import math

import numpy as np
import pytest

from stgapfill.core import MaskCube, SequenceCube
from stgapfill.errors import EmptyRegion, TooSmall
from stgapfill.losses import structural_loss
from stgapfill.metrics import (EVAL_CSV_COLUMNS, EvalReport, baseline_impute,
                               evaluate, mae, psnr, sam, ssim_metric)


def _region(dims):
    return np.ones(dims, dtype=bool)


def test_mae_basic():
    dims = (1, 1, 1, 2)
    truth = np.array([1.0, 1.0]).reshape(dims)
    assert mae(truth, truth, _region(dims)) == 0.0
    pred = np.array([0.0, 1.0]).reshape(dims)
    assert mae(pred, truth, _region(dims)) == 0.5


def test_mae_uniform_error_formatting():
    dims = (2, 2, 4, 4)
    truth = np.zeros(dims)
    pred = truth + 0.0074
    assert np.isclose(mae(pred, truth, _region(dims)), 0.0074, rtol=1e-12)


def test_mae_empty_region():
    dims = (1, 1, 2, 2)
    with pytest.raises(EmptyRegion):
        mae(np.zeros(dims), np.zeros(dims), np.zeros(dims, dtype=bool))


def test_psnr_closed_forms():
    dims = (1, 1, 10, 10)
    truth = np.zeros(dims)
    pred = np.full(dims, 0.1)          # MSE 0.01 -> 20 dB
    assert abs(psnr(pred, truth, _region(dims)) - 20.0) < 1e-9
    pred = np.full(dims, 0.01)         # MSE 1e-4 -> 40 dB
    assert abs(psnr(pred, truth, _region(dims)) - 40.0) < 1e-9
    assert psnr(truth, truth, _region(dims)) == math.inf


def test_psnr_tracks_mse_monotonically():
    rng = np.random.default_rng(0)
    dims = (2, 1, 6, 6)
    truth = rng.uniform(size=dims)
    region = _region(dims)
    noisy = [psnr(truth + eps * rng.uniform(0.5, 1.0, dims), truth, region)
             for eps in (0.2, 0.1, 0.05)]
    assert noisy[0] < noisy[1] < noisy[2]


def test_sam_angles():
    dims = (1, 2, 1, 1)
    region = _region(dims)
    a = np.array([1.0, 0.0]).reshape(dims)
    b = np.array([0.0, 1.0]).reshape(dims)
    assert abs(sam(a, a, region) - 0.0) < 1e-12
    assert abs(sam(a, b, region) - 90.0) < 1e-9
    c = np.array([1.0, 1.0]).reshape(dims)
    assert abs(sam(c, a, region) - 45.0) < 1e-9


def test_sam_skips_zero_norm():
    dims = (1, 2, 1, 2)
    # spectra live on axis 1: pred pixel 0 = (1, 0) and pixel 1 = (0, 0)
    pred = np.array([[1.0, 0.0], [0.0, 0.0]]).reshape(dims)
    truth = np.array([[1.0, 0.5], [0.0, 0.5]]).reshape(dims)
    assert sam(pred, truth, _region(dims)) == 0.0  # zero-norm pixel skipped


def test_ssim_metric_identity_and_inversion():
    rng = np.random.default_rng(1)
    img = rng.uniform(size=(1, 1, 16, 16))
    assert abs(ssim_metric(img, img) - 1.0) < 1e-12
    assert ssim_metric(1.0 - img, img) < 1.0


def test_ssim_metric_size_guard():
    with pytest.raises(TooSmall):
        ssim_metric(np.zeros((1, 1, 8, 8)), np.zeros((1, 1, 8, 8)))


def test_windowed_matches_global_on_stationary_images():
    """On images whose local statistics equal the global ones the two forms agree."""
    rng = np.random.default_rng(2)
    h = w = 32
    rows = np.arange(h)[:, None]
    cols = np.arange(w)[None, :]
    # high-frequency stationary texture: same mean/variance in every window
    a = 0.5 + 0.25 * ((rows + cols) % 2 == 0)
    b = 0.5 + 0.25 * ((rows + cols) % 2 == 1)
    a = np.broadcast_to(a, (1, 1, h, w)).astype(float)
    b = np.broadcast_to(b, (1, 1, h, w)).astype(float)
    windowed = ssim_metric(a, b)
    global_form = 1.0 - float(structural_loss(a, b).data)
    assert abs(windowed - global_form) < 1e-6


def test_evaluate_report_and_serialization():
    rng = np.random.default_rng(3)
    dims = (2, 2, 16, 16)
    truth = SequenceCube(rng.uniform(0.2, 0.8, dims))
    m = MaskCube((rng.uniform(size=dims) > 0.3).astype(float))
    pred = SequenceCube(np.clip(truth.data + 0.01 * rng.standard_normal(dims), 0, 1))
    rep = evaluate(pred, truth, m, region="gap-only")
    assert rep.pixel_count == int((m.flags == 0).sum())
    assert rep.region == "gap-only"
    assert 0 < rep.mae < 0.1
    row = rep.to_csv_row()
    assert len(row.split(",")) == len(EVAL_CSV_COLUMNS)
    assert EVAL_CSV_COLUMNS == ("mae", "sam_degrees", "psnr_db", "ssim",
                                "pixel_count", "region")

    full = evaluate(pred, truth, m, region="full")
    assert full.pixel_count == int(np.prod(dims))


def test_metrics_permutation_invariance():
    rng = np.random.default_rng(4)
    dims = (1, 2, 4, 4)
    pred = rng.uniform(size=dims)
    truth = rng.uniform(size=dims)
    region = _region(dims)
    perm = rng.permutation(16)

    def shuffle(c):
        flat = c.reshape(1, 2, 16)[:, :, perm]
        return flat.reshape(dims)

    assert np.isclose(mae(pred, truth, region), mae(shuffle(pred), shuffle(truth), region))
    assert np.isclose(sam(pred, truth, region), sam(shuffle(pred), shuffle(truth), region))
    assert np.isclose(psnr(pred, truth, region), psnr(shuffle(pred), shuffle(truth), region))


# -- baselines ----------------------------------------------------------------------


def _series_cube(values, observed):
    t = len(values)
    x = SequenceCube(np.asarray(values, dtype=float).reshape(t, 1, 1, 1))
    m = MaskCube(np.asarray(observed, dtype=float).reshape(t, 1, 1, 1))
    return x, m


def test_linear_interpolates_middle():
    x, m = _series_cube([0.2, 0.0, 0.4], [1, 0, 1])
    out = baseline_impute(x, m, "linear")
    assert np.isclose(out.data[1, 0, 0, 0], 0.3)


def test_last_backfills_leading_gap():
    x, m = _series_cube([0.0, 0.7, 0.9], [0, 1, 1])
    out = baseline_impute(x, m, "last")
    assert out.data[0, 0, 0, 0] == 0.7
    x, m = _series_cube([0.5, 0.0, 0.0], [1, 0, 0])
    out = baseline_impute(x, m, "last")
    assert np.all(out.data[:, 0, 0, 0] == 0.5)


def test_nearest_prefers_earlier_on_tie():
    x, m = _series_cube([0.2, 0.0, 0.8], [1, 0, 1])
    out = baseline_impute(x, m, "nearest")
    assert out.data[1, 0, 0, 0] == 0.2


def test_all_missing_series_filled_with_half():
    x, m = _series_cube([0.0, 0.0], [0, 0])
    for method in ("last", "nearest", "linear"):
        out = baseline_impute(x, m, method)
        assert np.all(out.data == 0.5)


def test_linear_edge_gaps_held_constant():
    x, m = _series_cube([0.0, 0.4, 0.6, 0.0], [0, 1, 1, 0])
    out = baseline_impute(x, m, "linear")
    assert out.data[0, 0, 0, 0] == 0.4
    assert out.data[3, 0, 0, 0] == 0.6


def test_baselines_leave_observed_untouched():
    rng = np.random.default_rng(5)
    dims = (4, 2, 5, 5)
    x = SequenceCube(rng.uniform(size=dims))
    m = MaskCube((rng.uniform(size=dims) > 0.4).astype(float))
    observed = m.flags == 1
    for method in ("last", "nearest", "linear"):
        out = baseline_impute(x, m, method)
        assert np.array_equal(out.data[observed], x.data[observed])


def test_eval_report_json_round_trip():
    rep = EvalReport(mae=0.01, sam_degrees=1.5, psnr_db=30.0, ssim=0.98,
                     pixel_count=100, region="gap-only")
    import json
    parsed = json.loads(rep.to_json())
    assert parsed["mae"] == 0.01 and parsed["region"] == "gap-only"
