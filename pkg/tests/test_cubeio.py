"""Cube file round-trips, corruption handling, and dataset assembly."""

import json

import numpy as np
import pytest

from stgapfill.core import MaskCube, SequenceCube
from stgapfill.cubeio import (load_manifest, load_split, make_dataset,
                              normalize, read_cube, write_cube)
from stgapfill.errors import FormatError, IoError
from stgapfill.synthesis import GapSpec


def test_normalize_endpoints_and_clamp():
    raw = np.array([0, 5000, 10000, 12000, -50]).reshape(1, 1, 1, 5)
    cube = normalize(raw)
    assert cube.data[0, 0, 0, 0] == 0.0
    assert cube.data[0, 0, 0, 1] == 0.5
    assert cube.data[0, 0, 0, 2] == 1.0
    assert cube.data[0, 0, 0, 3] == 1.0
    assert cube.data[0, 0, 0, 4] == 0.0


def test_values_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    cube = SequenceCube(rng.uniform(0, 1, (3, 2, 5, 4)).astype(np.float32))
    write_cube(tmp_path / "c", cube)
    back = read_cube(tmp_path / "c")
    assert isinstance(back, SequenceCube)
    assert back.data.dtype == np.float32
    assert np.array_equal(back.data, cube.data)


def test_mask_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    mask = MaskCube((rng.uniform(size=(2, 1, 4, 4)) > 0.5).astype(np.uint8))
    write_cube(tmp_path / "m", mask)
    back = read_cube(tmp_path / "m")
    assert isinstance(back, MaskCube)
    assert np.array_equal(back.flags, mask.flags)


def test_truncated_blob_rejected(tmp_path):
    cube = SequenceCube(np.zeros((1, 1, 2, 2), dtype=np.float32))
    write_cube(tmp_path / "c", cube)
    blob = (tmp_path / "c.bin").read_bytes()
    (tmp_path / "c.bin").write_bytes(blob[:-4])
    with pytest.raises(FormatError):
        read_cube(tmp_path / "c")


def test_header_mismatch_rejected(tmp_path):
    cube = SequenceCube(np.zeros((1, 1, 2, 2), dtype=np.float32))
    write_cube(tmp_path / "c", cube)
    header = json.loads((tmp_path / "c.json").read_text())
    header["dims"] = [1, 1, 2, 3]
    (tmp_path / "c.json").write_text(json.dumps(header))
    with pytest.raises(FormatError):
        read_cube(tmp_path / "c")


def test_unknown_version_and_dtype_rejected(tmp_path):
    cube = SequenceCube(np.zeros((1, 1, 2, 2), dtype=np.float32))
    write_cube(tmp_path / "c", cube)
    header = json.loads((tmp_path / "c.json").read_text())
    header["version"] = 9
    (tmp_path / "c.json").write_text(json.dumps(header))
    with pytest.raises(FormatError):
        read_cube(tmp_path / "c")
    header["version"] = 1
    header["dtype"] = "f64le"
    (tmp_path / "c.json").write_text(json.dumps(header))
    with pytest.raises(FormatError):
        read_cube(tmp_path / "c")


def test_missing_file_is_io_error(tmp_path):
    with pytest.raises(IoError):
        read_cube(tmp_path / "absent")


def test_make_dataset_layout_and_splits(tmp_path):
    spec = GapSpec("cloud_blobs", target_coverage=0.3, seed=0)
    manifest = make_dataset(tmp_path, 25, (2, 1, 12, 12), spec,
                            split_ratios=(0.64, 0.16, 0.20), seed=3)
    splits = [s["split"] for s in manifest["samples"]]
    assert splits.count("train") == 16
    assert splits.count("valid") == 4
    assert splits.count("test") == 5
    assert splits == sorted(splits, key=("train", "valid", "test").index)

    loaded = load_manifest(tmp_path)
    assert loaded == manifest

    for entry in manifest["samples"][:3]:
        clean = read_cube(tmp_path / entry["clean"])
        gapped = read_cube(tmp_path / entry["gapped"])
        mask = read_cube(tmp_path / entry["mask"])
        observed = mask.flags == 1
        assert np.array_equal(gapped.data[observed], clean.data[observed])
        assert not gapped.data[~observed].any()
        assert abs(entry["coverage"] - 0.3) <= 0.05


def test_make_dataset_deterministic(tmp_path):
    spec = GapSpec("slc_stripes", target_coverage=0.25, seed=0)
    m1 = make_dataset(tmp_path / "a", 6, (2, 1, 16, 16), spec, seed=9)
    m2 = make_dataset(tmp_path / "b", 6, (2, 1, 16, 16), spec, seed=9)
    assert [s["coverage"] for s in m1["samples"]] == [s["coverage"] for s in m2["samples"]]
    for entry in m1["samples"]:
        a = read_cube(tmp_path / "a" / entry["clean"])
        b = read_cube(tmp_path / "b" / entry["clean"])
        assert np.array_equal(a.data, b.data)
    m3 = make_dataset(tmp_path / "c", 6, (2, 1, 16, 16), spec, seed=10)
    a = read_cube(tmp_path / "a" / m1["samples"][0]["clean"])
    c = read_cube(tmp_path / "c" / m3["samples"][0]["clean"])
    assert not np.array_equal(a.data, c.data)


def test_make_dataset_ratio_validation(tmp_path):
    spec = GapSpec("cloud_blobs", target_coverage=0.3, seed=0)
    with pytest.raises(ValueError):
        make_dataset(tmp_path, 4, (1, 1, 12, 12), spec, split_ratios=(0.5, 0.4, 0.2))


def test_load_split_groups_samples(tmp_path):
    spec = GapSpec("cloud_blobs", target_coverage=0.3, seed=0)
    manifest = make_dataset(tmp_path, 10, (1, 1, 12, 12), spec,
                            split_ratios=(0.6, 0.2, 0.2), seed=4)
    train = load_split(tmp_path, manifest, "train")
    valid = load_split(tmp_path, manifest, "valid")
    test = load_split(tmp_path, manifest, "test")
    assert (len(train), len(valid), len(test)) == (6, 2, 2)
    clean, gapped, mask = train[0]
    assert isinstance(clean, SequenceCube) and isinstance(mask, MaskCube)
