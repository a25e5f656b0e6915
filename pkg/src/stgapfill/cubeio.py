"""Bit-exact cube files, normalization, and synthetic dataset assembly.

A cube file is a pair sharing a basename: <base>.json holds the header
{dims, dtype, kind, version} and <base>.bin the raw little-endian payload in
(t, c, i, j) row-major order. Value cubes are float32, masks uint8. Missing
entries of a gapped cube are stored as 0; the mask stays authoritative.
"""

from __future__ import annotations

import json
from dataclasses import replace
from pathlib import Path

import numpy as np

from .core import MaskCube, SequenceCube
from .errors import FormatError, IoError
from .synthesis import GapSpec, synth_gap_mask, synth_scene

CUBE_VERSION = 1
MANIFEST_NAME = "manifest.json"


def normalize(raw: np.ndarray, lo: int = 0, hi: int = 10000) -> SequenceCube:
    """Clamp integer reflectance to [lo, hi], then scale by 1/hi to unit range."""
    clipped = np.clip(np.asarray(raw), lo, hi).astype(np.float32)
    return SequenceCube(clipped / float(hi))


def _cube_paths(path) -> tuple[Path, Path]:
    base = Path(path)
    if base.suffix in (".json", ".bin"):
        base = base.with_suffix("")
    return base.with_suffix(".json"), base.with_suffix(".bin")


def write_cube(path, cube) -> None:
    """Write a SequenceCube (f32le) or MaskCube (u8) as a .json/.bin pair."""
    header_path, blob_path = _cube_paths(path)
    if isinstance(cube, SequenceCube):
        kind, dtype_tag = "values", "f32le"
        payload = np.ascontiguousarray(cube.data, dtype="<f4")
        dims = cube.dims
    elif isinstance(cube, MaskCube):
        kind, dtype_tag = "mask", "u8"
        payload = np.ascontiguousarray(cube.flags, dtype=np.uint8)
        dims = cube.dims
    else:
        raise TypeError(f"expected SequenceCube or MaskCube, got {type(cube).__name__}")
    header = {"dims": list(dims), "dtype": dtype_tag, "kind": kind, "version": CUBE_VERSION}
    try:
        header_path.parent.mkdir(parents=True, exist_ok=True)
        header_path.write_text(json.dumps(header), encoding="utf-8")
        blob_path.write_bytes(payload.tobytes())
    except OSError as exc:
        raise IoError(f"cannot write cube {path}: {exc}") from exc


def read_cube(path):
    """Read a .json/.bin pair back; bit-identical to what was written."""
    header_path, blob_path = _cube_paths(path)
    try:
        header = json.loads(header_path.read_text(encoding="utf-8"))
        blob = blob_path.read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read cube {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"cube header is not valid JSON: {exc}") from exc
    for key in ("dims", "dtype", "kind", "version"):
        if key not in header:
            raise FormatError(f"cube header missing field {key!r}")
    if header["version"] != CUBE_VERSION:
        raise FormatError(f"unsupported cube version {header['version']!r}")
    dims = tuple(int(d) for d in header["dims"])
    if len(dims) != 4 or any(d < 1 for d in dims):
        raise FormatError(f"bad dims {dims} in cube header")
    if header["dtype"] == "f32le":
        itemsize, np_dtype = 4, "<f4"
    elif header["dtype"] == "u8":
        itemsize, np_dtype = 1, np.uint8
    else:
        raise FormatError(f"unknown dtype {header['dtype']!r}")
    expected = int(np.prod(dims)) * itemsize
    if len(blob) != expected:
        raise FormatError(f"blob length {len(blob)} != expected {expected}")
    data = np.frombuffer(blob, dtype=np_dtype).reshape(dims)
    if header["kind"] == "values":
        return SequenceCube(data.astype(np.float32))
    if header["kind"] == "mask":
        return MaskCube(data.copy())
    raise FormatError(f"unknown kind {header['kind']!r}")


def _split_counts(n: int, ratios: tuple[float, float, float]) -> tuple[int, int, int]:
    n_train = int(ratios[0] * n)
    n_valid = int(ratios[1] * n)
    return n_train, n_valid, n - n_train - n_valid


def make_dataset(out_dir, n_samples: int, dims: tuple[int, int, int, int],
                 gap_specs, split_ratios=(0.64, 0.16, 0.20), seed: int = 0) -> dict:
    """Write clean/gapped/mask cube triples plus a manifest; returns the manifest.

    Sample i draws its scene and gap seeds from (seed, i), cycles through
    `gap_specs`, and lands in train/valid/test by position: the first
    floor(a*n) samples are train, the next floor(b*n) valid, the rest test.
    Gapped cubes hold 0 at missing entries.
    """
    if abs(sum(split_ratios) - 1.0) > 1e-9:
        raise ValueError(f"split ratios must sum to 1, got {split_ratios}")
    if isinstance(gap_specs, GapSpec):
        gap_specs = [gap_specs]
    out = Path(out_dir)
    t, c, h, w = dims
    n_train, n_valid, _ = _split_counts(n_samples, split_ratios)
    samples = []
    for i in range(n_samples):
        scene_seed = (seed * (1 << 20) + 2 * i) & 0x7FFFFFFFFFFFFFFF
        gap_seed = (seed * (1 << 20) + 2 * i + 1) & 0x7FFFFFFFFFFFFFFF
        clean = synth_scene(t, c, h, w, scene_seed)
        clean = SequenceCube(clean.data.astype(np.float32))
        spec = replace(gap_specs[i % len(gap_specs)], seed=gap_seed)
        mask = synth_gap_mask(t, c, h, w, spec)
        gapped = SequenceCube((clean.data * mask.flags).astype(np.float32))
        split = "train" if i < n_train else ("valid" if i < n_train + n_valid else "test")
        stem = f"sample{i:04d}"
        write_cube(out / f"{stem}_clean", clean)
        write_cube(out / f"{stem}_gapped", gapped)
        write_cube(out / f"{stem}_mask", mask)
        samples.append({
            "clean": f"{stem}_clean",
            "gapped": f"{stem}_gapped",
            "mask": f"{stem}_mask",
            "split": split,
            "coverage": mask.missing_fraction(),
        })
    manifest = {
        "version": CUBE_VERSION,
        "seed": seed,
        "dims": list(dims),
        "samples": samples,
    }
    try:
        (out / MANIFEST_NAME).write_text(json.dumps(manifest, indent=1), encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot write manifest: {exc}") from exc
    return manifest


def load_manifest(data_dir) -> dict:
    path = Path(data_dir) / MANIFEST_NAME
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise IoError(f"cannot read manifest {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"manifest is not valid JSON: {exc}") from exc


def load_split(data_dir, manifest: dict, split: str):
    """Load every (clean, gapped, mask) triple of one split into memory."""
    base = Path(data_dir)
    out = []
    for entry in manifest["samples"]:
        if entry["split"] != split:
            continue
        out.append((
            read_cube(base / entry["clean"]),
            read_cube(base / entry["gapped"]),
            read_cube(base / entry["mask"]),
        ))
    return out
