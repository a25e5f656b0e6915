"""The multi-scale residual restoration network and observed-value replacement.

Each scale embeds the previous estimate together with the original mask,
runs the masked spatial-temporal feature extractor, projects back to image
space, and adds the result onto its input. After the final scale the
observed entries are copied back from the input verbatim, so the output is
only ever synthetic where data was actually missing.

Because every scale's final projection starts at zero, a freshly initialized
network is exactly the identity map.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .attention import AttentionMaskFlags, feature_extractor
from .core import (MaskCube, ModelConfig, ParameterStore, ScaleConfig,
                   SequenceCube, parameter_shapes, validate_pair)
from .embedding import embed, unembed
from .errors import DimMismatch, FormatError, IoError, NonMonotonicScalesWarning

CHECKPOINT_VERSION = 1


@dataclass
class RestorationTrace:
    """Per-scale intermediate estimates plus the replaced final output.

    `nodes` / `final_node` are the differentiable views of the same arrays,
    kept for loss computation; the cube fields share their memory.
    """

    intermediates: list[SequenceCube]
    final: SequenceCube
    nodes: list[Tensor]
    final_node: Tensor


def _raw(value) -> np.ndarray:
    if isinstance(value, (SequenceCube, Tensor)):
        return value.data
    if isinstance(value, MaskCube):
        return value.flags
    return np.asarray(value)


def replace_observed(y_hat, x, m):
    """out = y_hat where missing, x where observed (elementwise blend by m)."""
    if isinstance(y_hat, Tensor):
        flags = _raw(m).astype(y_hat.dtype)
        return ad.add(ad.mul(y_hat, Tensor(1.0 - flags)), Tensor(_raw(x) * flags))
    y_arr = _raw(y_hat)
    x_arr = _raw(x)
    flags = _raw(m)
    if y_arr.shape != x_arr.shape or y_arr.shape != flags.shape:
        raise DimMismatch(
            f"shape mismatch: y_hat {y_arr.shape}, x {x_arr.shape}, mask {flags.shape}"
        )
    blend = flags.astype(y_arr.dtype)
    return SequenceCube(y_arr * (1.0 - blend) + x_arr * blend)


def scale_forward(prev, m: MaskCube, scale: ScaleConfig, params: dict[str, Tensor],
                  prefix: str, c_max: float = 0.5, mode: str = "key") -> Tensor:
    """One restoration scale: embed, extract features, unembed, residual add."""
    prev_t = prev if isinstance(prev, Tensor) else Tensor(
        prev.data if isinstance(prev, SequenceCube) else np.asarray(prev))
    _, c, h, w = prev_t.shape
    seq = embed(prev_t, m, scale, params, prefix)
    flags = AttentionMaskFlags.from_missing_rate(seq.missing_rate, c_max)
    feats = feature_extractor(seq, flags, scale, params, prefix, mode)
    delta = unembed(feats, scale, params, prefix, c, h, w)
    return ad.add(delta, prev_t)


def multiscale_forward(x: SequenceCube, m: MaskCube, config: ModelConfig,
                       params) -> RestorationTrace:
    """Run every scale coarse to fine, then replace the observed entries.

    `params` is a ParameterStore or a prebuilt name->Tensor mapping; pass the
    latter when gradients must be collected from the same leaves afterwards.
    """
    validate_pair(x, m)
    patches = [s.patch for s in config.scales]
    if any(a < b for a, b in zip(patches, patches[1:])):
        warnings.warn(
            f"scale patch sizes {patches} are not coarse-to-fine (non-increasing)",
            NonMonotonicScalesWarning,
        )
    leaves = params.tensors() if isinstance(params, ParameterStore) else params
    dtype = next(iter(leaves.values())).dtype
    current = Tensor(x.data.astype(dtype, copy=False))
    nodes: list[Tensor] = []
    for i, scale in enumerate(config.scales):
        current = scale_forward(current, m, scale, leaves, f"scale{i}.",
                                config.c_max, config.mask_mode)
        nodes.append(current)
    final_node = replace_observed(nodes[-1], Tensor(x.data.astype(dtype, copy=False)), m)
    return RestorationTrace(
        intermediates=[SequenceCube(n.data) for n in nodes],
        final=SequenceCube(final_node.data),
        nodes=nodes,
        final_node=final_node,
    )


# -- checkpointing ---------------------------------------------------------------
#
# A checkpoint is two files sharing a basename: <base>.json holds the manifest
# (version, model config, parameter names and shapes, in order) and <base>.bin
# holds each parameter's values as little-endian float32, concatenated in
# manifest order.


def _checkpoint_paths(path) -> tuple[Path, Path]:
    base = Path(path)
    if base.suffix in (".json", ".bin"):
        base = base.with_suffix("")
    return base.with_suffix(".json"), base.with_suffix(".bin")


def save_checkpoint(path, store: ParameterStore, config: ModelConfig) -> None:
    manifest_path, blob_path = _checkpoint_paths(path)
    manifest = {
        "version": CHECKPOINT_VERSION,
        "seed": store.seed,
        "model_config": config.to_dict(),
        "params": [{"name": n, "shape": list(store.values[n].shape)} for n in store.names()],
    }
    try:
        manifest_path.parent.mkdir(parents=True, exist_ok=True)
        manifest_path.write_text(json.dumps(manifest, indent=1), encoding="utf-8")
        with open(blob_path, "wb") as fh:
            for name in store.names():
                fh.write(np.ascontiguousarray(store.values[name], dtype="<f4").tobytes())
    except OSError as exc:
        raise IoError(f"cannot write checkpoint {path}: {exc}") from exc


def load_checkpoint(path, dtype=np.float32) -> tuple[ParameterStore, ModelConfig]:
    manifest_path, blob_path = _checkpoint_paths(path)
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        blob = blob_path.read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read checkpoint {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"checkpoint manifest is not valid JSON: {exc}") from exc
    if manifest.get("version") != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {manifest.get('version')!r}")
    config = ModelConfig.from_dict(manifest["model_config"])
    store = ParameterStore(seed=int(manifest.get("seed", 0)), dtype=np.dtype(dtype))
    expected = parameter_shapes(config)
    offset = 0
    for entry in manifest["params"]:
        name, shape = entry["name"], tuple(entry["shape"])
        if name not in expected:
            raise FormatError(f"checkpoint parameter {name!r} not in architecture")
        size = int(np.prod(shape)) * 4
        chunk = blob[offset:offset + size]
        if len(chunk) != size:
            raise FormatError("checkpoint blob shorter than manifest promises")
        values = np.frombuffer(chunk, dtype="<f4").reshape(shape).astype(dtype)
        store.values[name] = values
        store.grads[name] = np.zeros(shape, dtype=dtype)
        offset += size
    if offset != len(blob):
        raise FormatError("checkpoint blob longer than manifest promises")
    missing = set(expected) - set(store.values)
    if missing:
        raise FormatError(f"checkpoint missing parameters: {sorted(missing)[:3]}...")
    return store, config
