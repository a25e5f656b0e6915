"""Cube/mask data model, model configuration, and the parameter store.

A sequence cube is a (T, C, H, W) array of unit-range reflectance values; its
mask cube marks each entry observed (1) or missing (0). Model configuration
pins the per-scale hyperparameters; the parameter store owns every learnable
array together with a paired gradient buffer.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor
from .errors import DimMismatch, NonBinaryMask


@dataclass(frozen=True)
class SequenceCube:
    """A (T, C, H, W) array of values; frames x bands x rows x cols."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 4:
            raise DimMismatch(f"cube must be 4-d (T,C,H,W), got shape {arr.shape}")
        if any(s < 1 for s in arr.shape):
            raise DimMismatch(f"all cube dims must be >= 1, got {arr.shape}")
        object.__setattr__(self, "data", arr)

    @property
    def dims(self) -> tuple[int, int, int, int]:
        return self.data.shape

    def validate_range(self) -> None:
        """Ingestion-time check: every value finite and inside [0, 1]."""
        if not np.all(np.isfinite(self.data)):
            raise ValueError("cube contains non-finite values")
        if self.data.min() < 0.0 or self.data.max() > 1.0:
            raise ValueError("cube values outside [0, 1]; normalize first")


@dataclass(frozen=True)
class MaskCube:
    """Binary hint cube paired with a SequenceCube: 1 = observed, 0 = missing."""

    flags: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.flags)
        if arr.ndim != 4:
            raise DimMismatch(f"mask must be 4-d (T,C,H,W), got shape {arr.shape}")
        object.__setattr__(self, "flags", arr)

    @property
    def dims(self) -> tuple[int, int, int, int]:
        return self.flags.shape

    def missing_fraction(self) -> float:
        return float(np.mean(self.flags == 0))


def validate_pair(x: SequenceCube, m: MaskCube) -> None:
    """Check that a cube and its mask line up; raises on violation."""
    if x.dims != m.dims:
        raise DimMismatch(f"cube dims {x.dims} != mask dims {m.dims}")
    if not np.all((m.flags == 0) | (m.flags == 1)):
        raise NonBinaryMask("mask entries must all be 0 or 1")


@dataclass(frozen=True)
class ScaleConfig:
    """Hyperparameters for one restoration scale."""

    patch: int        # patch side length P, in pixels
    d_emb: int        # token dimension
    heads: int        # attention head count
    d_qkv: int        # per-head query/key/value dimension
    layers: int       # stacked spatial-temporal attention units

    def __post_init__(self):
        for name in ("patch", "d_emb", "heads", "d_qkv", "layers"):
            if getattr(self, name) < 1:
                raise ValueError(f"ScaleConfig.{name} must be >= 1")
        if self.d_emb % 2 != 0:
            raise ValueError("d_emb must be even for the positional encoding")


@dataclass(frozen=True)
class ModelConfig:
    """Global model settings: scales ordered coarse to fine plus loss weights.

    `bands` is the channel count C the model is built for; the embedding
    weights depend on it, so it is part of the architecture.
    """

    scales: tuple[ScaleConfig, ...]
    bands: int
    c_max: float = 0.5
    loss_weights: tuple[float, float, float] = (0.9, 0.05, 0.05)
    mask_mode: str = "key"          # "key" (default) or "query" for ablation
    feature_seed: int = 7           # seeds the fixed perceptual feature stack

    def __post_init__(self):
        object.__setattr__(self, "scales", tuple(self.scales))
        object.__setattr__(self, "loss_weights", tuple(float(w) for w in self.loss_weights))
        if len(self.scales) < 1:
            raise ValueError("need at least one scale")
        if self.bands < 1:
            raise ValueError("bands must be >= 1")
        if not 0.0 <= self.c_max <= 1.0:
            raise ValueError("c_max must lie in [0, 1]")
        if any(w < 0 for w in self.loss_weights) or sum(self.loss_weights) <= 0:
            raise ValueError("loss weights must be nonnegative with positive sum")
        if self.mask_mode not in ("key", "query"):
            raise ValueError("mask_mode must be 'key' or 'query'")

    @property
    def n_scales(self) -> int:
        return len(self.scales)

    def to_dict(self) -> dict:
        return {
            "scales": [
                {"patch": s.patch, "d_emb": s.d_emb, "heads": s.heads,
                 "d_qkv": s.d_qkv, "layers": s.layers}
                for s in self.scales
            ],
            "bands": self.bands,
            "c_max": self.c_max,
            "loss_weights": list(self.loss_weights),
            "mask_mode": self.mask_mode,
            "feature_seed": self.feature_seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        scales = tuple(
            ScaleConfig(patch=s["patch"], d_emb=s["d_emb"], heads=s["heads"],
                        d_qkv=s["d_qkv"], layers=s["layers"])
            for s in d["scales"]
        )
        return cls(
            scales=scales,
            bands=d["bands"],
            c_max=d.get("c_max", 0.5),
            loss_weights=tuple(d.get("loss_weights", (0.9, 0.05, 0.05))),
            mask_mode=d.get("mask_mode", "key"),
            feature_seed=d.get("feature_seed", 7),
        )


# Published configurations. Bracketed per-scale values, coarse patch first.
_PRESET_TABLE = {
    "ms2tan":   dict(patch=(12, 10, 8), d_emb=(256, 192, 128), heads=(8, 6, 4),
                     d_qkv=(32, 32, 32), layers=(2, 2, 2)),
    "ms2tan-l": dict(patch=(12, 10, 8), d_emb=(384, 256, 192), heads=(8, 6, 4),
                     d_qkv=(48, 48, 48), layers=(4, 4, 4)),
    "ms2tan-s": dict(patch=(12, 10), d_emb=(192, 128), heads=(8, 6),
                     d_qkv=(24, 24), layers=(2, 2)),
    # Desk-scale configuration used by the toy training benchmark.
    "toy":      dict(patch=(4, 2), d_emb=(32, 24), heads=(4, 4),
                     d_qkv=(8, 8), layers=(2, 2)),
}


def preset_config(name: str, bands: int) -> ModelConfig:
    """Build a named preset; `bands` comes from the data it will be applied to."""
    if name not in _PRESET_TABLE:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(_PRESET_TABLE)}")
    row = _PRESET_TABLE[name]
    scales = tuple(
        ScaleConfig(patch=p, d_emb=d, heads=h, d_qkv=q, layers=l)
        for p, d, h, q, l in zip(row["patch"], row["d_emb"], row["heads"],
                                 row["d_qkv"], row["layers"])
    )
    return ModelConfig(scales=scales, bands=bands)


def preset_names() -> tuple[str, ...]:
    return tuple(_PRESET_TABLE)


@dataclass
class ParameterStore:
    """Named learnable arrays with paired gradient buffers.

    Initialization is a pure function of (seed, name, shape): each entry gets
    its own generator seeded from the store seed and a stable hash of its
    name, so adding or reordering entries never perturbs the others.

    Values and gradients need exclusive access during updates; read-only
    sharing across concurrent forward passes is safe.
    """

    seed: int
    dtype: np.dtype = np.dtype(np.float32)
    values: dict[str, np.ndarray] = field(default_factory=dict)
    grads: dict[str, np.ndarray] = field(default_factory=dict)

    @staticmethod
    def _rng(seed: int, name: str) -> np.random.Generator:
        return np.random.default_rng((seed & 0xFFFFFFFFFFFFFFFF, zlib.crc32(name.encode())))

    def add_normal(self, name: str, shape: tuple[int, ...], fan_in: int) -> None:
        rng = self._rng(self.seed, name)
        scale = 1.0 / np.sqrt(fan_in)
        self.values[name] = (rng.standard_normal(shape) * scale).astype(self.dtype)
        self.grads[name] = np.zeros(shape, dtype=self.dtype)

    def add_constant(self, name: str, shape: tuple[int, ...], value: float) -> None:
        self.values[name] = np.full(shape, value, dtype=self.dtype)
        self.grads[name] = np.zeros(shape, dtype=self.dtype)

    def names(self) -> list[str]:
        return list(self.values)

    def zero_grads(self) -> None:
        for g in self.grads.values():
            g[...] = 0.0

    def tensors(self, requires_grad: bool = True) -> dict[str, Tensor]:
        """Leaf tensors sharing memory with the stored values."""
        return {name: Tensor(arr, requires_grad=requires_grad)
                for name, arr in self.values.items()}

    def accumulate_grads(self, leaves: dict[str, Tensor]) -> None:
        """Add the gradients collected on `leaves` into the store's buffers."""
        for name, leaf in leaves.items():
            if leaf.grad is not None:
                self.grads[name] += leaf.grad.astype(self.dtype, copy=False)


def parameter_shapes(config: ModelConfig) -> dict[str, tuple[tuple[int, ...], str]]:
    """Every parameter name with its shape and init kind for this architecture.

    Kinds: "normal:<fan_in>" scaled-normal weights, "zeros", "ones".
    """
    spec: dict[str, tuple[tuple[int, ...], str]] = {}
    c = config.bands
    for i, s in enumerate(config.scales):
        pre = f"scale{i}."
        patch_feats = c * s.patch * s.patch
        spec[pre + "embed.weight"] = ((2 * patch_feats, s.d_emb), f"normal:{2 * patch_feats}")
        spec[pre + "embed.bias"] = ((s.d_emb,), "zeros")
        for l in range(s.layers):
            lp = pre + f"layer{l}."
            for branch in ("temporal", "spatial"):
                bp = lp + branch + "."
                spec[bp + "ln.gain"] = ((s.d_emb,), "ones")
                spec[bp + "ln.bias"] = ((s.d_emb,), "zeros")
                spec[bp + "qkv.weight"] = ((s.d_emb, 3 * s.heads * s.d_qkv), f"normal:{s.d_emb}")
                spec[bp + "proj.weight"] = ((s.heads * s.d_qkv, s.d_emb), f"normal:{s.heads * s.d_qkv}")
            fp = lp + "ffn."
            hidden = 4 * s.d_emb
            spec[fp + "ln.gain"] = ((s.d_emb,), "ones")
            spec[fp + "ln.bias"] = ((s.d_emb,), "zeros")
            spec[fp + "w1"] = ((s.d_emb, hidden), f"normal:{s.d_emb}")
            spec[fp + "b1"] = ((hidden,), "zeros")
            spec[fp + "w2"] = ((hidden, s.d_emb), f"normal:{hidden}")
            spec[fp + "b2"] = ((s.d_emb,), "zeros")
        # Final unembedding projection starts at zero so the untrained
        # network is exactly the identity map through every residual.
        spec[pre + "unembed.weight"] = ((s.d_emb, patch_feats), "zeros")
        spec[pre + "unembed.bias"] = ((patch_feats,), "zeros")
    return spec


def init_parameters(config: ModelConfig, seed: int,
                    dtype: np.dtype = np.float32) -> ParameterStore:
    """Deterministically initialize every learnable array for `config`."""
    store = ParameterStore(seed=seed, dtype=np.dtype(dtype))
    for name, (shape, kind) in parameter_shapes(config).items():
        if kind.startswith("normal:"):
            store.add_normal(name, shape, fan_in=int(kind.split(":")[1]))
        elif kind == "zeros":
            store.add_constant(name, shape, 0.0)
        elif kind == "ones":
            store.add_constant(name, shape, 1.0)
        else:  # pragma: no cover
            raise ValueError(f"unknown init kind {kind}")
    return store


def toy_config(bands: int = 2) -> ModelConfig:
    """The two-scale desk-test configuration (patches 4 then 2)."""
    return preset_config("toy", bands)
