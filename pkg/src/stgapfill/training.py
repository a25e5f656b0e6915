"""Adam optimization, learning-rate decay, early stopping, and the train loop.

Training is bitwise reproducible for fixed seeds in single-threaded mode:
batch order comes from one seeded generator, gradient accumulation order is
fixed by graph construction, and the optimizer walks parameters in store
order. The loop monitors validation gap-region MAE, keeps the best
checkpoint, and stops after a fixed number of non-improving epochs.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .core import ModelConfig, ParameterStore, SequenceCube, init_parameters
from .cubeio import load_manifest, load_split
from .errors import IoError, NonFiniteLoss
from .losses import FeatureNetwork, joint_loss
from .metrics import gap_region, mae, psnr
from .network import multiscale_forward, save_checkpoint
from .synthesis import GapSpec, synth_gap_mask

LOG_COLUMNS = ("epoch", "train_loss", "val_mae", "val_psnr", "lr")

TRAIN_CONFIG_KEYS = ("batch_size", "lr0", "decay_period_epochs", "decay_factor",
                     "early_stop_patience", "max_epochs", "seed")


@dataclass(frozen=True)
class TrainConfig:
    """Optimization settings; defaults follow the published training recipe."""

    batch_size: int = 8
    lr0: float = 4e-4
    decay_period_epochs: int = 100
    decay_factor: float = 0.5
    early_stop_patience: int = 30
    max_epochs: int = 200
    seed: int = 0

    def __post_init__(self):
        for name in ("batch_size", "lr0", "decay_period_epochs", "decay_factor",
                     "early_stop_patience", "max_epochs"):
            if getattr(self, name) <= 0:
                raise ValueError(f"TrainConfig.{name} must be positive")

    @classmethod
    def from_file(cls, path) -> "TrainConfig":
        """Parse a flat JSON object or `key = value` lines."""
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise IoError(f"cannot read train config {path}: {exc}") from exc
        stripped = text.lstrip()
        if stripped.startswith("{"):
            raw = json.loads(text)
        else:
            raw = {}
            for line in text.splitlines():
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                key, _, value = line.partition("=")
                raw[key.strip()] = value.strip()
        kwargs = {}
        for key, value in raw.items():
            if key not in TRAIN_CONFIG_KEYS:
                raise ValueError(f"unknown train config key {key!r}")
            caster = float if key in ("lr0", "decay_factor") else int
            kwargs[key] = caster(value)
        return cls(**kwargs)


@dataclass
class AdamState:
    """First/second moment accumulators, one pair per parameter."""

    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_store(cls, store: ParameterStore, beta1: float = 0.9,
                  beta2: float = 0.999, eps: float = 1e-8) -> "AdamState":
        state = cls(beta1=beta1, beta2=beta2, eps=eps)
        for name, arr in store.values.items():
            state.m[name] = np.zeros_like(arr)
            state.v[name] = np.zeros_like(arr)
        return state


def adam_step(store: ParameterStore, state: AdamState, lr: float) -> None:
    """One bias-corrected Adam update from the store's gradient buffers."""
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    for name in store.names():
        g = store.grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * np.square(g)
        store.values[name] -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


def lr_schedule(epoch: int, config: TrainConfig) -> float:
    """Stepwise decay: lr0 * factor^floor(epoch / period)."""
    return config.lr0 * config.decay_factor ** (epoch // config.decay_period_epochs)


@dataclass
class TrainResult:
    best_epoch: int
    best_val_mae: float
    epochs_run: int
    log_rows: list[tuple]
    stopped_early: bool


def validation_scores(samples, config: ModelConfig, store: ParameterStore) -> tuple[float, float]:
    """Mean gap-region MAE and PSNR of the current model over `samples`."""
    leaves = store.tensors(requires_grad=False)
    maes, psnrs = [], []
    for clean, gapped, mask in samples:
        trace = multiscale_forward(gapped, mask, config, leaves)
        region = gap_region(mask)
        maes.append(mae(trace.final, clean, region))
        psnrs.append(psnr(trace.final, clean, region))
    return float(np.mean(maes)), float(np.mean(psnrs))


def train(data_dir, config: ModelConfig, tcfg: TrainConfig, out_ckpt,
          log_path=None, feat: FeatureNetwork | None = None,
          progress=None, regap: GapSpec | None = None) -> TrainResult:
    """Train on a dataset directory and persist the best-validation checkpoint.

    Writes a per-epoch CSV log (epoch, train_loss, val_mae, val_psnr, lr)
    when `log_path` is given. Raises NonFiniteLoss with the offending epoch
    and batch if the objective ever leaves the finite range.

    `regap` enables the one augmentation in scope, gap re-synthesis: each
    epoch every training sample gets a fresh mask drawn from the given spec
    (seeded by train seed, epoch, and sample index, so runs stay
    reproducible) applied to its clean cube. Validation data is untouched.
    """
    manifest = load_manifest(data_dir)
    train_samples = load_split(data_dir, manifest, "train")
    valid_samples = load_split(data_dir, manifest, "valid")
    if not train_samples or not valid_samples:
        raise ValueError("dataset needs non-empty train and valid splits")

    store = init_parameters(config, tcfg.seed, dtype=np.float32)
    state = AdamState.for_store(store)
    if feat is None and config.loss_weights[2] > 0:
        feat = FeatureNetwork.build(config.bands, config.feature_seed)
    rng = np.random.default_rng((tcfg.seed & 0xFFFFFFFFFFFFFFFF, 0x7EA1))

    best_val = math.inf
    best_epoch = -1
    stale = 0
    rows: list[tuple] = []
    stopped_early = False

    for epoch in range(tcfg.max_epochs):
        lr = lr_schedule(epoch, tcfg)
        order = rng.permutation(len(train_samples))
        epoch_losses = []
        for start in range(0, len(order), tcfg.batch_size):
            batch = order[start:start + tcfg.batch_size]
            store.zero_grads()
            leaves = store.tensors(requires_grad=True)
            total = None
            for idx in batch:
                clean, gapped, mask = train_samples[idx]
                if regap is not None:
                    t, c, h, w = clean.dims
                    fresh_seed = ((tcfg.seed << 24) ^ (epoch << 12) ^ int(idx)) & 0x7FFFFFFFFFFFFFFF
                    mask = synth_gap_mask(t, c, h, w, replace(regap, seed=fresh_seed))
                    gapped = SequenceCube((clean.data * mask.flags).astype(clean.data.dtype))
                trace = multiscale_forward(gapped, mask, config, leaves)
                breakdown = joint_loss(trace, clean, config, feat)
                total = breakdown.node if total is None else total + breakdown.node
            batch_loss = total * (1.0 / len(batch))
            value = float(batch_loss.data)
            if not math.isfinite(value):
                raise NonFiniteLoss(
                    f"loss {value} at epoch {epoch}, batch starting {start}"
                )
            batch_loss.backward()
            store.accumulate_grads(leaves)
            adam_step(store, state, lr)
            epoch_losses.append(value)

        val_mae, val_psnr = validation_scores(valid_samples, config, store)
        rows.append((epoch, float(np.mean(epoch_losses)), val_mae, val_psnr, lr))
        if progress is not None:
            progress(rows[-1])

        if val_mae < best_val:
            best_val = val_mae
            best_epoch = epoch
            stale = 0
            save_checkpoint(out_ckpt, store, config)
        else:
            stale += 1
            if stale >= tcfg.early_stop_patience:
                stopped_early = True
                break

    if log_path is not None:
        write_log(log_path, rows)
    return TrainResult(
        best_epoch=best_epoch,
        best_val_mae=best_val,
        epochs_run=len(rows),
        log_rows=rows,
        stopped_early=stopped_early,
    )


def write_log(path, rows) -> None:
    lines = [",".join(LOG_COLUMNS)]
    for row in rows:
        lines.append(",".join(repr(v) if isinstance(v, float) else str(v) for v in row))
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot write training log {path}: {exc}") from exc
