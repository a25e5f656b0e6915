"""Command-line entry point for batch experiments.

Subcommands: make-data, train, infer, eval, gradcheck, bench-attention.
Every run prints its resolved configuration first and is deterministic given
its flags and seeds. Exit codes: 0 ok, 2 usage error, 3 I/O error,
4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .attention import (SCORE_MACS, AttentionMaskFlags, joint_score_macs,
                        masked_attention, separated_score_macs)
from .autodiff import Tensor
from .core import (MaskCube, ModelConfig, SequenceCube, preset_config,
                   preset_names, validate_pair)
from .cubeio import load_manifest, make_dataset, read_cube, write_cube
from .errors import (FormatError, IoError, NonFiniteLoss, UnreachableCoverage)
from .gradcheck import CHECKS, MODULE_SUITES, run_suite
from .metrics import EVAL_CSV_COLUMNS, baseline_impute, evaluate
from .network import load_checkpoint, multiscale_forward
from .synthesis import GapSpec
from .training import TrainConfig, train


def _dims_flag(text: str) -> tuple[int, int, int, int]:
    parts = text.split(",")
    if len(parts) != 4:
        raise argparse.ArgumentTypeError("expected T,C,H,W")
    try:
        dims = tuple(int(p) for p in parts)
    except ValueError:
        raise argparse.ArgumentTypeError(f"non-integer dims in {text!r}")
    if any(d < 1 for d in dims):
        raise argparse.ArgumentTypeError("all dims must be >= 1")
    return dims


def _splits_flag(text: str) -> tuple[float, float, float]:
    parts = text.split(",")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("expected three ratios A,B,C")
    try:
        ratios = tuple(float(p) for p in parts)
    except ValueError:
        raise argparse.ArgumentTypeError(f"non-numeric ratio in {text!r}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise argparse.ArgumentTypeError("split ratios must sum to 1")
    return ratios


def _print_config(name: str, settings: dict) -> None:
    print(f"[{name}] resolved config: {json.dumps(settings, default=str)}")


def _load_model_config(spec: str, bands: int) -> ModelConfig:
    if spec in preset_names():
        return preset_config(spec, bands=bands)
    try:
        raw = json.loads(Path(spec).read_text(encoding="utf-8"))
    except OSError as exc:
        raise IoError(f"cannot read model config {spec}: {exc}") from exc
    raw.setdefault("bands", bands)
    return ModelConfig.from_dict(raw)


# -- subcommand handlers -----------------------------------------------------------


def cmd_make_data(args) -> int:
    spec = GapSpec(
        kind="slc_stripes" if args.gap == "slc" else "cloud_blobs",
        target_coverage=args.coverage,
        seed=args.seed,
    )
    _print_config("make-data", {
        "out": args.out, "samples": args.samples, "dims": args.dims,
        "gap": args.gap, "coverage": args.coverage, "seed": args.seed,
        "splits": args.splits,
    })
    manifest = make_dataset(args.out, args.samples, args.dims, spec,
                            split_ratios=args.splits, seed=args.seed)
    coverages = [s["coverage"] for s in manifest["samples"]]
    print(f"wrote {args.samples} samples to {args.out} "
          f"(coverage mean {np.mean(coverages):.3f}, "
          f"range {min(coverages):.3f}..{max(coverages):.3f})")
    return 0


def cmd_train(args) -> int:
    manifest = load_manifest(args.data)
    bands = int(manifest["dims"][1])
    config = _load_model_config(args.model_config, bands=bands)
    if config.bands != bands:
        print(f"error: model config built for {config.bands} bands, "
              f"dataset has {bands}", file=sys.stderr)
        return 2
    tcfg = TrainConfig.from_file(args.train_config) if args.train_config else TrainConfig()
    _print_config("train", {
        "data": args.data, "out": args.out,
        "model_config": config.to_dict(),
        "train_config": {k: getattr(tcfg, k) for k in
                         ("batch_size", "lr0", "decay_period_epochs", "decay_factor",
                          "early_stop_patience", "max_epochs", "seed")},
    })
    log_path = args.log or str(Path(args.out).with_suffix("")) + "_log.csv"

    def progress(row):
        epoch, loss, val_mae, val_psnr, lr = row
        print(f"epoch {epoch:4d} loss {loss:.6f} val_mae {val_mae:.6f} "
              f"val_psnr {val_psnr:.2f} lr {lr:.2e}", flush=True)

    result = train(args.data, config, tcfg, args.out, log_path=log_path,
                   progress=progress)
    print(f"best epoch {result.best_epoch} val_mae {result.best_val_mae:.6f} "
          f"({'early stop' if result.stopped_early else 'max epochs'}); "
          f"checkpoint at {args.out}, log at {log_path}")
    return 0


def cmd_infer(args) -> int:
    store, config = load_checkpoint(args.ckpt)
    x = read_cube(args.input)
    m = read_cube(args.mask)
    if not isinstance(x, SequenceCube) or not isinstance(m, MaskCube):
        raise FormatError("--input must be a values cube and --mask a mask cube")
    validate_pair(x, m)
    _print_config("infer", {
        "ckpt": args.ckpt, "input": args.input, "mask": args.mask,
        "out": args.out, "model_config": config.to_dict(),
    })
    trace = multiscale_forward(x, m, config, store.tensors(requires_grad=False))
    out = SequenceCube(np.clip(trace.final.data, 0.0, 1.0).astype(np.float32))
    write_cube(args.out, out)
    print(f"wrote restored cube to {args.out}")
    if args.render_dir:
        count = render_cube(out, args.render_dir, "restored")
        print(f"wrote {count} raster frames to {args.render_dir}")
    return 0


def cmd_eval(args) -> int:
    pred = read_cube(args.pred)
    truth = read_cube(args.truth)
    m = read_cube(args.mask)
    if not isinstance(m, MaskCube):
        raise FormatError("--mask must be a mask cube")
    _print_config("eval", {
        "pred": args.pred, "truth": args.truth, "mask": args.mask,
        "region": args.region, "format": args.format,
        "with_baselines": args.with_baselines,
    })
    region = "gap-only" if args.region == "gap" else "full"
    reports = [("model", evaluate(pred, truth, m, region))]
    if args.with_baselines:
        observed = SequenceCube((truth.data * m.flags).astype(truth.data.dtype))
        for method in ("last", "nearest", "linear"):
            imputed = baseline_impute(observed, m, method)
            reports.append((method, evaluate(imputed, truth, m, region)))
    if args.format == "json":
        if args.with_baselines:
            print(json.dumps([{"method": name, **json.loads(rep.to_json())}
                              for name, rep in reports]))
        else:
            print(reports[0][1].to_json())
    else:
        if args.with_baselines:
            print("method," + ",".join(EVAL_CSV_COLUMNS))
            for name, rep in reports:
                print(f"{name},{rep.to_csv_row()}")
        else:
            print(",".join(EVAL_CSV_COLUMNS))
            print(reports[0][1].to_csv_row())
    return 0


def cmd_gradcheck(args) -> int:
    if args.suite == "all":
        names = list(CHECKS)
    elif args.suite in MODULE_SUITES:
        names = list(MODULE_SUITES[args.suite])
    elif args.suite in CHECKS:
        names = [args.suite]
    else:
        print(f"error: unknown suite {args.suite!r}; choose 'all', a module "
              f"({', '.join(MODULE_SUITES)}), or an op ({', '.join(CHECKS)})",
              file=sys.stderr)
        return 2
    _print_config("gradcheck", {"suite": args.suite, "ops": names})
    results = run_suite(names)
    failures = 0
    for r in results:
        status = "ok " if r.passed else "FAIL"
        print(f"{status} {r.name:18s} max_rel_err {r.max_rel_err:.3e} "
              f"(tol {r.tol:g}) worst {r.worst_tensor}{list(r.worst_coord)}")
        failures += 0 if r.passed else 1
    worst = max(results, key=lambda r: r.max_rel_err / r.tol)
    print(f"worst op: {worst.name} at {worst.worst_tensor}{list(worst.worst_coord)} "
          f"rel_err {worst.max_rel_err:.3e}")
    return 4 if failures else 0


def cmd_bench_attention(args) -> int:
    t, n, d, heads = args.T, args.N, args.d, args.h
    if d % heads:
        print(f"error: --d {d} must be divisible by --h {heads}", file=sys.stderr)
        return 2
    d_qkv = d // heads
    _print_config("bench-attention", {
        "T": t, "N": n, "d": d, "h": heads, "d_qkv": d_qkv, "repeat": args.repeat,
    })
    rng = np.random.default_rng(0)
    tokens = rng.standard_normal((t * n, d)).astype(np.float32)
    params = {
        "qkv.weight": Tensor(rng.standard_normal((d, 3 * heads * d_qkv)).astype(np.float32) * 0.05),
        "proj.weight": Tensor(rng.standard_normal((heads * d_qkv, d)).astype(np.float32) * 0.05),
    }
    flags = AttentionMaskFlags(np.zeros(t * n, dtype=bool))

    def run_joint():
        masked_attention(Tensor(tokens), flags, params, "", heads, d_qkv)

    def run_separated():
        x = Tensor(tokens.reshape(t, n, d).transpose(1, 0, 2).copy())
        masked_attention(x, flags.key_masked.reshape(t, n).T, params, "", heads, d_qkv)
        x = Tensor(tokens.reshape(t, n, d))
        masked_attention(x, flags.key_masked.reshape(t, n), params, "", heads, d_qkv)

    counted = {}
    elapsed = {}
    for name, fn in (("joint", run_joint), ("separated", run_separated)):
        SCORE_MACS.reset()
        fn()
        counted[name] = SCORE_MACS.count
        best = float("inf")
        for _ in range(args.repeat):
            start = time.perf_counter()
            fn()
            best = min(best, time.perf_counter() - start)
        elapsed[name] = best

    closed_joint = joint_score_macs(t, n, heads, d_qkv)
    closed_sep = separated_score_macs(t, n, heads, d_qkv)
    ratio_counted = counted["separated"] / counted["joint"]
    ratio_closed = closed_sep / closed_joint
    print(f"joint     score-MACs counted {counted['joint']:>16d} closed-form {closed_joint:>16d} "
          f"best {elapsed['joint'] * 1e3:9.3f} ms")
    print(f"separated score-MACs counted {counted['separated']:>16d} closed-form {closed_sep:>16d} "
          f"best {elapsed['separated'] * 1e3:9.3f} ms")
    print(f"separated/joint ratio {ratio_counted:.6f} "
          f"(closed form 1/T + 1/N = {1.0 / t + 1.0 / n:.6f})")
    if counted["joint"] != closed_joint or counted["separated"] != closed_sep:
        print("error: counted MACs deviate from closed forms", file=sys.stderr)
        return 4
    if abs(ratio_counted - ratio_closed) > 1e-12:
        print("error: measured ratio deviates from closed form", file=sys.stderr)
        return 4
    return 0


# -- raster dumps ------------------------------------------------------------------


def render_cube(cube: SequenceCube, out_dir, stem: str) -> int:
    """Dump each frame as PGM (1 band) or PPM (first 3 bands), maxval 255."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    t, c, h, w = cube.dims
    for f in range(t):
        frame = cube.data[f]
        if c >= 3:
            img = np.clip(frame[:3] * 255.0 + 0.5, 0, 255).astype(np.uint8)
            raster = img.transpose(1, 2, 0).tobytes()
            header = f"P6\n{w} {h}\n255\n".encode("ascii")
            path = out / f"{stem}_{f:03d}.ppm"
        else:
            img = np.clip(frame[0] * 255.0 + 0.5, 0, 255).astype(np.uint8)
            raster = img.tobytes()
            header = f"P5\n{w} {h}\n255\n".encode("ascii")
            path = out / f"{stem}_{f:03d}.pgm"
        try:
            path.write_bytes(header + raster)
        except OSError as exc:
            raise IoError(f"cannot write render {path}: {exc}") from exc
    return t


# -- parser -----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stgapfill",
        description="Gap filling for multi-band image time series with "
                    "masked spatial-temporal attention.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-data", help="generate a synthetic gap dataset")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--samples", type=int, default=16, help="number of samples")
    p.add_argument("--dims", type=_dims_flag, default=(4, 2, 24, 24),
                   help="cube dims T,C,H,W (default 4,2,24,24)")
    p.add_argument("--gap", choices=("slc", "cloud"), default="cloud",
                   help="gap pattern family")
    p.add_argument("--coverage", type=float, default=0.3,
                   help="target missing fraction per frame")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--splits", type=_splits_flag, default=(0.64, 0.16, 0.20),
                   help="train,valid,test ratios summing to 1")
    p.set_defaults(func=cmd_make_data)

    p = sub.add_parser("train", help="train a model on a dataset directory")
    p.add_argument("--data", required=True, help="dataset directory with manifest.json")
    p.add_argument("--model-config", default="ms2tan",
                   help=f"preset name ({', '.join(preset_names())}) or JSON file")
    p.add_argument("--train-config", default=None,
                   help="flat JSON or key=value file of training settings")
    p.add_argument("--out", required=True, help="checkpoint basename")
    p.add_argument("--log", default=None, help="training log CSV path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="restore a gapped cube with a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--input", required=True, help="gapped values cube")
    p.add_argument("--mask", required=True, help="mask cube")
    p.add_argument("--out", required=True, help="output cube basename")
    p.add_argument("--render-dir", default=None,
                   help="also dump per-frame PGM/PPM renders here")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="score a restored cube against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--region", choices=("gap", "full"), default="gap")
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.add_argument("--with-baselines", action="store_true",
                   help="also score last/nearest/linear imputation")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.add_argument("--suite", default="all",
                   help="'all', a module name, or a single op name")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("bench-attention",
                       help="score-MAC accounting: separated vs joint attention")
    p.add_argument("--T", type=int, default=10, help="frame count")
    p.add_argument("--N", type=int, default=225, help="patches per frame")
    p.add_argument("--d", type=int, default=128, help="token dimension")
    p.add_argument("--h", type=int, default=4, help="head count")
    p.add_argument("--repeat", type=int, default=3, help="timing repetitions")
    p.set_defaults(func=cmd_bench_attention)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (IoError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (NonFiniteLoss, UnreachableCoverage) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
