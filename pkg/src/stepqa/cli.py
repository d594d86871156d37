"""Command-line surface: synth, train, eval, gradcheck.

Configuration for synth/train comes from defaults, then an optional JSON
config file (same dialect as the dataset manifest; unknown keys are
rejected), then explicit flags, in that order. Every run writes the
fully resolved configuration into its output directory so any reported
number can be traced to the exact settings that produced it.

Exit status: 0 on success, 1 when a verification check fails, 2 on
configuration or contract errors.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import fields
from pathlib import Path

from .data_io import (
    SyntheticConfig, generate_synthetic, load_checkpoint, load_dataset,
    oracle_report, save_checkpoint, save_dataset,
)
from .errors import (
    CheckpointError, ConfigError, DatasetError, NumericsError, ShapeError,
)
from .gradcheck import check_model_gradients
from .metrics import bucket_label, format_report
from .trainer import TrainConfig, evaluate, train
from . import kernels


def _write_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _load_config_file(path: str | None, cls) -> dict:
    if path is None:
        return {}
    file_path = Path(path)
    if not file_path.exists():
        raise ConfigError(f"config file not found: {file_path}")
    try:
        payload = json.loads(file_path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {file_path} is not valid JSON: {exc}") from exc
    if not isinstance(payload, dict):
        raise ConfigError(f"config file {file_path} must hold a JSON object")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(payload) - known)
    if unknown:
        raise ConfigError(
            f"config file {file_path}: unknown keys {unknown}; known keys are "
            f"{sorted(known)}")
    return payload


def _resolve(cls, config_path: str | None, overrides: dict):
    merged = _load_config_file(config_path, cls)
    merged.update({k: v for k, v in overrides.items() if v is not None})
    return cls(**merged)


def _parse_floats(text: str) -> tuple[float, ...]:
    return tuple(float(part) for part in text.split(","))


def _parse_ints(text: str) -> tuple[int, ...]:
    return tuple(int(part) for part in text.split(","))


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_synth(args) -> int:
    overrides = {
        "n_samples": args.n_samples,
        "frames": args.frames,
        "sentences": args.sentences,
        "steps": args.steps,
        "candidates": args.candidates,
        "dim": args.dim,
        "noise_sigma": args.noise_sigma,
        "bucket_mix": _parse_floats(args.bucket_mix) if args.bucket_mix else None,
        "seed": args.seed,
    }
    config = _resolve(SyntheticConfig, args.config, overrides)
    if args.frames_mult is not None:
        if args.frames_mult <= 0:
            raise ConfigError(f"--frames-mult must be > 0, got {args.frames_mult}")
        scaled = max(1, round(config.frames * args.frames_mult))
        config = SyntheticConfig(**{**config.to_dict(),
                                    "bucket_mix": config.bucket_mix,
                                    "bucket_bounds": config.bucket_bounds,
                                    "frames": scaled})

    out = Path(args.out)
    bundles, secret_map = generate_synthetic(config)
    save_dataset(bundles, out)
    _write_json(out / "synth_config.json", config.to_dict())

    report = oracle_report(bundles, secret_map, config.bucket_bounds)
    counts: dict[str, int] = {}
    for bundle in bundles:
        label = bucket_label(bundle.button_count, config.bucket_bounds)
        counts[label] = counts.get(label, 0) + 1
    lines = [
        f"samples: {len(bundles)}",
        "bucket counts: " + ", ".join(f"{k}={v}" for k, v in sorted(counts.items())),
        "",
        "nearest-candidate oracle (cosine against the planted target):",
        format_report(report, config.bucket_bounds),
    ]
    (out / "generation_report.txt").write_text("\n".join(lines))
    print(f"wrote {len(bundles)} samples to {out}")
    print(f"oracle R@1 = {report.r_at_1:.4f}")
    return 0


def cmd_train(args) -> int:
    overrides = {
        "epochs": args.epochs,
        "batch_size": args.batch_size,
        "learning_rate": args.lr,
        "d_h": args.d_h,
        "heads": args.heads,
        "d_o": args.d_o,
        "d_s": args.d_s,
        "step_variant": args.step_variant,
        "seed": args.seed,
        "shuffle_seed": args.shuffle_seed,
        "precision": args.precision,
        "split_ratio": args.split_ratio,
        "bucket_bounds": _parse_ints(args.bucket_bounds) if args.bucket_bounds else None,
    }
    config = _resolve(TrainConfig, args.config, overrides)
    dataset = load_dataset(args.dataset)
    if not dataset:
        raise DatasetError(f"dataset {args.dataset} has no samples")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "train_config.json", config.to_dict())

    def progress(record):
        m = record.val_metrics
        print(f"epoch {record.epoch:>4d}  loss {record.train_loss:8.4f}  "
              f"val R@1 {m.r_at_1:.4f}  MRR {m.mrr:.4f}  "
              f"({record.wall_time:.2f}s)", flush=True)

    model, log = train(config, dataset, progress=progress if not args.quiet else None)
    (out / "train_log.jsonl").write_text(log.to_jsonl())
    save_checkpoint(model, out / "checkpoint", best_epoch=log.best_epoch,
                    seed=config.seed)

    best = log.entries[log.best_epoch - 1].val_metrics
    (out / "val_report.txt").write_text(format_report(best, config.bucket_bounds))
    print(f"best epoch {log.best_epoch}: val R@1 {best.r_at_1:.4f}, "
          f"checkpoint in {out / 'checkpoint'}")
    return 0


def cmd_eval(args) -> int:
    model, provenance = load_checkpoint(args.checkpoint)
    dataset = load_dataset(args.dataset)
    bounds = tuple(_parse_ints(args.bucket_bounds)) if args.bucket_bounds \
        else (10, 20)
    report = evaluate(model, dataset, bounds, workers=args.workers)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "eval_config.json", {
        "checkpoint": str(args.checkpoint),
        "dataset": str(args.dataset),
        "bucket_bounds": list(bounds),
        "workers": args.workers,
        "checkpoint_provenance": provenance,
    })
    text = format_report(report, bounds)
    (out / "metrics_report.txt").write_text(text)
    print(text, end="")
    return 0


def cmd_gradcheck(args) -> int:
    report = check_model_gradients(
        d_h=args.d_h, heads=args.heads, frames=args.frames,
        sentences=args.sentences, candidates=args.candidates, steps=args.steps,
        step_variant=args.step_variant, h=args.h,
        samples_per_param=args.samples_per_param, seed=args.seed)
    text = report.format()
    print(text, end="")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / "gradcheck_config.json", {
            "d_h": args.d_h, "heads": args.heads, "frames": args.frames,
            "sentences": args.sentences, "candidates": args.candidates,
            "steps": args.steps, "step_variant": args.step_variant,
            "h": args.h, "samples_per_param": args.samples_per_param,
            "seed": args.seed, "tolerance": args.tolerance,
        })
        (out / "gradcheck_report.txt").write_text(text)
    if not report.passed(args.tolerance):
        print(f"FAIL: max relative error {report.max_rel_err:.3e} >= "
              f"{args.tolerance:.1e}", file=sys.stderr)
        return 1
    print(f"PASS: max relative error {report.max_rel_err:.3e} < {args.tolerance:.1e}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stepqa",
        description="Multi-step multimodal QA over precomputed embeddings "
                    f"(kernel backend: {kernels.backend_name()})")
    sub = parser.add_subparsers(dest="command", required=True)

    synth = sub.add_parser("synth", help="generate a synthetic dataset")
    synth.add_argument("--config", help="JSON config file")
    synth.add_argument("--out", required=True, help="output dataset directory")
    synth.add_argument("--n-samples", type=int)
    synth.add_argument("--frames", type=int)
    synth.add_argument("--frames-mult", type=float,
                       help="multiply the frame count (sampling-rate ablation)")
    synth.add_argument("--sentences", type=int)
    synth.add_argument("--steps", type=int)
    synth.add_argument("--candidates", type=int)
    synth.add_argument("--dim", type=int)
    synth.add_argument("--noise-sigma", type=float)
    synth.add_argument("--bucket-mix", help="three comma-separated fractions")
    synth.add_argument("--seed", type=int)
    synth.set_defaults(func=cmd_synth)

    tr = sub.add_parser("train", help="train on a dataset directory")
    tr.add_argument("--config", help="JSON config file")
    tr.add_argument("--dataset", required=True, help="dataset directory or manifest")
    tr.add_argument("--out", required=True, help="output directory")
    tr.add_argument("--epochs", type=int)
    tr.add_argument("--batch-size", type=int)
    tr.add_argument("--lr", type=float, dest="lr")
    tr.add_argument("--d-h", type=int)
    tr.add_argument("--heads", type=int)
    tr.add_argument("--d-o", type=int)
    tr.add_argument("--d-s", type=int)
    tr.add_argument("--step-variant", choices=["gru", "mlp"])
    tr.add_argument("--seed", type=int)
    tr.add_argument("--shuffle-seed", type=int)
    tr.add_argument("--precision", choices=["f32", "f64"])
    tr.add_argument("--split-ratio", type=float)
    tr.add_argument("--bucket-bounds", help="two comma-separated ints, e.g. 10,20")
    tr.add_argument("--quiet", action="store_true")
    tr.set_defaults(func=cmd_train)

    ev = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--dataset", required=True)
    ev.add_argument("--out", required=True)
    ev.add_argument("--bucket-bounds")
    ev.add_argument("--workers", type=int, default=1,
                    help="read-only evaluation processes (default 1)")
    ev.set_defaults(func=cmd_eval)

    gc = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    gc.add_argument("--d-h", type=int, default=16)
    gc.add_argument("--heads", type=int, default=2)
    gc.add_argument("--frames", type=int, default=5)
    gc.add_argument("--sentences", type=int, default=4)
    gc.add_argument("--candidates", type=int, default=3)
    gc.add_argument("--steps", type=int, default=2)
    gc.add_argument("--step-variant", choices=["gru", "mlp"], default="gru")
    gc.add_argument("--h", type=float, default=1e-5, help="finite-difference step")
    gc.add_argument("--samples-per-param", type=int, default=10)
    gc.add_argument("--seed", type=int, default=0)
    gc.add_argument("--tolerance", type=float, default=1e-4)
    gc.add_argument("--out", help="optional report directory")
    gc.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, DatasetError, CheckpointError, ShapeError, NumericsError,
            ValueError, IndexError, ArithmeticError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
