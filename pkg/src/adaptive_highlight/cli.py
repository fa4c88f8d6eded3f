"""``adaptive-highlight`` command line.

Every command is a pure function of its config file, seed and input files:
apart from the wall times in the training log, re-running a command writes
byte-identical outputs.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .checkpoint import CheckpointError, load_model, save_model
from .config import ConfigError, apply_overrides, load_config
from .data import DatasetError, generate_synthetic, load_splits, save_splits
from .evaluation import ablate_affine, ablate_history_size, compare, evaluate
from .gradcheck import run_suite
from .networks import VARIANTS, EmptyHistoryError
from .training import TrainingDivergence, train

EXIT_OK, EXIT_FAILED, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED = 0, 1, 2, 3, 4
CLI_VARIANTS = ("fcsn", "h-fcsn", "fcsn-agg", "h-fcsn-agg", "adaptive", "adaptive-attn")
GRADCHECK_TOLERANCE = 1e-4


def build_parser():
    parser = argparse.ArgumentParser(prog="adaptive-highlight",
                                     description="User-adaptive video highlight detection with T-AIN.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="TOML run config")
    common.add_argument("--seed", type=int, help="overrides the config seed (default 0)")
    common.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    data_opts = argparse.ArgumentParser(add_help=False)
    data_opts.add_argument("--dataset", type=Path,
                           help="dataset root with train/val/test splits (default: generate from config)")

    model_opts = argparse.ArgumentParser(add_help=False)
    model_opts.add_argument("--variant", choices=CLI_VARIANTS)
    model_opts.add_argument("--history-size", type=int, help="train with the h most recent history rows")

    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", parents=[common], help="write a synthetic dataset")
    sub.add_parser("train", parents=[common, data_opts, model_opts], help="train one variant")
    p = sub.add_parser("eval", parents=[common, data_opts], help="score a checkpoint")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    sub.add_parser("compare", parents=[common, data_opts], help="train and test all comparison variants")
    sub.add_parser("ablate-affine", parents=[common, data_opts], help="fixed vs learned vs predicted affine")
    p = sub.add_parser("ablate-history", parents=[common, data_opts], help="vary the training history size")
    p.add_argument("--sizes", default="1,5,full", help="comma-separated sizes; 'full' keeps every row")
    sub.add_parser("gradcheck", parents=[common], help="finite-difference check of every operation")
    return parser


def _splits(args, cfg):
    if args.dataset is not None:
        if not args.dataset.is_dir():
            raise DatasetError(f"dataset directory {args.dataset} does not exist")
        splits = load_splits(args.dataset)
        if "train" not in splits:
            raise DatasetError(f"{args.dataset} has no train split")
        return splits
    return generate_synthetic(**cfg.data_kwargs()).splits


def _write(path, text):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def cmd_generate(args, cfg):
    ds = generate_synthetic(**cfg.data_kwargs())
    save_splits(ds.splits, args.out)
    users = {uid: sorted(u.preferred) for uid, u in ds.users.items()}
    _write(args.out / "users.json", json.dumps(users, indent=2, sort_keys=True) + "\n")
    counts = {k: len(v) for k, v in ds.splits.items()}
    print(f"wrote {counts} samples to {args.out}")


def cmd_train(args, cfg):
    splits = _splits(args, cfg)
    model_cfg = cfg.model_for()
    args.out.mkdir(parents=True, exist_ok=True)
    result = train(splits["train"], model_cfg, cfg.train_config(), val_samples=splits.get("val"),
                   log_path=args.out / "train_log.jsonl", checkpoint_dir=args.out)
    save_model(result.model, args.out / "model.ckpt")
    print(f"{cfg.variant}: best epoch {result.best_epoch}, checkpoint {args.out / 'model.ckpt'}")


def cmd_eval(args, cfg):
    splits = _splits(args, cfg)
    if args.split not in splits:
        raise DatasetError(f"dataset has no {args.split} split")
    model = load_model(args.checkpoint)
    variant = next((name for name in VARIANTS if model.cfg == model.cfg.for_variant(name)), "")
    report = evaluate(model, splits[args.split], variant)
    _write(args.out / "report.json", report.to_json() + "\n")
    print(f"mAP {100 * report.map:.2f}% over {len(report.per_video_ap)} videos")


def _emit_table(table, out, stem):
    _write(out / f"{stem}.txt", table.render())
    _write(out / f"{stem}.json", table.to_json() + "\n")
    print(table.render(), end="")


def cmd_compare(args, cfg):
    table, reports = compare(_splits(args, cfg), cfg.model, cfg.train_config())
    for variant, report in reports.items():
        _write(args.out / "reports" / f"{variant}.json", report.to_json() + "\n")
    _emit_table(table, args.out, "comparison")


def cmd_ablate_affine(args, cfg):
    table, _ = ablate_affine(_splits(args, cfg), cfg.model, cfg.train_config())
    _emit_table(table, args.out, "affine_ablation")


def _parse_sizes(text):
    sizes = []
    for token in text.split(","):
        token = token.strip()
        if token in ("full", "n"):
            sizes.append(None)
            continue
        try:
            h = int(token)
        except ValueError:
            raise ConfigError(f"--sizes: bad history size {token!r}") from None
        if h < 1:
            raise ConfigError("--sizes: history sizes must be >= 1")
        sizes.append(h)
    return tuple(sizes)


def cmd_ablate_history(args, cfg):
    table, _ = ablate_history_size(_splits(args, cfg), cfg.model, cfg.train_config(), _parse_sizes(args.sizes))
    _emit_table(table, args.out, "history_ablation")


def cmd_gradcheck(args, cfg):
    errors = run_suite(seed=cfg.seed)
    width = max(map(len, errors))
    lines = [f"{name.ljust(width)}  {err:.3e}  {'ok' if err < GRADCHECK_TOLERANCE else 'FAIL'}"
             for name, err in errors.items()]
    _write(args.out / "gradcheck.txt", "\n".join(lines) + "\n")
    print("\n".join(lines))
    worst = max(errors.values())
    print(f"max relative error {worst:.3e} (tolerance {GRADCHECK_TOLERANCE:g})")
    return EXIT_OK if worst < GRADCHECK_TOLERANCE else EXIT_FAILED


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "eval": cmd_eval,
    "compare": cmd_compare,
    "ablate-affine": cmd_ablate_affine,
    "ablate-history": cmd_ablate_history,
    "gradcheck": cmd_gradcheck,
}


def _fail(code, exc):
    print(json.dumps({"error": type(exc).__name__, "message": str(exc), "exit_code": code}), file=sys.stderr)
    return code


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        apply_overrides(cfg, seed=args.seed, variant=getattr(args, "variant", None),
                        history_size=getattr(args, "history_size", None))
        code = COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, exc)
    except (DatasetError, CheckpointError, EmptyHistoryError, FileNotFoundError) as exc:
        return _fail(EXIT_DATA, exc)
    except TrainingDivergence as exc:
        return _fail(EXIT_DIVERGED, exc)
    return EXIT_OK if code is None else code


if __name__ == "__main__":
    sys.exit(main())
