"""Command line interface.

Subcommands:

    riskseg gen-data   --out DIR [--train N --val N --test N --seed S --canvas C]
    riskseg train      --data DIR [--out DIR] [--config FILE] [--set key=value ...]
    riskseg eval       --checkpoint FILE --data DIR [--split test] [--out DIR] [--force]
    riskseg ablate     --data DIR [--out DIR] [--seeds 0 1 2] [--set key=value ...]
    riskseg export-unc --checkpoint FILE --data DIR --ids 0 1 ... [--out DIR] [--force]

When ``--out`` is omitted the output root comes from $RISKSEG_OUTPUT_DIR,
falling back to ./runs.

Exit codes: 0 success, 2 config/usage error, 3 data error, 4 checkpoint
error, 5 training diverged.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from .ablate import direction_checks, gate_passed, run_ablation
from .config import RunConfig, parse_overrides
from .errors import CheckpointError, ConfigError, DataError, TrainingDiverged
from .export import export_uncertainty
from .synthdata import make_splits
from .train import evaluate_model, load_model_from_checkpoint, load_split, train

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_CHECKPOINT = 4
EXIT_DIVERGED = 5

logger = logging.getLogger("riskseg")


def _out_dir(arg: str | None, default_name: str) -> Path:
    if arg is not None:
        return Path(arg)
    root = os.environ.get("RISKSEG_OUTPUT_DIR", "runs")
    return Path(root) / default_name


def _load_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    overrides = parse_overrides(args.set or [])
    return cfg.replace(**overrides) if overrides else cfg


def _cmd_gen_data(args: argparse.Namespace) -> int:
    cfg = RunConfig(
        canvas=args.canvas,
        train_samples=args.train,
        val_samples=args.val,
        test_samples=args.test,
        data_seed=args.seed,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    counts = {"train": cfg.train_samples, "val": cfg.val_samples, "test": cfg.test_samples}
    manifests = make_splits(cfg.scene_config(), counts, cfg.data_seed)
    for split, manifest in manifests.items():
        path = out / f"{split}.manifest"
        manifest.save(path)
        print(f"wrote {path} ({len(manifest.records)} samples)")
    return 0


def _cmd_train(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    out = _out_dir(args.out, "train")
    result = train(cfg, args.data, out, resume=args.resume)
    cfg.save(out / "config.txt")
    print(f"checkpoint: {result.checkpoint_path}")
    print(f"final val mIoU: {result.final_val_miou:.6f} (best {result.best_val_miou:.6f})")
    return 0


def _cmd_eval(args: argparse.Namespace) -> int:
    model, cfg = load_model_from_checkpoint(args.checkpoint, force=args.force)
    dataset = load_split(args.data, args.split, cfg)
    report = evaluate_model(model, dataset)
    out = _out_dir(args.out, "eval")
    out.mkdir(parents=True, exist_ok=True)
    report.write_table(out / f"{args.split}_report.txt")
    report.write_keyvalues(out / f"{args.split}_report.kv")
    print(report.to_table(), end="")
    return 0


def _cmd_ablate(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    out = _out_dir(args.out, "ablation")
    table = run_ablation(cfg, args.seeds, args.data, out)
    print(table.to_text(), end="")
    checks = direction_checks(table)
    for check in checks:
        print(check.describe())
    print(f"gate {'PASSED' if gate_passed(checks) else 'FAILED'}")
    return 0


def _cmd_export(args: argparse.Namespace) -> int:
    model, cfg = load_model_from_checkpoint(args.checkpoint, force=args.force)
    dataset = load_split(args.data, args.split, cfg)
    out = _out_dir(args.out, "uncertainty")
    written = export_uncertainty(model, dataset, args.ids, out)
    print(f"wrote {len(written)} files to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="riskseg", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-data", help="generate split manifests")
    gen.add_argument("--out", required=True)
    gen.add_argument("--train", type=int, default=600)
    gen.add_argument("--val", type=int, default=100)
    gen.add_argument("--test", type=int, default=200)
    gen.add_argument("--seed", type=int, default=7)
    gen.add_argument("--canvas", type=int, default=64)
    gen.set_defaults(func=_cmd_gen_data)

    def add_config_args(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="flat key=value config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE")

    tr = sub.add_parser("train", help="train a model")
    tr.add_argument("--data", required=True)
    tr.add_argument("--out")
    tr.add_argument("--resume", help="checkpoint to continue from")
    add_config_args(tr)
    tr.set_defaults(func=_cmd_train)

    ev = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--data", required=True)
    ev.add_argument("--split", default="test", choices=("train", "val", "test"))
    ev.add_argument("--out")
    ev.add_argument("--force", action="store_true", help="ignore config-hash mismatch")
    ev.set_defaults(func=_cmd_eval)

    ab = sub.add_parser("ablate", help="run the four-variant ablation")
    ab.add_argument("--data", required=True)
    ab.add_argument("--out")
    ab.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    add_config_args(ab)
    ab.set_defaults(func=_cmd_ablate)

    ex = sub.add_parser("export-unc", help="export uncertainty visualizations")
    ex.add_argument("--checkpoint", required=True)
    ex.add_argument("--data", required=True)
    ex.add_argument("--split", default="test", choices=("train", "val", "test"))
    ex.add_argument("--ids", type=int, nargs="+", required=True)
    ex.add_argument("--out")
    ex.add_argument("--force", action="store_true")
    ex.set_defaults(func=_cmd_export)

    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        logger.error("config error: %s", exc)
        return EXIT_CONFIG
    except DataError as exc:
        logger.error("data error: %s", exc)
        return EXIT_DATA
    except CheckpointError as exc:
        logger.error("checkpoint error: %s", exc)
        return EXIT_CHECKPOINT
    except TrainingDiverged as exc:
        logger.error("training diverged: %s", exc)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
