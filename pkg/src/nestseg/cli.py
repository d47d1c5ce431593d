"""``nestseg`` command line.

Exit codes: 0 success, 1 configuration error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, dump_config, parse_config
from .errors import ConfigError

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


def build_parser():
    parser = argparse.ArgumentParser(prog="nestseg", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", type=Path, required=False, help="INI configuration file")
        p.add_argument("--seed", type=int, help="override [train] master_seed")
        p.add_argument("--out", type=Path, help="output directory (default: [train] output_dir)")
        p.add_argument("--print-defaults", action="store_true", help="print the default configuration and exit")
        return p

    common(sub.add_parser("train", help="train one network on the first cross-validation triple"))
    common(sub.add_parser("benchmark", help="cross-validated comparison of all configured methods"))
    common(sub.add_parser("gen-data", help="export the synthetic dataset as PGM files"))
    p = common(sub.add_parser("predict", help="label one PGM image with a trained checkpoint"))
    p.add_argument("--checkpoint", type=Path, help="model.nseg written by 'train'")
    p.add_argument("--image", type=Path, help="input PGM image")
    p.add_argument("--thresholds", type=str, help="comma-separated ordinal thresholds, e.g. 0.5,1.5")
    return parser


def _load(args):
    if args.config is None:
        raise ConfigError(f"{args.command}: --config is required")
    cfg = parse_config(args.config)
    if args.seed is not None:
        from .harness import with_seed

        cfg = with_seed(cfg, args.seed)
    return cfg


def _out_dir(args, cfg):
    return args.out if args.out is not None else Path(cfg.output_dir)


def _thresholds(text):
    if text is None:
        return None
    try:
        return tuple(float(p) for p in text.split(","))
    except ValueError as exc:
        raise ConfigError(f"--thresholds: {exc}") from exc


def cmd_train(args):
    from .harness import run_train

    cfg = _load(args)
    out = _out_dir(args, cfg)
    res = run_train(cfg, out)
    final = float(np.mean(res.eval_dice[-1])) if res.eval_dice else float("nan")
    print(f"trained {res.method} for {cfg.iterations} iterations; final validation Dice(class {cfg.m}) = {final:.4f}")
    print(f"checkpoint: {out / 'model.nseg'}")


def cmd_benchmark(args):
    from .harness import run_benchmark

    cfg = _load(args)
    out = _out_dir(args, cfg)

    def progress(fold, method):
        logging.getLogger("nestseg").info("fold %d: %s done", fold, method)

    report = run_benchmark(cfg, out, progress=progress)
    print(f"{'method':<22} {'mean Dice':>10} {'sd':>8} {'violations':>11}")
    for s in report.summary:
        if s["class"] == cfg.m:
            print(f"{s['method']:<22} {s['mean_dice']:>10.4f} {s['sd_dice']:>8.4f} {s['mean_violations']:>11.2f}")
    print(f"report: {out / 'report.csv'}")


def cmd_gen_data(args):
    from .harness import export_dataset

    cfg = _load(args)
    out = _out_dir(args, cfg)
    samples = export_dataset(cfg, out)
    print(f"wrote {len(samples)} image/label pairs to {out}")


def cmd_predict(args):
    from .harness import run_predict

    if args.checkpoint is None or args.image is None:
        raise ConfigError("predict: --checkpoint and --image are required")
    thresholds = _thresholds(args.thresholds)
    out = args.out if args.out is not None else Path(".")
    labels, counts, violations = run_predict(args.checkpoint, args.image, out, thresholds)
    for c, n in enumerate(counts):
        print(f"class {c}: {int(n)} pixels")
    print(f"violations: {violations}")


COMMANDS = {"train": cmd_train, "benchmark": cmd_benchmark, "gen-data": cmd_gen_data, "predict": cmd_predict}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if args.print_defaults:
        print(dump_config(ExperimentConfig()), end="")
        return EXIT_OK
    try:
        COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, KeyError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
