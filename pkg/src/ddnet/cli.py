"""Command line entry point: ``ddnet train|eval|ablate|plot``.

Exit status is 0 on success, 1 for configuration or schema problems and 2 for
anything that goes wrong while running.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .config import parse_config
from .env import ConfigError
from .experiment import OUTPUT_ROOT_ENV, SchemaError, ablate, load_model, plot_data, train
from .training import evaluate, random_baseline

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


def _overrides(pairs) -> dict[str, str]:
    out = {}
    for item in pairs or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, value = item.split("=", 1)
        out[key.strip()] = value
    return out


def _config_from_args(args):
    flat = _overrides(args.overrides) | _overrides(args.set)
    if args.seed is not None:
        flat["seed"] = args.seed
    if getattr(args, "mu", None) is not None:
        flat["algo.mu"] = args.mu
    return parse_config(args.config, flat)


def cmd_train(args) -> int:
    cfg = _config_from_args(args)
    summary = train(cfg, args.out)
    print(json.dumps({k: (str(v) if isinstance(v, Path) else v) for k, v in summary.__dict__.items()}))
    return EXIT_OK


def cmd_eval(args) -> int:
    model, cfg = load_model(args.checkpoint)
    result = evaluate(cfg.env, model, args.episodes, args.seed, policy=args.policy)
    report = {"checkpoint": str(args.checkpoint), "policy": args.policy, "episodes": args.episodes, "seed": args.seed}
    report.update(result.__dict__)
    if args.random_baseline:
        report["random_mean_return"] = random_baseline(cfg.env, model, args.episodes, args.seed).mean_return
    print(json.dumps(report))
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = _config_from_args(args)
    try:
        seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    except ValueError:
        raise ConfigError(f"--seeds expects comma separated integers, got {args.seeds!r}") from None
    path = ablate(cfg, args.sweep, seeds, args.out)
    print(path)
    return EXIT_OK


def cmd_plot(args) -> int:
    out = args.out
    if out is None:
        out = Path(os.environ.get(OUTPUT_ROOT_ENV, ".")) / "plots"
    for path in plot_data(args.files, out, window=args.window):
        print(path)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ddnet", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def run_options(p):
        p.add_argument("--config", type=Path, default=None, help="YAML file of dotted keys")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", type=Path, default=None, help=f"output directory (default: ${OUTPUT_ROOT_ENV}/out_dir)")
        p.add_argument("--mu", type=float, default=None, help="shorthand for algo.mu=X")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="config override, repeatable")
        p.add_argument("overrides", nargs="*", metavar="KEY=VALUE")

    p = sub.add_parser("train", help="train one run")
    run_options(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint greedily")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--episodes", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--policy", choices=("lpn", "ggn"), default="lpn")
    p.add_argument("--random-baseline", action="store_true", help="also report a uniform-random policy")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="run an ablation sweep")
    run_options(p)
    p.add_argument("--sweep", action="append", choices=("mu", "kd", "state"), required=True)
    p.add_argument("--seeds", default="0")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("plot", help="write smoothed plot series from metrics files")
    p.add_argument("files", nargs="+", type=Path)
    p.add_argument("--out", type=Path, default=None)
    p.add_argument("--window", type=int, default=10)
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (ConfigError, SchemaError) as exc:
        print(f"ddnet: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001
        print(f"ddnet: runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
