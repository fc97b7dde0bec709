"""``dvpo`` command line: run, sweep, compare, validate-config, plot.

Exit status: 0 success, 2 invalid config, 3 training diverged, 1 anything else.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace

from .config import ALGORITHMS, TrainConfig, config_hash, load_config
from .errors import ConfigError, DivergenceError
from .experiments import SweepSpec, compare_algorithms, parse_values, run_experiment, run_sweep

log = logging.getLogger("dvpo")

LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}

EXIT_OK, EXIT_OTHER, EXIT_CONFIG, EXIT_DIVERGED = 0, 1, 2, 3


def _setup_logging() -> None:
    name = os.environ.get("DVPO_LOG_LEVEL", "info").strip().lower()
    logging.basicConfig(level=LOG_LEVELS.get(name, logging.INFO), format="%(levelname)s %(name)s: %(message)s",
                        stream=sys.stderr)
    if name not in LOG_LEVELS:
        log.warning("DVPO_LOG_LEVEL=%r not one of %s; using info", name, ", ".join(LOG_LEVELS))


def _base_config(args) -> TrainConfig:
    cfg = load_config(args.config) if args.config else TrainConfig()
    if getattr(args, "algo", None) and args.command != "compare":
        cfg = replace(cfg, algorithm=args.algo[0])
    return cfg


def _maybe_plot(args, out) -> None:
    if args.plot:
        from .report import plot_any

        for path in plot_any(out):
            log.info("wrote %s", path)


def cmd_run(args) -> int:
    cfg = _base_config(args)
    results = run_experiment(cfg, args.out, args.seed)
    for r in results:
        log.info("seed %d: final true return %.4f", r.config.seed, r.final_true_return())
    _maybe_plot(args, args.out)
    return EXIT_OK


def cmd_sweep(args) -> int:
    if not args.param or args.values is None:
        raise ConfigError("sweep needs --param and --values", "--param")
    cfg = _base_config(args)
    spec = SweepSpec(args.param, tuple(parse_values(args.values)), tuple(args.seed or [cfg.seed]))
    summary = run_sweep(cfg, spec, args.out, args.jobs)
    for row in summary:
        log.info("%s=%s: %.4f ± %.4f (%d failed)", row["param"], row["value"], row["mean_final_true_return"],
                 row["std_final_true_return"], row["n_failed"])
    _maybe_plot(args, args.out)
    return EXIT_OK


def cmd_compare(args) -> int:
    cfg = _base_config(args)
    algos = args.algo or ["dvpo", "ppo"]
    rows = compare_algorithms(cfg, algos, args.seed or [cfg.seed], args.out, args.jobs)
    for row in rows:
        if row["seed"] == "mean":
            log.info("%s: mean true return %.4f, delta %.4f", row["algorithm"], row["final_true_return"],
                     row["delta_true_return"])
    _maybe_plot(args, args.out)
    return EXIT_OK


def cmd_validate(args) -> int:
    if not args.config:
        raise ConfigError("validate-config needs --config", "--config")
    cfg = load_config(args.config)
    print(f"ok {config_hash(cfg)}")
    return EXIT_OK


def cmd_plot(args) -> int:
    from .report import plot_any

    for path in plot_any(args.dir):
        print(path)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dvpo", description="Train and compare noisy-reward policy optimizers.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_required=True):
        p.add_argument("--config", metavar="PATH", help="TOML config file (defaults built in)")
        p.add_argument("--out", metavar="DIR", required=out_required, help="output directory")
        p.add_argument("--seed", type=int, action="append", metavar="N", help="seed; repeat for several")
        p.add_argument("--plot", action="store_true", help="also render PNG figures into the output directory")

    p = sub.add_parser("run", help="train one config (one run per --seed)")
    common(p)
    p.add_argument("--algo", action="append", choices=ALGORITHMS, metavar="NAME")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="one run per (value, seed) of a config field")
    common(p)
    p.add_argument("--algo", action="append", choices=ALGORITHMS, metavar="NAME")
    p.add_argument("--param", metavar="PATH", help="dotted config path, e.g. tails.alpha or critic.m")
    p.add_argument("--values", metavar="CSVLIST", help="comma-separated values")
    p.add_argument("--jobs", type=int, default=1, help="parallel child processes")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("compare", help="paired comparison of algorithms on shared seeds")
    common(p)
    p.add_argument("--algo", action="append", choices=ALGORITHMS, metavar="NAME",
                   help="algorithm; repeat (first one is the delta reference)")
    p.add_argument("--jobs", type=int, default=1, help="parallel child processes")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("validate-config", help="parse and validate a config file")
    p.add_argument("--config", metavar="PATH")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("plot", help="render figures for an existing output directory")
    p.add_argument("dir", metavar="DIR")
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    _setup_logging()
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except Exception as exc:  # noqa: BLE001
        log.debug("unhandled error", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_OTHER


if __name__ == "__main__":
    sys.exit(main())
