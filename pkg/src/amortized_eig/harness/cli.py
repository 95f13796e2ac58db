"""Command-line entry point ``amortized-eig``.

Exit codes: 0 success, 1 config error, 2 numeric failure, 3 missing checkpoint.
"""
from __future__ import annotations

import argparse
import logging
import sys
import time
from importlib import resources
from pathlib import Path

from ..flow.checkpoint import CheckpointError
from ..trainer import train
from . import experiments as ex
from .config import ConfigError, ExperimentConfig, load_config

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_CHECKPOINT = 0, 1, 2, 3

DEFAULT_CONFIGS = {
    "train": "linear.toml",
    "evaluate": "linear.toml",
    "oracle": "linear-unknown.toml",
    "archstudy": "archstudy.toml",
    "amortize-compare": "amortization.toml",
}


def shipped_config(name: str) -> Path:
    return Path(str(resources.files("amortized_eig") / "configs" / name))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="amortized-eig", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "train": "train the amortized posterior and write a checkpoint",
        "evaluate": "train (or load) and evaluate all estimators on random designs",
        "oracle": "ground-truth EIG next to the NMC bounds",
        "archstudy": "encoder x transform grid, loss traces",
        "amortize-compare": "amortized posterior vs. per-design linear baseline",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", type=Path, help=f"TOML file (default: shipped {DEFAULT_CONFIGS[name]})")
        p.add_argument("--seed", type=int, help="overrides the config seed")
        p.add_argument("--out", type=Path, help="output directory")
        p.add_argument("--desk-scale", action="store_true", help="use the desk-scale budgets")
        p.add_argument("--workers", type=int, default=1, help="evaluation processes (results do not depend on it)")
        if name in ("train", "evaluate", "amortize-compare"):
            p.add_argument("--checkpoint", type=Path, help="checkpoint path (default: <out>/model.ckpt)")
        if name in ("evaluate", "amortize-compare"):
            p.add_argument("--no-train", action="store_true", help="load the checkpoint instead of training")
        if name == "evaluate":
            p.add_argument("--retrain-per-run", action="store_true",
                           help="retrain the posterior for every evaluation run")
    return parser


def _resolve(args) -> ExperimentConfig:
    cfg = load_config(args.config or shipped_config(DEFAULT_CONFIGS[args.command]))
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    if args.desk_scale:
        cfg = cfg.desk_scale()
    if args.workers < 1:
        raise ConfigError("--workers must be >= 1")
    return cfg


def _cmd_train(cfg, args) -> None:
    out = Path(args.out or cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = args.checkpoint or out / "model.ckpt"
    t0 = time.perf_counter()
    _, trace = train(cfg.model.build(), cfg.encoder, cfg.flow, cfg.train, checkpoint=ckpt)
    trace.write_csv(out / "loss_trace.csv")
    with open(out / "timing.txt", "w") as fh:
        fh.write(f"train: {time.perf_counter() - t0:.3f} s\n")
    print(f"checkpoint {ckpt}; final 50-step mean loss {trace.window_mean(50):.4f}")


def _summary(res) -> None:
    print(f"wrote {len(res.rows)} rows to {res.out}")
    for k, v in res.timing.items():
        print(f"  {k}: {v:.2f}" if isinstance(v, float) else f"  {k}: {v}")


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = _resolve(args)
        if args.command == "train":
            _cmd_train(cfg, args)
        elif args.command == "evaluate":
            _summary(ex.run_model_experiment(cfg, args.out, args.no_train, args.checkpoint, args.workers,
                                             args.retrain_per_run))
        elif args.command == "oracle":
            _summary(ex.run_oracle_check(cfg, args.out, args.workers))
        elif args.command == "archstudy":
            res = ex.run_archstudy(cfg, args.out)
            for name, v in res.extra["summary"].items():
                print(f"{name:32s} {v:.4f}")
        else:
            _summary(ex.run_amortization_experiment(cfg, args.out, args.no_train, args.checkpoint, args.workers))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ex.MissingCheckpoint, CheckpointError) as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except FloatingPointError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
