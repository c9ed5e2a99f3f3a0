"""Command-line entry point.

Exit codes: 0 success, 1 verification failure, 2 usage error, 3 I/O error.
Errors go to stderr as one line starting with ``freecg: <kind> error:``.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys

from . import autodiff
from .cg_ops import ConfigError
from .config import ConfigFileError, load_config
from .data import Dataset, ParseError, PlacementError, generate_synthetic, read_extxyz, write_extxyz

__all__ = ["main", "build_parser", "EXIT_OK", "EXIT_CHECK", "EXIT_USAGE", "EXIT_IO"]

EXIT_OK, EXIT_CHECK, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _key_value(text: str) -> tuple[str, str]:
    key, sep, value = text.partition("=")
    if not sep or not key:
        raise argparse.ArgumentTypeError(f"expected KEY=VALUE, got {text!r}")
    return key.strip(), value.strip()


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="freecg", description="FreeCG interatomic potential toolkit")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="write a synthetic Morse-labelled dataset")
    g.add_argument("--atoms", type=int, required=True)
    g.add_argument("--frames", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--box", type=float, default=6.0)
    g.add_argument("--min-sep", type=float, default=0.8)

    t = sub.add_parser("train", help="train a model on an extended-XYZ dataset")
    t.add_argument("--config")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--metrics", help="per-epoch CSV path")
    t.add_argument("--set", type=_key_value, action="append", default=[], metavar="KEY=VALUE",
                   help="override a config value (repeatable)")
    t.add_argument("--max-steps", type=int)
    t.add_argument("--seed", type=int)

    e = sub.add_parser("eval", help="energy/force MAE of a checkpoint")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--config")
    e.add_argument("--set", type=_key_value, action="append", default=[], metavar="KEY=VALUE")
    e.add_argument("--split", choices=("all", "train", "val", "test"), default="all")

    c = sub.add_parser("check", help="run property suites")
    c.add_argument("--suite", choices=("equivariance", "permutation", "gradient", "cg-oracle", "all"), default="all")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--ckpt", help="check a trained model instead of a fresh seeded one")
    c.add_argument("--config")
    c.add_argument("--set", type=_key_value, action="append", default=[], metavar="KEY=VALUE")

    bp = sub.add_parser("bench-paths", help="per-path operation counts")
    bp.add_argument("--csv", help="output file (default stdout)")

    bg = sub.add_parser("bench-group", help="group-scaling wall-time benchmark")
    bg.add_argument("--T", type=int, default=512)
    bg.add_argument("--groups", type=_int_list, default=[1, 2, 4, 8, 16, 32])
    bg.add_argument("--mode", choices=("sparse", "full"), default="sparse")
    bg.add_argument("--csv", help="output file (default stdout)")
    bg.add_argument("--reps", type=int, default=30)
    bg.add_argument("--warmup", type=int, default=5)
    bg.add_argument("--seed", type=int, default=0)

    i = sub.add_parser("info", help="architecture and parameter counts of a checkpoint")
    i.add_argument("--ckpt", required=True)
    return p


def _configs(args):
    overrides = dict(getattr(args, "set", []) or [])
    for flag, key in (("max_steps", "max_steps"), ("seed", "seed")):
        v = getattr(args, flag, None)
        if v is not None and args.command == "train":
            overrides[key] = str(v)
    return load_config(getattr(args, "config", None), overrides)


def _split(frames, tcfg):
    fractions = (1.0 - tcfg.val_fraction - tcfg.test_fraction, tcfg.val_fraction, tcfg.test_fraction)
    return Dataset(frames, seed=tcfg.split_seed, fractions=fractions)


def _cmd_gen_data(args, out):
    ds = generate_synthetic(args.frames, args.atoms, args.seed, box=args.box, min_separation=args.min_sep)
    write_extxyz(args.out, ds.frames)
    print(f"wrote {len(ds.frames)} frames to {args.out}", file=out)
    return EXIT_OK


def _cmd_train(args, out):
    from .checkpoint import save_model
    from .model import FreeCG
    from .train import evaluate, train

    mcfg, tcfg = _configs(args)
    mcfg, tcfg = mcfg.validate(), tcfg.validate()
    frames = read_extxyz(args.data)
    ds = _split(frames, tcfg)
    model = FreeCG(mcfg)
    result = train(ds.subset("train"), ds.subset("val"), model, tcfg, metrics_path=args.metrics)
    save_model(args.out, model)
    print(f"steps={result.steps} best_epoch={result.best_epoch} best_val_loss={result.best_val_loss:.6g}", file=out)
    test = ds.subset("test")
    if test:
        m = evaluate(model, test)
        print(f"test energy_mae={m['energy_mae']:.6g} force_mae={m['force_mae']:.6g}", file=out)
    return EXIT_OK


def _cmd_eval(args, out):
    from .checkpoint import load_model
    from .train import evaluate

    frames = read_extxyz(args.data)
    if args.config or args.set:
        mcfg, tcfg = _configs(args)
        model = load_model(args.ckpt, mcfg)
    else:
        from .train import TrainConfig

        tcfg = TrainConfig()
        model = load_model(args.ckpt)
    if args.split != "all":
        frames = _split(frames, tcfg).subset(args.split)
    m = evaluate(model, frames)
    print(f"frames={len(frames)} energy_mae={m['energy_mae']:.6g} force_mae={m['force_mae']:.6g}", file=out)
    return EXIT_OK


def _cmd_check(args, out):
    from .checkpoint import load_model
    from .model import FreeCG
    from .verify import run_suite

    model = None
    if args.suite != "cg-oracle":
        if args.ckpt:
            model = load_model(args.ckpt)
        else:
            mcfg, _ = _configs(args)
            model = FreeCG(dataclasses.replace(mcfg, seed=args.seed).validate())
    results = run_suite(args.suite, model, seed=args.seed)
    for r in results:
        print(r.line(), file=out)
    failed = [r for r in results if not r.passed]
    if failed:
        print(f"freecg: check error: {len(failed)} of {len(results)} checks failed", file=sys.stderr)
        return EXIT_CHECK
    return EXIT_OK


def _emit(text: str, path, out):
    if path:
        with open(path, "w") as fh:
            fh.write(text)
    else:
        out.write(text)


def _cmd_bench_paths(args, out):
    from .bench import bench_path_table, path_table_csv

    _emit(path_table_csv(bench_path_table()), args.csv, out)
    return EXIT_OK


def _cmd_bench_group(args, out):
    from .bench import bench_group_scaling

    report = bench_group_scaling(T=args.T, groups=tuple(args.groups), mode=args.mode,
                                 reps=args.reps, warmup=args.warmup, seed=args.seed)
    _emit(report.to_csv(), args.csv, out)
    return EXIT_OK


def _cmd_info(args, out):
    from .checkpoint import config_from_arrays, load_model, parameter_count, read_arrays

    cfg = config_from_arrays(read_arrays(args.ckpt))
    model = load_model(args.ckpt)
    for f in dataclasses.fields(cfg):
        print(f"{f.name}={getattr(cfg, f.name)}", file=out)
    for name, count in parameter_count(model).items():
        print(f"params.{name}={count}", file=out)
    return EXIT_OK


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "check": _cmd_check,
    "bench-paths": _cmd_bench_paths,
    "bench-group": _cmd_bench_group,
    "info": _cmd_info,
}


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"freecg: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    autodiff.configure_threads()
    from .checkpoint import CheckpointError

    try:
        return _COMMANDS[args.command](args, out)
    except (OSError, ParseError, CheckpointError) as exc:
        print(f"freecg: io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ConfigError, ConfigFileError, PlacementError, ValueError) as exc:
        print(f"freecg: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
