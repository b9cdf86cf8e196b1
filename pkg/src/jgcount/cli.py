"""Command-line entry point: ``jgcount <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from dataclasses import fields
from pathlib import Path

from . import config as cfgmod
from .cnf import DimacsError, read_dimacs
from .config import ModelConfig, TrainConfig

log = logging.getLogger("jgcount")

EXIT_OK, EXIT_INPUT, EXIT_INTERNAL = 0, 1, 2


class InputError(Exception):
    """Bad user input; reported in one line with exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise InputError(message)


def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def _add_config_flags(p: argparse.ArgumentParser, cls, skip=()) -> None:
    group = p.add_argument_group(f"{cls.__name__} keys")
    for f in fields(cls):
        if f.name in skip:
            continue
        kind = type(f.default)
        kw = {"dest": f.name, "default": None, "help": f"(default: {f.default})"}
        if kind is bool:
            kw["type"] = lambda s: cfgmod._coerce(s, bool)
            kw["metavar"] = "{true,false}"
        else:
            kw["type"] = kind
        group.add_argument(_flag(f.name), **kw)


def _common(p: argparse.ArgumentParser, jobs: bool = False) -> None:
    p.add_argument("--config", help="flat key = value file; any config key")
    p.add_argument("--log-level", default="INFO", help="(default: INFO)")
    if jobs:
        p.add_argument("--jobs", type=int, default=os.cpu_count() or 1,
                       help=f"worker processes (default: available cores = {os.cpu_count() or 1})")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="jgcount", description="Exact, classical and neural model counting on CNF formulas.")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("count", help="exact model count of a DIMACS file")
    p.add_argument("cnf")
    p.add_argument("--method", choices=("auto", "enum", "dpll"), default="auto", help="(default: auto)")
    p.add_argument("--time-budget", type=float, default=None, help="seconds for DPLL (default: none)")
    p.add_argument("--seed", type=int, default=0, help="(default: 0; counting is deterministic)")
    _common(p)

    p = sub.add_parser("decompose", help="build and validate a join graph; JSON to stdout or --out")
    p.add_argument("cnf")
    p.add_argument("--i-bound", type=int, default=3, help="(default: 3)")
    p.add_argument("--out")
    p.add_argument("--seed", type=int, default=0, help="(default: 0; construction is deterministic)")
    _common(p)

    p = sub.add_parser("ijgp", help="classical IJGP estimate of ln Z")
    p.add_argument("cnf")
    p.add_argument("--i-bound", type=int, default=3, help="(default: 3)")
    p.add_argument("--max-iters", type=int, default=100, help="(default: 100)")
    p.add_argument("--tol", type=float, default=1e-8, help="convergence tolerance (default: 1e-08)")
    p.add_argument("--damping", type=float, default=0.5, help="(default: 0.5)")
    p.add_argument("--counting", choices=("separator", "variable"), default="separator",
                   help="entropy correction (default: separator)")
    p.add_argument("--seed", type=int, default=0, help="(default: 0; IJGP is deterministic)")
    _common(p)

    p = sub.add_parser("gen", help="generate a labelled random 3-SAT dataset (JSONL)")
    p.add_argument("--out", required=True)
    _add_config_flags(p, TrainConfig, skip=("epochs", "batch_size", "lr", "optimizer", "time_budget"))
    p.add_argument("--count-budget", type=float, default=60.0, help="seconds per exact count (default: 60.0)")
    _common(p, jobs=True)

    for name, helptext in (
        ("train", "train a model; writes checkpoint, history CSV and curve figure"),
        ("ablate", "train the four ablation variants; writes CSV, table and figure"),
    ):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--data", required=True, help="dataset JSONL")
        if name == "train":
            p.add_argument("--out", required=True, help="checkpoint path")
            p.add_argument("--report-dir", help="directory for history CSV and figure")
        else:
            p.add_argument("--out-dir", required=True)
            _common(p, jobs=True)
        _add_config_flags(p, ModelConfig)
        _add_config_flags(p, TrainConfig, skip=("n_min", "n_max", "ratio_min", "ratio_max", "num_instances"))
        if name == "train":
            _common(p)

    p = sub.add_parser("eval", help="evaluate a checkpoint; residual CSV and scatter figure")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=("train", "val", "test"), default="test", help="(default: test)")
    p.add_argument("--out", required=True, help="residual CSV path")
    p.add_argument("--figure", help="scatter plot path (default: next to --out)")
    p.add_argument("--seed", type=int, default=0, help="(default: 0; evaluation is deterministic)")
    _common(p, jobs=True)

    p = sub.add_parser("gradcheck", help="finite-difference checks of every op and the full model")
    p.add_argument("--eps", type=float, default=1e-5, help="(default: 1e-05)")
    p.add_argument("--tol", type=float, default=1e-4, help="(default: 0.0001)")
    p.add_argument("--seed", type=int, default=0, help="(default: 0)")
    p.add_argument("--d", type=int, default=8, help="feature dimension (default: 8)")
    p.add_argument("--ops-only", action="store_true", help="skip the full-model check")
    _common(p)
    return ap


# ---------------------------------------------------------------- config resolution


def resolve(args, classes) -> dict[str, object]:
    """Defaults < config file < JGCOUNT_* environment < command-line flags."""
    values: dict[str, object] = {}
    if getattr(args, "config", None):
        try:
            values.update(cfgmod.read_flat_file(args.config))
        except FileNotFoundError:
            raise InputError(f"config file not found: {args.config}") from None
    keys = [f.name for cls in classes for f in fields(cls)]
    values.update(cfgmod.env_overrides(keys))
    values.update({k: getattr(args, k) for k in keys if getattr(args, k, None) is not None})
    known = set(keys)
    unknown = sorted(set(values) - known)
    if unknown:
        raise InputError(f"unknown config key(s) {', '.join(unknown)}; valid keys: {', '.join(sorted(known))}")
    out = {}
    for cls in classes:
        own = {k: v for k, v in values.items() if k in {f.name for f in fields(cls)}}
        try:
            out[cls.__name__] = cfgmod.apply_overrides(cls(), own)
        except (ValueError, TypeError) as exc:
            raise InputError(f"invalid {cls.__name__}: {exc}") from None
    return out


def _announce(command: str, seed, **parts) -> None:
    resolved = {"command": command, "seed": seed}
    resolved.update({k: cfgmod.to_dict(v) if hasattr(v, "__dataclass_fields__") else v for k, v in parts.items()})
    print("resolved config: " + json.dumps(resolved, sort_keys=True), file=sys.stderr)


def _read(path):
    try:
        return read_dimacs(path)
    except FileNotFoundError:
        raise InputError(f"no such file: {path}") from None
    except DimacsError as exc:
        raise InputError(f"{path}: malformed DIMACS: {exc}") from None


def _load_records(path):
    from .data import load_dataset

    try:
        return load_dataset(path)
    except FileNotFoundError:
        raise InputError(f"no such dataset: {path}") from None
    except (ValueError, KeyError) as exc:
        raise InputError(f"{path}: malformed dataset: {exc}") from None


# ---------------------------------------------------------------- commands


def cmd_count(args) -> int:
    from .oracle import count, count_models, count_models_dpll

    _announce("count", args.seed, method=args.method, time_budget=args.time_budget)
    f = _read(args.cnf)
    if args.method == "enum":
        res = count_models(f)
    elif args.method == "dpll":
        res = count_models_dpll(f, args.time_budget)
    else:
        res = count(f, args.time_budget)
    log_text = "-inf" if res.log_count is None else repr(res.log_count)
    print(f"models={res.model_count} log={log_text}")
    return EXIT_OK


def cmd_decompose(args) -> int:
    from .io import atomic_write_text
    from .joingraph import build_join_graph, validate_join_graph

    _announce("decompose", args.seed, i_bound=args.i_bound)
    f = _read(args.cnf)
    g = build_join_graph(f, args.i_bound)
    report = validate_join_graph(g, f)
    blob = g.to_dict()
    blob["valid"] = report.valid
    blob["violations"] = list(report.violations)
    text = json.dumps(blob, sort_keys=True, indent=1) + "\n"
    if args.out:
        atomic_write_text(args.out, text)
        print(f"clusters={len(g.clusters)} edges={len(g.edges)} width={g.width} valid={str(report.valid).lower()}")
    else:
        sys.stdout.write(text)
    return EXIT_OK if report.valid else EXIT_INTERNAL


def cmd_ijgp(args) -> int:
    from .ijgp import IjgpConfig, estimate_log_z

    try:
        icfg = IjgpConfig(args.max_iters, args.tol, args.damping)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    _announce("ijgp", args.seed, i_bound=args.i_bound, ijgp=icfg, counting=args.counting)
    f = _read(args.cnf)
    res = estimate_log_z(f, args.i_bound, icfg, args.counting)
    value = "-inf" if math.isinf(res.log_z) else f"{res.log_z:.6f}"
    print(f"logZ={value} converged={str(res.converged).lower()} width={res.width} iters={res.iters}")
    return EXIT_OK


def cmd_gen(args) -> int:
    from .data import generate_dataset, label_stats, save_dataset

    tcfg = resolve(args, [TrainConfig])["TrainConfig"]
    _announce("gen", tcfg.seed, train=tcfg, jobs=args.jobs, count_budget=args.count_budget)
    records = generate_dataset(tcfg, jobs=max(1, args.jobs), count_budget=args.count_budget)
    save_dataset(args.out, records)
    stats = label_stats(records)
    print(f"records={len(records)} label_mean={stats['mean']:.6f} label_std={stats['std']:.6f} out={args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .io import write_csv
    from .plotting import training_curves
    from .trainer import train

    cfgs = resolve(args, [ModelConfig, TrainConfig])
    mcfg, tcfg = cfgs["ModelConfig"], cfgs["TrainConfig"]
    _announce("train", tcfg.seed, model=mcfg, train=tcfg)
    records = _load_records(args.data)
    res = train(mcfg, tcfg, records, checkpoint=args.out)
    if args.report_dir:
        rd = Path(args.report_dir)
        keys = list(res.history[0]) if res.history else []
        write_csv(rd / "history.csv", keys, ([repr(h[k]) if isinstance(h[k], float) else h[k] for k in keys]
                                              for h in res.history))
        if res.history:
            training_curves(res.history, rd / "training_curves.png")
    print(f"best_epoch={res.best_epoch} best_val_rmse={res.best_val_rmse:.6f} steps={res.steps} "
          f"head_utilization={res.head_utilization:.4f} checkpoint={args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .model import AttnJGNN
    from .plotting import residual_scatter
    from .trainer import evaluate

    _announce("eval", args.seed, checkpoint=args.checkpoint, split=args.split, jobs=args.jobs)
    records = _load_records(args.data)
    try:
        model = AttnJGNN.load(args.checkpoint)
    except FileNotFoundError:
        raise InputError(f"no such checkpoint: {args.checkpoint}") from None
    except (ValueError, KeyError, TypeError) as exc:
        raise InputError(f"{args.checkpoint}: {exc}") from None
    metrics = evaluate(model, records, args.split, jobs=max(1, args.jobs))
    if not metrics.rows:
        raise InputError(f"dataset has no {args.split!r} records")
    metrics.write_residuals(args.out)
    figure = args.figure or str(Path(args.out).with_suffix(".png"))
    labels = [float(r[3]) for r in metrics.rows]
    preds = [float(r[4]) for r in metrics.rows]
    residual_scatter(labels, preds, figure, metrics.baseline_rmse)
    print(f"rmse={metrics.rmse:.6f} baseline_rmse={metrics.baseline_rmse:.6f} "
          f"ratio={metrics.rmse / metrics.baseline_rmse:.4f} n={len(metrics.rows)} out={args.out}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    from .io import atomic_write_text, write_csv
    from .plotting import ablation_bars
    from .trainer import ABLATION_HEADER, ablation_csv_rows, format_ablation, run_ablation

    cfgs = resolve(args, [ModelConfig, TrainConfig])
    mcfg, tcfg = cfgs["ModelConfig"], cfgs["TrainConfig"]
    _announce("ablate", tcfg.seed, model=mcfg, train=tcfg, jobs=args.jobs)
    records = _load_records(args.data)
    rows = run_ablation(mcfg, tcfg, records, jobs=max(1, args.jobs))
    out = Path(args.out_dir)
    write_csv(out / "ablation.csv", ABLATION_HEADER, ablation_csv_rows(rows))
    table = format_ablation(rows)
    atomic_write_text(out / "ablation.txt", table + "\n")
    ablation_bars(rows, out / "ablation.png")
    print(table)
    return EXIT_OK if all(not r.error for r in rows) else EXIT_INTERNAL


def cmd_gradcheck(args) -> int:
    from .checks import check_model, check_ops

    _announce("gradcheck", args.seed, d=args.d, eps=args.eps, tol=args.tol)
    if args.d % ModelConfig.h_max:
        raise InputError(f"--d must be divisible by h_max={ModelConfig.h_max}")
    results = check_ops(args.seed, args.eps)
    if not args.ops_only:
        results["model"] = check_model(args.d, args.seed, args.eps)
    for name, err in results.items():
        log.info("gradcheck %-16s rel_err=%.3e", name, err)
    worst = max(results.values())
    ok = worst < args.tol
    print(f"max_rel_err={worst:.3e} {'PASS' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_INTERNAL


COMMANDS = {
    "count": cmd_count,
    "decompose": cmd_decompose,
    "ijgp": cmd_ijgp,
    "gen": cmd_gen,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "gradcheck": cmd_gradcheck,
}


def main(argv=None) -> int:
    from .oracle import CountTimeout, VariableCapExceeded
    from .trainer import TrainingAborted

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(
        level=getattr(logging, str(args.log_level).upper(), logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return COMMANDS[args.command](args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (VariableCapExceeded, CountTimeout) as exc:
        print(f"error: {exc}; try --method dpll or a larger --time-budget", file=sys.stderr)
        return EXIT_INPUT
    except TrainingAborted as exc:
        print(f"error: training aborted at step {exc.step}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error")
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
