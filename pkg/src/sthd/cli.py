"""Command line entry point: ``sthd <subcommand> [options]``.

Every subcommand reads an optional flat ``key = value`` config file
(``--config``); ``--set key=value`` and the dedicated flags override it.
Results go to stdout as JSON unless an output path is given. Failures exit
nonzero with a JSON object on stderr.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from ._accel import BACKENDS, default_workers
from .correlation import CorrelationMismatch, benchmark_correlation, pearson_matrix, top_k_neighbors
from .data import DataError, SyntheticSpec, generate_synthetic, load_csv, save_csv
from .experiment import (
    TrainingDiverged,
    evaluate_checkpoint,
    load_config,
    plot_csv,
    prepare,
    run_ablation,
    run_k_sweep,
    run_training,
)
from .metrics import MetricError, NotApplicable
from .model import ConfigError
from .tensor import ShapeError

EXIT_USAGE = 2
EXIT_FAILURE = 1
_USAGE_ERRORS = (ConfigError, DataError, ShapeError, NotApplicable, MetricError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _int_list(text):
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _add_config_args(p):
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one config key (repeatable)")
    p.add_argument("--dataset", help="CSV path, or 'synthetic'")
    p.add_argument("--seeds", help="comma-separated seeds")
    p.add_argument("--K", type=int, help="neighbours per target channel")
    p.add_argument("--horizon", type=int)
    p.add_argument("--max-epochs", type=int)
    p.add_argument("--workers", type=int, help="correlation worker threads (env STHD_WORKERS also works)")
    p.add_argument("--report", help="write the JSON report here instead of stdout")


def build_parser():
    parser = _Parser(prog="sthd", description="Top-K related series forecasting with a patch transformer.")
    parser.add_argument("--version", action="version", version=f"sthd {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train one model per seed and horizon")
    _add_config_args(p)
    p.add_argument("--mode", choices=("related", "unrelated", "none", "reindex_off"))
    p.add_argument("--out", help="directory for checkpoints")

    p = sub.add_parser("evaluate", help="score a saved checkpoint on the test range")
    _add_config_args(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--baselines", action="store_true", help="also score Naive and Linear")

    p = sub.add_parser("correlate", help="Pearson matrix and top-K neighbour table")
    _add_config_args(p)
    p.add_argument("--matrix-out", help="CSV for the full correlation matrix")
    p.add_argument("--neighbors-out", help="text file for the neighbour table")
    p.add_argument("--backend", choices=BACKENDS)

    p = sub.add_parser("ablate", help="related / unrelated / none / reindex_off comparison")
    _add_config_args(p)
    p.add_argument("--modes", default="related,unrelated,none")

    p = sub.add_parser("sweep-k", help="train and score for several K")
    _add_config_args(p)
    p.add_argument("--k-values", type=_int_list, required=True)
    p.add_argument("--plot-csv", help="write (k, seed, horizon, metrics) rows here")

    p = sub.add_parser("bench-corr", help="time the correlation engine against the serial oracle")
    _add_config_args(p)
    p.add_argument("--worker-list", type=_int_list, help="worker counts to time (default: 1 and the default count)")
    p.add_argument("--backend", choices=BACKENDS)

    p = sub.add_parser("generate", help="write a grouped synthetic dataset as CSV")
    _add_config_args(p)
    p.add_argument("--out", required=True)
    return parser


def _config(args):
    overrides = list(args.set)
    for flag, key in (("dataset", "dataset"), ("seeds", "seeds"), ("K", "K"), ("horizon", "horizon"), ("max_epochs", "max_epochs"), ("workers", "workers"), ("mode", "mode")):
        value = getattr(args, flag, None)
        if value is not None:
            overrides.append(f"{key}={value}")
    return load_config(args.config, overrides)


def _emit(obj, path):
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if path:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text)
    else:
        sys.stdout.write(text)


def _load_dataset(cfg):
    if cfg.dataset == "synthetic":
        return generate_synthetic(cfg.synthetic_spec())
    return load_csv(cfg.dataset, (cfg.split_train, cfg.split_val))


def cmd_train(args, cfg):
    return run_training(cfg, args.out)


def cmd_evaluate(args, cfg):
    return evaluate_checkpoint(cfg, args.checkpoint, baselines=args.baselines)


def cmd_correlate(args, cfg):
    ds = _load_dataset(cfg)
    cm = pearson_matrix(ds, "train", workers=cfg.workers or None, backend=args.backend)
    nb = top_k_neighbors(cm, cfg.K, cfg.score)
    if args.matrix_out:
        cm.to_csv(args.matrix_out)
    if args.neighbors_out:
        Path(args.neighbors_out).write_text(nb.to_text())
    return {
        "M": ds.M,
        "K": nb.K,
        "source_range": list(cm.source_range),
        "neighbors": {ds.channel_ids[c]: [ds.channel_ids[j] for j in nb.indices[c]] for c in range(ds.M)},
    }


def cmd_ablate(args, cfg):
    modes = tuple(m.strip() for m in args.modes.split(",") if m.strip())
    return run_ablation(cfg, modes)


def cmd_sweep_k(args, cfg):
    rep = run_k_sweep(cfg, args.k_values)
    if args.plot_csv:
        Path(args.plot_csv).write_text(plot_csv(rep["records"]))
    return rep


def cmd_bench_corr(args, cfg):
    ds = _load_dataset(cfg)
    workers = args.worker_list or sorted({1, cfg.workers or default_workers()})
    return benchmark_correlation(ds, workers, backend=args.backend).to_dict()


def cmd_generate(args, cfg):
    spec = cfg.synthetic_spec()
    save_csv(generate_synthetic(spec), args.out)
    return {"path": args.out, "M": spec.M, "T": spec.T, "groups": spec.num_groups}


COMMANDS = {
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "correlate": cmd_correlate,
    "ablate": cmd_ablate,
    "sweep-k": cmd_sweep_k,
    "bench-corr": cmd_bench_corr,
    "generate": cmd_generate,
}


def _fail(exc, code):
    json.dump({"error": type(exc).__name__, "message": str(exc), "exit_code": code}, sys.stderr)
    sys.stderr.write("\n")
    return code


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        return _fail(exc, EXIT_USAGE)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
        result = COMMANDS[args.command](args, cfg)
        _emit(result, args.report)
    except (UsageError, *_USAGE_ERRORS) as exc:
        return _fail(exc, EXIT_USAGE)
    except (TrainingDiverged, CorrelationMismatch, OSError, KeyError, ValueError) as exc:
        return _fail(exc, EXIT_FAILURE)
    return 0


if __name__ == "__main__":
    sys.exit(main())
