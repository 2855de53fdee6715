"""``sparsegrid`` command-line tool: run, masks, sweep.

Exit codes: 0 success, 2 usage or configuration problem, 3 numeric degeneracy.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .discovery import discover
from .harness import (
    ConfigError,
    NumericDegeneracyError,
    aggregate,
    aggregates_to_json,
    dicts_to_csv,
    load_experiment,
    load_workload,
    mask_to_csv,
    read_pgm,
    rows_to_csv,
    run_experiment,
    sweep_aggregate,
    sweep_methods,
    write_pgm,
)
from .numeric import DegenerateRowError
from .oracle import ground_truth_sets
from .workloads import TensorFormatError

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERIC = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _u64(text: str) -> int:
    value = int(text, 0)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def _positive(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return value


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("config", help="experiment config (JSON, schema 1)")
    common.add_argument("--out", default=".", help="output directory (default: current)")
    common.add_argument("--threads", type=_positive, default=None,
                        help="worker threads (default: $SPARSEGRID_THREADS or 1)")
    common.add_argument("--seed", type=_u64, default=None,
                        help="override the generated workload's seed")

    parser = _Parser(prog="sparsegrid",
                     description="Block-sparse attention pattern discovery experiments.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("run", parents=[common], help="evaluate every method on every head")
    sub.add_parser("masks", parents=[common], help="write block masks as CSV and PGM")
    sub.add_parser("sweep", parents=[common], help="aggregate over a stride x tau grid")
    return parser


def _threads(args) -> int:
    if args.threads is not None:
        return args.threads
    env = os.environ.get("SPARSEGRID_THREADS")
    if env:
        try:
            return _positive(env)
        except (ValueError, argparse.ArgumentTypeError):
            raise ConfigError(f"SPARSEGRID_THREADS={env!r} is not a positive integer") from None
    return 1


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def cmd_run(spec, tensors, out: Path, threads: int) -> None:
    rows = run_experiment(spec, tensors, threads)
    entries = aggregate(rows, spec.methods)
    report = out / spec.report
    _write(report, rows_to_csv(rows))
    _write(report.with_name(report.stem + "_aggregates.csv"), dicts_to_csv(entries))
    _write(out / spec.aggregates, aggregates_to_json(entries))


def cmd_sweep(spec, tensors, out: Path, threads: int) -> None:
    cells = sweep_methods(spec)
    methods = [cell[3] for cell in cells]
    rows = run_experiment(spec, tensors, threads, methods)
    entries = sweep_aggregate(rows, cells)
    _write(out / "sweep.csv", dicts_to_csv(entries))
    _write(out / "sweep.json", aggregates_to_json(entries, "sweep"))
    _write(out / spec.report, rows_to_csv(rows))


def _emit_mask(directory: Path, stem: str, mask) -> None:
    csv_path = directory / f"{stem}.csv"
    pgm_path = directory / f"{stem}.pgm"
    csv_path.write_text(mask_to_csv(mask))
    write_pgm(pgm_path, mask)
    from_csv = np.array([[c == "1" for c in line.split(",")]
                         for line in csv_path.read_text().splitlines()], dtype=bool)
    from_pgm = read_pgm(pgm_path) == 255
    if not (np.array_equal(from_csv, mask) and np.array_equal(from_pgm, mask)):
        raise RuntimeError(f"mask files for {stem} disagree")


def cmd_masks(spec, tensors, out: Path, threads: int) -> None:
    directory = out / spec.mask_dir
    try:
        directory.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create mask directory {directory}: {exc.strerror}") from None
    if not os.access(directory, os.W_OK):
        raise ConfigError(f"mask directory {directory} is not writable")
    for layer, heads in enumerate(tensors):
        for head, t in enumerate(heads):
            truth = ground_truth_sets(t, spec.tau_star)
            done = set()
            for method in spec.methods:
                try:
                    sel, _, _ = discover(t, method.config(layer, head, len(heads)))
                except DegenerateRowError as exc:
                    raise NumericDegeneracyError(layer, head, str(exc)) from None
                _emit_mask(directory, f"{method.label}_l{layer}_h{head}", sel.blocks)
                if sel.block_size not in done:
                    done.add(sel.block_size)
                    blocks = truth.with_blocks(sel.block_size).block_truth
                    _emit_mask(directory, f"truth_B{sel.block_size}_l{layer}_h{head}", blocks)


COMMANDS = {"run": cmd_run, "masks": cmd_masks, "sweep": cmd_sweep}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        spec = load_experiment(args.config)
        threads = _threads(args)
        try:
            tensors = load_workload(spec, args.seed)
        except (OSError, TensorFormatError) as exc:
            raise ConfigError(f"cannot load workload: {exc}") from None
        out = Path(args.out)
        COMMANDS[args.command](spec, tensors, out, threads)
    except ConfigError as exc:
        print(f"sparsegrid: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericDegeneracyError as exc:
        print(f"sparsegrid: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"sparsegrid: error: cannot write output: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
