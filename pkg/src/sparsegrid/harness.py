"""Experiment execution behind the command-line tool.

An experiment is one workload plus a list of discovery methods. For every
(method, layer, head) the harness discovers a mask, runs sparse and full
attention, and scores the mask against the ground-truth key sets.
"""

from __future__ import annotations

import csv
import io
import json
import math
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .attention import approximation_error, full_attention, sparse_attention
from .discovery import PROTECTION_MODES, STRATEGIES, DiscoveryConfig, discover
from .numeric import DegenerateRowError
from .oracle import ground_truth_sets, score_selection
from .workloads import PATTERNS, WorkloadSpec, generate, load_tensors

__all__ = [
    "SCHEMA_VERSION",
    "ConfigError",
    "NumericDegeneracyError",
    "MethodSpec",
    "ExperimentSpec",
    "ResultRow",
    "parse_experiment",
    "load_experiment",
    "load_workload",
    "run_experiment",
    "aggregate",
    "sweep_methods",
    "sweep_aggregate",
    "format_number",
    "rows_to_csv",
    "aggregates_to_json",
    "write_pgm",
    "read_pgm",
    "mask_to_csv",
    "dicts_to_csv",
]

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Invalid or unreadable experiment configuration."""


class NumericDegeneracyError(RuntimeError):
    def __init__(self, layer: int, head: int, detail: str):
        self.layer = layer
        self.head = head
        super().__init__(f"numeric degeneracy at layer {layer}, head {head}: {detail}")


@dataclass(frozen=True)
class MethodSpec:
    strategy: str = "head-rr"
    stride: int = 8
    block_size: int = 64
    tau: float = 0.9
    protection: tuple = ("last-q-block",)
    label: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "protection", tuple(sorted(set(self.protection))))
        self.config()  # validates
        if self.label is None:
            object.__setattr__(self, "label", f"{self.strategy}-S{self.stride}-B{self.block_size}"
                                              f"-t{self.tau:g}")

    def config(self, layer: int = 0, head: int = 0, num_heads: int = 1) -> DiscoveryConfig:
        return DiscoveryConfig(self.stride, self.block_size, self.tau, self.strategy,
                               frozenset(self.protection), head, layer, num_heads)


@dataclass(frozen=True)
class ExperimentSpec:
    workload: WorkloadSpec | str
    methods: tuple
    tau_star: float = 0.95
    report: str = "results.csv"
    aggregates: str = "aggregates.json"
    mask_dir: str = "masks"
    grid: dict | None = None

    def __post_init__(self):
        if not self.methods:
            raise ConfigError("at least one method is required")
        if not 0.0 < self.tau_star <= 1.0:
            raise ConfigError(f"tau_star must lie in (0, 1], got {self.tau_star}")


@dataclass(frozen=True)
class ResultRow:
    method: str
    layer: int
    head: int
    sparsity: float
    frobenius_error: float
    relative_error: float
    precision: float
    recall: float
    f1: float
    search_ops: int
    logit_ops: int

    def check(self) -> None:
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, float) and not math.isfinite(value):
                raise NumericDegeneracyError(self.layer, self.head, f"{f.name} is {value}")
        for name in ("sparsity", "precision", "recall", "f1"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise NumericDegeneracyError(self.layer, self.head,
                                             f"{name}={value} outside [0, 1]")


# --- configuration ---------------------------------------------------------

_TOP_KEYS = {"schema", "workload", "methods", "tau_star", "outputs", "grid"}
_WORKLOAD_KEYS = {f.name for f in fields(WorkloadSpec)}
_METHOD_KEYS = {f.name for f in fields(MethodSpec)}
_OUTPUT_KEYS = {"report", "aggregates", "mask_dir"}
_GRID_KEYS = {"stride", "tau"}


def _reject_unknown(obj, allowed, where):
    if not isinstance(obj, dict):
        raise ConfigError(f"{where} must be a JSON object")
    unknown = set(obj) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(sorted(unknown))}")


def parse_experiment(doc: dict, base_dir: Path | str = ".") -> ExperimentSpec:
    """Build an ExperimentSpec from a decoded schema-1 config document."""
    _reject_unknown(doc, _TOP_KEYS, "config")
    if doc.get("schema") != SCHEMA_VERSION:
        raise ConfigError(f"config must declare \"schema\": {SCHEMA_VERSION}")
    if "workload" not in doc:
        raise ConfigError("config has no workload")
    wl = doc["workload"]
    if isinstance(wl, dict) and set(wl) == {"path"}:
        path = Path(wl["path"])
        workload = str(path if path.is_absolute() else Path(base_dir) / path)
    else:
        _reject_unknown(wl, _WORKLOAD_KEYS, "workload")
        if wl.get("pattern", "random") not in PATTERNS:
            raise ConfigError(f"unknown pattern {wl.get('pattern')!r}")
        try:
            workload = WorkloadSpec(**wl)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"workload: {exc}") from None

    methods = doc.get("methods")
    if not isinstance(methods, list) or not methods:
        raise ConfigError("methods must be a non-empty list")
    parsed = []
    for n, m in enumerate(methods):
        _reject_unknown(m, _METHOD_KEYS, f"methods[{n}]")
        if m.get("strategy", "head-rr") not in STRATEGIES:
            raise ConfigError(f"methods[{n}]: unknown strategy {m.get('strategy')!r}")
        if set(m.get("protection", ())) - set(PROTECTION_MODES):
            raise ConfigError(f"methods[{n}]: unknown protection {m.get('protection')!r}")
        try:
            parsed.append(MethodSpec(**m))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"methods[{n}]: {exc}") from None
    labels = [m.label for m in parsed]
    if len(set(labels)) != len(labels):
        raise ConfigError("method labels must be unique")

    outputs = doc.get("outputs", {})
    _reject_unknown(outputs, _OUTPUT_KEYS, "outputs")
    grid = doc.get("grid")
    if grid is not None:
        _reject_unknown(grid, _GRID_KEYS, "grid")
        for key in _GRID_KEYS:
            if key in grid and (not isinstance(grid[key], list) or not grid[key]):
                raise ConfigError(f"grid.{key} must be a non-empty list")
    try:
        return ExperimentSpec(workload, tuple(parsed), float(doc.get("tau_star", 0.95)),
                              grid=grid, **outputs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def load_experiment(path) -> ExperimentSpec:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    return parse_experiment(doc, path.parent)


def load_workload(spec: ExperimentSpec, seed: int | None = None) -> list:
    """Generate or read the experiment's tensors; ``seed`` overrides a generated workload's."""
    if isinstance(spec.workload, WorkloadSpec):
        wl = spec.workload
        if seed is not None:
            wl = WorkloadSpec(**{**asdict(wl), "seed": seed})
        return generate(wl)
    return load_tensors(spec.workload)


# --- execution -------------------------------------------------------------

def _evaluate_head(tensors, layer: int, head: int, methods, tau_star: float) -> list:
    t = tensors[layer][head]
    num_heads = len(tensors[layer])
    try:
        full = full_attention(t)
        truth = ground_truth_sets(t, tau_star)
        full_norm = float(np.sqrt(np.sum(full.astype(np.float64) ** 2)))
        truths = {}
        rows = []
        for method in methods:
            cfg = method.config(layer, head, num_heads)
            sel, _, cost = discover(t, cfg)
            out = sparse_attention(t, sel)
            err = approximation_error(full, out)
            if sel.block_size not in truths:
                truths[sel.block_size] = truth.with_blocks(sel.block_size)
            report = score_selection(sel, truths[sel.block_size])
            row = ResultRow(method.label, layer, head, cost.sparsity, err,
                            err / full_norm if full_norm > 0 else 0.0,
                            report.precision, report.recall, report.f1,
                            cost.search_ops, cost.logit_ops)
            row.check()
            rows.append(row)
    except (DegenerateRowError, FloatingPointError) as exc:
        raise NumericDegeneracyError(layer, head, str(exc)) from None
    return rows


def run_experiment(spec: ExperimentSpec, tensors, threads: int = 1, methods=None) -> list:
    """ResultRows for every (method, layer, head), ordered by method then layer then head.

    Work is fanned out per (layer, head); the ordering does not depend on ``threads``.
    """
    methods = tuple(spec.methods if methods is None else methods)
    jobs = [(layer, head) for layer in range(len(tensors)) for head in range(len(tensors[layer]))]

    def work(job):
        return _evaluate_head(tensors, job[0], job[1], methods, spec.tau_star)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            chunks = list(pool.map(work, jobs))
    else:
        chunks = [work(job) for job in jobs]
    order = {m.label: n for n, m in enumerate(methods)}
    rows = [row for chunk in chunks for row in chunk]
    rows.sort(key=lambda r: (order[r.method], r.layer, r.head))
    return rows


_MEAN_FIELDS = ("sparsity", "frobenius_error", "relative_error", "precision", "recall", "f1",
                "search_ops", "logit_ops")


def aggregate(rows, methods) -> list:
    """Unweighted mean of every numeric field per method, in method order."""
    out = []
    for method in methods:
        mine = [r for r in rows if r.method == method.label]
        entry = {"method": method.label, "rows": len(mine)}
        for name in _MEAN_FIELDS:
            entry[name] = float(np.mean([getattr(r, name) for r in mine]))
        out.append(entry)
    return out


def sweep_methods(spec: ExperimentSpec) -> list:
    """Expand each method template over the (stride, tau) grid.

    Returns ``(template, stride, tau, MethodSpec)`` tuples in template-major
    order. Missing grid axes fall back to the template's own value.
    """
    grid = spec.grid or {}
    out = []
    for template in spec.methods:
        for stride in grid.get("stride", [template.stride]):
            for tau in grid.get("tau", [template.tau]):
                try:
                    m = MethodSpec(template.strategy, int(stride), template.block_size,
                                   float(tau), template.protection,
                                   f"{template.label}@S{stride}-t{float(tau):g}")
                except ValueError as exc:
                    raise ConfigError(f"grid cell S={stride}, tau={tau}: {exc}") from None
                out.append((template, int(stride), float(tau), m))
    return out


def sweep_aggregate(rows, cells) -> list:
    out = []
    for template, stride, tau, method in cells:
        mine = [r for r in rows if r.method == method.label]
        out.append({
            "strategy": template.label,
            "stride": stride,
            "tau": tau,
            "rows": len(mine),
            "sparsity": float(np.mean([r.sparsity for r in mine])),
            "relative_error": float(np.mean([r.relative_error for r in mine])),
            "recall": float(np.mean([r.recall for r in mine])),
            "search_ops": float(np.mean([r.search_ops for r in mine])),
        })
    return out


# --- report formatting -----------------------------------------------------

def format_number(x) -> str:
    """Integers verbatim, reals with 6 significant digits."""
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    return format(float(x), ".6g")


def _table_csv(header, records) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for rec in records:
        writer.writerow([v if isinstance(v, str) else format_number(v) for v in rec])
    return buf.getvalue()


def rows_to_csv(rows) -> str:
    header = [f.name for f in fields(ResultRow)]
    return _table_csv(header, [[getattr(r, h) for h in header] for r in rows])


def dicts_to_csv(entries) -> str:
    header = list(entries[0])
    return _table_csv(header, [[e[h] for h in header] for e in entries])


def _rounded(obj):
    if isinstance(obj, dict):
        return {k: _rounded(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_rounded(v) for v in obj]
    if isinstance(obj, float):
        return float(format(obj, ".6g"))
    return obj


def aggregates_to_json(entries, kind: str = "aggregates") -> str:
    return json.dumps({"schema": SCHEMA_VERSION, kind: _rounded(entries)}, indent=2) + "\n"


# --- mask images -----------------------------------------------------------

def mask_to_csv(mask) -> str:
    return "".join(",".join("1" if v else "0" for v in row) + "\n" for row in np.asarray(mask))


def write_pgm(path, mask) -> None:
    """Binary PGM (P5, maxval 255): selected tiles white, skipped black, row 0 on top."""
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    pixels = np.where(mask, 255, 0).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(pixels.tobytes())


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    header = re.match(rb"P5\s+(\d+)\s+(\d+)\s+255\s", data)
    if header is None:
        raise ValueError(f"{path}: not an 8-bit binary PGM")
    w, h = int(header[1]), int(header[2])
    pixels = np.frombuffer(data[header.end():], dtype=np.uint8)
    if pixels.size != w * h:
        raise ValueError(f"{path}: expected {w * h} pixels, got {pixels.size}")
    return pixels.reshape(h, w)
