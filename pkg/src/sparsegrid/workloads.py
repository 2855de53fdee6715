"""Seeded synthetic Q/K/V workloads with planted attention patterns, and the
``RRTN`` binary tensor format.

Base Q, K and V entries are standard normal draws from numpy's Philox
counter-based generator, keyed by ``SeedSequence([seed, layer, head])``.
Patterns are planted in the last few head dimensions, which are zeroed in
the base draw first, so a planted logit is exact rather than a statistical
tendency:

* ``vertical``: every query gets ``+gain`` on key ``column``.
* ``scatter``: ``count`` vertical columns at seeded positions, ``+gain`` each.
* ``local``: a linear recency penalty, ``-gain`` at distance ``window + 1``.
* ``slash``: a quadratic penalty ``-gain * (j - (i - offset))**2`` peaking on
  the diagonal ``offset`` tokens below the main one. The penalty is stored
  in float32 and loses resolution once ``gain * L**2`` nears 1e7.

V never carries planted structure.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .attention import HeadTensors, attention_probs, causal_mask
from .oracle import ground_truth_sets

__all__ = [
    "PATTERNS",
    "DEFAULT_GAIN",
    "DEFAULT_PARAMS",
    "RNG_ALGORITHM",
    "ADVERSARIAL_RECENCY_SLOPE",
    "WorkloadSpec",
    "SelfCheck",
    "generate",
    "planted_mask",
    "self_check",
    "adversarial_vertical_spec",
    "TensorFormatError",
    "TruncatedTensorFileError",
    "save_tensors",
    "load_tensors",
    "MAGIC",
    "FORMAT_VERSION",
]

PATTERNS = ("random", "local", "vertical", "slash", "scatter")
DEFAULT_GAIN = {"random": 0.0, "local": 10.0, "vertical": 16.0, "slash": 10.0, "scatter": 16.0}
DEFAULT_PARAMS = {
    "random": {},
    "local": {"window": 16},
    "vertical": {"column": 0},
    "slash": {"offset": 16},
    "scatter": {"count": 4},
}
_ALLOWED_PARAMS = {
    "random": set(),
    "local": {"window"},
    "vertical": {"column", "adversarial_stride"},
    "slash": {"offset"},
    "scatter": {"count"},
}
RNG_ALGORITHM = "numpy.random.Philox(SeedSequence([seed, layer, head]))"
# Logit drop per token of the recency distractor on blinded rows.
ADVERSARIAL_RECENCY_SLOPE = 1.0


@dataclass(frozen=True)
class WorkloadSpec:
    """Declarative description of a synthetic workload.

    ``signal_gain=None`` means the pattern's entry in ``DEFAULT_GAIN``.
    ``pattern_params`` merges over ``DEFAULT_PARAMS[pattern]``.
    """

    seq_len: int
    head_dim: int = 32
    num_heads: int = 1
    num_layers: int = 1
    pattern: str = "random"
    pattern_params: dict = field(default_factory=dict)
    signal_gain: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.pattern not in PATTERNS:
            raise ValueError(f"unknown pattern {self.pattern!r}; expected one of {PATTERNS}")
        if min(self.seq_len, self.head_dim, self.num_heads, self.num_layers) < 1:
            raise ValueError("seq_len, head_dim, num_heads and num_layers must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        unknown = set(self.pattern_params) - _ALLOWED_PARAMS[self.pattern]
        if unknown:
            raise ValueError(f"unknown parameter(s) for {self.pattern}: {sorted(unknown)}")
        params = self.params
        L, d = self.seq_len, self.head_dim
        if self.pattern == "local" and not 0 <= params["window"] < L:
            raise ValueError(f"window {params['window']} must be in [0, {L})")
        if self.pattern == "vertical":
            if not 0 <= params["column"] < L:
                raise ValueError(f"column {params['column']} must be in [0, {L})")
            stride = params.get("adversarial_stride")
            if stride is not None and stride < 2:
                raise ValueError("adversarial_stride must be >= 2")
        if self.pattern == "slash" and not 0 <= params["offset"] < L:
            raise ValueError(f"offset {params['offset']} must be in [0, {L})")
        if self.pattern == "scatter" and not 1 <= params["count"] <= min(L, d // 2):
            raise ValueError(f"count {params['count']} must be in [1, {min(L, d // 2)}]")
        if d < self._planted_dims() + 1:
            raise ValueError(f"head_dim {d} too small for pattern {self.pattern}")

    @property
    def params(self) -> dict:
        return {**DEFAULT_PARAMS[self.pattern], **self.pattern_params}

    @property
    def gain(self) -> float:
        return DEFAULT_GAIN[self.pattern] if self.signal_gain is None else float(self.signal_gain)

    def _planted_dims(self) -> int:
        if self.pattern == "vertical":
            return 3 if self.params.get("adversarial_stride") else 1
        if self.pattern == "scatter":
            return self.params["count"]
        return {"random": 0, "local": 2, "slash": 3}[self.pattern]

    def scatter_columns(self) -> np.ndarray:
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([self.seed, 0xC0])))
        count = self.params["count"]
        return np.sort(rng.choice(self.seq_len, size=count, replace=False))

    def blinded_rows(self, head: int) -> np.ndarray:
        """Rows of ``head`` whose sink alignment is removed (adversarial vertical only)."""
        stride = self.params.get("adversarial_stride") if self.pattern == "vertical" else None
        if not stride or head % stride == 0:
            return np.zeros(0, dtype=np.int64)
        return np.arange(stride - 1, self.seq_len, stride)


def adversarial_vertical_spec(seq_len=512, head_dim=32, num_heads=8, stride=8,
                              signal_gain=None, seed=0, column=0) -> WorkloadSpec:
    """Vertical sink that the fixed ``S - 1`` sampling offset cannot see.

    On every head whose round-robin offset differs from ``S - 1``, the rows at
    offset ``S - 1`` lose their sink alignment and attend to recent tokens
    instead, so fixed-offset sampling finds only local structure there.
    """
    return WorkloadSpec(seq_len, head_dim, num_heads, 1, "vertical",
                        {"column": column, "adversarial_stride": stride}, signal_gain, seed)


def _rng(seed: int, layer: int, head: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, layer, head])))


def _plant(spec: WorkloadSpec, q: np.ndarray, k: np.ndarray, head: int) -> None:
    L, d = q.shape
    root_d = math.sqrt(d)
    gain = spec.gain
    params = spec.params
    n = spec._planted_dims()
    if n == 0:
        return
    q[:, d - n:] = 0.0
    k[:, d - n:] = 0.0
    pos = np.arange(L, dtype=np.float64)

    if spec.pattern == "vertical":
        a = math.sqrt(gain * root_d)
        q[:, d - 1] = a
        k[params["column"], d - 1] = a
        blind = spec.blinded_rows(head)
        if blind.size:
            c = math.sqrt(ADVERSARIAL_RECENCY_SLOPE * root_d)
            q[blind, d - 1] = 0.0
            q[blind, d - 3] = c
            q[blind, d - 2] = c * (blind - L / 2)
            k[:, d - 3] = c * (pos - L / 2)
            k[:, d - 2] = -c
    elif spec.pattern == "scatter":
        a = math.sqrt(gain * root_d)
        for r, col in enumerate(spec.scatter_columns()):
            q[:, d - n + r] = a
            k[col, d - n + r] = a
    elif spec.pattern == "local":
        beta = gain / (params["window"] + 1)
        c = math.sqrt(beta * root_d)
        q[:, d - 2] = c
        q[:, d - 1] = c * (pos - L / 2)
        k[:, d - 2] = c * (pos - L / 2)
        k[:, d - 1] = -c
    elif spec.pattern == "slash":
        x = pos - L / 2
        y = pos - params["offset"] - L / 2
        s = gain * root_d
        q[:, d - 3] = s
        q[:, d - 2] = 2 * s * y
        q[:, d - 1] = -s * y * y
        k[:, d - 3] = -x * x
        k[:, d - 2] = x
        k[:, d - 1] = 1.0


def generate(spec: WorkloadSpec) -> list:
    """Tensors for every (layer, head): ``result[layer][head]`` is a HeadTensors."""
    L, d = spec.seq_len, spec.head_dim
    out = []
    for layer in range(spec.num_layers):
        heads = []
        for head in range(spec.num_heads):
            rng = _rng(spec.seed, layer, head)
            q = rng.standard_normal((L, d))
            k = rng.standard_normal((L, d))
            v = rng.standard_normal((L, d))
            if spec.gain != 0.0:
                _plant(spec, q, k, head)
            heads.append(HeadTensors(q, k, v))
        out.append(heads)
    return out


def planted_mask(spec: WorkloadSpec, head: int = 0) -> np.ndarray | None:
    """Causal ``L x L`` mask of the cells the generator boosted, or None if nothing was planted."""
    if spec.pattern == "random" or spec.gain == 0.0:
        return None
    L = spec.seq_len
    params = spec.params
    i = np.arange(L)[:, None]
    j = np.arange(L)[None, :]
    if spec.pattern == "vertical":
        mask = np.broadcast_to(j == params["column"], (L, L)).copy()
        mask[spec.blinded_rows(head)] = False
    elif spec.pattern == "scatter":
        mask = np.isin(j, spec.scatter_columns()) & np.ones((L, 1), dtype=bool)
    elif spec.pattern == "local":
        mask = (i - j) <= params["window"]
    else:
        mask = (i - j) == params["offset"]
    return mask & causal_mask(L)


@dataclass(frozen=True)
class SelfCheck:
    planted: bool
    queries_checked: int
    min_containment: float
    mean_containment: float
    threshold: float = 0.9

    @property
    def passed(self) -> bool:
        return (not self.planted) or self.min_containment >= self.threshold


def self_check(spec: WorkloadSpec, tensors=None, tau_star: float = 0.95,
               threshold: float = 0.9) -> SelfCheck:
    """Share of each query's ground-truth mass that falls on planted cells.

    For query ``i`` with ground-truth set ``K*``, containment is the attention
    mass on ``K*`` intersected with the planted cells over the mass on ``K*``.
    Queries without any planted cell are skipped. Reports the minimum and the
    mean over all checked (layer, head, query) triples.
    """
    if tensors is None:
        tensors = generate(spec)
    if planted_mask(spec) is None:
        return SelfCheck(False, 0, float("nan"), float("nan"), threshold)

    values = []
    for layer in tensors:
        for head, t in enumerate(layer):
            mask = planted_mask(spec, head)
            truth = ground_truth_sets(t, tau_star)
            probs = attention_probs(t).astype(np.float64)
            for i, keys in enumerate(truth.key_sets):
                if not mask[i].any():
                    continue
                mass = probs[i, keys]
                values.append(mass[mask[i, keys]].sum() / mass.sum())
    values = np.asarray(values)
    return SelfCheck(True, int(values.size), float(values.min()), float(values.mean()), threshold)


# --- RRTN tensor files -----------------------------------------------------

MAGIC = b"RRTN"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIIIII")


class TensorFormatError(ValueError):
    """Malformed RRTN file."""

    def __init__(self, message: str, offset: int):
        self.offset = offset
        super().__init__(f"{message} (at byte offset {offset})")


class TruncatedTensorFileError(OSError, TensorFormatError):
    """RRTN file ends before its header-implied size.

    Both an IO error and a format error, so either ``except`` clause catches it.
    """

    def __init__(self, message: str, offset: int):
        self.offset = offset
        Exception.__init__(self, f"{message} (at byte offset {offset})")

    def __str__(self):
        return self.args[0]


def save_tensors(path, tensors) -> None:
    """Write ``tensors[layer][head]`` as an RRTN v1 file."""
    layers = len(tensors)
    heads = len(tensors[0]) if layers else 0
    if layers == 0 or heads == 0:
        raise ValueError("need at least one layer and one head")
    L, d = tensors[0][0].q.shape
    for layer in tensors:
        if len(layer) != heads:
            raise ValueError("every layer must have the same number of heads")
        for t in layer:
            if t.q.shape != (L, d):
                raise ValueError("every head must share (L, d)")
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, FORMAT_VERSION, layers, heads, L, d))
        for layer in tensors:
            for t in layer:
                for m in (t.q, t.k, t.v):
                    f.write(np.ascontiguousarray(m, dtype="<f4").tobytes())


def load_tensors(path) -> list:
    """Read an RRTN v1 file back into ``tensors[layer][head]``."""
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise TruncatedTensorFileError(
            f"{path}: {len(data)} bytes, shorter than the {_HEADER.size}-byte header", len(data))
    magic, version, layers, heads, L, d = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise TensorFormatError(f"bad magic {magic!r}, expected {MAGIC!r}", 0)
    if version != FORMAT_VERSION:
        raise TensorFormatError(f"unsupported version {version}, expected {FORMAT_VERSION}", 4)
    if min(layers, heads, L, d) == 0:
        raise TensorFormatError(f"zero dimension in header ({layers}, {heads}, {L}, {d})", 8)
    expected = _HEADER.size + layers * heads * 3 * L * d * 4
    if len(data) < expected:
        raise TruncatedTensorFileError(
            f"{path}: {len(data)} bytes, header implies {expected}", len(data))
    if len(data) > expected:
        raise TensorFormatError(
            f"{len(data) - expected} trailing bytes beyond the header-implied size {expected}",
            expected)
    payload = np.frombuffer(data, dtype="<f4", offset=_HEADER.size)
    payload = payload.reshape(layers, heads, 3, L, d).astype(np.float32)
    return [[HeadTensors(*payload[a, h]) for h in range(heads)] for a in range(layers)]
