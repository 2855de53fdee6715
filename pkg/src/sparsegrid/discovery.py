"""Dynamic block-mask discovery: round-robin query sampling, stride-level
importance estimation, block aggregation and top-tau selection.

The comparison strategies live here too: fixed-offset sampling (no
round-robin), layer and hybrid round-robin, and anti-diagonal scoring.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .attention import (
    BlockSelection,
    CostReport,
    HeadTensors,
    causal_block_mask,
    logit_ops,
    num_blocks,
    sparsity_of,
)
from .numeric import dot_rows64, masked_row_softmax

__all__ = [
    "STRATEGIES",
    "PROTECTION_MODES",
    "DiscoveryConfig",
    "ImportanceMap",
    "sample_position",
    "sample_positions_for_strategy",
    "stride_key_sums",
    "stride_importance",
    "stride_search_ops",
    "anti_diagonal_importance",
    "anti_diagonal_search_ops",
    "normalize_importance",
    "block_importance",
    "select_top_tau",
    "static_protection",
    "discover",
]

STRATEGIES = ("head-rr", "layer-rr", "hybrid-rr", "fixed", "anti-diagonal")
PROTECTION_MODES = ("last-q-block", "sink", "recent")


@dataclass(frozen=True)
class DiscoveryConfig:
    stride: int = 8
    block_size: int = 64
    tau: float = 0.9
    strategy: str = "head-rr"
    protection: frozenset = frozenset({"last-q-block"})
    head_index: int = 0
    layer_index: int = 0
    num_heads: int = 1

    def __post_init__(self):
        object.__setattr__(self, "protection", frozenset(self.protection))
        if self.stride < 1:
            raise ValueError(f"stride must be >= 1, got {self.stride}")
        if self.block_size < self.stride or self.block_size % self.stride:
            raise ValueError(f"block_size {self.block_size} must be a multiple of "
                             f"stride {self.stride}")
        if not 0.0 < self.tau <= 1.0:
            raise ValueError(f"tau must lie in (0, 1], got {self.tau}")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}; "
                             f"expected one of {', '.join(STRATEGIES)}")
        unknown = self.protection - set(PROTECTION_MODES)
        if unknown:
            raise ValueError(f"unknown protection mode(s): {sorted(unknown)}")
        if self.head_index < 0 or self.layer_index < 0 or self.num_heads < 1:
            raise ValueError("head_index/layer_index must be >= 0 and num_heads >= 1")

    def at(self, layer: int, head: int, num_heads: int | None = None) -> "DiscoveryConfig":
        """Same method, bound to another (layer, head)."""
        return replace(self, layer_index=layer, head_index=head,
                       num_heads=self.num_heads if num_heads is None else num_heads)


@dataclass(frozen=True)
class ImportanceMap:
    raw: np.ndarray           # (N_s, N_s) stride scores, -inf outside causality
    normalized: np.ndarray    # (N_s, N_s) row softmax of raw
    block_scores: np.ndarray  # (N_b, N_b) tile sums of normalized


def sample_position(i: int, h: int, stride: int, seq_len: int | None = None) -> int:
    """Sampled query position for stride ``i`` on head ``h``.

    ``i*S + (S - 1 - h mod S)``, clamped to ``seq_len - 1`` for a short tail stride.
    """
    p = i * stride + (stride - 1 - (h % stride))
    if seq_len is not None:
        p = min(p, seq_len - 1)
    return p


def _rotation_index(cfg: DiscoveryConfig) -> int:
    if cfg.strategy == "head-rr":
        return cfg.head_index
    if cfg.strategy == "layer-rr":
        return cfg.layer_index
    if cfg.strategy == "hybrid-rr":
        return cfg.head_index + cfg.layer_index
    if cfg.strategy == "fixed":
        return 0
    raise ValueError(f"strategy {cfg.strategy!r} does not sample single query positions")


def sample_positions_for_strategy(cfg: DiscoveryConfig, n_strides: int,
                                  seq_len: int | None = None) -> np.ndarray:
    """One sampled query position per stride.

    ``fixed`` always uses offset ``S - 1``; the round-robin variants rotate the
    offset by head, layer, or head + layer.
    """
    rot = _rotation_index(cfg)
    return np.array([sample_position(i, rot, cfg.stride, seq_len) for i in range(n_strides)],
                    dtype=np.int64)


def stride_key_sums(k: np.ndarray, stride: int) -> np.ndarray:
    """float64 sum of the key rows in each stride; the tail stride sums what exists."""
    seq_len, d = k.shape
    ns = -(-seq_len // stride)
    padded = np.zeros((ns * stride, d), dtype=np.float64)
    padded[:seq_len] = k
    sums = np.zeros((ns, d), dtype=np.float64)
    for r in range(stride):
        sums += padded[r::stride]
    return sums


def _stride_causal(ns: int) -> np.ndarray:
    return causal_block_mask(ns)


def stride_importance(t: HeadTensors, positions, cfg: DiscoveryConfig) -> np.ndarray:
    """Stride-level score ``q[p_i] . sum(k in stride j) / (S sqrt(d))``.

    Key strides after the one holding the sampled query get ``-inf``. The
    containing stride is aggregated in full, including keys past ``p_i``.
    """
    S = cfg.stride
    ns = -(-t.seq_len // S)
    positions = np.asarray(positions, dtype=np.int64)
    if positions.shape != (ns,):
        raise ValueError(f"expected {ns} sampled positions, got {positions.shape}")
    if positions.min() < 0 or positions.max() >= t.seq_len:
        raise IndexError(f"sampled position outside [0, {t.seq_len})")
    if np.any(positions // S != np.arange(ns)):
        raise ValueError("each sampled position must lie in its own stride")

    scale = 1.0 / (S * math.sqrt(t.head_dim))
    raw = dot_rows64(t.q[positions].astype(np.float64), stride_key_sums(t.k, S), scale)
    raw = raw.astype(np.float32)
    raw[~_stride_causal(ns)] = -np.inf
    return raw


def stride_search_ops(positions, stride: int) -> int:
    """Dot products spent by stride estimation: one per admissible key stride."""
    positions = np.asarray(positions, dtype=np.int64)
    return int(np.sum(positions // stride + 1))


def anti_diagonal_importance(t: HeadTensors, cfg: DiscoveryConfig) -> np.ndarray:
    """Anti-diagonal stride scores.

    ``raw[i, j] = sum_r q[iS + r] . k[jS + S - 1 - r] / (S sqrt(d))`` over
    in-range indices, i.e. the logits along the anti-diagonal of each S x S
    tile, summed. Non-causal tiles get ``-inf``.
    """
    S = cfg.stride
    L, d = t.q.shape
    ns = -(-L // S)
    q = np.zeros((ns * S, d), dtype=np.float64)
    k = np.zeros((ns * S, d), dtype=np.float64)
    q[:L] = t.q
    k[:L] = t.k
    acc = np.zeros((ns, ns), dtype=np.float64)
    for r in range(S):
        acc += dot_rows64(q[r::S], k[S - 1 - r::S])
    acc *= 1.0 / (S * math.sqrt(d))
    raw = acc.astype(np.float32)
    raw[~_stride_causal(ns)] = -np.inf
    return raw


def anti_diagonal_search_ops(seq_len: int, stride: int) -> int:
    """Token dot products of the anti-diagonal scan over causal stride tiles."""
    S = stride
    ns = -(-seq_len // S)
    i = np.arange(ns)[:, None]
    j = np.arange(ns)[None, :]
    total = 0
    for r in range(S):
        valid = (i * S + r < seq_len) & (j * S + S - 1 - r < seq_len) & (j <= i)
        total += int(valid.sum())
    return total


def normalize_importance(raw) -> np.ndarray:
    """Row softmax over the finite (causal) entries of ``raw``."""
    raw = np.asarray(raw)
    return masked_row_softmax(raw, np.isfinite(raw))


def block_importance(normalized, cfg: DiscoveryConfig, seq_len: int | None = None) -> np.ndarray:
    """Sum the ``(B/S) x (B/S)`` stride tiles of ``normalized`` into block scores.

    Tile entries are added in row-major order in float64, then stored as float32.
    """
    normalized = np.asarray(normalized)
    r = cfg.block_size // cfg.stride
    ns = normalized.shape[0]
    nb = -(-ns // r)
    if seq_len is not None and nb != num_blocks(seq_len, cfg.block_size):
        raise ValueError("stride map does not match the sequence length")
    padded = np.zeros((nb * r, nb * r), dtype=np.float64)
    padded[:ns, :ns] = normalized
    acc = np.zeros((nb, nb), dtype=np.float64)
    for a in range(r):
        for b in range(r):
            acc += padded[a::r, b::r]
    return acc.astype(np.float32)


def select_top_tau(scores, m: int, tau: float) -> np.ndarray:
    """Minimal set of causal key blocks holding a ``tau`` fraction of the row mass.

    Candidates ``n <= m`` are ranked by score, descending, ties to the smaller
    index; the shortest ranked prefix whose running sum reaches
    ``tau * total`` is kept. ``tau == 1`` keeps every causal block, zero-score
    ones included. A row whose causal scores are all zero falls back to the
    diagonal block alone.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if not 0.0 < tau <= 1.0:
        raise ValueError(f"tau must lie in (0, 1], got {tau}")
    if not 0 <= m < scores.shape[0]:
        raise IndexError(f"query block {m} outside row of length {scores.shape[0]}")
    out = np.zeros(scores.shape[0], dtype=bool)
    if tau >= 1.0:
        out[:m + 1] = True
        return out
    cand = scores[:m + 1]
    order = np.argsort(-cand, kind="stable")
    running = np.cumsum(cand[order])
    total = running[-1]
    if not total > 0.0:
        out[m] = True
        return out
    k = int(np.searchsorted(running, tau * total, side="left"))
    out[order[:k + 1]] = True
    return out


def static_protection(nb: int, modes=()) -> np.ndarray:
    """Blocks kept unconditionally.

    ``last-q-block``: the whole last query-block row. ``sink``: key block 0 in
    every row. ``recent``: blocks ``m - 1`` and ``m`` in row ``m``.
    """
    if nb < 1:
        raise ValueError("need at least one block")
    modes = set(modes)
    unknown = modes - set(PROTECTION_MODES)
    if unknown:
        raise ValueError(f"unknown protection mode(s): {sorted(unknown)}")
    out = np.zeros((nb, nb), dtype=bool)
    if "last-q-block" in modes:
        out[nb - 1, :] = True
    if "sink" in modes:
        out[:, 0] = True
    if "recent" in modes:
        rows = np.arange(nb)
        out[rows, rows] = True
        out[rows[1:], rows[1:] - 1] = True
    return out & causal_block_mask(nb)


def discover(t: HeadTensors, cfg: DiscoveryConfig):
    """Run the full discovery pipeline for one head.

    Returns ``(BlockSelection, ImportanceMap, CostReport)``. The cost report's
    ``logit_ops`` is what ``sparse_attention`` will spend on the selection;
    ``fallback_rows`` lists query blocks whose scores were all zero.
    """
    S = cfg.stride
    ns = -(-t.seq_len // S)
    if cfg.strategy == "anti-diagonal":
        raw = anti_diagonal_importance(t, cfg)
        search = anti_diagonal_search_ops(t.seq_len, S)
    else:
        positions = sample_positions_for_strategy(cfg, ns, t.seq_len)
        raw = stride_importance(t, positions, cfg)
        search = stride_search_ops(positions, S)
    normalized = normalize_importance(raw)
    scores = block_importance(normalized, cfg, t.seq_len)

    nb = scores.shape[0]
    dynamic = np.zeros((nb, nb), dtype=bool)
    fallback = []
    for m in range(nb):
        dynamic[m] = select_top_tau(scores[m], m, cfg.tau)
        if cfg.tau < 1.0 and not scores[m, :m + 1].astype(np.float64).sum() > 0.0:
            fallback.append(m)
    blocks = dynamic | static_protection(nb, cfg.protection)

    sel = BlockSelection(blocks, cfg.block_size, t.seq_len, cfg.strategy, cfg.tau)
    importance = ImportanceMap(raw, normalized, scores)
    cost = CostReport(
        logit_ops=logit_ops(sel),
        search_ops=search,
        sparsity=sparsity_of(sel),
        selected_pairs=sel.selected_pairs,
        causal_pairs=sel.causal_pairs,
        fallback_rows=tuple(fallback),
    )
    return sel, importance, cost
