"""Reference causal attention, block-mask expansion and block-sparse attention."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .numeric import (
    DegenerateRowError,
    ShapeError,
    as_bool_matrix,
    as_matrix,
    dot_rows64,
    frobenius_diff,
    masked_row_softmax,
    scaled_dot_products,
)

__all__ = [
    "HeadTensors",
    "BlockSelection",
    "CostReport",
    "num_blocks",
    "causal_block_mask",
    "causal_mask",
    "attention_logits",
    "attention_probs",
    "full_attention",
    "expand_block_mask",
    "sparse_attention",
    "approximation_error",
    "sparsity_of",
    "logit_ops",
]


def num_blocks(seq_len: int, block_size: int) -> int:
    return -(-seq_len // block_size)


@dataclass(frozen=True)
class HeadTensors:
    """Query, key and value matrices of one attention head, each ``(L, d)``.

    The matrices are private read-only float32 copies, which lets the causal
    logits be computed once and shared by every attention call on the head.
    """

    q: np.ndarray
    k: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        q = as_matrix(self.q, "q")
        k = as_matrix(self.k, "k")
        v = as_matrix(self.v, "v")
        if not (q.shape == k.shape == v.shape):
            raise ShapeError(f"q, k, v shapes differ: {q.shape}, {k.shape}, {v.shape}")
        if q.shape[0] < 1 or q.shape[1] < 1:
            raise ShapeError(f"need L >= 1 and d >= 1, got {q.shape}")
        for name, arr in (("q", q), ("k", k), ("v", v)):
            arr = arr.copy()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @cached_property
    def causal_logits(self) -> np.ndarray:
        """``QK^T / sqrt(d)`` as float32, valid on ``j <= i`` only (read-only)."""
        logits = dot_rows64(self.q.astype(np.float64), self.k.astype(np.float64),
                            1.0 / math.sqrt(self.head_dim), causal=True).astype(np.float32)
        logits.setflags(write=False)
        return logits

    @property
    def seq_len(self) -> int:
        return self.q.shape[0]

    @property
    def head_dim(self) -> int:
        return self.q.shape[1]


@dataclass(frozen=True)
class BlockSelection:
    """Boolean ``N_b x N_b`` block mask plus how it was produced.

    ``blocks[m, n]`` means the query-block ``m`` / key-block ``n`` tile is
    computed. The upper triangle must be empty and every row needs at least
    one selected block.
    """

    blocks: np.ndarray
    block_size: int
    seq_len: int
    strategy_tag: str = "manual"
    tau: float = 1.0

    def __post_init__(self):
        blocks = as_bool_matrix(self.blocks, "blocks")
        if self.block_size < 1 or self.seq_len < 1:
            raise ValueError("block_size and seq_len must be positive")
        nb = num_blocks(self.seq_len, self.block_size)
        if blocks.shape != (nb, nb):
            raise ShapeError(f"blocks must be {nb}x{nb} for L={self.seq_len}, "
                             f"B={self.block_size}; got {blocks.shape}")
        if np.triu(blocks, 1).any():
            raise ValueError("block mask selects non-causal tiles (n > m)")
        empty = ~blocks.any(axis=1)
        if empty.any():
            raise DegenerateRowError(int(np.flatnonzero(empty)[0]),
                                     "query block has no selected key block")
        if not 0.0 < self.tau <= 1.0:
            raise ValueError(f"tau must lie in (0, 1], got {self.tau}")
        blocks = blocks.copy()
        blocks.flags.writeable = False
        object.__setattr__(self, "blocks", blocks)

    @property
    def num_blocks(self) -> int:
        return self.blocks.shape[0]

    @property
    def selected_pairs(self) -> int:
        return int(self.blocks.sum())

    @property
    def causal_pairs(self) -> int:
        nb = self.num_blocks
        return nb * (nb + 1) // 2

    @classmethod
    def all_causal(cls, seq_len: int, block_size: int, strategy_tag: str = "dense"):
        return cls(causal_block_mask(num_blocks(seq_len, block_size)),
                   block_size, seq_len, strategy_tag, 1.0)


@dataclass(frozen=True)
class CostReport:
    """Operation counts for one head.

    ``logit_ops`` counts query-key dot products of the sparse attention pass,
    ``search_ops`` the stride-level dot products spent finding the mask.
    """

    logit_ops: int
    search_ops: int
    sparsity: float
    selected_pairs: int = 0
    causal_pairs: int = 0
    fallback_rows: tuple = field(default=())


def causal_block_mask(nb: int) -> np.ndarray:
    return np.tril(np.ones((nb, nb), dtype=bool))


def causal_mask(seq_len: int) -> np.ndarray:
    return np.tril(np.ones((seq_len, seq_len), dtype=bool))


def attention_logits(t: HeadTensors) -> np.ndarray:
    """Scaled logits ``Q K^T / sqrt(d)`` (no mask applied)."""
    return scaled_dot_products(t.q, t.k, 1.0 / math.sqrt(t.head_dim))


def attention_probs(t: HeadTensors, allowed=None) -> np.ndarray:
    """Attention matrix ``A`` under ``allowed`` (token-level causal by default)."""
    if allowed is None:
        allowed = causal_mask(t.seq_len)
    allowed = as_bool_matrix(allowed, "allowed")
    if allowed.shape == (t.seq_len, t.seq_len) and not np.triu(allowed, 1).any():
        return masked_row_softmax(t.causal_logits, allowed)
    return masked_row_softmax(attention_logits(t), allowed)


def _attend(t: HeadTensors, allowed: np.ndarray) -> np.ndarray:
    probs = attention_probs(t, allowed)
    return (probs.astype(np.float64) @ t.v.astype(np.float64)).astype(np.float32)


def full_attention(t: HeadTensors) -> np.ndarray:
    """Dense causal attention output ``softmax(QK^T/sqrt(d), j <= i) V``."""
    return _attend(t, causal_mask(t.seq_len))


def expand_block_mask(sel: BlockSelection) -> np.ndarray:
    """Token-level ``L x L`` mask: tile selected and ``j <= i``.

    A trailing partial block simply holds ``L mod B`` tokens; nothing is padded.
    """
    idx = np.arange(sel.seq_len) // sel.block_size
    tiles = sel.blocks[np.ix_(idx, idx)]
    return tiles & causal_mask(sel.seq_len)


def logit_ops(sel: BlockSelection) -> int:
    return int(expand_block_mask(sel).sum())


def sparse_attention(t: HeadTensors, sel: BlockSelection, return_cost: bool = False):
    """Block-sparse attention: softmax over the expanded mask only.

    With ``return_cost=True`` returns ``(output, CostReport)``; the report has
    ``search_ops = 0`` since no pattern discovery happens here.

    Raises:
        DegenerateRowError: a query row ends up with no admissible key; the
            exception's ``row`` is the query index.
    """
    if sel.seq_len != t.seq_len:
        raise ShapeError(f"selection is for L={sel.seq_len}, tensors have L={t.seq_len}")
    mask = expand_block_mask(sel)
    try:
        out = _attend(t, mask)
    except DegenerateRowError as exc:
        raise DegenerateRowError(exc.row, f"query {exc.row} has no allowed key") from None
    if not return_cost:
        return out
    cost = CostReport(
        logit_ops=int(mask.sum()),
        search_ops=0,
        sparsity=sparsity_of(sel),
        selected_pairs=sel.selected_pairs,
        causal_pairs=sel.causal_pairs,
    )
    return out, cost


def approximation_error(full_out, sparse_out) -> float:
    """Frobenius distance between the full and sparse outputs."""
    return frobenius_diff(full_out, sparse_out)


def sparsity_of(sel: BlockSelection) -> float:
    """Fraction of causal block tiles that are skipped.

    The denominator is the ``N_b (N_b + 1) / 2`` causal tiles, not ``N_b**2``;
    ``sel.selected_pairs`` and ``sel.causal_pairs`` give the raw counts.
    """
    return 1.0 - sel.selected_pairs / sel.causal_pairs
