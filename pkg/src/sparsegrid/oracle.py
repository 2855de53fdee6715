"""Ground-truth important keys and precision/recall/F1 of a block selection."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attention import BlockSelection, HeadTensors, attention_probs, num_blocks

__all__ = [
    "GroundTruth",
    "SelectionReport",
    "sorted_prefix",
    "ground_truth_sets",
    "predicted_key_set",
    "score_selection",
]


def sorted_prefix(values, tau: float) -> np.ndarray:
    """Indices of the shortest descending-sorted prefix reaching ``tau * total``.

    Ties go to the smaller index. ``total`` is the running sum at the end of
    the sorted order, so ``tau = 1`` stops right after the last nonzero value.
    Returns the indices sorted ascending.
    """
    values = np.asarray(values, dtype=np.float64)
    order = np.argsort(-values, kind="stable")
    running = np.cumsum(values[order])
    k = int(np.searchsorted(running, tau * running[-1], side="left"))
    return np.sort(order[:k + 1])


@dataclass(frozen=True)
class GroundTruth:
    """Per-query important key sets.

    ``key_sets[i]`` is sorted and causal. ``block_truth`` maps each query block
    to the key blocks touched by any ``key_sets[i]`` of its queries.
    """

    key_sets: tuple
    tau_star: float
    block_size: int | None = None
    block_truth: np.ndarray | None = None

    @property
    def seq_len(self) -> int:
        return len(self.key_sets)

    def with_blocks(self, block_size: int) -> "GroundTruth":
        L = self.seq_len
        nb = num_blocks(L, block_size)
        truth = np.zeros((nb, nb), dtype=bool)
        for i, keys in enumerate(self.key_sets):
            truth[i // block_size, np.unique(np.asarray(keys) // block_size)] = True
        return GroundTruth(self.key_sets, self.tau_star, block_size, truth)


@dataclass(frozen=True)
class SelectionReport:
    precision: float
    recall: float
    f1: float
    per_query_precision: np.ndarray
    per_query_recall: np.ndarray


def ground_truth_sets(t: HeadTensors, tau_star: float = 0.95,
                      block_size: int | None = None) -> GroundTruth:
    """Minimal key set carrying ``tau_star`` of each query's causal attention mass."""
    if not 0.0 < tau_star <= 1.0:
        raise ValueError(f"tau_star must lie in (0, 1], got {tau_star}")
    probs = attention_probs(t)
    sets = tuple(sorted_prefix(probs[i, :i + 1], tau_star) for i in range(t.seq_len))
    truth = GroundTruth(sets, float(tau_star))
    return truth.with_blocks(block_size) if block_size is not None else truth


def predicted_key_set(sel: BlockSelection, i: int) -> np.ndarray:
    """Tokens of the key blocks selected for query ``i``'s block, capped at ``i``."""
    if not 0 <= i < sel.seq_len:
        raise IndexError(f"query {i} outside [0, {sel.seq_len})")
    B = sel.block_size
    row = sel.blocks[i // B]
    keys = np.arange(i + 1)
    return keys[row[keys // B]]


def score_selection(sel: BlockSelection, truth: GroundTruth) -> SelectionReport:
    """Mean per-query precision and recall; F1 is taken from the two means."""
    L = sel.seq_len
    if truth.seq_len != L:
        raise ValueError(f"ground truth covers L={truth.seq_len}, selection L={L}")
    if truth.block_size is not None and truth.block_size != sel.block_size:
        raise ValueError("ground truth block size differs from the selection's")
    precision = np.empty(L)
    recall = np.empty(L)
    for i in range(L):
        predicted = predicted_key_set(sel, i)
        if predicted.size == 0:
            raise RuntimeError(f"empty predicted key set for query {i}")
        hits = np.intersect1d(predicted, truth.key_sets[i], assume_unique=True).size
        precision[i] = hits / predicted.size
        recall[i] = hits / len(truth.key_sets[i])
    p = float(precision.mean())
    r = float(recall.mean())
    f1 = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return SelectionReport(p, r, f1, precision, recall)
