"""Dense numeric substrate shared by every other module.

Matrices are plain numpy arrays: ``float32`` for values, ``bool`` for masks.
Reductions accumulate in float64 and store back to float32, so results do
not depend on BLAS blocking or on the values of excluded entries.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "ShapeError",
    "DegenerateRowError",
    "as_matrix",
    "as_bool_matrix",
    "scaled_dot_products",
    "dot_rows64",
    "matmul_transposed",
    "masked_row_softmax",
    "frobenius_diff",
]


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class DegenerateRowError(ArithmeticError):
    """A softmax row has no admissible entries."""

    def __init__(self, row: int, message: str | None = None):
        self.row = int(row)
        super().__init__(message or f"row {self.row} has no allowed entries")


def as_matrix(x, name: str = "matrix") -> np.ndarray:
    arr = np.ascontiguousarray(x, dtype=np.float32)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {arr.shape}")
    return arr


def as_bool_matrix(x, name: str = "mask") -> np.ndarray:
    arr = np.ascontiguousarray(x, dtype=bool)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {arr.shape}")
    return arr


_ROW_CHUNK = 32


def scaled_dot_products(a, b, scale: float = 1.0) -> np.ndarray:
    """Return ``scale * a @ b.T`` as float32.

    Every output entry is accumulated independently in float64 with the
    inner index ascending, the same order as a naive triple loop. That makes
    row ``i`` of the result a function of ``a[i]`` and ``b`` only, bit for bit.
    """
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[1]:
        raise ShapeError(f"inner dimensions differ: {a.shape} vs {b.shape}")
    return dot_rows64(a.astype(np.float64), b.astype(np.float64), scale).astype(np.float32)


def dot_rows64(a64: np.ndarray, b64: np.ndarray, scale: float = 1.0,
               causal: bool = False) -> np.ndarray:
    """float64 ``scale * a @ b.T`` with per-entry sequential accumulation over k.

    Rows are processed in chunks so the accumulator stays cache-resident; the
    summation order of each entry is unchanged. With ``causal=True`` only
    entries ``j <= i`` are guaranteed; the rest may be left at zero.
    """
    n, m = a64.shape[0], b64.shape[0]
    out = np.zeros((n, m), dtype=np.float64)
    bt = np.ascontiguousarray(b64.T)
    scratch = np.empty((min(_ROW_CHUNK, n), m), dtype=np.float64)
    for start in range(0, n, _ROW_CHUNK):
        stop = min(start + _ROW_CHUNK, n)
        cols = min(stop, m) if causal else m
        acc = out[start:stop, :cols]
        tmp = scratch[:stop - start, :cols]
        for k in range(a64.shape[1]):
            np.multiply(a64[start:stop, k, None], bt[k, :cols], out=tmp)
            acc += tmp
    if scale != 1.0:
        out *= scale
    return out


def matmul_transposed(a, b) -> np.ndarray:
    """``out[i, j] = sum_k a[i, k] * b[j, k]``; shapes (L, d) x (L', d) -> (L, L')."""
    return scaled_dot_products(a, b, 1.0)


def masked_row_softmax(logits, allowed) -> np.ndarray:
    """Row softmax restricted to ``allowed`` entries.

    Disallowed entries are outside the softmax domain (they behave like an
    additive -inf) and come back as exact zeros, whatever their logit value.

    Raises:
        ShapeError: if the two matrices differ in shape.
        DegenerateRowError: if some row has no allowed entry.
    """
    logits = np.asarray(logits)
    allowed = as_bool_matrix(allowed, "allowed")
    if logits.shape != allowed.shape:
        raise ShapeError(f"logits {logits.shape} vs mask {allowed.shape}")
    if logits.ndim != 2:
        raise ShapeError(f"logits must be 2-D, got shape {logits.shape}")
    empty = ~allowed.any(axis=1)
    if empty.any():
        raise DegenerateRowError(int(np.flatnonzero(empty)[0]))

    x = np.where(allowed, logits.astype(np.float64), -np.inf)
    x -= x.max(axis=1, keepdims=True)
    e = np.exp(x)
    e /= e.sum(axis=1, keepdims=True)
    return e.astype(np.float32)


def frobenius_diff(a, b) -> float:
    """Frobenius norm of ``a - b`` (float64 accumulation)."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    diff = a.astype(np.float64) - b.astype(np.float64)
    return float(np.sqrt(np.sum(diff * diff)))
