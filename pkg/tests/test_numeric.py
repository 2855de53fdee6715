import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sparsegrid.numeric import (
    DegenerateRowError,
    ShapeError,
    dot_rows64,
    frobenius_diff,
    masked_row_softmax,
    matmul_transposed,
)


def triple_loop(a, b):
    out = np.zeros((a.shape[0], b.shape[0]), dtype=np.float32)
    for i in range(a.shape[0]):
        for j in range(b.shape[0]):
            acc = 0.0
            for k in range(a.shape[1]):
                acc += float(a[i, k]) * float(b[j, k])
            out[i, j] = acc
    return out


def softmax64(row, allowed):
    vals = [float(x) for x, ok in zip(row, allowed) if ok]
    m = max(vals)
    z = math.fsum(math.exp(v - m) for v in vals)
    return [math.exp(float(x) - m) / z if ok else 0.0 for x, ok in zip(row, allowed)]


finite32 = st.floats(-50, 50, width=32)


class TestMatmulTransposed:
    def test_identity(self):
        eye = np.eye(2, dtype=np.float32)
        np.testing.assert_array_equal(matmul_transposed(eye, eye), eye)

    def test_single_entry(self):
        assert matmul_transposed([[1, 2]], [[3, 4]]).tolist() == [[11.0]]

    def test_matches_triple_loop_exactly(self):
        rng = np.random.default_rng(0)
        a = rng.standard_normal((8, 4)).astype(np.float32)
        b = rng.standard_normal((8, 4)).astype(np.float32)
        np.testing.assert_array_equal(matmul_transposed(a, b), triple_loop(a, b))

    def test_close_to_blas(self):
        rng = np.random.default_rng(1)
        a = rng.standard_normal((33, 17)).astype(np.float32)
        b = rng.standard_normal((9, 17)).astype(np.float32)
        np.testing.assert_allclose(matmul_transposed(a, b), a @ b.T, rtol=1e-5, atol=1e-5)

    def test_dimension_mismatch(self):
        with pytest.raises(ShapeError):
            matmul_transposed(np.ones((2, 3)), np.ones((2, 4)))

    @pytest.mark.parametrize("n", [1, 31, 32, 33, 100])
    def test_causal_variant_agrees_on_lower_triangle(self, n):
        rng = np.random.default_rng(n)
        a = rng.standard_normal((n, 7))
        b = rng.standard_normal((n, 7))
        full = dot_rows64(a, b, 0.5)
        causal = dot_rows64(a, b, 0.5, causal=True)
        tril = np.tril_indices(n)
        np.testing.assert_array_equal(causal[tril], full[tril])

    @given(arrays(np.float32, (5, 3), elements=finite32), arrays(np.float32, (4, 3), elements=finite32))
    @settings(max_examples=50, deadline=None)
    def test_triple_loop_property(self, a, b):
        np.testing.assert_array_equal(matmul_transposed(a, b), triple_loop(a, b))


class TestMaskedRowSoftmax:
    def test_uniform_pair(self):
        out = masked_row_softmax([[0.0, 0.0]], [[True, True]])
        np.testing.assert_allclose(out, [[0.5, 0.5]])

    def test_single_allowed_entry(self):
        out = masked_row_softmax([[5.0, 100.0]], [[True, False]])
        assert out.tolist() == [[1.0, 0.0]]

    def test_matches_float64_reference(self):
        rng = np.random.default_rng(2)
        logits = (rng.standard_normal((16, 16)) * 4).astype(np.float32)
        allowed = rng.random((16, 16)) < 0.5
        allowed[np.arange(16), rng.integers(0, 16, 16)] = True
        out = masked_row_softmax(logits, allowed)
        ref = np.array([softmax64(logits[i], allowed[i]) for i in range(16)])
        np.testing.assert_allclose(out, ref, atol=1e-6, rtol=0)

    def test_disallowed_values_are_ignored(self):
        allowed = np.array([[True, False, True]])
        a = masked_row_softmax([[1.0, 1e30, 2.0]], allowed)
        b = masked_row_softmax([[1.0, -np.inf, 2.0]], allowed)
        np.testing.assert_array_equal(a, b)
        assert a[0, 1] == 0.0

    def test_degenerate_row(self):
        with pytest.raises(DegenerateRowError) as info:
            masked_row_softmax(np.zeros((3, 2)), [[True, False], [False, False], [True, True]])
        assert info.value.row == 1

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            masked_row_softmax(np.zeros((2, 2)), np.ones((2, 3), dtype=bool))

    @given(st.integers(0, 2**32 - 1), st.integers(1, 40), st.floats(-30, 30))
    @settings(max_examples=60, deadline=None)
    def test_rows_sum_to_one_and_shift_invariance(self, seed, n, shift):
        rng = np.random.default_rng(seed)
        logits = (rng.standard_normal((6, n)) * 5).astype(np.float32)
        allowed = rng.random((6, n)) < 0.6
        allowed[:, rng.integers(0, n)] = True
        out = masked_row_softmax(logits, allowed)
        sums = np.where(allowed, out.astype(np.float64), 0).sum(axis=1)
        assert np.all(np.abs(sums - 1) <= 1e-6)
        assert np.all(out[~allowed] == 0)
        shifted = masked_row_softmax(logits.astype(np.float64) + shift, allowed)
        assert np.max(np.abs(shifted - out)) <= 1e-6


class TestFrobeniusDiff:
    def test_identical(self):
        a = np.arange(6, dtype=np.float32).reshape(2, 3)
        assert frobenius_diff(a, a) == 0.0

    def test_three_four_five(self):
        assert frobenius_diff([[3, 4]], [[0, 0]]) == 5.0

    def test_matches_summation_oracle(self):
        rng = np.random.default_rng(3)
        a = rng.standard_normal((10, 10)).astype(np.float32)
        b = rng.standard_normal((10, 10)).astype(np.float32)
        total = 0.0
        for x, y in zip(a.ravel(), b.ravel()):
            total += (float(x) - float(y)) ** 2
        assert frobenius_diff(a, b) == pytest.approx(math.sqrt(total), rel=1e-6)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            frobenius_diff(np.zeros((2, 2)), np.zeros((2, 1)))

    @given(arrays(np.float32, (4, 5), elements=finite32), arrays(np.float32, (4, 5), elements=finite32))
    @settings(max_examples=50, deadline=None)
    def test_symmetric(self, a, b):
        assert frobenius_diff(a, b) == frobenius_diff(b, a)
        assert frobenius_diff(a, a) == 0.0
