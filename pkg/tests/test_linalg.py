import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from capaug.errors import NumericError, ShapeError
from capaug.linalg import col_max, finite_diff_grad, matmul, row_max, row_softmax


def matmul_oracle(a, b):
    """Naive triple-loop product, independent of numpy's matmul."""
    rows, inner = len(a), len(a[0])
    cols = len(b[0])
    out = [[0.0] * cols for _ in range(rows)]
    for i in range(rows):
        for j in range(cols):
            acc = 0.0
            for k in range(inner):
                acc += a[i][k] * b[k][j]
            out[i][j] = acc
    return np.array(out)


def scan_max(m, axis):
    """Exhaustive entry-by-entry max scan."""
    m = np.asarray(m)
    if axis == 1:
        return np.array([max(m[i, j] for j in range(m.shape[1])) for i in range(m.shape[0])])
    return np.array([max(m[i, j] for i in range(m.shape[0])) for j in range(m.shape[1])])


finite_floats = st.floats(min_value=-1e6, max_value=1e6, allow_nan=False, allow_infinity=False)


class TestMatmul:
    def test_identity(self):
        m = np.array([[1.5, -2.0], [0.25, 4.0]])
        assert np.array_equal(matmul(np.eye(2), m), m)

    def test_scalar(self):
        assert matmul([[2.0]], [[3.0]])[0, 0] == 6.0

    def test_against_triple_loop_oracle(self):
        rng = np.random.default_rng(7)
        a = rng.normal(size=(3, 4))
        b = rng.normal(size=(4, 2))
        assert np.max(np.abs(matmul(a, b) - matmul_oracle(a, b))) < 1e-12

    def test_dimension_mismatch_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"2x3.*4x2"):
            matmul(np.ones((2, 3)), np.ones((4, 2)))

    def test_rejects_non_finite(self):
        with pytest.raises(NumericError):
            matmul(np.array([[np.nan]]), np.array([[1.0]]))

    @given(
        a=arrays(np.float64, (2, 3), elements=st.floats(-100, 100)),
        b=arrays(np.float64, (3, 4), elements=st.floats(-100, 100)),
        c=arrays(np.float64, (4, 2), elements=st.floats(-100, 100)),
    )
    def test_associativity(self, a, b, c):
        left = matmul(matmul(a, b), c)
        right = matmul(a, matmul(b, c))
        scale = max(np.max(np.abs(left)), np.max(np.abs(right)), 1.0)
        assert np.max(np.abs(left - right)) / scale < 1e-9


class TestRowSoftmax:
    def test_single_column_gives_ones(self):
        out = row_softmax(np.array([[3.0], [-7.0], [0.0]]))
        assert np.array_equal(out, np.ones((3, 1)))

    def test_equal_logits_give_uniform(self):
        for w in (2, 5, 9):
            out = row_softmax(np.full((1, w), 4.2))
            assert np.allclose(out, 1.0 / w, atol=1e-12)

    def test_analytic_row(self):
        out = row_softmax(np.array([[0.0, math.log(2.0)]]))
        assert abs(out[0, 0] - 1.0 / 3.0) < 1e-12
        assert abs(out[0, 1] - 2.0 / 3.0) < 1e-12

    def test_empty_rejected(self):
        with pytest.raises(ShapeError):
            row_softmax(np.empty((0, 3)))

    def test_extreme_logits_stay_stochastic(self):
        m = np.array([[500.0, -500.0, 0.0], [-500.0, -500.0, -500.0]])
        out = row_softmax(m)
        assert np.all(out > 0.0)
        assert np.all(out <= 1.0)
        assert np.max(np.abs(out.sum(axis=1) - 1.0)) < 1e-9

    @given(m=arrays(np.float64, (4, 5), elements=finite_floats))
    def test_rows_sum_to_one(self, m):
        out = row_softmax(m)
        assert np.max(np.abs(out.sum(axis=1) - 1.0)) < 1e-9
        assert np.all(out > 0.0)
        assert np.all(out <= 1.0)

    @given(
        m=arrays(np.float64, (3, 4), elements=st.floats(-50, 50)),
        shift=st.floats(-100, 100, allow_nan=False),
    )
    def test_shift_invariance(self, m, shift):
        assert np.max(np.abs(row_softmax(m + shift) - row_softmax(m))) < 1e-12


class TestRowColMax:
    def test_direct_read_off(self):
        m = np.array([[0.2, 0.8], [0.5, 0.5]])
        assert np.array_equal(row_max(m), [0.8, 0.5])
        assert np.array_equal(col_max(m), [0.5, 0.8])

    def test_against_scan_oracle(self):
        rng = np.random.default_rng(11)
        m = rng.normal(size=(5, 7))
        assert np.array_equal(row_max(m), scan_max(m, axis=1))
        assert np.array_equal(col_max(m), scan_max(m, axis=0))

    def test_empty_rejected(self):
        with pytest.raises(ShapeError):
            row_max(np.empty((3, 0)))
        with pytest.raises(ShapeError):
            col_max(np.empty((0, 3)))

    @given(m=arrays(np.float64, (4, 6), elements=finite_floats), seed=st.integers(0, 2**31))
    @settings(max_examples=50)
    def test_commutes_with_permutations(self, m, seed):
        rng = np.random.default_rng(seed)
        rp = rng.permutation(m.shape[0])
        cp = rng.permutation(m.shape[1])
        assert np.array_equal(row_max(m[rp]), row_max(m)[rp])
        assert np.array_equal(col_max(m[:, cp]), col_max(m)[cp])


class TestFiniteDiffGrad:
    def test_quadratic(self):
        grad = finite_diff_grad(lambda x: float(x @ x), np.array([3.0]), eps=1e-5)
        assert abs(grad[0] - 6.0) < 1e-6

    def test_constant_function(self):
        grad = finite_diff_grad(lambda x: 1.25, np.array([0.3, -2.0, 5.0]), eps=1e-5)
        assert np.array_equal(grad, np.zeros(3))

    def test_sum_of_sines(self):
        rng = np.random.default_rng(3)
        x = rng.uniform(-2, 2, size=6)
        grad = finite_diff_grad(lambda v: float(np.sum(np.sin(v))), x, eps=1e-5)
        assert np.max(np.abs(grad - np.cos(x))) < 1e-6

    def test_nonpositive_eps_rejected(self):
        with pytest.raises(NumericError):
            finite_diff_grad(lambda x: 0.0, np.array([1.0]), eps=0.0)

    def test_non_finite_evaluation_rejected(self):
        with pytest.raises(NumericError):
            finite_diff_grad(lambda x: float("nan"), np.array([1.0]), eps=1e-5)
