"""Dense float64 linear algebra used by the coverage scorer and the trainer.

Matrices are plain 2-D ``numpy.ndarray`` objects in row-major order; the
helpers here add the validation the rest of the engine relies on: inputs
are coerced to float64, must be non-empty, and no operation admits NaN or
Inf into its output.
"""

from collections.abc import Callable

import numpy as np

from .errors import NumericError, ShapeError


def as_matrix(values, name: str = "matrix") -> np.ndarray:
    """Coerce ``values`` to a finite, non-empty float64 2-D array."""
    m = np.asarray(values, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got {m.ndim}-D")
    if m.shape[0] == 0 or m.shape[1] == 0:
        raise ShapeError(f"{name} must be non-empty, got shape {m.shape[0]}x{m.shape[1]}")
    if not np.isfinite(m).all():
        raise NumericError(f"{name} contains non-finite entries")
    return m


def as_vector(values, name: str = "vector") -> np.ndarray:
    """Coerce ``values`` to a finite, non-empty float64 1-D array."""
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1:
        raise ShapeError(f"{name} must be 1-D, got {v.ndim}-D")
    if v.size == 0:
        raise ShapeError(f"{name} must be non-empty")
    if not np.isfinite(v).all():
        raise NumericError(f"{name} contains non-finite entries")
    return v


def matmul(a, b) -> np.ndarray:
    """Matrix product of ``a`` (r x k) and ``b`` (k x c)."""
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(
            f"cannot multiply {a.shape[0]}x{a.shape[1]} by {b.shape[0]}x{b.shape[1]}"
        )
    out = a @ b
    if not np.isfinite(out).all():
        raise NumericError("matmul overflowed to non-finite values")
    return out


def row_softmax(m) -> np.ndarray:
    """Softmax over each row, computed with max-subtraction.

    Shifting every row by its maximum keeps the largest exponent at
    exp(0) = 1, so overflow is impossible for any finite input. Underflowed
    exponentials are clamped to the smallest positive normal float so every
    output entry stays strictly positive (downstream coverage math divides
    by these values); the clamp perturbs row sums by well under 1e-9.
    """
    m = as_matrix(m)
    shifted = m - m.max(axis=1, keepdims=True)
    e = np.maximum(np.exp(shifted), np.finfo(np.float64).tiny)
    return e / e.sum(axis=1, keepdims=True)


def row_max(m) -> np.ndarray:
    """Vector of per-row maxima."""
    return as_matrix(m).max(axis=1)


def col_max(m) -> np.ndarray:
    """Vector of per-column maxima."""
    return as_matrix(m).max(axis=0)


def finite_diff_grad(
    f: Callable[[np.ndarray], float], x, eps: float = 1e-5
) -> np.ndarray:
    """Central-difference gradient estimate of a scalar function.

    Each coordinate is perturbed by ``eps`` in both directions:
    ``(f(x + eps*e_i) - f(x - eps*e_i)) / (2*eps)``.
    """
    if not eps > 0:
        raise NumericError(f"eps must be positive, got {eps}")
    x = as_vector(x, "x")
    grad = np.empty_like(x)
    for i in range(x.size):
        bump = np.zeros_like(x)
        bump[i] = eps
        hi = float(f(x + bump))
        lo = float(f(x - bump))
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise NumericError(f"f evaluated non-finite near coordinate {i}")
        grad[i] = (hi - lo) / (2.0 * eps)
    return grad
