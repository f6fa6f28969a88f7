"""Dense float64 primitives and a finite-difference gradient checker.

Matrices and vectors are plain ``numpy.ndarray`` objects of dtype float64.
Vectors are 1-D; matrices are 2-D. Zero-length arrays are rejected at
construction so downstream code never needs to special-case them.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .exceptions import ArgumentError, DimensionError, NumericError

DTYPE = np.float64


def as_vector(values, name="vector"):
    """Return ``values`` as a non-empty, finite 1-D float64 array."""
    v = np.asarray(values, dtype=DTYPE)
    if v.ndim != 1:
        raise DimensionError(f"{name} must be 1-D, got shape {v.shape}")
    if v.size == 0:
        raise ArgumentError(f"{name} must be non-empty")
    if not np.all(np.isfinite(v)):
        raise NumericError(f"{name} contains non-finite entries")
    return v


def as_matrix(values, name="matrix"):
    """Return ``values`` as a non-empty, finite 2-D float64 array."""
    m = np.asarray(values, dtype=DTYPE)
    if m.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {m.shape}")
    if m.size == 0:
        raise ArgumentError(f"{name} must be non-empty, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise NumericError(f"{name} contains non-finite entries")
    return m


def matmul(a, b):
    """Matrix product with an explicit shape check.

    Accepts 1-D operands with the usual numpy promotion rules, but raises
    :class:`DimensionError` naming both shapes when the inner dimensions
    disagree.
    """
    a = np.asarray(a, dtype=DTYPE)
    b = np.asarray(b, dtype=DTYPE)
    inner_a = a.shape[-1]
    inner_b = b.shape[0] if b.ndim == 1 else b.shape[-2]
    if inner_a != inner_b:
        raise DimensionError(f"cannot multiply shapes {a.shape} and {b.shape}")
    return a @ b


def rows_matmul(x, w):
    """``x @ w`` for stacked rows ``x`` of shape (..., K), as one 2-D product.

    numpy loops over leading axes for N-D operands; flattening them first is
    markedly faster for (T, B, K) sequences. Inputs with a batch of one keep
    the plain product, so single clips round exactly as a per-step loop.
    """
    if x.ndim < 3 or x.shape[1] == 1:
        return x @ w
    return (x.reshape(-1, x.shape[-1]) @ w).reshape(*x.shape[:-1], w.shape[-1])


def softmax(v, axis=-1):
    """Numerically stable softmax along ``axis`` (max-subtraction)."""
    v = np.asarray(v, dtype=DTYPE)
    if v.size == 0 or v.shape[axis] == 0:
        raise ArgumentError("softmax of an empty vector is undefined")
    shifted = v - np.max(v, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def log_softmax(v, axis=-1):
    v = np.asarray(v, dtype=DTYPE)
    if v.size == 0 or v.shape[axis] == 0:
        raise ArgumentError("log_softmax of an empty vector is undefined")
    shifted = v - np.max(v, axis=axis, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))


def concat(a, b):
    """Concatenate two vectors, ``a`` first."""
    return np.concatenate([as_vector(a, "a"), as_vector(b, "b")])


def sigmoid(x, out=None):
    """Logistic function; overflow-free for any finite input."""
    return expit(np.asarray(x, dtype=DTYPE), out=out)


@dataclass(frozen=True)
class GradCheckReport:
    max_relative_error: float
    worst_parameter_index: int
    passed: bool
    tolerance: float = 1e-6


def finite_difference_gradcheck(f, analytic_grad, point, epsilon=1e-5, tolerance=1e-6):
    """Compare ``analytic_grad`` against central differences of ``f`` at ``point``.

    Relative error per coordinate is ``|a - n| / max(|a|, |n|, 1e-8)``. The
    point is perturbed on a private copy; ``f`` receives a fresh array each
    call.

    Raises
    ------
    NumericError
        If ``f`` returns a non-finite value anywhere in the stencil.
    """
    if epsilon <= 0:
        raise ArgumentError(f"epsilon must be positive, got {epsilon}")
    x = np.array(point, dtype=DTYPE).ravel()
    g = np.asarray(analytic_grad, dtype=DTYPE).ravel()
    if g.shape != x.shape:
        raise DimensionError(f"gradient shape {g.shape} does not match point shape {x.shape}")

    worst, worst_i = 0.0, 0
    for i in range(x.size):
        orig = x[i]
        x[i] = orig + epsilon
        f_plus = float(f(x.copy()))
        x[i] = orig - epsilon
        f_minus = float(f(x.copy()))
        x[i] = orig
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise NumericError(f"f is not finite around coordinate {i}")
        numeric = (f_plus - f_minus) / (2.0 * epsilon)
        denom = max(abs(g[i]), abs(numeric), 1e-8)
        err = abs(g[i] - numeric) / denom
        if err > worst:
            worst, worst_i = err, i
    return GradCheckReport(
        max_relative_error=worst,
        worst_parameter_index=worst_i,
        passed=worst <= tolerance,
        tolerance=tolerance,
    )
