import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cascade_attn.exceptions import ArgumentError, DimensionError, NumericError
from cascade_attn.tensor import (
    as_matrix,
    as_vector,
    concat,
    finite_difference_gradcheck,
    matmul,
    sigmoid,
    softmax,
)


def test_matmul_identity():
    a = np.array([[1.0, 2.0], [3.0, 4.0]])
    npt.assert_array_equal(matmul(a, np.eye(2)), a)
    npt.assert_array_equal(matmul(np.eye(2), np.array([[5.0], [7.0]])), [[5.0], [7.0]])


def test_matmul_hand_arithmetic():
    npt.assert_array_equal(matmul([[1, 2], [3, 4]], [[1], [1]]), [[3.0], [7.0]])


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 2\)"):
        matmul(np.ones((2, 3)), np.ones((2, 2)))


def test_softmax_examples():
    npt.assert_allclose(softmax([0.0, 0.0, 0.0]), [1 / 3] * 3, rtol=0, atol=1e-15)
    assert softmax([123.4])[0] == 1.0
    e = np.e
    npt.assert_allclose(softmax([1.0, 0.0]), [e / (e + 1), 1 / (e + 1)], rtol=0, atol=1e-15)
    npt.assert_allclose(softmax([1.0, 0.0]), [0.73106, 0.26894], atol=1e-5)


def test_softmax_empty_rejected():
    with pytest.raises(ArgumentError):
        softmax([])


def test_concat():
    npt.assert_array_equal(concat([1, 2], [3]), [1.0, 2.0, 3.0])
    npt.assert_array_equal(concat([0.5], [0.5]), [0.5, 0.5])
    with pytest.raises(ArgumentError):
        concat([], [1.0])


def test_zero_length_unconstructible():
    with pytest.raises(ArgumentError):
        as_vector([])
    with pytest.raises(ArgumentError):
        as_matrix(np.zeros((0, 3)))
    with pytest.raises(NumericError):
        as_vector([1.0, np.nan])


def test_sigmoid_extremes_are_finite():
    s = sigmoid(np.array([-1000.0, 0.0, 1000.0]))
    npt.assert_array_equal(s, [0.0, 0.5, 1.0])


finite_vectors = arrays(
    np.float64,
    st.integers(1, 64),
    elements=st.floats(-50, 50, allow_nan=False, allow_infinity=False),
)


@given(finite_vectors)
def test_softmax_normalized_property(v):
    p = softmax(v)
    assert abs(p.sum() - 1.0) <= 1e-12
    assert np.all(p > 0) and np.all(p <= 1.0)


@given(finite_vectors, st.floats(-1e3, 1e3))
def test_softmax_shift_invariance(v, c):
    npt.assert_allclose(softmax(v + c), softmax(v), rtol=0, atol=1e-12)


@settings(max_examples=50)
@given(st.integers(2, 8), st.integers(2, 8), st.integers(2, 8), st.integers(2, 8), st.integers(0, 2**32 - 1))
def test_matmul_associativity(n, k, m, p, seed):
    rng = np.random.default_rng(seed)
    a, b, c = rng.normal(size=(n, k)), rng.normal(size=(k, m)), rng.normal(size=(m, p))
    npt.assert_allclose(matmul(matmul(a, b), c), matmul(a, matmul(b, c)), rtol=0, atol=1e-9)


def test_gradcheck_quadratic():
    r = finite_difference_gradcheck(lambda x: x[0] ** 2, [6.0], [3.0], 1e-5, 1e-4)
    assert r.passed and r.max_relative_error < 1e-8


def test_gradcheck_constant():
    r = finite_difference_gradcheck(lambda x: 4.2, [0.0], [1.7], 1e-5, 1e-4)
    assert r.passed and r.max_relative_error == 0.0


def test_gradcheck_detects_wrong_gradient():
    r = finite_difference_gradcheck(lambda x: x[0] ** 2, [5.0], [3.0], 1e-5, 1e-4)
    assert not r.passed
    assert r.max_relative_error == pytest.approx(1 / 6, rel=1e-6)
    assert r.worst_parameter_index == 0


def test_gradcheck_non_finite_raises():
    with pytest.raises(NumericError):
        finite_difference_gradcheck(lambda x: np.inf, [0.0], [1.0])


def test_gradcheck_rejects_bad_epsilon():
    with pytest.raises(ArgumentError):
        finite_difference_gradcheck(lambda x: 0.0, [0.0], [1.0], epsilon=0.0)


@pytest.mark.parametrize("seed", range(5))
def test_gradcheck_on_module_ops(seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(3, 4))
    w = rng.normal(size=(4, 2))
    r_out = rng.normal(size=(3, 2))
    v = rng.normal(size=6)
    r_v = rng.normal(size=6)

    # matmul: L = sum(R * (A W)), dL/dW = A^T R
    f = lambda x: float(np.sum(r_out * matmul(a, x.reshape(4, 2))))
    assert finite_difference_gradcheck(f, a.T @ r_out, w, 1e-5, 1e-6).passed

    # softmax: L = r . softmax(v), dL/dv = p * (r - p.r)
    p = softmax(v)
    f = lambda x: float(r_v @ softmax(x))
    assert finite_difference_gradcheck(f, p * (r_v - p @ r_v), v, 1e-5, 1e-6).passed

    # concat: L = r . [v; u]
    u = rng.normal(size=2)
    r_c = rng.normal(size=8)
    f = lambda x: float(r_c @ concat(x, u))
    assert finite_difference_gradcheck(f, r_c[:6], v, 1e-5, 1e-6).passed

    # sigmoid: L = r . sigmoid(v)
    s = sigmoid(v)
    f = lambda x: float(r_v @ sigmoid(x))
    assert finite_difference_gradcheck(f, r_v * s * (1 - s), v, 1e-5, 1e-6).passed
