import numpy as np
import pytest

from adapool.tensor import (ShapeError, finite_diff_grad, inner_product,
                            max_relative_error, relative_error)


def test_inner_product_examples():
    assert inner_product([1, 2, 3], [1, 2, 3]) == 14
    assert inner_product(np.random.default_rng(0).normal(size=5), np.zeros(5)) == 0
    assert inner_product([0.5, -1.5], [2, 4]) == -5.0


def test_inner_product_shape_mismatch():
    with pytest.raises(ShapeError):
        inner_product([1, 2], [1, 2, 3])
    with pytest.raises(ShapeError):
        inner_product(np.ones((2, 3)), np.ones(6))


def test_finite_diff_quadratic():
    g = finite_diff_grad(lambda x: float(np.sum(x ** 2)), np.array([1.0, -2.0]), 1e-5)
    np.testing.assert_allclose(g, [2.0, -4.0], atol=1e-6)


def test_finite_diff_constant_is_zero():
    g = finite_diff_grad(lambda x: 3.0, np.ones((2, 3)), 1e-5)
    assert g.shape == (2, 3)
    assert np.all(g == 0)


def test_finite_diff_leaves_input_untouched():
    x = np.array([0.3, 0.7])
    finite_diff_grad(lambda z: float(z @ z), x)
    assert x.tolist() == [0.3, 0.7]


def test_finite_diff_non_finite():
    with pytest.raises(FloatingPointError):
        with np.errstate(invalid="ignore", divide="ignore"):
            finite_diff_grad(lambda x: np.log(x[0]), np.array([0.0]), 1e-5)
    with pytest.raises(ValueError):
        finite_diff_grad(lambda x: 0.0, np.ones(2), 0.0)


def test_relative_error_floor():
    assert relative_error(0.0, 0.0) == 0.0
    assert relative_error(1e-10, 0.0) == pytest.approx(1e-2)
    assert max_relative_error([1.0, 2.0], [1.0, 2.0]) == 0.0
