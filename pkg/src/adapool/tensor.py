"""Dense tensor helpers and the finite-difference gradient oracle.

Tensors throughout the package are plain ``numpy.ndarray`` objects with
``dtype=float64`` in C (row-major) order. Any code that addresses a tensor by
flat index relies on that layout.
"""

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


def as_tensor(x):
    """Return ``x`` as a C-contiguous float64 array (no copy when possible)."""
    return np.ascontiguousarray(x, dtype=np.float64)


def inner_product(a, b):
    """Sum of elementwise products of two equally shaped tensors."""
    a = as_tensor(a)
    b = as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.dot(a.ravel(), b.ravel()))


def finite_diff_grad(f, x, eps=1e-5):
    """Central-difference gradient of a scalar function ``f`` at ``x``.

    Each coordinate is perturbed in turn by ``+eps`` and ``-eps``; ``x`` is
    left unmodified on return. A non-finite function value raises
    ``FloatingPointError`` naming the offending coordinate.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        f_plus = float(f(x))
        flat[i] = orig - eps
        f_minus = float(f(x))
        flat[i] = orig
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise FloatingPointError(f"non-finite function value at coordinate {i}")
        gflat[i] = (f_plus - f_minus) / (2.0 * eps)
    return grad


def relative_error(a, b):
    """Elementwise ``|a-b| / max(1e-8, |a|+|b|)``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(1e-8, np.abs(a) + np.abs(b))


def max_relative_error(a, b):
    return float(np.max(relative_error(a, b))) if np.size(a) else 0.0
