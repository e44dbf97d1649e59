"""Forward and backward passes for the network's layer kinds.

Two levels are provided. Module-level functions (``conv2d_forward``,
``adaptive_pool_backward``, ...) are pure and operate on numpy arrays; the
``Layer`` subclasses wrap them, own their parameters and cache what the
backward pass needs.

Image batches are laid out as ``(batch, channels, height, width)``.
"""

from dataclasses import dataclass, asdict

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import ShapeError, as_tensor

# Columns whose l1 norm is already this close to one are left bit-for-bit
# untouched, which makes the projection idempotent.
_UNIT_TOL = 1e-11
_DEGENERATE_TOL = 1e-12


# --------------------------------------------------------------------------
# pooling matrix

@dataclass
class PoolingMatrix:
    """Adaptive pooling matrix ``A`` of shape ``(m, n)``.

    Column ``i`` is the pooling weight of element ``i``; it is applied to a
    flattened input map of length ``m``. ``map_shape`` records the 2-D shape
    of that input map and ``out_shape`` the 2-D arrangement of the ``n``
    outputs, when known.
    """

    weights: np.ndarray
    map_shape: tuple = None
    out_shape: tuple = None

    def __post_init__(self):
        self.weights = as_tensor(self.weights)
        if self.weights.ndim != 2 or min(self.weights.shape) < 1:
            raise ShapeError(f"pooling matrix must be 2-D and non-empty, got {self.weights.shape}")
        if self.map_shape is not None:
            self.map_shape = tuple(int(s) for s in self.map_shape)
            if int(np.prod(self.map_shape)) != self.m:
                raise ShapeError(f"map shape {self.map_shape} does not match m={self.m}")
        if self.out_shape is not None:
            self.out_shape = tuple(int(s) for s in self.out_shape)
            if int(np.prod(self.out_shape)) != self.n:
                raise ShapeError(f"output shape {self.out_shape} does not match n={self.n}")

    @property
    def m(self):
        return self.weights.shape[0]

    @property
    def n(self):
        return self.weights.shape[1]

    def column(self, i):
        return self.weights[:, i]

    def column_map(self, i):
        """Pooling weight ``i`` reshaped to the input map's 2-D shape."""
        if self.map_shape is None:
            raise ValueError("pooling matrix has no map shape")
        return self.weights[:, i].reshape(self.map_shape)

    def copy(self):
        return PoolingMatrix(self.weights.copy(), self.map_shape, self.out_shape)


def _weights(A):
    return A.weights if isinstance(A, PoolingMatrix) else as_tensor(A)


def adaptive_pool_forward(A, u):
    """``v = A^T u`` applied along the last axis of ``u``."""
    W = _weights(A)
    u = as_tensor(u)
    if u.shape[-1] != W.shape[0]:
        raise ShapeError(f"input length {u.shape[-1]} does not match m={W.shape[0]}")
    return u @ W


def adaptive_pool_backward(A, u, grad_v):
    """Gradients of the loss w.r.t. the pooling matrix and the input.

    For a single sample ``grad_A`` is the outer product ``u grad_v^T`` and
    ``grad_u = A grad_v``. Leading batch axes of ``u``/``grad_v`` are summed
    into ``grad_A``.
    """
    W = _weights(A)
    u = as_tensor(u)
    grad_v = as_tensor(grad_v)
    if u.shape[-1] != W.shape[0] or grad_v.shape[-1] != W.shape[1]:
        raise ShapeError(
            f"shapes u{u.shape}, grad_v{grad_v.shape} incompatible with A{W.shape}")
    if u.shape[:-1] != grad_v.shape[:-1]:
        raise ShapeError("u and grad_v batch shapes differ")
    u2 = u.reshape(-1, W.shape[0])
    g2 = grad_v.reshape(-1, W.shape[1])
    grad_A = u2.T @ g2
    grad_u = grad_v @ W.T
    return grad_A, grad_u


def l1_project(A):
    """Rescale every column to unit l1 norm.

    Columns with norm below 1e-12 are reset to the uniform column ``1/m``.
    Accepts and returns either a ``PoolingMatrix`` or a plain array.
    """
    W = _weights(A)
    out = W.copy()
    norms = np.abs(W).sum(axis=0)
    degenerate = norms < _DEGENERATE_TOL
    rescale = ~degenerate & (np.abs(norms - 1.0) > _UNIT_TOL)
    out[:, rescale] = W[:, rescale] / norms[rescale]
    out[:, degenerate] = 1.0 / W.shape[0]
    if isinstance(A, PoolingMatrix):
        return PoolingMatrix(out, A.map_shape, A.out_shape)
    return out


def _check_divisible(shape, p):
    if p < 1:
        raise ShapeError(f"pool size must be positive, got {p}")
    if any(s % p for s in shape):
        raise ShapeError(f"map extents {tuple(shape)} not divisible by pool size {p}")


def mean_pool_as_matrix(map_shape, p):
    """Mean pooling over non-overlapping ``p x p`` blocks as a ``PoolingMatrix``.

    Columns are ordered by block in row-major order, matching the output
    layout of ``mean_pool_forward``.
    """
    H, W = (int(s) for s in map_shape)
    _check_divisible((H, W), p)
    oh, ow = H // p, W // p
    A = np.zeros((H * W, oh * ow))
    w = 1.0 / (p * p)
    for bi in range(oh):
        for bj in range(ow):
            col = bi * ow + bj
            for di in range(p):
                row0 = (bi * p + di) * W + bj * p
                A[row0:row0 + p, col] = w
    return PoolingMatrix(A, (H, W), (oh, ow))


# --------------------------------------------------------------------------
# fixed-grid pooling

def _blocks(x, p):
    *lead, H, W = x.shape
    _check_divisible((H, W), p)
    return x.reshape(*lead, H // p, p, W // p, p)


def mean_pool_forward(x, p):
    x = as_tensor(x)
    return _blocks(x, p).mean(axis=(-3, -1))


def mean_pool_backward(grad_out, p):
    g = as_tensor(grad_out) / (p * p)
    return np.repeat(np.repeat(g, p, axis=-2), p, axis=-1)


def max_pool_forward(x, p):
    """Blockwise maximum. Returns ``(out, argmax)``.

    ``argmax`` holds the row-major position inside each block of the first
    maximal entry, which is where the backward pass routes the gradient.
    """
    x = as_tensor(x)
    b = _blocks(x, p)
    nd = b.ndim
    # (..., oh, p, ow, p) -> (..., oh, ow, p*p)
    order = list(range(nd - 4)) + [nd - 4, nd - 2, nd - 3, nd - 1]
    flat = b.transpose(order).reshape(*b.shape[:-4], b.shape[-4], b.shape[-2], p * p)
    idx = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
    return out, idx


def max_pool_backward(grad_out, argmax, p):
    g = as_tensor(grad_out)
    *lead, oh, ow = g.shape
    flat = np.zeros((*lead, oh, ow, p * p))
    np.put_along_axis(flat, argmax[..., None], g[..., None], axis=-1)
    nl = len(lead)
    blocks = flat.reshape(*lead, oh, ow, p, p)
    order = list(range(nl)) + [nl, nl + 2, nl + 1, nl + 3]
    return blocks.transpose(order).reshape(*lead, oh * p, ow * p)


# --------------------------------------------------------------------------
# convolution

def _batched(x):
    x = as_tensor(x)
    if x.ndim == 3:
        return x[None], True
    if x.ndim != 4:
        raise ShapeError(f"expected (C,H,W) or (B,C,H,W) input, got {x.shape}")
    return x, False


def _im2col(x, k):
    # (B,C,H,W) -> (B*Ho*Wo, C*k*k)
    B, C, H, W = x.shape
    win = sliding_window_view(x, (k, k), axis=(2, 3))  # B,C,Ho,Wo,k,k
    Ho, Wo = win.shape[2], win.shape[3]
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(B * Ho * Wo, C * k * k), Ho, Wo


def conv2d_forward(x, filters, bias=None):
    """Valid (no padding), stride-1 cross-correlation.

    ``filters`` has shape ``(F, C, k, k)``. Output channel ``f`` at ``(i, j)``
    is the inner product of filter ``f`` with the input patch at ``(i, j)``.
    """
    x, single = _batched(x)
    w = as_tensor(filters)
    F, C, k, k2 = w.shape
    if k != k2:
        raise ShapeError("filters must be square")
    if x.shape[1] != C:
        raise ShapeError(f"input has {x.shape[1]} channels, filters expect {C}")
    if k > x.shape[2] or k > x.shape[3]:
        raise ShapeError(f"filter extent {k} exceeds input extent {x.shape[2:]}")
    cols, Ho, Wo = _im2col(x, k)
    out = cols @ w.reshape(F, -1).T
    if bias is not None:
        out += bias
    out = out.reshape(x.shape[0], Ho, Wo, F).transpose(0, 3, 1, 2)
    out = np.ascontiguousarray(out)
    return out[0] if single else out


def conv2d_backward(x, filters, grad_out):
    """Returns ``(grad_x, grad_filters, grad_bias)``."""
    x, single = _batched(x)
    w = as_tensor(filters)
    g = as_tensor(grad_out)
    if single:
        g = g[None]
    F, C, k, _ = w.shape
    B, _, H, W = x.shape
    cols, Ho, Wo = _im2col(x, k)
    g2 = g.transpose(0, 2, 3, 1).reshape(-1, F)
    grad_w = (g2.T @ cols).reshape(w.shape)
    grad_b = g2.sum(axis=0)
    gcols = (g2 @ w.reshape(F, -1)).reshape(B, Ho, Wo, C, k, k)
    grad_x = np.zeros_like(x)
    for di in range(k):
        for dj in range(k):
            grad_x[:, :, di:di + Ho, dj:dj + Wo] += gcols[:, :, :, :, di, dj].transpose(0, 3, 1, 2)
    return (grad_x[0] if single else grad_x), grad_w, grad_b


# --------------------------------------------------------------------------
# dense, nonlinearity, dropout, loss

def fc_forward(x, weight, bias):
    x = as_tensor(x)
    return x.reshape(x.shape[0], -1) @ weight + bias


def fc_backward(x, weight, grad_out):
    """Returns ``(grad_x, grad_weight, grad_bias)``; ``grad_x`` has ``x``'s shape."""
    x = as_tensor(x)
    x2 = x.reshape(x.shape[0], -1)
    grad_w = x2.T @ grad_out
    grad_b = grad_out.sum(axis=0)
    grad_x = (grad_out @ weight.T).reshape(x.shape)
    return grad_x, grad_w, grad_b


NONLINEARITIES = ("relu", "tanh")


def nonlinearity_forward(x, kind="relu"):
    if kind == "relu":
        return np.maximum(x, 0.0)
    if kind == "tanh":
        return np.tanh(x)
    raise ValueError(f"unknown nonlinearity {kind!r}")


def nonlinearity_backward(x, grad_out, kind="relu"):
    if kind == "relu":
        return grad_out * (x > 0)
    if kind == "tanh":
        return grad_out * (1.0 - np.tanh(x) ** 2)
    raise ValueError(f"unknown nonlinearity {kind!r}")


def dropout_forward(x, rate, rng=None, training=True):
    """Inverted dropout. Returns ``(out, mask)``; ``mask`` is None at eval time."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x, None
    keep = 1.0 - rate
    mask = (rng.random(x.shape) < keep) / keep
    return x * mask, mask


def dropout_backward(grad_out, mask):
    return grad_out if mask is None else grad_out * mask


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_loss(logits, labels):
    """Mean negative log-likelihood of ``labels`` under ``softmax(logits)``.

    Accepts a single logit vector with an int label, or a batch ``(B, C)``
    with ``B`` labels. Returns ``(loss, grad_logits)``.
    """
    logits = as_tensor(logits)
    single = logits.ndim == 1
    L = logits[None] if single else logits
    y = np.atleast_1d(np.asarray(labels))
    n_classes = L.shape[1]
    if y.shape[0] != L.shape[0]:
        raise ShapeError("one label per logit row required")
    if not np.issubdtype(y.dtype, np.integer) or np.any(y < 0) or np.any(y >= n_classes):
        raise ValueError(f"labels must be integers in [0, {n_classes})")
    z = L - L.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(L.shape[0])
    loss = float(np.mean(log_norm - z[rows, y]))
    grad = softmax(L)
    grad[rows, y] -= 1.0
    grad /= L.shape[0]
    return loss, (grad[0] if single else grad)


# --------------------------------------------------------------------------
# layer specs

LAYER_KINDS = ("conv", "nonlinearity", "fc", "mean-pool", "max-pool",
               "adaptive-pool", "dropout", "softmax-loss")
POOL_KINDS = ("mean-pool", "max-pool", "adaptive-pool")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    filters: int = None
    size: int = None
    pool: int = None
    units: int = None
    rate: float = None
    activation: str = None

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")

    def to_dict(self):
        return {k: v for k, v in asdict(self).items() if v is not None}

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def conv(filters, size):
    return LayerSpec("conv", filters=filters, size=size)


def nonlin(activation="relu"):
    return LayerSpec("nonlinearity", activation=activation)


def fc(units):
    return LayerSpec("fc", units=units)


def pool(kind, p=2):
    return LayerSpec(kind, pool=p)


def dropout(rate):
    return LayerSpec("dropout", rate=rate)


def softmax_loss_layer():
    return LayerSpec("softmax-loss")


# --------------------------------------------------------------------------
# layer objects

class Layer:
    """Base class. ``params`` and ``grads`` share keys."""

    kind = None

    def __init__(self):
        self.params = {}
        self.grads = {}

    def forward(self, x, training=False, rng=None):
        raise NotImplementedError

    def backward(self, grad_out):
        raise NotImplementedError


class Conv2D(Layer):
    kind = "conv"

    def __init__(self, in_channels, filters, size):
        super().__init__()
        self.in_channels, self.filters, self.size = in_channels, filters, size
        self.params["weight"] = np.zeros((filters, in_channels, size, size))
        self.params["bias"] = np.zeros(filters)

    @property
    def fan_in(self):
        return self.in_channels * self.size * self.size

    def forward(self, x, training=False, rng=None):
        self._x = x
        return conv2d_forward(x, self.params["weight"], self.params["bias"])

    def backward(self, grad_out):
        gx, gw, gb = conv2d_backward(self._x, self.params["weight"], grad_out)
        self.grads["weight"], self.grads["bias"] = gw, gb
        return gx


class Nonlinearity(Layer):
    kind = "nonlinearity"

    def __init__(self, activation="relu"):
        super().__init__()
        if activation not in NONLINEARITIES:
            raise ValueError(f"unknown nonlinearity {activation!r}")
        self.activation = activation

    def forward(self, x, training=False, rng=None):
        self._x = x
        return nonlinearity_forward(x, self.activation)

    def backward(self, grad_out):
        return nonlinearity_backward(self._x, grad_out, self.activation)


class Dense(Layer):
    kind = "fc"

    def __init__(self, in_features, units):
        super().__init__()
        self.in_features, self.units = in_features, units
        self.params["weight"] = np.zeros((in_features, units))
        self.params["bias"] = np.zeros(units)

    @property
    def fan_in(self):
        return self.in_features

    def forward(self, x, training=False, rng=None):
        self._x = x
        return fc_forward(x, self.params["weight"], self.params["bias"])

    def backward(self, grad_out):
        gx, gw, gb = fc_backward(self._x, self.params["weight"], grad_out)
        self.grads["weight"], self.grads["bias"] = gw, gb
        return gx


class Dropout(Layer):
    kind = "dropout"

    def __init__(self, rate):
        super().__init__()
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate

    def forward(self, x, training=False, rng=None):
        out, self._mask = dropout_forward(x, self.rate, rng, training)
        return out

    def backward(self, grad_out):
        return dropout_backward(grad_out, self._mask)


class MeanPool(Layer):
    kind = "mean-pool"

    def __init__(self, p):
        super().__init__()
        self.p = p

    def forward(self, x, training=False, rng=None):
        return mean_pool_forward(x, self.p)

    def backward(self, grad_out):
        return mean_pool_backward(grad_out, self.p)


class MaxPool(Layer):
    kind = "max-pool"

    def __init__(self, p):
        super().__init__()
        self.p = p

    def forward(self, x, training=False, rng=None):
        out, self._argmax = max_pool_forward(x, self.p)
        return out

    def backward(self, grad_out):
        return max_pool_backward(grad_out, self._argmax, self.p)


class AdaptivePool(Layer):
    """Learned linear pooling shared across channels.

    Each channel's ``H x W`` response map is flattened and multiplied by the
    ``(H*W, n)`` pooling matrix; the ``n = (H/p)*(W/p)`` outputs are laid
    out on an ``(H/p, W/p)`` grid for the next layer.
    """

    kind = "adaptive-pool"

    def __init__(self, map_shape, p):
        super().__init__()
        _check_divisible(map_shape, p)
        self.map_shape = tuple(map_shape)
        self.p = p
        self.out_shape = (map_shape[0] // p, map_shape[1] // p)
        self.params["pool"] = mean_pool_as_matrix(map_shape, p).weights

    @property
    def pooling_matrix(self):
        return PoolingMatrix(self.params["pool"], self.map_shape, self.out_shape)

    def forward(self, x, training=False, rng=None):
        self._x_shape = x.shape
        self._u = x.reshape(*x.shape[:-2], -1)
        v = adaptive_pool_forward(self.params["pool"], self._u)
        return v.reshape(*x.shape[:-2], *self.out_shape)

    def backward(self, grad_out):
        gv = grad_out.reshape(*grad_out.shape[:-2], -1)
        gA, gu = adaptive_pool_backward(self.params["pool"], self._u, gv)
        self.grads["pool"] = gA
        return gu.reshape(self._x_shape)

    def project(self):
        self.params["pool"] = l1_project(self.params["pool"])
