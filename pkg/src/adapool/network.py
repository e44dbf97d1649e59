"""Network specifications, presets and the layer stack."""

from dataclasses import dataclass, replace

import numpy as np

from . import layers as L
from .layers import LayerSpec


class SpecError(ValueError):
    """A network specification is inconsistent."""


@dataclass(frozen=True)
class NetworkSpec:
    """Ordered layer list for inputs of shape ``(C, H, W)``.

    The final layer must be the single ``softmax-loss`` layer and the layer
    before it must produce ``n_classes`` outputs.
    """

    input_shape: tuple
    layers: tuple
    n_classes: int

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(s) for s in self.input_shape))
        object.__setattr__(self, "layers", tuple(self.layers))
        self.shapes()

    def shapes(self):
        """Output shape of every non-loss layer, validating composition."""
        if len(self.input_shape) != 3 or min(self.input_shape) < 1:
            raise SpecError(f"input shape must be (C, H, W), got {self.input_shape}")
        kinds = [ls.kind for ls in self.layers]
        if kinds.count("softmax-loss") != 1 or kinds[-1] != "softmax-loss":
            raise SpecError("exactly one softmax-loss layer is required, in last position")
        shape = self.input_shape
        out = []
        for i, ls in enumerate(self.layers[:-1]):
            try:
                shape = _output_shape(ls, shape)
            except (SpecError, L.ShapeError, ValueError) as exc:
                raise SpecError(f"layer {i} ({ls.kind}): {exc}") from None
            out.append(shape)
        if out and out[-1] != (self.n_classes,):
            raise SpecError(f"final layer outputs {out[-1]}, expected ({self.n_classes},)")
        if not out:
            raise SpecError("network has no layers before the loss")
        return out

    def with_pooling(self, kind):
        """Copy with every pooling layer switched to ``kind``."""
        if kind not in L.POOL_KINDS:
            raise SpecError(f"unknown pooling kind {kind!r}")
        layers = [replace(ls, kind=kind) if ls.kind in L.POOL_KINDS else ls for ls in self.layers]
        return NetworkSpec(self.input_shape, layers, self.n_classes)

    def with_dropout(self, rate):
        layers = [replace(ls, rate=rate) if ls.kind == "dropout" else ls for ls in self.layers]
        return NetworkSpec(self.input_shape, layers, self.n_classes)

    def pool_indices(self, kinds=L.POOL_KINDS):
        return [i for i, ls in enumerate(self.layers) if ls.kind in kinds]

    def to_dict(self):
        return {
            "input_shape": list(self.input_shape),
            "layers": [ls.to_dict() for ls in self.layers],
            "n_classes": self.n_classes,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["input_shape"]), [LayerSpec.from_dict(x) for x in d["layers"]],
                   int(d["n_classes"]))


def _output_shape(ls, shape):
    k = ls.kind
    if k == "conv":
        if len(shape) != 3:
            raise SpecError("conv needs a (C, H, W) input")
        C, H, W = shape
        if ls.size is None or ls.filters is None or ls.size < 1 or ls.filters < 1:
            raise SpecError("conv needs positive filters and size")
        if ls.size > H or ls.size > W:
            raise SpecError(f"filter size {ls.size} exceeds map {H}x{W}")
        return (ls.filters, H - ls.size + 1, W - ls.size + 1)
    if k in L.POOL_KINDS:
        if len(shape) != 3:
            raise SpecError("pooling needs a (C, H, W) input")
        C, H, W = shape
        p = ls.pool
        if p is None or p < 1 or H % p or W % p:
            raise SpecError(f"map {H}x{W} not divisible by pool size {p}")
        return (C, H // p, W // p)
    if k == "fc":
        if ls.units is None or ls.units < 1:
            raise SpecError("fc needs positive units")
        return (ls.units,)
    if k == "nonlinearity":
        if (ls.activation or "relu") not in L.NONLINEARITIES:
            raise SpecError(f"unknown nonlinearity {ls.activation!r}")
        return shape
    if k == "dropout":
        if ls.rate is None or not 0.0 <= ls.rate < 1.0:
            raise SpecError(f"dropout rate must be in [0, 1), got {ls.rate}")
        return shape
    raise SpecError(f"{k} may only appear last")


def preset(name, pooling="mean-pool", n_classes=10, input_shape=None, dropout=0.5):
    """Named architectures.

    ``svhn``        two conv layers of 64 5x5 filters, each followed by a
                    nonlinearity and 2x2 pooling, then fc 128 and fc classes
                    (32x32 inputs flatten to 1600 features before the fc stack).
    ``svhn-small``  the same topology with 8 filters per conv layer, fc 64,
                    for 28x28 single-channel inputs.
    ``toy``         one 3x3 conv layer with 4 filters, 2x2 pooling and a
                    single fc layer, for 8x8 inputs.
    """
    if name == "svhn":
        shape = input_shape or (3, 32, 32)
        body = [L.conv(64, 5), L.nonlin(), L.pool(pooling), L.conv(64, 5), L.nonlin(),
                L.pool(pooling), L.fc(128), L.nonlin(), L.dropout(dropout)]
    elif name == "svhn-small":
        shape = input_shape or (1, 28, 28)
        body = [L.conv(8, 5), L.nonlin(), L.pool(pooling), L.conv(8, 5), L.nonlin(),
                L.pool(pooling), L.fc(64), L.nonlin(), L.dropout(dropout)]
    elif name == "toy":
        shape = input_shape or (1, 8, 8)
        body = [L.conv(4, 3), L.nonlin(), L.pool(pooling)]
    else:
        raise SpecError(f"unknown preset {name!r}")
    return NetworkSpec(shape, body + [L.fc(n_classes), L.softmax_loss_layer()], n_classes)


PRESETS = ("svhn", "svhn-small", "toy")


class Network:
    """Layer stack built from a ``NetworkSpec``; parameters start at zero.

    Parameter names are ``"<layer index>.<param>"``, e.g. ``"0.weight"`` or
    ``"2.pool"``, and are ordered by layer.
    """

    def __init__(self, spec):
        self.spec = spec
        self.layers = []
        shape = spec.input_shape
        for ls, out_shape in zip(spec.layers[:-1], spec.shapes()):
            self.layers.append(_build(ls, shape))
            shape = out_shape

    def named_parameters(self):
        for i, layer in enumerate(self.layers):
            for key in layer.params:
                yield f"{i}.{key}", layer, key

    def state_dict(self):
        return {name: layer.params[key] for name, layer, key in self.named_parameters()}

    def load_state_dict(self, state):
        names = [n for n, _, _ in self.named_parameters()]
        if sorted(names) != sorted(state):
            raise SpecError(f"parameter names {sorted(state)} do not match network {sorted(names)}")
        for name, layer, key in self.named_parameters():
            value = np.array(state[name], dtype=np.float64)
            if value.shape != layer.params[key].shape:
                raise SpecError(f"parameter {name}: shape {value.shape} vs {layer.params[key].shape}")
            layer.params[key] = value

    def adaptive_layers(self):
        return [(i, l) for i, l in enumerate(self.layers) if isinstance(l, L.AdaptivePool)]

    def pooling_matrices(self):
        return {i: l.pooling_matrix for i, l in self.adaptive_layers()}

    def forward(self, x, training=False, rng=None, trace=None):
        """Logits for a batch ``(B, C, H, W)``.

        If ``trace`` is a list, each layer's output is appended to it.
        """
        x = np.asarray(x, dtype=np.float64)
        if x.shape[1:] != self.spec.input_shape:
            raise L.ShapeError(f"input batch shape {x.shape[1:]} vs network {self.spec.input_shape}")
        for layer in self.layers:
            x = layer.forward(x, training=training, rng=rng)
            if trace is not None:
                trace.append(x)
        return x

    def backward(self, grad_logits):
        g = grad_logits
        for layer in reversed(self.layers):
            g = layer.backward(g)
        return g

    def loss_and_grad(self, x, y, training=False, rng=None):
        """Forward, loss, and backward. Gradients land in each layer's ``grads``."""
        logits = self.forward(x, training=training, rng=rng)
        loss, g = L.softmax_loss(logits, y)
        self.backward(g)
        return loss, logits


def _build(ls, in_shape):
    k = ls.kind
    if k == "conv":
        return L.Conv2D(in_shape[0], ls.filters, ls.size)
    if k == "nonlinearity":
        return L.Nonlinearity(ls.activation or "relu")
    if k == "fc":
        return L.Dense(int(np.prod(in_shape)), ls.units)
    if k == "dropout":
        return L.Dropout(ls.rate)
    if k == "mean-pool":
        return L.MeanPool(ls.pool)
    if k == "max-pool":
        return L.MaxPool(ls.pool)
    if k == "adaptive-pool":
        return L.AdaptivePool(in_shape[1:], ls.pool)
    raise SpecError(f"cannot build layer kind {k!r}")
