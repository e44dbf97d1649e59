"""Projected SGD training, initialization regimes and pooling swaps."""

import csv
import logging
from dataclasses import dataclass, asdict, fields

import numpy as np

from . import layers as L
from .checkpoint import Checkpoint
from .network import Network, NetworkSpec, SpecError

log = logging.getLogger(__name__)

POOLING_MODES = ("mean", "max", "adaptive-random", "adaptive-mean-init")
_MODE_KIND = {
    "mean": "mean-pool",
    "max": "max-pool",
    "adaptive-random": "adaptive-pool",
    "adaptive-mean-init": "adaptive-pool",
}


class TrainingDivergedError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainingConfig:
    """Optimizer and run settings.

    The learning rate is ``learning_rate`` for epochs ``1..decay_epoch`` and
    ``learning_rate * lr_decay`` afterwards; ``decay_epoch=None`` disables
    the drop. ``seed`` fixes initialization, shuffling and dropout masks.
    """

    learning_rate: float = 0.01
    lr_decay: float = 0.1
    decay_epoch: int = 10
    batch_size: int = 32
    epochs: int = 20
    dropout: float = 0.5
    seed: int = 0
    pooling: str = "adaptive-random"
    pool_lr_scale: float = 1.0

    def __post_init__(self):
        if self.learning_rate < 0 or self.lr_decay <= 0 or self.pool_lr_scale < 0:
            raise ValueError("learning rates must be >= 0 and decay factor > 0")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.pooling not in POOLING_MODES:
            raise ValueError(f"pooling must be one of {POOLING_MODES}, got {self.pooling!r}")
        if self.decay_epoch is not None and self.decay_epoch < 0:
            raise ValueError("decay_epoch must be >= 0 or None")

    def lr_at(self, epoch):
        if self.decay_epoch is not None and epoch > self.decay_epoch:
            return self.learning_rate * self.lr_decay
        return self.learning_rate

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass
class MetricRow:
    epoch: int
    split: str
    loss: float
    accuracy: float


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    metrics: list
    network: Network


def configure_spec(spec, config):
    """Apply the config's pooling mode and dropout rate to a spec."""
    return spec.with_pooling(_MODE_KIND[config.pooling]).with_dropout(config.dropout)


def init_network(spec, config=None, seed=None, rng=None):
    """Build and initialize a network.

    Conv and fc weights are drawn from ``U(-s, s)`` with ``s = 1/sqrt(fan_in)``
    and biases start at zero. Adaptive pooling matrices are either drawn from
    ``U(0, 1)`` and l1-projected (``adaptive-random``) or set to the mean
    pooling matrix (``adaptive-mean-init``).
    """
    config = config or TrainingConfig()
    if rng is None:
        rng = np.random.default_rng(config.seed if seed is None else seed)
    net = Network(configure_spec(spec, config))
    for layer in net.layers:
        if isinstance(layer, (L.Conv2D, L.Dense)):
            s = 1.0 / np.sqrt(layer.fan_in)
            layer.params["weight"] = rng.uniform(-s, s, size=layer.params["weight"].shape)
            layer.params["bias"] = np.zeros_like(layer.params["bias"])
        elif isinstance(layer, L.AdaptivePool):
            if config.pooling == "adaptive-random":
                layer.params["pool"] = L.l1_project(rng.random(layer.params["pool"].shape))
            else:
                layer.params["pool"] = L.mean_pool_as_matrix(layer.map_shape, layer.p).weights
    return net


def network_from_checkpoint(ckpt):
    net = Network(ckpt.spec)
    net.load_state_dict(ckpt.params)
    return net


def make_checkpoint(net, epoch=0, step=0, config=None, rng=None, learning_rate=None):
    return Checkpoint(
        spec=net.spec,
        params={name: layer.params[key].copy() for name, layer, key in net.named_parameters()},
        epoch=epoch,
        step=step,
        config=None if config is None else config.to_dict(),
        rng_state=None if rng is None else rng.bit_generator.state,
        optimizer={} if learning_rate is None else {"learning_rate": learning_rate},
    )


def as_arrays(data, spec):
    """``(X, y)`` from a dataset object or tuple, with a channel axis added."""
    if isinstance(data, tuple):
        X, y = data
    else:
        X, y = data.images, data.labels
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim == 3:
        X = X[:, None]
    if X.shape[1:] != spec.input_shape:
        raise SpecError(f"data shape {X.shape[1:]} does not match network input {spec.input_shape}")
    if len(X) != len(y) or len(X) == 0:
        raise ValueError("dataset must be non-empty with one label per image")
    if y.min() < 0 or y.max() >= spec.n_classes:
        raise ValueError(f"labels must lie in [0, {spec.n_classes})")
    return X, y


def evaluate(net, data, batch_size=500):
    """Mean loss and accuracy in evaluation mode (dropout off)."""
    X, y = as_arrays(data, net.spec)
    total, correct = 0.0, 0
    for start in range(0, len(X), batch_size):
        logits = net.forward(X[start:start + batch_size])
        loss, _ = L.softmax_loss(logits, y[start:start + batch_size])
        total += loss * len(logits)
        correct += int(np.sum(logits.argmax(axis=1) == y[start:start + batch_size]))
    return total / len(X), correct / len(X)


def predict_logits(net, X, batch_size=500):
    return np.concatenate([net.forward(X[s:s + batch_size]) for s in range(0, len(X), batch_size)])


def _diagnose(net, X, epoch, step):
    trace = []
    net.forward(X, trace=trace)
    for i, out in enumerate(trace):
        if not np.all(np.isfinite(out)):
            return (f"non-finite loss at epoch {epoch}, step {step}: first non-finite output "
                    f"at layer {i} ({net.layers[i].kind})")
    return f"non-finite loss at epoch {epoch}, step {step}: in softmax-loss"


def train(spec, config, train_data, test_data=None, init=None, on_epoch=None):
    """Train with projected SGD and return a ``TrainResult``.

    Each step runs forward and backward on a minibatch, applies a plain SGD
    update to every parameter and then l1-projects the columns of every
    adaptive pooling matrix. If ``init`` is a checkpoint, training resumes
    from its parameters, epoch counter and RNG state and runs
    ``config.epochs`` further epochs. ``on_epoch(epoch, network)`` is called
    after every epoch, including epoch 0 for fresh runs.
    """
    rng = np.random.default_rng(config.seed)
    if init is None:
        net = init_network(spec, config, rng=rng)
        start_epoch, step = 0, 0
    else:
        net = network_from_checkpoint(init)
        if init.rng_state is not None:
            rng.bit_generator.state = init.rng_state
        start_epoch, step = init.epoch, init.step
    X, y = as_arrays(train_data, net.spec)
    test = as_arrays(test_data, net.spec) if test_data is not None else None

    metrics = []

    def record(epoch):
        loss, acc = evaluate(net, (X, y))
        metrics.append(MetricRow(epoch, "train", loss, acc))
        if test is not None:
            tloss, tacc = evaluate(net, test)
            metrics.append(MetricRow(epoch, "test", tloss, tacc))
        log.info("epoch %d: %s", epoch, ", ".join(
            f"{m.split} loss={m.loss:.4f} acc={m.accuracy:.4f}" for m in metrics if m.epoch == epoch))
        if on_epoch is not None:
            on_epoch(epoch, net)

    if init is None:
        record(0)
    lr = config.lr_at(start_epoch)
    params = list(net.named_parameters())
    adaptive = [l for _, l in net.adaptive_layers()]
    for epoch in range(start_epoch + 1, start_epoch + config.epochs + 1):
        lr = config.lr_at(epoch)
        order = rng.permutation(len(X))
        for start in range(0, len(X), config.batch_size):
            idx = order[start:start + config.batch_size]
            step += 1
            # non-finite values are reported below with the offending layer
            with np.errstate(over="ignore", invalid="ignore"):
                loss, _ = net.loss_and_grad(X[idx], y[idx], training=True, rng=rng)
                if not np.isfinite(loss):
                    raise TrainingDivergedError(_diagnose(net, X[idx], epoch, step))
            for _, layer, key in params:
                rate = lr * config.pool_lr_scale if key == "pool" else lr
                layer.params[key] = layer.params[key] - rate * layer.grads[key]
            for layer in adaptive:
                layer.project()
        record(epoch)
    ckpt = make_checkpoint(net, start_epoch + config.epochs, step, config, rng, lr)
    return TrainResult(ckpt, metrics, net)


def swap_pooling(ckpt, mode="adaptive-mean-init", seed=0):
    """Replace fixed mean/max pooling layers with adaptive pooling.

    The new pooling matrices are the mean pooling matrices
    (``adaptive-mean-init``) or random projected ones (``adaptive-random``,
    drawn with ``seed``). All other parameters and counters are kept.
    """
    if mode not in ("adaptive-mean-init", "adaptive-random"):
        raise ValueError(f"swap mode must be adaptive-mean-init or adaptive-random, got {mode!r}")
    fixed = ckpt.spec.pool_indices(("mean-pool", "max-pool"))
    if not fixed:
        raise SpecError("checkpoint has no fixed pooling layer to swap")
    new_layers = list(ckpt.spec.layers)
    for i in fixed:
        new_layers[i] = L.LayerSpec("adaptive-pool", pool=new_layers[i].pool)
    spec = NetworkSpec(ckpt.spec.input_shape, new_layers, ckpt.spec.n_classes)
    net = Network(spec)
    rng = np.random.default_rng(seed)
    state = {}
    for name, layer, key in net.named_parameters():
        if name in ckpt.params:
            state[name] = ckpt.params[name].copy()
        elif mode == "adaptive-random":
            state[name] = L.l1_project(rng.random(layer.params[key].shape))
        else:
            state[name] = L.mean_pool_as_matrix(layer.map_shape, layer.p).weights
    config = dict(ckpt.config) if ckpt.config else TrainingConfig().to_dict()
    config["pooling"] = mode
    return Checkpoint(spec, state, ckpt.epoch, ckpt.step, config, ckpt.rng_state,
                      dict(ckpt.optimizer))


def write_metrics_csv(rows, path):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["epoch", "split", "loss", "accuracy"])
        for r in rows:
            w.writerow([r.epoch, r.split, repr(float(r.loss)), repr(float(r.accuracy))])


def read_metrics_csv(path):
    with open(path, newline="") as f:
        return [MetricRow(int(r["epoch"]), r["split"], float(r["loss"]), float(r["accuracy"]))
                for r in csv.DictReader(f)]
