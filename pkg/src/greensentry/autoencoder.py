"""Fully connected autoencoder in plain numpy.

All parameters of a network live in one contiguous float64 vector; the
per-layer weight matrices ``(fan_out, fan_in)`` and bias vectors are views
into it. That keeps optimizer updates to a handful of vector operations
per step, which dominates run time at batch size 8.
"""
from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field
from typing import NamedTuple, Optional

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .errors import DataError, NumericalError
from .preprocess import split

HIDDEN_ACTIVATIONS = ("relu", "tanh")
OUTPUT_ACTIVATIONS = ("sigmoid", "linear")
OPTIMIZERS = ("sgd", "adam")


@dataclass(frozen=True)
class ModelConfig:
    """Layer widths and activations.

    The default is the funnel 5-256-128-64-32-64-128-256-5: three encoding
    layers halving from ``node_size``, a bottleneck of ``node_size // 8``,
    and a mirrored decoder.
    """

    input_dim: int = 5
    encoder_widths: tuple = (256, 128, 64)
    bottleneck_width: int = 32
    decoder_widths: tuple = (64, 128, 256)
    hidden_activation: str = "relu"
    output_activation: str = "sigmoid"

    def __post_init__(self):
        object.__setattr__(self, "encoder_widths", tuple(int(w) for w in self.encoder_widths))
        object.__setattr__(self, "decoder_widths", tuple(int(w) for w in self.decoder_widths))
        if min(self.layer_sizes) < 1:
            raise DataError(f"all layer widths must be >= 1, got {self.layer_sizes}")
        if self.hidden_activation not in HIDDEN_ACTIVATIONS:
            raise DataError(f"unknown hidden activation {self.hidden_activation!r}")
        if self.output_activation not in OUTPUT_ACTIVATIONS:
            raise DataError(f"unknown output activation {self.output_activation!r}")

    @classmethod
    def from_node_size(cls, node_size: int = 256, input_dim: int = 5, **kw) -> "ModelConfig":
        enc = (node_size, node_size // 2, node_size // 4)
        return cls(input_dim, enc, node_size // 8, enc[::-1], **kw)

    @property
    def layer_sizes(self) -> tuple:
        return ((self.input_dim,) + self.encoder_widths + (self.bottleneck_width,)
                + self.decoder_widths + (self.input_dim,))

    @property
    def n_layers(self) -> int:
        return len(self.layer_sizes) - 1

    @property
    def n_parameters(self) -> int:
        s = self.layer_sizes
        return sum(s[i + 1] * s[i] + s[i + 1] for i in range(len(s) - 1))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["encoder_widths"] = list(self.encoder_widths)
        d["decoder_widths"] = list(self.decoder_widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 60
    batch_size: int = 8
    learning_rate: float = 1e-6
    optimizer: str = "adam"
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        if self.epochs < 1:
            raise DataError("epochs must be >= 1")
        if self.batch_size < 1:
            raise DataError("batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise DataError("learning_rate must be > 0")
        if self.optimizer not in OPTIMIZERS:
            raise DataError(f"unknown optimizer {self.optimizer!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


def _layout(sizes):
    slices, offset = [], 0
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        w = (offset, offset + fan_out * fan_in, (fan_out, fan_in))
        offset += fan_out * fan_in
        b = (offset, offset + fan_out)
        offset += fan_out
        slices.append((w, b))
    return slices, offset


class Parameters:
    """Weights and biases of one network, backed by a single flat vector."""

    def __init__(self, config: ModelConfig, flat: Optional[np.ndarray] = None):
        self.config = config
        slices, size = _layout(config.layer_sizes)
        if flat is None:
            flat = np.zeros(size)
        flat = np.ascontiguousarray(flat, dtype=np.float64)
        if flat.shape != (size,):
            raise DataError(f"expected {size} parameters, got {flat.shape}")
        self.flat = flat
        self.weights = [flat[a:b].reshape(shape) for (a, b, shape), _ in slices]
        self.biases = [flat[a:b] for _, (a, b) in slices]

    @classmethod
    def from_layers(cls, config: ModelConfig, weights, biases) -> "Parameters":
        p = cls(config)
        for dst, src in zip(p.weights, weights):
            dst[...] = src
        for dst, src in zip(p.biases, biases):
            dst[...] = src
        return p

    def copy(self) -> "Parameters":
        return Parameters(self.config, self.flat.copy())

    def __eq__(self, other):
        if not isinstance(other, Parameters):
            return NotImplemented
        return self.config == other.config and np.array_equal(self.flat, other.flat)

    def __repr__(self):
        return f"Parameters(layers={self.config.layer_sizes}, n={self.flat.size})"


def init(config: ModelConfig, seed: int = 0) -> Parameters:
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    p = Parameters(config)
    for w in p.weights:
        fan_out, fan_in = w.shape
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        w[...] = rng.uniform(-limit, limit, size=w.shape)
    return p


# --------------------------------------------------------------------------
# forward / backward

def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _activate(name, z):
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    if name == "sigmoid":
        return _sigmoid(z)
    return z


def _activation_grad(name, z, a):
    if name == "relu":
        return (z > 0.0).astype(np.float64)
    if name == "tanh":
        return 1.0 - a * a
    if name == "sigmoid":
        return a * (1.0 - a)
    return None  # linear: identity


class Cache(NamedTuple):
    inputs: list  # input to each layer (inputs[0] is x)
    pre: list  # pre-activation z of each layer


def forward(params: Parameters, x):
    """Reconstruct ``x`` (a vector or a batch of rows).

    Returns ``(reconstruction, cache)``; the cache holds every layer's input
    and pre-activation for :func:`backward`.
    """
    cfg = params.config
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    a = x.reshape(1, -1) if single else x
    inputs, pre = [], []
    last = cfg.n_layers - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        inputs.append(a)
        with np.errstate(over="ignore", invalid="ignore"):
            z = a @ w.T + b
            a = _activate(cfg.output_activation if i == last else cfg.hidden_activation, z)
        pre.append(z)
        if not np.isfinite(a).all() or not np.isfinite(z).all():
            raise NumericalError(f"numerical overflow in layer {i + 1} of {cfg.n_layers}")
    out = a[0] if single else a
    return out, Cache(inputs, pre)


def loss(x, xhat) -> float:
    """Mean squared error over the components of one row."""
    d = np.asarray(xhat, dtype=np.float64) - np.asarray(x, dtype=np.float64)
    return float(np.mean(d * d))


def backward(params: Parameters, x, xhat, cache: Cache, out: Optional[np.ndarray] = None) -> np.ndarray:
    """Flat gradient of the mean per-row MSE of a batch."""
    cfg = params.config
    x = np.atleast_2d(x)
    xhat = np.atleast_2d(xhat)
    n, d = x.shape
    grad = np.empty_like(params.flat) if out is None else out
    g = Parameters(cfg, grad)
    delta = (2.0 / (n * d)) * (xhat - x)
    last = cfg.n_layers - 1
    for i in range(last, -1, -1):
        z = cache.pre[i]
        act = cfg.output_activation if i == last else cfg.hidden_activation
        a = xhat if i == last else cache.inputs[i + 1]
        local = _activation_grad(act, z, a)
        if local is not None:
            delta = delta * local
        np.matmul(delta.T, cache.inputs[i], out=g.weights[i])
        np.sum(delta, axis=0, out=g.biases[i])
        if i:
            delta = delta @ params.weights[i]
    return grad


def loss_and_gradients(params: Parameters, batch):
    batch = np.atleast_2d(np.asarray(batch, dtype=np.float64))
    if batch.shape[0] == 0:
        raise DataError("gradients need a non-empty batch")
    xhat, cache = forward(params, batch)
    diff = xhat - batch
    value = float(np.mean(diff * diff))
    return value, Parameters(params.config, backward(params, batch, xhat, cache))


def gradients(params: Parameters, batch) -> Parameters:
    """Gradient of the mean batch loss, shaped like ``params``."""
    return loss_and_gradients(params, batch)[1]


def batch_loss(params: Parameters, batch) -> float:
    xhat, _ = forward(params, batch)
    return float(np.mean((xhat - np.atleast_2d(batch)) ** 2))


def numerical_gradients(params: Parameters, batch, h: float = 1e-5) -> Parameters:
    """Central finite differences of :func:`batch_loss`, one parameter at a time.

    Slow (two forward passes per parameter); meant for toy networks only.
    """
    batch = np.atleast_2d(np.asarray(batch, dtype=np.float64))
    probe = params.copy()
    out = np.empty_like(probe.flat)
    for i in range(probe.flat.size):
        keep = probe.flat[i]
        probe.flat[i] = keep + h
        up = batch_loss(probe, batch)
        probe.flat[i] = keep - h
        down = batch_loss(probe, batch)
        probe.flat[i] = keep
        out[i] = (up - down) / (2.0 * h)
    return Parameters(params.config, out)


def gradient_check(params: Parameters, batch, h: float = 1e-5) -> float:
    """Largest relative error between analytic and finite-difference gradients.

    Relative error per parameter is ``|a - fd| / max(|a|, |fd|, 1e-8)``.
    """
    a = gradients(params, batch).flat
    fd = numerical_gradients(params, batch, h).flat
    den = np.maximum(np.maximum(np.abs(a), np.abs(fd)), 1e-8)
    return float(np.max(np.abs(a - fd) / den))


def reconstruction_losses(params: Parameters, m, chunk: int = 4096) -> np.ndarray:
    """Per-row MSE between each row and its reconstruction, in input order."""
    m = np.asarray(m, dtype=np.float64)
    if m.size == 0:
        return np.empty(0)
    m = np.atleast_2d(m)
    out = np.empty(m.shape[0])
    for start in range(0, m.shape[0], chunk):
        rows = m[start:start + chunk]
        xhat, _ = forward(params, rows)
        out[start:start + chunk] = np.mean((xhat - rows) ** 2, axis=1)
    return out


def reconstruct(params: Parameters, m) -> np.ndarray:
    return forward(params, np.atleast_2d(np.asarray(m, dtype=np.float64)))[0]


# --------------------------------------------------------------------------
# optimizers and training

class SGD:
    def __init__(self, lr):
        self.lr = lr

    def step(self, flat, grad):
        flat -= self.lr * grad


class Adam:
    def __init__(self, size, lr, beta1=0.9, beta2=0.999, epsilon=1e-8):
        self.lr, self.beta1, self.beta2, self.epsilon = lr, beta1, beta2, epsilon
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0
        self._buf = np.empty(size)

    def step(self, flat, grad):
        self.t += 1
        b1, b2, buf = self.beta1, self.beta2, self._buf
        self.m *= b1
        self.m += (1.0 - b1) * grad
        np.multiply(grad, grad, out=buf)
        buf *= 1.0 - b2
        self.v *= b2
        self.v += buf
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        np.divide(self.v, bc2, out=buf)
        np.sqrt(buf, out=buf)
        buf += self.epsilon
        np.divide(self.m, buf, out=buf)
        buf *= self.lr / bc1
        flat -= buf


def make_optimizer(config: TrainConfig, size: int):
    if config.optimizer == "sgd":
        return SGD(config.learning_rate)
    return Adam(size, config.learning_rate, config.beta1, config.beta2, config.epsilon)


@dataclass
class TrainReport:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    wall_time_seconds: float = 0.0

    def to_dict(self) -> dict:
        return {"train_loss": list(self.train_loss), "val_loss": list(self.val_loss),
                "wall_time_seconds": self.wall_time_seconds}


def train(params: Parameters, train_rows, val_rows, config: TrainConfig, labels=None):
    """Mini-batch training; returns ``(new Parameters, TrainReport)``.

    Batch order is reshuffled every epoch from a generator seeded with
    ``config.seed``. ``labels`` (a boolean anomaly mask for ``train_rows``)
    is optional; when given, any anomalous row is refused.
    """
    X = np.ascontiguousarray(train_rows, dtype=np.float64)
    V = np.ascontiguousarray(val_rows, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise DataError("training matrix must be non-empty and 2-D")
    if V.ndim != 2 or V.shape[0] == 0:
        raise DataError("validation matrix must be non-empty and 2-D")
    if labels is not None and np.any(labels):
        raise DataError("training data contains labeled anomalies; scrub first")

    work = params.copy()
    flat = work.flat
    grad = np.empty_like(flat)
    opt = make_optimizer(config, flat.size)
    rng = np.random.default_rng([config.seed, 1])
    n, bs = X.shape[0], config.batch_size
    report = TrainReport()
    started = time.perf_counter()
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        total = 0.0
        for bi, start in enumerate(range(0, n, bs)):
            batch = X[order[start:start + bs]]
            try:
                xhat, cache = forward(work, batch)
            except NumericalError as exc:
                raise NumericalError(f"epoch {epoch + 1}, batch {bi + 1}: {exc}") from None
            diff = xhat - batch
            with np.errstate(over="ignore", invalid="ignore"):
                value = float(np.mean(diff * diff))
            if not np.isfinite(value):
                raise NumericalError(f"non-finite loss at epoch {epoch + 1}, batch {bi + 1}")
            total += value * batch.shape[0]
            backward(work, batch, xhat, cache, out=grad)
            opt.step(flat, grad)
        if not np.isfinite(flat).all():
            raise NumericalError(f"non-finite parameters after epoch {epoch + 1}")
        val = float(np.mean(reconstruction_losses(work, V)))
        report.train_loss.append(total / n)
        report.val_loss.append(val)
    report.wall_time_seconds = time.perf_counter() - started
    return work, report


# --------------------------------------------------------------------------
# estimator

class Autoencoder(BaseEstimator):
    """Estimator facade over :func:`init` and :func:`train`.

    ``fit`` holds back ``validation_fraction`` of the rows (the most recent
    ones) for per-epoch validation loss unless ``X_val`` is given.
    ``score_samples`` returns per-row reconstruction loss; higher means more
    anomalous.
    """

    def __init__(self, node_size=256, hidden_activation="relu", output_activation="sigmoid",
                 epochs=60, batch_size=8, learning_rate=1e-6, optimizer="adam",
                 validation_fraction=0.25, random_state=0):
        self.node_size = node_size
        self.hidden_activation = hidden_activation
        self.output_activation = output_activation
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.optimizer = optimizer
        self.validation_fraction = validation_fraction
        self.random_state = random_state

    def _configs(self, n_features):
        model = ModelConfig.from_node_size(self.node_size, n_features,
                                           hidden_activation=self.hidden_activation,
                                           output_activation=self.output_activation)
        tc = TrainConfig(self.epochs, self.batch_size, self.learning_rate,
                         self.optimizer, seed=self.random_state)
        return model, tc

    def fit(self, X, y=None, X_val=None):
        X = check_array(X, dtype=np.float64)
        if X_val is None:
            X, X_val = split(X, 1.0 - self.validation_fraction)
        else:
            X_val = check_array(X_val, dtype=np.float64)
        model, tc = self._configs(X.shape[1])
        self.params_, self.train_report_ = train(init(model, self.random_state), X, X_val, tc)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        """Reconstruction of each row."""
        check_is_fitted(self, "params_")
        return reconstruct(self.params_, check_array(X, dtype=np.float64))

    def score_samples(self, X):
        check_is_fitted(self, "params_")
        return reconstruction_losses(self.params_, check_array(X, dtype=np.float64))
