"""Feed-forward binary classifier with a two-logit output head.

The network never applies the output sigmoid itself: ``forward_logits``
returns the raw pair ``(z0, z1)`` so the uncertainty engine can work on the
logit scale.  Class-1 probability is ``logistic(z1 - z0)``, the two-way
softmax.

Weights are stored as ``(fan_in, fan_out)`` matrices so a batch ``X`` of shape
``(n, input_dim)`` propagates as ``X @ W + b``.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .datagen import Dataset
from .errors import ConfigError, DataError, TrainingDivergedError

ACTIVATIONS = ("relu", "tanh")
FORMAT_VERSION = 1


@dataclass(frozen=True)
class NetworkSpec:
    input_dim: int
    hidden_layers: tuple[int, ...] = (32, 16)
    activation: str = "relu"
    dropout_rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden_layers", tuple(int(h) for h in self.hidden_layers))
        if self.input_dim < 1:
            raise ConfigError("input_dim must be positive")
        if any(h < 1 for h in self.hidden_layers):
            raise ConfigError("hidden layer widths must be positive")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"activation must be one of {ACTIVATIONS}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError("dropout_rate must lie in [0, 1)")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")

    @property
    def layer_sizes(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden_layers, 2)

    def to_dict(self) -> dict:
        return {"input_dim": self.input_dim, "hidden_layers": list(self.hidden_layers),
                "activation": self.activation, "dropout_rate": self.dropout_rate,
                "seed": self.seed}


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 32
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    validation_fraction: float = 0.1
    early_stopping_patience: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError("epochs must be non-negative")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be positive")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigError("optimizer must be 'sgd' or 'adam'")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ConfigError("validation_fraction must lie in [0, 1)")
        if self.early_stopping_patience < 0:
            raise ConfigError("early_stopping_patience must be non-negative")

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass(frozen=True)
class Network:
    """Immutable parameter set.  ``params`` alternates weight, bias per layer."""

    spec: NetworkSpec
    params: tuple[np.ndarray, ...]

    def __post_init__(self):
        sizes = self.spec.layer_sizes
        if len(self.params) != 2 * (len(sizes) - 1):
            raise ConfigError("parameter count does not match the layer sizes")
        frozen = []
        for k, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            w = np.array(self.params[2 * k], dtype=np.float64)
            b = np.array(self.params[2 * k + 1], dtype=np.float64)
            if w.shape != (fan_in, fan_out) or b.shape != (fan_out,):
                raise ConfigError(f"layer {k}: got shapes {w.shape}, {b.shape}; "
                                  f"expected {(fan_in, fan_out)}, {(fan_out,)}")
            if not (np.isfinite(w).all() and np.isfinite(b).all()):
                raise ConfigError(f"layer {k} contains non-finite weights")
            w.setflags(write=False)
            b.setflags(write=False)
            frozen += [w, b]
        object.__setattr__(self, "params", tuple(frozen))

    @property
    def weights(self) -> tuple[np.ndarray, ...]:
        return self.params[0::2]

    @property
    def biases(self) -> tuple[np.ndarray, ...]:
        return self.params[1::2]

    def to_dict(self) -> dict:
        return {
            "format": "eivuq.network",
            "version": FORMAT_VERSION,
            "spec": self.spec.to_dict(),
            "layers": [{"weight": w.tolist(), "bias": b.tolist()}
                       for w, b in zip(self.weights, self.biases)],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Network":
        if doc.get("format") != "eivuq.network" or doc.get("version") != FORMAT_VERSION:
            raise ConfigError("not a version-1 eivuq network document")
        spec = NetworkSpec(**doc["spec"])
        params = []
        for layer in doc["layers"]:
            params += [np.array(layer["weight"], dtype=np.float64).reshape(
                len(layer["weight"]), -1), np.array(layer["bias"], dtype=np.float64)]
        return cls(spec, tuple(params))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "Network":
        return cls.from_dict(json.loads(Path(path).read_text()))


def init_network(spec: NetworkSpec) -> Network:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and biases."""
    rng = np.random.default_rng(spec.seed)
    params = []
    for fan_in, fan_out in zip(spec.layer_sizes[:-1], spec.layer_sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        params.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        params.append(rng.uniform(-bound, bound, size=fan_out))
    return Network(spec, tuple(params))


def logistic(x):
    """Sign-split logistic.

    The negative half is evaluated as ``1 - logistic(|x|)``; since
    ``logistic(|x|)`` lies in [0.5, 1] that subtraction is exact, so
    ``logistic(x) + logistic(-x) == 1`` holds bit-for-bit.
    """
    x = np.asarray(x, dtype=np.float64)
    upper = 1.0 / (1.0 + np.exp(-np.abs(x)))
    out = np.where(x >= 0, upper, 1.0 - upper)
    return float(out) if out.ndim == 0 else out


def _activate(a: np.ndarray, kind: str) -> np.ndarray:
    return np.maximum(a, 0.0) if kind == "relu" else np.tanh(a)


def _activation_grad(a: np.ndarray, h: np.ndarray, kind: str) -> np.ndarray:
    return (a > 0).astype(np.float64) if kind == "relu" else 1.0 - h * h


def _as_batch(net: Network, x) -> tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim == 1
    if single:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != net.spec.input_dim:
        raise DataError(f"expected input of length {net.spec.input_dim}, got shape {np.shape(x)}")
    if not np.isfinite(arr).all():
        raise DataError("input contains non-finite values")
    return arr, single


def dropout_masks(spec: NetworkSpec, n_rows: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Inverted-dropout masks (0 or 1/(1-rate)) for every hidden layer."""
    keep = 1.0 - spec.dropout_rate
    return [(rng.random((n_rows, h)) < keep) / keep for h in spec.hidden_layers]


def _forward(spec: NetworkSpec, params, x: np.ndarray, masks=None):
    """Forward pass over a 2-D batch; returns logits and the cache for backprop."""
    kind = spec.activation
    cache = [x]
    h = x
    n_hidden = len(spec.hidden_layers)
    for k in range(n_hidden):
        a = h @ params[2 * k] + params[2 * k + 1]
        h = _activate(a, kind)
        if masks is not None:
            h = h * masks[k]
        cache += [a, h]
    z = h @ params[2 * n_hidden] + params[2 * n_hidden + 1]
    return z, cache


def forward_logits(net: Network, x, dropout_active: bool = False,
                   rng: np.random.Generator | None = None) -> np.ndarray:
    """Pre-sigmoid logits ``(z0, z1)``.

    ``x`` may be one feature vector (returns shape ``(2,)``) or a batch
    (returns ``(n, 2)``).  With ``dropout_active`` each hidden unit is zeroed
    with probability ``dropout_rate`` and survivors are scaled by
    ``1/(1 - dropout_rate)``; ``rng`` is then required.
    """
    batch, single = _as_batch(net, x)
    masks = None
    if dropout_active and net.spec.dropout_rate > 0:
        if rng is None:
            raise ValueError("dropout_active requires an explicit rng")
        masks = dropout_masks(net.spec, batch.shape[0], rng)
    z, _ = _forward(net.spec, net.params, batch, masks)
    return z[0] if single else z


def probs_from_logits(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    p1 = logistic(z[..., 1] - z[..., 0])
    return np.stack([1.0 - p1, p1], axis=-1)


def predict_proba(net: Network, x) -> np.ndarray:
    """``(p0, p1)`` with ``p1 = logistic(z1 - z0)``."""
    return probs_from_logits(forward_logits(net, x))


def _cross_entropy(z: np.ndarray, y: np.ndarray) -> np.ndarray:
    m = z.max(axis=1)
    lse = m + np.log(np.exp(z[:, 0] - m) + np.exp(z[:, 1] - m))
    return lse - z[np.arange(len(y)), y]


def loss(net: Network, x, y) -> float:
    """Mean cross-entropy of the two-way softmax against labels."""
    batch, _ = _as_batch(net, x)
    z, _ = _forward(net.spec, net.params, batch)
    return float(_cross_entropy(z, np.asarray(y, dtype=np.int64)).mean())


def _backward(spec: NetworkSpec, params, z, cache, y, masks=None) -> list[np.ndarray]:
    n = len(y)
    soft = probs_from_logits(z)
    soft[np.arange(n), y] -= 1.0
    delta = soft / n
    n_hidden = len(spec.hidden_layers)
    grads: list[np.ndarray] = [None] * len(params)
    h_prev = cache[-1]
    grads[2 * n_hidden] = h_prev.T @ delta
    grads[2 * n_hidden + 1] = delta.sum(axis=0)
    for k in range(n_hidden - 1, -1, -1):
        dh = delta @ params[2 * (k + 1)].T
        if masks is not None:
            dh = dh * masks[k]
        a, h = cache[1 + 2 * k], cache[2 + 2 * k]
        # h may carry the dropout scaling; recover the raw activation for tanh'
        raw = _activate(a, spec.activation) if masks is not None else h
        delta = dh * _activation_grad(a, raw, spec.activation)
        grads[2 * k] = cache[2 * k].T @ delta
        grads[2 * k + 1] = delta.sum(axis=0)
    return grads


def gradient(net: Network, batch) -> list[np.ndarray]:
    """Analytic gradient of the mean cross-entropy, ordered like ``net.params``."""
    x, y = batch
    xb, _ = _as_batch(net, x)
    y = np.asarray(y, dtype=np.int64)
    if y.shape != (xb.shape[0],) or len(y) == 0:
        raise DataError("batch labels must be a non-empty vector matching the features")
    z, cache = _forward(net.spec, net.params, xb)
    return _backward(net.spec, net.params, z, cache, y)


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    best_epoch: int = 0
    stopped_early: bool = False
    warnings: list[str] = field(default_factory=list)


class _Adam:
    def __init__(self, params, lr, b1=0.9, b2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class _SGD:
    def __init__(self, lr):
        self.lr = lr

    def step(self, params, grads):
        for p, g in zip(params, grads):
            p -= self.lr * g


def train_with_history(net: Network, data: Dataset, cfg: TrainConfig) -> tuple[Network, TrainHistory]:
    """Mini-batch training on ``data.features``; see :func:`train`."""
    hist = TrainHistory()
    if data.n_rows == 0:
        raise DataError("cannot train on an empty dataset")
    if data.n_features != net.spec.input_dim:
        raise DataError(f"dataset has {data.n_features} features, network expects "
                        f"{net.spec.input_dim}")
    if cfg.epochs == 0:
        return net, hist
    if np.unique(data.labels).size < 2:
        msg = "training data contains a single class"
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        hist.warnings.append(msg)

    rng = np.random.default_rng(cfg.seed)
    x, y = data.features, data.labels
    order = rng.permutation(data.n_rows)
    n_val = int(round(cfg.validation_fraction * data.n_rows))
    n_val = min(n_val, data.n_rows - 1)
    val_idx, tr_idx = order[:n_val], order[n_val:]
    x_tr, y_tr = x[tr_idx], y[tr_idx]
    x_val, y_val = x[val_idx], y[val_idx]
    batch = min(cfg.batch_size, len(tr_idx))
    use_dropout = net.spec.dropout_rate > 0

    spec = net.spec
    params = [p.copy() for p in net.params]
    opt = _Adam(params, cfg.learning_rate) if cfg.optimizer == "adam" else _SGD(cfg.learning_rate)

    early = n_val > 0 and cfg.early_stopping_patience > 0
    best_val, best_params, since_best = np.inf, None, 0
    for epoch in range(cfg.epochs):
        perm = rng.permutation(len(tr_idx))
        for start in range(0, len(perm), batch):
            rows = perm[start:start + batch]
            xb, yb = x_tr[rows], y_tr[rows]
            masks = dropout_masks(spec, len(rows), rng) if use_dropout else None
            z, cache = _forward(spec, params, xb, masks)
            opt.step(params, _backward(spec, params, z, cache, yb, masks))
        z_tr, _ = _forward(spec, params, x_tr)
        tr_loss = float(_cross_entropy(z_tr, y_tr).mean())
        if not np.isfinite(tr_loss):
            raise TrainingDivergedError(epoch, tr_loss)
        hist.train_loss.append(tr_loss)
        if n_val:
            z_val, _ = _forward(spec, params, x_val)
            hist.val_loss.append(float(_cross_entropy(z_val, y_val).mean()))
        if early:
            if hist.val_loss[-1] < best_val:
                best_val, best_params, since_best = hist.val_loss[-1], [p.copy() for p in params], 0
                hist.best_epoch = epoch
            else:
                since_best += 1
                if since_best >= cfg.early_stopping_patience:
                    hist.stopped_early = True
                    break
        else:
            hist.best_epoch = epoch
    final = best_params if early and best_params is not None else params
    return Network(net.spec, tuple(final)), hist


def train(net: Network, data: Dataset, cfg: TrainConfig) -> Network:
    """Minimise cross-entropy on ``data``, returning a new network.

    A ``validation_fraction`` share of rows is held out; with a positive
    patience the best-validation weights are returned.  Batch size is capped
    at the training-split size.  Identical ``(net, data, cfg)`` give
    bit-identical weights.
    """
    return train_with_history(net, data, cfg)[0]


def accuracy(net: Network, data: Dataset) -> float:
    p1 = predict_proba(net, data.features)[:, 1]
    return float(((p1 >= 0.5).astype(np.int64) == data.labels).mean())
