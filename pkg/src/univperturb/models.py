"""Dense ReLU classifiers: evaluation, input gradients, SGD training, JSON I/O."""

import hashlib
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .errors import ConfigError, NumericalError, ParseError, ShapeError, UnsupportedVersionError
from .numerics import make_rng

log = logging.getLogger(__name__)

MODEL_FORMAT_VERSION = 1
ACTIVATIONS = ("identity", "relu")


@dataclass
class Layer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str = "identity"

    def __post_init__(self):
        self.weight = np.ascontiguousarray(self.weight, dtype=np.float64)
        self.bias = np.ascontiguousarray(self.bias, dtype=np.float64)
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise ShapeError("layer bias must match weight rows")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")


class Model:
    """A chain of dense layers mapping R^d to C logits.

    Predictions take the argmax of the logits with ties resolved toward the
    lowest class index.
    """

    def __init__(self, layers):
        if not layers:
            raise ConfigError("a model needs at least one layer")
        self.layers = list(layers)
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if nxt.weight.shape[1] != prev.weight.shape[0]:
                raise ShapeError("consecutive layer dimensions do not chain")
        for layer in self.layers:
            if not (np.all(np.isfinite(layer.weight)) and np.all(np.isfinite(layer.bias))):
                raise NumericalError("model parameters must be finite")
        self._refresh()

    def _refresh(self):
        self._w = [l.weight for l in self.layers]
        self._b = [l.bias for l in self.layers]
        self._relu = [l.activation == "relu" for l in self.layers]

    @property
    def input_dim(self):
        return self.layers[0].weight.shape[1]

    @property
    def num_classes(self):
        return self.layers[-1].weight.shape[0]

    def copy(self):
        return Model([Layer(l.weight.copy(), l.bias.copy(), l.activation) for l in self.layers])

    def parameters(self):
        for l in self.layers:
            yield l.weight
            yield l.bias

    def model_id(self):
        """Short content hash of the parameters."""
        h = hashlib.sha256()
        for l in self.layers:
            h.update(l.activation.encode())
            h.update(np.asarray(l.weight.shape, dtype=np.int64).tobytes())
            h.update(l.weight.tobytes())
            h.update(l.bias.tobytes())
        return h.hexdigest()[:12]

    def _check(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.input_dim:
            raise ShapeError(f"input has dimension {x.shape[-1]}, model expects {self.input_dim}")
        return x

    def forward(self, x):
        """Logits for one input (shape ``(d,)``) or a batch (shape ``(n, d)``)."""
        h = self._check(x)
        for w, b, relu in zip(self._w, self._b, self._relu):
            h = h @ w.T + b
            if relu:
                h = np.maximum(h, 0.0)
        return h

    def predict(self, x):
        """Class index for one input, or an int array for a batch."""
        out = np.argmax(self.forward(x), axis=-1)
        return int(out) if np.ndim(out) == 0 else out

    def logits_and_jacobian(self, x):
        """Logits at ``x`` and the (C, d) Jacobian of the logits w.r.t. ``x``."""
        x = np.ascontiguousarray(self._check(x), dtype=np.float64)
        if x.ndim != 1:
            raise ShapeError("jacobian is defined for a single input")
        return kernels.logits_jacobian(self._w, self._b, self._relu, x)

    def input_gradient(self, x, k):
        """Gradient of logit ``k`` w.r.t. the input (ReLU derivative at 0 is 0)."""
        if not 0 <= k < self.num_classes:
            raise ShapeError(f"class index {k} out of range")
        return self.logits_and_jacobian(x)[1][k].copy()


def _glorot(rng, fan_in, fan_out):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_out, fan_in))


def init_mlp(input_dim, num_classes, hidden=(64, 64), seed=0):
    """ReLU MLP with Glorot-uniform weights and zero biases; ``hidden=()`` is affine."""
    rng = make_rng(seed)
    sizes = [int(input_dim), *[int(h) for h in hidden], int(num_classes)]
    if min(sizes) < 1:
        raise ConfigError("layer sizes must be positive")
    layers = []
    for i, (fi, fo) in enumerate(zip(sizes, sizes[1:])):
        act = "relu" if i < len(sizes) - 2 else "identity"
        layers.append(Layer(_glorot(rng, fi, fo), np.zeros(fo), act))
    return Model(layers)


def affine_model(weight, bias=None):
    w = np.asarray(weight, dtype=np.float64)
    b = np.zeros(w.shape[0]) if bias is None else bias
    return Model([Layer(w, b, "identity")])


@dataclass
class SampleSet:
    inputs: np.ndarray  # (m, d)
    labels: np.ndarray  # (m,)
    name: str = ""

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.inputs.ndim != 2 or self.inputs.shape[0] < 1:
            raise ShapeError("a sample set needs at least one input vector")
        if self.labels.shape != (self.inputs.shape[0],):
            raise ShapeError("inputs and labels differ in length")
        if np.any(self.labels < 0):
            raise ShapeError("labels must be nonnegative class indices")

    def __len__(self):
        return self.inputs.shape[0]

    @property
    def dim(self):
        return self.inputs.shape[1]

    def subset(self, idx, name=None):
        idx = np.asarray(idx, dtype=np.int64)
        return SampleSet(self.inputs[idx], self.labels[idx], self.name if name is None else name)


@dataclass
class TrainConfig:
    lr: float = 0.05
    epochs: int = 30
    batch_size: int = 32
    seed: int = 0
    weight_decay: float = 0.0

    def __post_init__(self):
        if not self.lr > 0:
            raise ConfigError("learning rate must be positive")
        if self.epochs < 0:
            raise ConfigError("epochs must be nonnegative")
        if self.batch_size < 1:
            raise ConfigError("minibatch size must be >= 1")
        if self.weight_decay < 0:
            raise ConfigError("weight decay must be nonnegative")


def softmax(z):
    z = z - np.max(z, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=-1, keepdims=True)


def cross_entropy(model, data):
    """Mean softmax cross-entropy of ``model`` on ``data``."""
    z = model.forward(data.inputs)
    z = z - np.max(z, axis=1, keepdims=True)
    logp = z - np.log(np.sum(np.exp(z), axis=1, keepdims=True))
    return float(-np.mean(logp[np.arange(len(data)), data.labels]))


def accuracy(model, data):
    return float(np.mean(model.predict(data.inputs) == data.labels))


def _batch_grads(model, xb, yb):
    acts = [xb]
    h = xb
    for w, b, relu in zip(model._w, model._b, model._relu):
        h = h @ w.T + b
        if relu:
            h = np.maximum(h, 0.0)
        acts.append(h)
    z = h - np.max(h, axis=1, keepdims=True)
    lse = np.log(np.sum(np.exp(z), axis=1))
    n = xb.shape[0]
    loss = float(np.mean(lse - z[np.arange(n), yb]))
    delta = np.exp(z - lse[:, None])
    delta[np.arange(n), yb] -= 1.0
    delta /= n
    grads = [None] * len(model.layers)
    for i in range(len(model.layers) - 1, -1, -1):
        grads[i] = (delta.T @ acts[i], delta.sum(axis=0))
        if i > 0:
            delta = delta @ model._w[i]
            delta *= acts[i] > 0.0
    return loss, grads


def train(model, data, cfg, epoch_data=None):
    """Minibatch SGD on softmax cross-entropy, updating ``model`` in place.

    ``epoch_data(epoch, model)`` may supply a replacement training set for
    each epoch (same size and dimension); the shuffle stream is the same either
    way, so a callback returning ``data`` reproduces plain training bit for bit.
    Returns the model.
    """
    if data.dim != model.input_dim:
        raise ShapeError("training data dimension does not match the model")
    if np.any(data.labels >= model.num_classes):
        raise ShapeError("label out of range for the model")
    rng = make_rng(cfg.seed)
    m = len(data)
    for epoch in range(cfg.epochs):
        cur = data if epoch_data is None else epoch_data(epoch, model)
        order = rng.permutation(m)
        total = 0.0
        for start in range(0, m, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            with np.errstate(over="ignore", invalid="ignore"):  # divergence is reported below
                loss, grads = _batch_grads(model, cur.inputs[idx], cur.labels[idx])
            if not math.isfinite(loss):
                raise NumericalError(
                    f"non-finite training loss at epoch {epoch}, batch starting {start}; "
                    f"try a smaller learning rate (lr={cfg.lr})"
                )
            total += loss * len(idx)
            for layer, (gw, gb) in zip(model.layers, grads):
                if cfg.weight_decay:
                    gw = gw + cfg.weight_decay * layer.weight
                layer.weight -= cfg.lr * gw
                layer.bias -= cfg.lr * gb
        log.debug("epoch %d: loss %.6f", epoch, total / m)
    if cfg.epochs:
        log.info("training accuracy %.4f after %d epochs", accuracy(model, data), cfg.epochs)
    return model


def model_to_dict(model):
    return {
        "format_version": MODEL_FORMAT_VERSION,
        "input_dim": model.input_dim,
        "num_classes": model.num_classes,
        "layers": [
            {
                "rows": int(l.weight.shape[0]),
                "cols": int(l.weight.shape[1]),
                "activation": l.activation,
                "weights": l.weight.reshape(-1).tolist(),
                "bias": l.bias.tolist(),
            }
            for l in model.layers
        ],
    }


def model_from_dict(doc):
    if not isinstance(doc, dict):
        raise ParseError("model document must be a JSON object")
    version = doc.get("format_version")
    if version != MODEL_FORMAT_VERSION:
        raise UnsupportedVersionError(f"unsupported model format_version {version!r}")
    try:
        layers = []
        for i, ld in enumerate(doc["layers"]):
            rows, cols = int(ld["rows"]), int(ld["cols"])
            w = np.asarray(ld["weights"], dtype=np.float64)
            if w.size != rows * cols:
                raise ParseError(f"layers[{i}].weights has {w.size} values, expected {rows * cols}")
            b = np.asarray(ld["bias"], dtype=np.float64)
            if b.shape != (rows,):
                raise ParseError(f"layers[{i}].bias has shape {b.shape}, expected ({rows},)")
            layers.append(Layer(w.reshape(rows, cols), b, ld["activation"]))
        model = Model(layers)
    except KeyError as exc:
        raise ParseError(f"missing field {exc.args[0]!r} in model document") from None
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ParseError):
            raise
        raise ParseError(f"bad model field: {exc}") from None
    if model.input_dim != doc.get("input_dim") or model.num_classes != doc.get("num_classes"):
        raise ParseError("input_dim/num_classes disagree with the layer shapes")
    return model


def save_model(model, path):
    Path(path).write_text(json.dumps(model_to_dict(model)) + "\n", encoding="utf-8")


def load_model(path):
    text = Path(path).read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return model_from_dict(doc)
