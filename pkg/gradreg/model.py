"""
Softmax regression and sigmoid MLPs: forward pass, cross-entropy with weight
decay, backpropagation to parameters and inputs, the pre-softmax Jacobian,
max-norm projection, the Gauss-Newton identity and model files.

Weights are stored (fan_in, fan_out): a layer computes ``h @ W + b`` and
column j of W holds the incoming weights of unit j.
"""

import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import List, Sequence, Tuple, Union

import numpy as np
from scipy.special import expit, softmax

from gradreg.errors import FormatError, InvalidLabelError, InvalidParameterError, LengthError, ShapeError
from gradreg.gradcheck import central_difference_jacobian
from gradreg.numcore import as_vector

logger = logging.getLogger(__name__)

SIGMOID = "sigmoid"
IDENTITY = "identity"
ACTIVATIONS = (IDENTITY, SIGMOID)

LOG_CLAMP = 1e-300

MODEL_MAGIC = b"GRMD"
MODEL_VERSION = 1


class ClampCounter:
    """Counts cross-entropy evaluations where y_l had to be clamped."""

    def __init__(self):
        self.count = 0

    def add(self, n: int) -> None:
        if n:
            self.count += n
            logger.warning("Clamped %d log-probabilities to %g (total %d)", n, LOG_CLAMP, self.count)

    def reset(self) -> None:
        self.count = 0


log_clamp_events = ClampCounter()


@dataclass(frozen=True)
class Layer:
    weight: np.ndarray
    bias: np.ndarray
    activation: str = IDENTITY

    def __post_init__(self):
        weight = np.asarray(self.weight, dtype=np.float64)
        bias = np.asarray(self.bias, dtype=np.float64)
        if weight.ndim != 2 or bias.shape != (weight.shape[1],):
            raise ShapeError(f"layer weight {weight.shape} and bias {bias.shape} do not match")
        if self.activation not in ACTIVATIONS:
            raise InvalidParameterError(f"unknown activation {self.activation!r}")
        object.__setattr__(self, "weight", weight)
        object.__setattr__(self, "bias", bias)


@dataclass(frozen=True)
class MlpModel:
    """Ordered linear layers feeding a softmax head. No hidden layer is softmax regression."""

    layers: Tuple[Layer, ...]

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise ShapeError("a model needs at least one layer")
        for prev, nxt in zip(layers, layers[1:]):
            if prev.weight.shape[1] != nxt.weight.shape[0]:
                raise ShapeError(f"layer dims do not chain: {prev.weight.shape} -> {nxt.weight.shape}")
        for layer in layers:
            if not (np.all(np.isfinite(layer.weight)) and np.all(np.isfinite(layer.bias))):
                raise InvalidParameterError("model parameters must be finite")
        object.__setattr__(self, "layers", layers)

    @property
    def input_dim(self) -> int:
        return self.layers[0].weight.shape[0]

    @property
    def num_classes(self) -> int:
        return self.layers[-1].weight.shape[1]

    @property
    def hidden_sizes(self) -> Tuple[int, ...]:
        return tuple(layer.weight.shape[1] for layer in self.layers[:-1])

    def weight_sq_sum(self) -> float:
        return float(sum(np.sum(layer.weight**2) for layer in self.layers))


@dataclass(frozen=True)
class ForwardTrace:
    pre_activations: List[np.ndarray]
    activations: List[np.ndarray]  # activations[0] is the input
    o: np.ndarray
    y: np.ndarray


@dataclass(frozen=True)
class GradBundle:
    loss: float
    grad_input: np.ndarray
    grad_params: Tuple[Tuple[np.ndarray, np.ndarray], ...]


@dataclass(frozen=True)
class BatchGradBundle:
    """Backprop over a batch: per-example input gradients, batch-mean parameter gradients."""

    loss: float
    xent: np.ndarray
    grad_input: np.ndarray
    grad_params: Tuple[Tuple[np.ndarray, np.ndarray], ...]


def init_mlp(rng: np.random.Generator, d: int, hidden: Sequence[int], num_classes: int) -> MlpModel:
    """Glorot-uniform weights in +-sqrt(6/(fan_in+fan_out)), zero biases."""
    sizes = [d, *hidden, num_classes]
    layers = []
    for i, (fan_in, fan_out) in enumerate(zip(sizes, sizes[1:])):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weight = rng.uniform(-limit, limit, size=(fan_in, fan_out))
        activation = IDENTITY if i == len(sizes) - 2 else SIGMOID
        layers.append(Layer(weight, np.zeros(fan_out), activation))
    return MlpModel(tuple(layers))


def _forward_rows(model: MlpModel, X: np.ndarray):
    if X.ndim != 2 or X.shape[1] != model.input_dim:
        raise ShapeError(f"input of shape {X.shape} does not match model input dim {model.input_dim}")
    pres, acts = [], [X]
    for layer in model.layers:
        z = acts[-1] @ layer.weight + layer.bias
        pres.append(z)
        acts.append(expit(z) if layer.activation == SIGMOID else z)
    o = acts[-1]
    return pres, acts, o, softmax(o, axis=1)


def _backward(model: MlpModel, acts: List[np.ndarray], delta: np.ndarray, weight_decay: float, with_params: bool):
    """Propagate dL/do rows back to the input; optionally collect batch-mean parameter gradients."""
    grads = [None] * len(model.layers)
    batch = delta.shape[0]
    for i in reversed(range(len(model.layers))):
        layer = model.layers[i]
        if with_params:
            g_weight = acts[i].T @ delta / batch + 2.0 * weight_decay * layer.weight
            grads[i] = (g_weight, delta.mean(axis=0))
        delta = delta @ layer.weight.T
        if i > 0 and model.layers[i - 1].activation == SIGMOID:
            s = acts[i]
            delta = delta * s * (1.0 - s)
    return delta, tuple(grads)


def _xent_rows(y: np.ndarray, T: np.ndarray) -> np.ndarray:
    picked = np.sum(y * T, axis=1)
    clamped = picked < LOG_CLAMP
    log_clamp_events.add(int(np.count_nonzero(clamped)))
    return -np.log(np.maximum(picked, LOG_CLAMP))


def forward(model: MlpModel, x) -> ForwardTrace:
    x = as_vector(x, "x")
    pres, acts, o, y = _forward_rows(model, x[None, :])
    return ForwardTrace([p[0] for p in pres], [a[0] for a in acts], o[0], y[0])


def predict_proba(model: MlpModel, X: np.ndarray) -> np.ndarray:
    return _forward_rows(model, np.asarray(X, dtype=np.float64))[3]


def predict(model: MlpModel, X: np.ndarray) -> np.ndarray:
    """Argmax class per row; ties go to the lowest index."""
    return np.argmax(predict_proba(model, X), axis=1)


def loss_xent(trace: ForwardTrace, t, model: MlpModel, weight_decay: float = 0.0) -> float:
    """-log y_l + lambda * sum of squared weights (biases excluded)."""
    t = as_vector(t, "t")
    if t.shape != trace.y.shape:
        raise ShapeError(f"target of length {t.size} does not match {trace.y.size} classes")
    return float(_xent_rows(trace.y[None, :], t[None, :])[0] + weight_decay * model.weight_sq_sum())


def backprop_batch(model: MlpModel, X: np.ndarray, T: np.ndarray, weight_decay: float = 0.0) -> BatchGradBundle:
    X = np.asarray(X, dtype=np.float64)
    T = np.asarray(T, dtype=np.float64)
    _, acts, _, y = _forward_rows(model, X)
    if T.shape != y.shape:
        raise ShapeError(f"targets of shape {T.shape} do not match outputs {y.shape}")
    xent = _xent_rows(y, T)
    grad_input, grads = _backward(model, acts, y - T, weight_decay, with_params=True)
    loss = float(xent.mean() + weight_decay * model.weight_sq_sum()) if xent.size else 0.0
    return BatchGradBundle(loss, xent, grad_input, grads)


def backprop(model: MlpModel, x, t, weight_decay: float = 0.0) -> GradBundle:
    x = as_vector(x, "x")
    t = as_vector(t, "t")
    bundle = backprop_batch(model, x[None, :], t[None, :], weight_decay)
    return GradBundle(bundle.loss, bundle.grad_input[0], bundle.grad_params)


def input_gradients(model: MlpModel, X: np.ndarray, T: np.ndarray) -> np.ndarray:
    """Per-row gradient of the cross-entropy (no decay) with respect to the input."""
    _, acts, _, y = _forward_rows(model, np.asarray(X, dtype=np.float64))
    grad_input, _ = _backward(model, acts, y - np.asarray(T, dtype=np.float64), 0.0, with_params=False)
    return grad_input


def presoftmax_jacobian(model: MlpModel, x) -> np.ndarray:
    """K x d matrix whose row k is the gradient of o_k with respect to x."""
    x = as_vector(x, "x")
    _, acts, _, _ = _forward_rows(model, x[None, :])
    jac, _ = _backward(model, acts, np.eye(model.num_classes), 0.0, with_params=False)
    return jac


def max_norm_project(model: MlpModel, c: float) -> MlpModel:
    """Rescale every hidden unit's incoming weight column to L2 norm at most c."""
    if c <= 0:
        raise InvalidParameterError(f"max-norm bound must be positive, got {c}")
    layers = []
    for layer in model.layers:
        weight = layer.weight
        if layer.activation == SIGMOID:
            norms = np.linalg.norm(weight, axis=0)
            factor = np.where(norms > c, c / np.where(norms > 0, norms, 1.0), 1.0)
            weight = weight * factor
        layers.append(Layer(weight, layer.bias, layer.activation))
    return MlpModel(tuple(layers))


def _check_label(y: np.ndarray, label: int) -> None:
    if not 0 <= label < y.size:
        raise InvalidLabelError(f"label {label} outside [0, {y.size})")


def _output_hessian(y: np.ndarray, label: int) -> np.ndarray:
    """Hessian of -log y_l in y: one diagonal entry 1/y_l^2."""
    inv = 1.0 / y[label]
    hess = np.zeros((y.size, y.size))
    hess[label, label] = inv * inv
    return hess


def gn_identity_residual(y, label: int) -> float:
    """
    Max |grad_y L grad_y L^T - H_L(y)| for L = -log y_l.

    Both sides carry the single entry 1/y_l^2 at (l, l); the result is 0 up to
    rounding.
    """
    y = as_vector(y, "y")
    _check_label(y, label)
    grad_y = np.zeros_like(y)
    grad_y[label] = -1.0 / y[label]
    return float(np.max(np.abs(np.outer(grad_y, grad_y) - _output_hessian(y, label))))


def gauss_newton_full_residual(model: MlpModel, x, label: int, step: float = 1e-5) -> float:
    """
    Max |grad_x L grad_x L^T - J_y H J_y^T| with J_y (d x K) taken by central
    differences of the softmax output.
    """
    x = as_vector(x, "x")
    y = forward(model, x).y
    _check_label(y, label)
    t = np.zeros(model.num_classes)
    t[label] = 1.0
    grad = backprop(model, x, t).grad_input
    jac_y = central_difference_jacobian(lambda z: forward(model, z).y, x, step).T
    gauss_newton = jac_y @ _output_hessian(y, label) @ jac_y.T
    return float(np.max(np.abs(np.outer(grad, grad) - gauss_newton)))


def save_model(model: MlpModel, path: Union[str, Path]) -> None:
    """
    Flat little-endian layout:

        b"GRMD" | u32 version | u32 layer count
        per layer: u32 fan_in | u32 fan_out | u8 activation (0 identity, 1 sigmoid)
        per layer: f64 weights (fan_in x fan_out, row-major) | f64 bias (fan_out)
    """
    parts = [MODEL_MAGIC, struct.pack("<II", MODEL_VERSION, len(model.layers))]
    for layer in model.layers:
        fan_in, fan_out = layer.weight.shape
        parts.append(struct.pack("<IIB", fan_in, fan_out, ACTIVATIONS.index(layer.activation)))
    for layer in model.layers:
        parts.append(layer.weight.astype("<f8").tobytes(order="C"))
        parts.append(layer.bias.astype("<f8").tobytes())
    Path(path).write_bytes(b"".join(parts))
    logger.info("Saved model %s to %s", describe(model), path)


def load_model(path: Union[str, Path]) -> MlpModel:
    raw = Path(path).read_bytes()
    if raw[:4] != MODEL_MAGIC:
        raise FormatError(f"{path}: expected model tag {MODEL_MAGIC!r}, got {raw[:4]!r}")
    if len(raw) < 12:
        raise LengthError(f"{path}: truncated model header")
    version, count = struct.unpack_from("<II", raw, 4)
    if version != MODEL_VERSION:
        raise FormatError(f"{path}: expected model version {MODEL_VERSION}, got {version}")
    offset = 12
    shapes = []
    for _ in range(count):
        if len(raw) < offset + 9:
            raise LengthError(f"{path}: truncated layer table")
        fan_in, fan_out, tag = struct.unpack_from("<IIB", raw, offset)
        if tag >= len(ACTIVATIONS):
            raise FormatError(f"{path}: unknown activation tag {tag}")
        shapes.append((fan_in, fan_out, ACTIVATIONS[tag]))
        offset += 9
    layers = []
    for fan_in, fan_out, activation in shapes:
        need = 8 * (fan_in * fan_out + fan_out)
        if len(raw) < offset + need:
            raise LengthError(f"{path}: payload needs {need} more bytes at offset {offset}")
        values = np.frombuffer(raw, dtype="<f8", count=fan_in * fan_out + fan_out, offset=offset)
        weight = values[: fan_in * fan_out].reshape(fan_in, fan_out).astype(np.float64)
        bias = values[fan_in * fan_out :].astype(np.float64)
        layers.append(Layer(weight, bias, activation))
        offset += need
    return MlpModel(tuple(layers))


def describe(model: MlpModel) -> str:
    dims = [model.input_dim, *model.hidden_sizes, model.num_classes]
    return "x".join(str(d) for d in dims)
