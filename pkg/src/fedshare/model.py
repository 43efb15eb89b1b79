"""Small softmax classifiers with hand-rolled gradients and momentum SGD.

Two architectures cover the simulations: multinomial logistic regression and a
one-hidden-layer perceptron with rectified activation. Parameters live in one
flat float64 vector; `layer_dims` (input, [hidden,] output) fixes how the
vector unpacks into weight matrices and bias vectors. All training state is
value-typed: `train_epoch` returns updated copies and never mutates inputs.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import LabeledDataset

__all__ = [
    "ModelSpec",
    "ModelParameters",
    "OptimizerState",
    "TrainingDivergenceError",
    "LOGISTIC",
    "MLP",
    "layer_dims_for",
    "parameter_count",
    "init_model",
    "init_optimizer",
    "forward",
    "cross_entropy",
    "gradient",
    "train_epoch",
    "evaluate_accuracy",
    "per_class_accuracy",
    "to_bytes",
    "from_bytes",
    "header_meta",
    "save_params",
    "load_params",
]

LOGISTIC = "logistic"
MLP = "mlp"


class TrainingDivergenceError(ArithmeticError):
    """Loss or gradient went non-finite; carries the offending batch index."""

    def __init__(self, batch_index: int, message: str):
        super().__init__(message)
        self.batch_index = batch_index


@dataclass(frozen=True)
class ModelSpec:
    """Architecture choice; hidden_width applies to the perceptron only."""

    architecture: str = LOGISTIC
    hidden_width: int = 0
    init_seed: int | None = None

    def __post_init__(self):
        if self.architecture not in (LOGISTIC, MLP):
            raise ValueError(f"unknown architecture {self.architecture!r}")
        if self.architecture == MLP and self.hidden_width < 1:
            raise ValueError("mlp needs hidden_width >= 1")


def layer_dims_for(spec: ModelSpec, dim: int, n_c: int) -> tuple[int, ...]:
    if spec.architecture == LOGISTIC:
        return (dim, n_c)
    return (dim, spec.hidden_width, n_c)


def parameter_count(layer_dims: tuple[int, ...]) -> int:
    return sum(a * b + b for a, b in zip(layer_dims[:-1], layer_dims[1:]))


@dataclass(frozen=True)
class ModelParameters:
    """Flat parameter vector plus the layer sizes that give it shape.

    Unpacks as affine layers with rectified activations between them and a
    softmax read-out: (dim, n_c) is logistic regression, (dim, h, n_c) the
    one-hidden-layer perceptron.
    """

    values: np.ndarray
    layer_dims: tuple[int, ...]

    def __post_init__(self):
        values = np.ascontiguousarray(self.values, dtype=np.float64)
        if values.ndim != 1 or values.size != parameter_count(self.layer_dims):
            raise ValueError(
                f"expected {parameter_count(self.layer_dims)} parameters for "
                f"dims {self.layer_dims}, got shape {self.values.shape}"
            )
        if not np.all(np.isfinite(values)):
            raise ValueError("parameters must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def n_classes(self) -> int:
        return self.layer_dims[-1]


@dataclass(frozen=True)
class OptimizerState:
    """SGD-with-momentum state; velocity is aligned with the parameter vector."""

    learning_rate: float
    momentum: float
    velocity: np.ndarray

    def __post_init__(self):
        velocity = np.ascontiguousarray(self.velocity, dtype=np.float64)
        velocity.setflags(write=False)
        object.__setattr__(self, "velocity", velocity)


def init_optimizer(m: ModelParameters, learning_rate: float, momentum: float) -> OptimizerState:
    return OptimizerState(learning_rate, momentum, np.zeros_like(m.values))


def _unpack(values: np.ndarray, layer_dims: tuple[int, ...]) -> list[tuple[np.ndarray, np.ndarray]]:
    layers = []
    offset = 0
    for a, b in zip(layer_dims[:-1], layer_dims[1:]):
        w = values[offset : offset + a * b].reshape(a, b)
        offset += a * b
        bias = values[offset : offset + b]
        offset += b
        layers.append((w, bias))
    return layers


def init_model(
    spec: ModelSpec, dim: int, n_c: int, rng: np.random.Generator | None = None
) -> ModelParameters:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases."""
    if dim < 1 or n_c < 2:
        raise ValueError("need dim >= 1 and n_c >= 2")
    if rng is None:
        rng = np.random.default_rng(spec.init_seed)
    layer_dims = layer_dims_for(spec, dim, n_c)
    values = np.zeros(parameter_count(layer_dims))
    offset = 0
    for a, b in zip(layer_dims[:-1], layer_dims[1:]):
        limit = 1.0 / np.sqrt(a)
        values[offset : offset + a * b] = rng.uniform(-limit, limit, size=a * b)
        offset += a * b + b  # biases stay zero
    return ModelParameters(values, layer_dims)


def _as_batch(features: np.ndarray, dim: int) -> tuple[np.ndarray, bool]:
    x = np.asarray(features, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != dim:
        raise ValueError(f"features must have dimensionality {dim}, got shape {x.shape}")
    return x, single


def _logits(values: np.ndarray, layer_dims: tuple[int, ...], x: np.ndarray) -> np.ndarray:
    h = x
    layers = _unpack(values, layer_dims)
    for w, b in layers[:-1]:
        h = np.maximum(h @ w + b, 0.0)
    w, b = layers[-1]
    return h @ w + b


def _softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def forward(m: ModelParameters, features: np.ndarray) -> np.ndarray:
    """Class-probability vector(s) for one feature vector or a (B, dim) batch."""
    x, single = _as_batch(features, m.input_dim)
    probs = _softmax(_logits(m.values, m.layer_dims, x))
    return probs[0] if single else probs


def _loss_grad(
    values: np.ndarray, layer_dims: tuple[int, ...], x: np.ndarray, y: np.ndarray
) -> tuple[float, np.ndarray]:
    """Mean softmax cross-entropy over the batch and its flat gradient."""
    layers = _unpack(values, layer_dims)
    n = x.shape[0]
    acts = [x]
    pre: list[np.ndarray] = []
    h = x
    for w, b in layers[:-1]:
        z = h @ w + b
        pre.append(z)
        h = np.maximum(z, 0.0)
        acts.append(h)
    w, b = layers[-1]
    z = h @ w + b

    zmax = z.max(axis=1, keepdims=True)
    lse = zmax[:, 0] + np.log(np.exp(z - zmax).sum(axis=1))
    loss = float(np.mean(lse - z[np.arange(n), y]))

    # delta = d(mean loss)/d(logits) = (softmax - onehot)/n
    delta = np.exp(z - lse[:, None])
    delta[np.arange(n), y] -= 1.0
    delta /= n

    grad = np.empty_like(values)
    offset = values.size
    for li in range(len(layers) - 1, -1, -1):
        w, _ = layers[li]
        gw = acts[li].T @ delta
        gb = delta.sum(axis=0)
        offset -= gb.size
        grad[offset : offset + gb.size] = gb
        offset -= gw.size
        grad[offset : offset + gw.size] = gw.ravel()
        if li > 0:
            delta = (delta @ w.T) * (pre[li - 1] > 0.0)
    return loss, grad


def cross_entropy(m: ModelParameters, features: np.ndarray, labels: np.ndarray) -> float:
    """Mean cross-entropy of the model on (features, labels)."""
    x, _ = _as_batch(features, m.input_dim)
    y = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    loss, _ = _loss_grad(m.values, m.layer_dims, x, y)
    return loss


def gradient(m: ModelParameters, features: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Flat gradient of the mean cross-entropy at the model's parameters."""
    x, _ = _as_batch(features, m.input_dim)
    y = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    _, grad = _loss_grad(m.values, m.layer_dims, x, y)
    return grad


def train_epoch(
    m: ModelParameters,
    opt: OptimizerState,
    data: LabeledDataset,
    batch_size: int,
    rng: np.random.Generator,
) -> tuple[ModelParameters, OptimizerState]:
    """One pass over a seeded shuffle of `data` in mini-batches.

    Update rule per batch: v <- momentum*v - lr*g; w <- w + v, with g the mean
    cross-entropy gradient over the batch. Returns updated copies; raises
    TrainingDivergenceError if the loss or gradient goes non-finite.
    """
    if len(data) == 0:
        raise ValueError("data must be nonempty")
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    values = m.values.copy()
    velocity = opt.velocity.copy()
    order = rng.permutation(len(data))
    for batch_index, start in enumerate(range(0, len(data), batch_size)):
        idx = order[start : start + batch_size]
        # overflow surfaces as the explicit divergence error below, not a warning
        with np.errstate(over="ignore", invalid="ignore"):
            loss, grad = _loss_grad(values, m.layer_dims, data.features[idx], data.labels[idx])
        if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
            raise TrainingDivergenceError(
                batch_index, f"non-finite loss/gradient in batch {batch_index}"
            )
        velocity *= opt.momentum
        velocity -= opt.learning_rate * grad
        values += velocity
    return (
        ModelParameters(values, m.layer_dims),
        OptimizerState(opt.learning_rate, opt.momentum, velocity),
    )


def evaluate_accuracy(m: ModelParameters, data: LabeledDataset) -> float:
    """Fraction of samples whose argmax class matches the label (ties: lowest)."""
    if len(data) == 0:
        raise ValueError("data must be nonempty")
    logits = _logits(m.values, m.layer_dims, data.features)
    return float(np.mean(np.argmax(logits, axis=1) == data.labels))


def per_class_accuracy(m: ModelParameters, data: LabeledDataset) -> np.ndarray:
    """Accuracy restricted to each class; every class must be present."""
    counts = data.class_counts()
    missing = np.flatnonzero(counts == 0)
    if missing.size:
        raise ValueError(f"classes {missing.tolist()} absent from data")
    logits = _logits(m.values, m.layer_dims, data.features)
    preds = np.argmax(logits, axis=1)
    hits = preds == data.labels
    return np.array([hits[idx].mean() for idx in data.class_index])


# --- flat binary serialization: one ASCII header line + little-endian float64 ---

_HEADER_TAG = "fedshare-params"


def to_bytes(m: ModelParameters, meta: str = "") -> bytes:
    if "\n" in meta:
        raise ValueError("meta must be a single line")
    dims = ",".join(str(d) for d in m.layer_dims)
    header = f"{_HEADER_TAG} dims={dims} n={m.values.size} meta={meta}\n"
    return header.encode("ascii") + m.values.astype("<f8").tobytes()


def _split_header(blob: bytes) -> tuple[dict[str, str], bytes]:
    newline = blob.find(b"\n")
    if newline < 0:
        raise ValueError("missing header line")
    fields = blob[:newline].decode("ascii").split(" ", 3)
    if fields[0] != _HEADER_TAG or len(fields) != 4:
        raise ValueError("not a parameter blob")
    parsed = dict(f.split("=", 1) for f in fields[1:])
    return parsed, blob[newline + 1 :]


def header_meta(blob: bytes) -> str:
    parsed, _ = _split_header(blob)
    return parsed["meta"]


def from_bytes(blob: bytes) -> ModelParameters:
    parsed, payload = _split_header(blob)
    layer_dims = tuple(int(d) for d in parsed["dims"].split(","))
    n = int(parsed["n"])
    values = np.frombuffer(payload, dtype="<f8", count=n).astype(np.float64)
    return ModelParameters(values, layer_dims)


def save_params(m: ModelParameters, path: str | Path, meta: str = "") -> None:
    Path(path).write_bytes(to_bytes(m, meta))


def load_params(path: str | Path) -> ModelParameters:
    return from_bytes(Path(path).read_bytes())
