"""Datasets and differentiable classifiers with flat parameter vectors.

Two model families are supported: multinomial logistic regression and a
one-hidden-layer MLP (tanh or relu). Parameters live in a single flat
float64 vector so that gossip averaging, momentum and compression can
treat every model as an ndarray of length d. Flattening order is layer 1
weights (row-major), layer 1 bias, then layer 2 weights and bias for the
MLP. All math is 64-bit and deterministic.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, ParseError, ShapeError


@dataclass(frozen=True)
class Dataset:
    """Feature matrix (n, k) float64 with integer labels in [0, num_classes)."""

    features: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        if self.features.ndim != 2:
            raise ShapeError(f"features must be 2-D, got {self.features.ndim}-D")
        if self.labels.shape != (self.features.shape[0],):
            raise ShapeError("labels length must match feature rows")
        if self.num_classes < 2:
            raise ConfigurationError("need at least two classes")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ConfigurationError("labels must lie in [0, num_classes)")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class ModelSpec:
    """Architecture description; hidden_dim 0 means plain logistic regression."""

    input_dim: int
    num_classes: int
    hidden_dim: int = 0
    activation: str = "tanh"

    def __post_init__(self):
        if self.input_dim < 1 or self.num_classes < 2 or self.hidden_dim < 0:
            raise ConfigurationError("bad model dimensions")
        if self.activation not in ("tanh", "relu"):
            raise ConfigurationError(f"unknown activation {self.activation!r}")

    @property
    def kind(self) -> str:
        return "mlp" if self.hidden_dim > 0 else "logistic"

    @property
    def param_count(self) -> int:
        k, h, c = self.input_dim, self.hidden_dim, self.num_classes
        if h == 0:
            return k * c + c
        return k * h + h + h * c + c


def init_params(spec: ModelSpec, rng: np.random.Generator) -> np.ndarray:
    """Gaussian weights scaled by 1/sqrt(fan_in), zero biases, flat float64."""
    k, h, c = spec.input_dim, spec.hidden_dim, spec.num_classes
    if h == 0:
        w = rng.standard_normal((k, c)) / np.sqrt(k)
        b = np.zeros(c)
        return np.concatenate([w.ravel(), b])
    w1 = rng.standard_normal((k, h)) / np.sqrt(k)
    b1 = np.zeros(h)
    w2 = rng.standard_normal((h, c)) / np.sqrt(h)
    b2 = np.zeros(c)
    return np.concatenate([w1.ravel(), b1, w2.ravel(), b2])


def unflatten(spec: ModelSpec, params: np.ndarray):
    """Split a flat vector into per-layer (weights, bias) views."""
    if params.shape != (spec.param_count,):
        raise ShapeError(f"expected {spec.param_count} params, got {params.shape}")
    k, h, c = spec.input_dim, spec.hidden_dim, spec.num_classes
    if h == 0:
        w = params[: k * c].reshape(k, c)
        b = params[k * c :]
        return [(w, b)]
    o1 = k * h
    o2 = o1 + h
    o3 = o2 + h * c
    return [
        (params[:o1].reshape(k, h), params[o1:o2]),
        (params[o2:o3].reshape(h, c), params[o3:]),
    ]


def _forward(spec: ModelSpec, params: np.ndarray, x: np.ndarray):
    """Return (logits, cache) where cache holds what backprop needs."""
    layers = unflatten(spec, params)
    if spec.hidden_dim == 0:
        w, b = layers[0]
        return x @ w + b, (x,)
    (w1, b1), (w2, b2) = layers
    pre = x @ w1 + b1
    hid = np.tanh(pre) if spec.activation == "tanh" else np.maximum(pre, 0.0)
    return hid @ w2 + b2, (x, pre, hid, w2)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _check_batch(data: Dataset, batch: np.ndarray) -> np.ndarray:
    batch = np.asarray(batch)
    if batch.ndim != 1 or batch.size == 0:
        raise ShapeError("batch must be a non-empty 1-D index array")
    if batch.min() < 0 or batch.max() >= data.n:
        raise ShapeError("batch indices out of range")
    return batch


def loss_and_gradient(spec: ModelSpec, params: np.ndarray, data: Dataset,
                      batch: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over the batch and its exact analytic gradient."""
    batch = _check_batch(data, batch)
    x = data.features[batch]
    y = data.labels[batch]
    logits, cache = _forward(spec, params, x)
    logp = _log_softmax(logits)
    n = x.shape[0]
    loss = -logp[np.arange(n), y].mean()

    dlogits = np.exp(logp)
    dlogits[np.arange(n), y] -= 1.0
    dlogits /= n
    if spec.hidden_dim == 0:
        (xc,) = cache
        dw = xc.T @ dlogits
        db = dlogits.sum(axis=0)
        return float(loss), np.concatenate([dw.ravel(), db])
    xc, pre, hid, w2 = cache
    dw2 = hid.T @ dlogits
    db2 = dlogits.sum(axis=0)
    dhid = dlogits @ w2.T
    if spec.activation == "tanh":
        dpre = dhid * (1.0 - hid * hid)
    else:
        dpre = dhid * (pre > 0.0)
    dw1 = xc.T @ dpre
    db1 = dpre.sum(axis=0)
    return float(loss), np.concatenate([dw1.ravel(), db1, dw2.ravel(), db2])


def cross_gradient(spec: ModelSpec, foreign_params: np.ndarray, data: Dataset,
                   batch: np.ndarray) -> np.ndarray:
    """Gradient of this data's batch loss evaluated at another agent's params."""
    _, grad = loss_and_gradient(spec, foreign_params, data, batch)
    return grad


def finite_difference_gradient(spec: ModelSpec, params: np.ndarray, data: Dataset,
                               batch: np.ndarray, h: float = 1e-4) -> np.ndarray:
    """Central-difference gradient; test oracle, O(d) loss evaluations."""
    if h <= 0:
        raise ConfigurationError("step h must be positive")
    grad = np.zeros_like(params, dtype=float)
    probe = params.astype(float).copy()
    for i in range(params.size):
        orig = probe[i]
        probe[i] = orig + h
        hi, _ = loss_and_gradient(spec, probe, data, batch)
        probe[i] = orig - h
        lo, _ = loss_and_gradient(spec, probe, data, batch)
        probe[i] = orig
        grad[i] = (hi - lo) / (2.0 * h)
    return grad


def evaluate(spec: ModelSpec, params: np.ndarray, data: Dataset) -> tuple[float, float]:
    """Full-dataset mean cross-entropy and top-1 accuracy (ties -> lowest class)."""
    logits, _ = _forward(spec, params, data.features)
    logp = _log_softmax(logits)
    loss = -logp[np.arange(data.n), data.labels].mean()
    acc = float((logits.argmax(axis=1) == data.labels).mean())
    return float(loss), acc


def class_centers(num_classes: int, dim: int) -> np.ndarray:
    """Deterministic class centers, evenly spaced on a unit great circle.

    Adjacent classes sit 2*sin(pi/C) apart, so the pairwise margins shrink
    as the class count grows and boundary placement stays non-trivial even
    in high-dimensional feature spaces.
    """
    if dim >= 2:
        angles = 2.0 * np.pi * np.arange(num_classes) / num_classes
        centers = np.zeros((num_classes, dim))
        centers[:, 0] = np.cos(angles)
        centers[:, 1] = np.sin(angles)
        return centers
    if num_classes == 2:
        return np.array([[-1.0], [1.0]])
    raise ConfigurationError("dim 1 supports only two classes")


def generate_synthetic(num_classes: int, dim: int, per_class: int, spread: float,
                       seed: int) -> Dataset:
    """Isotropic Gaussian mixture with one cluster per class, class-major order."""
    if num_classes < 2:
        raise ConfigurationError("need at least two classes")
    if per_class < 1:
        raise ConfigurationError("per_class must be positive")
    if spread <= 0:
        raise ConfigurationError("spread must be positive")
    if dim < 1:
        raise ConfigurationError("dim must be positive")
    centers = class_centers(num_classes, dim)
    rng = np.random.default_rng(seed)
    feats = np.empty((num_classes * per_class, dim))
    labels = np.empty(num_classes * per_class, dtype=np.int64)
    for c in range(num_classes):
        lo = c * per_class
        feats[lo : lo + per_class] = centers[c] + spread * rng.standard_normal((per_class, dim))
        labels[lo : lo + per_class] = c
    return Dataset(feats, labels, num_classes)


def load_csv(path: str) -> Dataset:
    """Read `label,f1,...,fk` rows; parse errors name the offending line."""
    rows = []
    labels = []
    width = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if width is None:
                width = len(parts)
                if width < 2:
                    raise ParseError(f"line {lineno}: need a label and at least one feature")
            elif len(parts) != width:
                raise ParseError(f"line {lineno}: expected {width} fields, got {len(parts)}")
            try:
                label = int(parts[0])
                feats = [float(v) for v in parts[1:]]
            except ValueError as exc:
                raise ParseError(f"line {lineno}: {exc}") from None
            if label < 0:
                raise ParseError(f"line {lineno}: negative label {label}")
            labels.append(label)
            rows.append(feats)
    if not rows:
        raise ParseError("no data rows found")
    labels_arr = np.asarray(labels, dtype=np.int64)
    return Dataset(np.asarray(rows, dtype=float), labels_arr, int(labels_arr.max()) + 1)
