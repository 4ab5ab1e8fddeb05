"""Small MLP engine with hand-written backprop and plain SGD.

Weights are stored as ``(out, in)`` matrices so a layer is ``W @ h + b``.
Everything runs in the model's dtype (float32 by default); tests that
compare against finite differences cast a copy to float64 first.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


class Head(str, enum.Enum):
    SOFTMAX = "softmax"
    LINEAR = "linear"


class Activation(str, enum.Enum):
    TANH = "tanh"
    RELU = "relu"


class Loss(str, enum.Enum):
    CROSS_ENTROPY = "cross_entropy"      # soft-target CE against a distribution
    SQUARED_ERROR = "squared_error"
    POLICY_GRADIENT = "policy_gradient"  # -A * log pi(a), targets are one-hot actions


class NonFiniteLossError(FloatingPointError):
    pass


@dataclass(frozen=True)
class MlpConfig:
    input_dim: int = 4
    hidden_layers: int = 2
    hidden_width: int = 24
    output_dim: int = 2
    head: Head = Head.SOFTMAX
    activation: Activation = Activation.TANH

    def __post_init__(self):
        if self.hidden_layers < 0:
            raise ValueError("hidden_layers must be >= 0")
        if self.hidden_width < 1 or self.input_dim < 1 or self.output_dim < 1:
            raise ValueError("layer dimensions must be >= 1")

    @property
    def layer_sizes(self) -> list[int]:
        return [self.input_dim] + [self.hidden_width] * self.hidden_layers + [self.output_dim]


def weight_count(config: MlpConfig) -> int:
    """Number of trainable scalars (weights plus biases)."""
    sizes = config.layer_sizes
    return sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))


@dataclass
class MlpModel:
    config: MlpConfig
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def parameters(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def parameter_count(self) -> int:
        return sum(p.size for p in self.parameters())

    def copy(self) -> "MlpModel":
        return MlpModel(self.config, [w.copy() for w in self.weights],
                        [b.copy() for b in self.biases])

    def astype(self, dtype) -> "MlpModel":
        return MlpModel(self.config, [w.astype(dtype) for w in self.weights],
                        [b.astype(dtype) for b in self.biases])

    def flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.parameters()])

    def to_bytes(self) -> bytes:
        """Flat little-endian float32 buffer, layer order, W row-major then b."""
        return self.flat().astype("<f4").tobytes()

    @classmethod
    def from_bytes(cls, config: MlpConfig, buf: bytes) -> "MlpModel":
        n = weight_count(config)
        if len(buf) != 4 * n:
            raise ValueError(f"expected {4 * n} bytes for {config}, got {len(buf)}")
        flat = np.frombuffer(buf, dtype="<f4").astype(np.float32)
        return _unflatten(config, flat)

    def __eq__(self, other):
        if not isinstance(other, MlpModel) or other.config != self.config:
            return NotImplemented
        return all(np.array_equal(a, b) for a, b in zip(self.parameters(), other.parameters()))


def _unflatten(config: MlpConfig, flat: np.ndarray) -> MlpModel:
    sizes = config.layer_sizes
    weights, biases, pos = [], [], 0
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        weights.append(flat[pos:pos + fan_in * fan_out].reshape(fan_out, fan_in).copy())
        pos += fan_in * fan_out
        biases.append(flat[pos:pos + fan_out].copy())
        pos += fan_out
    return MlpModel(config, weights, biases)


def init(config: MlpConfig, seed, dtype=np.float32) -> MlpModel:
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    sizes = config.layer_sizes
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)).astype(dtype))
        biases.append(np.zeros(fan_out, dtype=dtype))
    return MlpModel(config, weights, biases)


def zeros_like(model: MlpModel) -> MlpModel:
    return MlpModel(model.config, [np.zeros_like(w) for w in model.weights],
                    [np.zeros_like(b) for b in model.biases])


def _act(kind: Activation, z):
    if kind is Activation.TANH:
        return np.tanh(z)
    return np.maximum(z, 0)


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def forward(model: MlpModel, x, return_cache: bool = False):
    """Evaluate the net on one input vector or a ``(batch, input_dim)`` array.

    With ``return_cache`` the per-layer activations (input included) and the
    pre-head logits are returned as well, for use by :func:`backward`.
    """
    h = np.asarray(x, dtype=model.weights[0].dtype)
    if h.shape[-1] != model.config.input_dim:
        raise ValueError(f"input has {h.shape[-1]} features, model expects {model.config.input_dim}")
    acts = [h]
    last = len(model.weights) - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = h @ w.T + b
        if i < last:
            h = _act(model.config.activation, z)
            acts.append(h)
    out = _softmax(z) if model.config.head is Head.SOFTMAX else z
    if return_cache:
        return out, (acts, z)
    return out


def policy_probs(model: MlpModel, x: Sequence[float]) -> tuple[float, float]:
    """Fast single-state path for a 2-way softmax policy; returns (p_left, p_right)."""
    h = np.asarray(x, dtype=model.weights[0].dtype)
    ws, bs = model.weights, model.biases
    relu = model.config.activation is Activation.RELU
    for i in range(len(ws) - 1):
        h = ws[i] @ h + bs[i]
        h = np.maximum(h, 0) if relu else np.tanh(h)
    z = ws[-1] @ h + bs[-1]
    d = float(z[1] - z[0])
    # logistic in a numerically safe form
    if d >= 0:
        e = np.exp(-d)
        p_right = 1.0 / (1.0 + e)
        return 1.0 - p_right, p_right
    e = np.exp(d)
    p_left = 1.0 / (1.0 + e)
    return p_left, 1.0 - p_left


@dataclass
class TrainBatch:
    inputs: np.ndarray
    targets: np.ndarray
    loss: Loss
    advantages: np.ndarray | None = field(default=None)

    def __post_init__(self):
        self.inputs = np.atleast_2d(np.asarray(self.inputs))
        self.targets = np.asarray(self.targets)
        if self.targets.ndim == 1:
            self.targets = self.targets[:, None]
        if len(self.inputs) != len(self.targets):
            raise ValueError("inputs and targets must have the same length")
        if len(self.inputs) == 0:
            raise ValueError("empty batch")
        if self.loss is Loss.POLICY_GRADIENT:
            if self.advantages is None:
                raise ValueError("policy-gradient batch needs advantages")
            self.advantages = np.asarray(self.advantages).reshape(-1)
            if len(self.advantages) != len(self.inputs):
                raise ValueError("one advantage per sample")
        if self.loss in (Loss.CROSS_ENTROPY, Loss.POLICY_GRADIENT):
            sums = self.targets.sum(axis=1)
            if not np.allclose(sums, 1.0, atol=1e-5):
                raise ValueError("distribution targets must sum to 1")


_LOG_EPS = 1e-12


def loss_value(model: MlpModel, batch: TrainBatch) -> float:
    """Mean loss over the batch."""
    out = forward(model, batch.inputs)
    return _loss_from_output(model, out, batch)


def _loss_from_output(model, out, batch) -> float:
    t = batch.targets.astype(out.dtype)
    if batch.loss is Loss.SQUARED_ERROR:
        per = ((out - t) ** 2).sum(axis=1)
    else:
        if model.config.head is not Head.SOFTMAX:
            raise ValueError(f"{batch.loss.value} loss needs a softmax head")
        logp = np.log(np.maximum(out, _LOG_EPS))
        per = -(t * logp).sum(axis=1)
        if batch.loss is Loss.POLICY_GRADIENT:
            per = per * batch.advantages
    return float(per.mean())


def backward(model: MlpModel, batch: TrainBatch) -> tuple[MlpModel, float]:
    """Mean gradient of the batch loss w.r.t. every parameter, plus the loss."""
    out, (acts, _) = forward(model, batch.inputs, return_cache=True)
    loss = _loss_from_output(model, out, batch)
    if not np.isfinite(loss):
        raise NonFiniteLossError(
            f"{batch.loss.value} loss is {loss} (batch of {len(batch.inputs)}, "
            f"max |param| {max(float(np.abs(p).max()) for p in model.parameters()):.3g})"
        )
    n = len(batch.inputs)
    t = batch.targets.astype(out.dtype)
    if batch.loss is Loss.SQUARED_ERROR:
        delta = 2.0 * (out - t)
        if model.config.head is Head.SOFTMAX:
            # chain through softmax jacobian
            delta = out * (delta - (delta * out).sum(axis=1, keepdims=True))
    elif batch.loss is Loss.CROSS_ENTROPY:
        delta = out - t
    else:
        delta = (out - t) * batch.advantages[:, None].astype(out.dtype)
    delta = delta / n

    grads_w, grads_b = [None] * len(model.weights), [None] * len(model.weights)
    relu = model.config.activation is Activation.RELU
    for i in range(len(model.weights) - 1, -1, -1):
        h_in = acts[i]
        grads_w[i] = delta.T @ h_in
        grads_b[i] = delta.sum(axis=0)
        if i > 0:
            back = delta @ model.weights[i]
            if relu:
                delta = back * (h_in > 0)
            else:
                delta = back * (1.0 - h_in * h_in)
    return MlpModel(model.config, grads_w, grads_b), loss


def apply_update(model: MlpModel, gradient: MlpModel, learning_rate: float) -> MlpModel:
    """Return a new model with ``params - learning_rate * gradient``."""
    if gradient.config != model.config:
        raise ValueError("gradient shape does not match model")
    lr = model.weights[0].dtype.type(learning_rate)
    return MlpModel(
        model.config,
        [w - lr * g for w, g in zip(model.weights, gradient.weights)],
        [b - lr * g for b, g in zip(model.biases, gradient.biases)],
    )


def average_models(models: Sequence[MlpModel], weights: Sequence[float] | None = None) -> MlpModel:
    """Parameter-wise weighted mean (FedAvg)."""
    if not models:
        raise ValueError("nothing to average")
    config = models[0].config
    for m in models[1:]:
        if m.config != config:
            raise ValueError(f"cannot average heterogeneous models: {m.config} vs {config}")
    if weights is None:
        weights = [1.0] * len(models)
    w = np.asarray(weights, dtype=np.float64)
    if len(w) != len(models) or (w < 0).any() or w.sum() <= 0:
        raise ValueError("weights must be non-negative, one per model, with positive sum")
    w = w / w.sum()
    dtype = models[0].weights[0].dtype
    n_layers = len(models[0].weights)

    def mean(get):
        return [sum(wi * get(m)[k].astype(np.float64) for wi, m in zip(w, models)).astype(dtype)
                for k in range(n_layers)]

    return MlpModel(config, mean(lambda m: m.weights), mean(lambda m: m.biases))
