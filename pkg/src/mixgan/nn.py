"""Small dense-network engine used by every model in the package.

Batches are float64 arrays with one sample per row. Weights are stored as
``(in_dim, out_dim)`` so a layer computes ``x @ W + b``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

ACTIVATIONS = ("leaky_relu", "relu", "sigmoid", "linear", "softmax")
LEAKY_SLOPE = 0.01
BCE_EPS = 1e-7


class ShapeError(ValueError):
    """Input or parameter dimensions do not chain."""

    def __init__(self, message: str, layer: int | None = None):
        self.layer = layer
        if layer is not None:
            message = f"layer {layer}: {message}"
        super().__init__(message)


class CacheMismatchError(ValueError):
    pass


@dataclass
class DenseLayer:
    weights: np.ndarray
    bias: np.ndarray
    activation: str = "linear"
    slope: float = LEAKY_SLOPE

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64).reshape(-1)
        if self.weights.ndim != 2:
            raise ShapeError("weights must be 2-d")
        if self.bias.shape[0] != self.weights.shape[1]:
            raise ShapeError(
                f"bias has {self.bias.shape[0]} entries, weights have {self.weights.shape[1]} columns"
            )
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def in_dim(self) -> int:
        return self.weights.shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[1]


@dataclass
class Mlp:
    """A chain of dense layers.

    ``dropout_positions`` holds layer indices ``i`` after whose activation a
    dropout mask is applied (before layer ``i + 1``).
    """

    layers: list[DenseLayer]
    dropout_rate: float = 0.0
    dropout_positions: frozenset[int] = field(default_factory=frozenset)

    def __post_init__(self):
        if not self.layers:
            raise ValueError("an Mlp needs at least one layer")
        if not 0.0 <= self.dropout_rate <= 1.0:
            raise ValueError(f"dropout_rate must be in [0, 1], got {self.dropout_rate}")
        self.dropout_positions = frozenset(int(p) for p in self.dropout_positions)
        for i in range(1, len(self.layers)):
            if self.layers[i - 1].out_dim != self.layers[i].in_dim:
                raise ShapeError(
                    f"expects {self.layers[i].in_dim} inputs but previous layer emits "
                    f"{self.layers[i - 1].out_dim}",
                    layer=i,
                )
        for p in self.dropout_positions:
            if not 0 <= p < len(self.layers) - 1:
                raise ValueError(f"dropout position {p} is not between two layers")

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    def parameters(self) -> list[np.ndarray]:
        """Flat parameter list ``[W0, b0, W1, b1, ...]`` (live references)."""
        out = []
        for layer in self.layers:
            out.extend((layer.weights, layer.bias))
        return out

    def n_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def copy(self) -> "Mlp":
        return Mlp(
            [DenseLayer(l.weights.copy(), l.bias.copy(), l.activation, l.slope) for l in self.layers],
            self.dropout_rate,
            self.dropout_positions,
        )


@dataclass
class Cache:
    """Activation record from :func:`forward`, consumed by :func:`backward`."""

    inputs: list[np.ndarray]  # input to each layer (after any dropout)
    pre: list[np.ndarray]  # pre-activations
    post: list[np.ndarray]  # activations
    masks: dict[int, np.ndarray]
    layer_shapes: tuple[tuple[int, int], ...]


def init_weights(shape: tuple[int, int], rng: np.random.Generator) -> np.ndarray:
    """He-uniform draw with bound ``sqrt(6 / in_dim)``."""
    in_dim, out_dim = shape
    if in_dim <= 0 or out_dim <= 0:
        raise ValueError(f"dimensions must be positive, got {shape}")
    bound = np.sqrt(6.0 / in_dim)
    return rng.uniform(-bound, bound, size=(in_dim, out_dim))


def build_mlp(
    sizes: Sequence[int],
    activations: Sequence[str],
    rng: np.random.Generator,
    dropout_rate: float = 0.0,
    dropout_positions: Sequence[int] = (),
    slope: float = LEAKY_SLOPE,
) -> Mlp:
    if len(activations) != len(sizes) - 1:
        raise ValueError("need one activation per layer")
    layers = [
        DenseLayer(init_weights((n_in, n_out), rng), np.zeros(n_out), act, slope)
        for n_in, n_out, act in zip(sizes[:-1], sizes[1:], activations)
    ]
    return Mlp(layers, dropout_rate, frozenset(dropout_positions))


def _activate(z: np.ndarray, kind: str, slope: float) -> np.ndarray:
    if kind == "linear":
        return z
    if kind == "leaky_relu":
        return np.where(z > 0, z, slope * z)
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "sigmoid":
        return sigmoid(z)
    return softmax(z)


def _activation_backward(g: np.ndarray, z: np.ndarray, a: np.ndarray, kind: str, slope: float) -> np.ndarray:
    if kind == "linear":
        return g
    if kind == "leaky_relu":
        return np.where(z > 0, g, slope * g)
    if kind == "relu":
        return np.where(z > 0, g, 0.0)
    if kind == "sigmoid":
        return g * a * (1.0 - a)
    # softmax Jacobian-vector product, row-wise
    return a * (g - np.sum(g * a, axis=1, keepdims=True))


def sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def forward(
    mlp: Mlp,
    batch: np.ndarray,
    train_mode: bool = False,
    rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, Cache]:
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"batch must be 2-d, got shape {x.shape}", layer=0)
    use_dropout = train_mode and mlp.dropout_rate > 0 and bool(mlp.dropout_positions)
    if use_dropout and rng is None:
        raise ValueError("train_mode with dropout needs an rng")
    keep = 1.0 - mlp.dropout_rate

    inputs, pre, post, masks = [], [], [], {}
    for i, layer in enumerate(mlp.layers):
        if x.shape[1] != layer.in_dim:
            raise ShapeError(f"expected {layer.in_dim} input columns, got {x.shape[1]}", layer=i)
        inputs.append(x)
        z = x @ layer.weights + layer.bias
        a = _activate(z, layer.activation, layer.slope)
        pre.append(z)
        post.append(a)
        x = a
        if use_dropout and i in mlp.dropout_positions:
            if keep > 0:
                mask = (rng.random(x.shape) < keep) / keep
            else:
                mask = np.zeros(x.shape)
            masks[i] = mask
            x = x * mask
    shapes = tuple(l.weights.shape for l in mlp.layers)
    return x, Cache(inputs, pre, post, masks, shapes)


def backward(mlp: Mlp, cache: Cache, grad_output: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
    """Backpropagate ``grad_output`` through the cached forward pass.

    Returns the parameter gradients in :meth:`Mlp.parameters` order and the
    gradient with respect to the network input.
    """
    if cache.layer_shapes != tuple(l.weights.shape for l in mlp.layers):
        raise CacheMismatchError("cache was produced by a network with different layer shapes")
    g = np.asarray(grad_output, dtype=np.float64)
    if g.shape != cache.post[-1].shape:
        raise CacheMismatchError(f"grad_output shape {g.shape} != output shape {cache.post[-1].shape}")

    grads: list[np.ndarray] = [None] * (2 * len(mlp.layers))  # type: ignore[list-item]
    for i in range(len(mlp.layers) - 1, -1, -1):
        layer = mlp.layers[i]
        if i in cache.masks:
            g = g * cache.masks[i]
        gz = _activation_backward(g, cache.pre[i], cache.post[i], layer.activation, layer.slope)
        grads[2 * i] = cache.inputs[i].T @ gz
        grads[2 * i + 1] = gz.sum(axis=0)
        g = gz @ layer.weights.T
    return grads, g


def mse_loss(prediction: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Squared L2 error per sample, averaged over the batch."""
    prediction = np.asarray(prediction, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if prediction.shape != target.shape:
        raise ShapeError(f"prediction {prediction.shape} vs target {target.shape}")
    n = prediction.shape[0]
    diff = prediction - target
    return float(np.sum(diff * diff) / n), 2.0 * diff / n


def bce_loss(prob: np.ndarray, label: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean binary cross-entropy.

    Probabilities are clamped to ``[1e-7, 1 - 1e-7]`` first; the gradient is
    evaluated at the clamped value.
    """
    p = np.clip(np.asarray(prob, dtype=np.float64), BCE_EPS, 1.0 - BCE_EPS)
    y = np.asarray(label, dtype=np.float64)
    if p.shape != y.shape:
        raise ShapeError(f"prob {p.shape} vs label {y.shape}")
    n = p.size
    loss = -np.sum(y * np.log(p) + (1.0 - y) * np.log1p(-p)) / n
    grad = (p - y) / (p * (1.0 - p)) / n
    return float(loss), grad


def softmax_ce_loss(logits: np.ndarray, targets: np.ndarray) -> tuple[float, np.ndarray]:
    """Cross-entropy of softmax(logits) against class indices or soft label rows."""
    logits = np.asarray(logits, dtype=np.float64)
    n, k = logits.shape
    targets = np.asarray(targets)
    if targets.ndim == 1:
        idx = targets.astype(np.int64)
        if idx.shape[0] != n:
            raise ShapeError(f"{idx.shape[0]} labels for {n} rows")
        if np.any(idx < 0) or np.any(idx >= k):
            raise ValueError(f"class index out of range [0, {k})")
        dist = np.zeros((n, k))
        dist[np.arange(n), idx] = 1.0
    else:
        dist = targets.astype(np.float64)
        if dist.shape != logits.shape:
            raise ShapeError(f"soft targets {dist.shape} vs logits {logits.shape}")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_p = shifted - log_norm
    loss = -np.sum(dist * log_p) / n
    grad = (np.exp(log_p) * dist.sum(axis=1, keepdims=True) - dist) / n
    return float(loss), grad


@dataclass
class AdamState:
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    first_moment: list[np.ndarray] = field(default_factory=list)
    second_moment: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_params(cls, params: Sequence[np.ndarray], learning_rate: float, **kw) -> "AdamState":
        return cls(
            learning_rate=learning_rate,
            first_moment=[np.zeros_like(p) for p in params],
            second_moment=[np.zeros_like(p) for p in params],
            **kw,
        )


def adam_step(params: Sequence[np.ndarray], gradients: Sequence[np.ndarray], state: AdamState) -> AdamState:
    """Bias-corrected Adam update, applied to ``params`` in place."""
    if len(params) != len(gradients):
        raise ShapeError(f"{len(params)} parameters but {len(gradients)} gradients")
    if not state.first_moment:
        state.first_moment = [np.zeros_like(p) for p in params]
        state.second_moment = [np.zeros_like(p) for p in params]
    if len(state.first_moment) != len(params):
        raise ShapeError("optimizer state does not match parameter list")
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    step_size = state.learning_rate / bc1
    inv_sqrt_bc2 = 1.0 / np.sqrt(bc2)
    for p, g, m, v in zip(params, gradients, state.first_moment, state.second_moment):
        if p.shape != g.shape or m.shape != p.shape:
            raise ShapeError(f"parameter {p.shape} vs gradient {np.shape(g)}")
        tmp = np.multiply(g, 1.0 - state.beta1)
        m *= state.beta1
        m += tmp
        np.multiply(g, g, out=tmp)
        tmp *= 1.0 - state.beta2
        v *= state.beta2
        v += tmp
        # p -= lr * m_hat / (sqrt(v_hat) + eps), written without extra temporaries
        np.sqrt(v, out=tmp)
        tmp *= inv_sqrt_bc2
        tmp += state.epsilon
        np.divide(m, tmp, out=tmp)
        tmp *= step_size
        p -= tmp
    return state


def finite_diff_gradient(
    loss_fn: Callable[[], float],
    params: Sequence[np.ndarray],
    step: float = 1e-4,
) -> list[np.ndarray]:
    """Central differences of ``loss_fn()`` with respect to each entry of ``params``.

    ``loss_fn`` must read the arrays in ``params`` by reference; entries are
    perturbed in place and restored.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    out = []
    for p in params:
        g = np.zeros_like(p, dtype=np.float64)
        flat = p.reshape(-1)
        gflat = g.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + step
            up = loss_fn()
            flat[k] = orig - step
            down = loss_fn()
            flat[k] = orig
            gflat[k] = (up - down) / (2.0 * step)
        out.append(g)
    return out


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-12) -> float:
    """Norm-wise relative error ``|a - b| / max(|a|, |b|)``."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    denom = max(np.linalg.norm(a), np.linalg.norm(b), floor)
    return float(np.linalg.norm(a - b) / denom)
