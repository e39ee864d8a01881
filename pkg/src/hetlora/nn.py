"""Small dense network engine in float64: forward, exact backprop, SGD, grad check.

Weights are stored ``d_in x d_out`` so a layer computes ``z = a @ W + b``.
Inputs may be a single vector ``(d,)`` or a batch ``(n, d)``; backward sums
parameter gradients over the batch rows, so callers wanting a batch mean
pass an upstream gradient already divided by ``n``.
"""
from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericalError


class Activation(enum.Enum):
    RELU = "relu"
    IDENTITY = "identity"


@dataclass
class DenseLayer:
    weights: np.ndarray
    bias: np.ndarray
    activation: Activation = Activation.IDENTITY

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 2:
            raise ConfigError(f"weights must be 2-D, got shape {self.weights.shape}")
        if self.bias.shape != (self.weights.shape[1],):
            raise ConfigError(
                f"bias length {self.bias.shape} does not match weights.cols {self.weights.shape[1]}"
            )

    @property
    def d_in(self) -> int:
        return self.weights.shape[0]

    @property
    def d_out(self) -> int:
        return self.weights.shape[1]

    def copy(self) -> "DenseLayer":
        return DenseLayer(self.weights.copy(), self.bias.copy(), self.activation)


@dataclass
class DenseStack:
    layers: list[DenseLayer] = field(default_factory=list)

    def __post_init__(self):
        for i in range(len(self.layers) - 1):
            if self.layers[i].d_out != self.layers[i + 1].d_in:
                raise ConfigError(
                    f"layer {i} outputs {self.layers[i].d_out} but layer {i + 1} expects {self.layers[i + 1].d_in}"
                )

    @property
    def d_in(self) -> int:
        return self.layers[0].d_in

    @property
    def d_out(self) -> int:
        return self.layers[-1].d_out

    @property
    def widths(self) -> list[int]:
        return [self.d_in] + [layer.d_out for layer in self.layers]

    def copy(self) -> "DenseStack":
        return DenseStack([layer.copy() for layer in self.layers])

    def parameters(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out.extend((layer.weights, layer.bias))
        return out

    def __add__(self, other: "DenseStack") -> "DenseStack":
        return DenseStack(self.layers + other.layers)


@dataclass
class GradBundle:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def parameters(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def __add__(self, other: "GradBundle") -> "GradBundle":
        return GradBundle(
            [a + b for a, b in zip(self.weights, other.weights)],
            [a + b for a, b in zip(self.biases, other.biases)],
        )


@dataclass
class ForwardCache:
    inputs: list[np.ndarray]
    preacts: list[np.ndarray]
    batched: bool


def init_layer(d_in: int, d_out: int, activation: Activation, rng: np.random.Generator) -> DenseLayer:
    """Uniform fan-based init in +-sqrt(6 / (d_in + d_out)), zero bias."""
    limit = np.sqrt(6.0 / (d_in + d_out))
    w = rng.uniform(-limit, limit, size=(d_in, d_out))
    return DenseLayer(w, np.zeros(d_out), activation)


def build_stack(widths, rng: np.random.Generator, final_activation=Activation.IDENTITY) -> DenseStack:
    """ReLU between layers; ``final_activation`` on the last one."""
    widths = list(widths)
    if len(widths) < 2 or min(widths) < 1:
        raise ConfigError(f"stack widths must list >= 2 positive sizes, got {widths}")
    layers = []
    for i, (d_in, d_out) in enumerate(zip(widths[:-1], widths[1:])):
        act = final_activation if i == len(widths) - 2 else Activation.RELU
        layers.append(init_layer(d_in, d_out, act, rng))
    return DenseStack(layers)


def _activate(z: np.ndarray, activation: Activation) -> np.ndarray:
    if activation is Activation.RELU:
        return np.maximum(z, 0.0)
    return z


def stack_forward(stack: DenseStack, x) -> tuple[np.ndarray, ForwardCache]:
    x = np.asarray(x, dtype=np.float64)
    batched = x.ndim == 2
    a = x if batched else x[None, :]
    if a.shape[1] != stack.d_in:
        raise ConfigError(f"input has {a.shape[1]} features, stack expects {stack.d_in}")
    inputs, preacts = [], []
    for layer in stack.layers:
        inputs.append(a)
        z = a @ layer.weights + layer.bias
        preacts.append(z)
        a = _activate(z, layer.activation)
    return (a if batched else a[0]), ForwardCache(inputs, preacts, batched)


def stack_backward(stack: DenseStack, cache: ForwardCache, upstream) -> tuple[GradBundle, np.ndarray]:
    """Gradients w.r.t. every weight, bias, and the stack input."""
    if len(cache.inputs) != len(stack.layers):
        raise ConfigError("forward cache does not belong to this stack")
    delta = np.asarray(upstream, dtype=np.float64)
    if not cache.batched:
        delta = delta[None, :]
    if delta.shape != cache.preacts[-1].shape:
        raise ConfigError(f"upstream gradient shape {delta.shape} != output shape {cache.preacts[-1].shape}")
    n_layers = len(stack.layers)
    gw: list[np.ndarray] = [None] * n_layers  # type: ignore[list-item]
    gb: list[np.ndarray] = [None] * n_layers  # type: ignore[list-item]
    for i in range(n_layers - 1, -1, -1):
        layer = stack.layers[i]
        if layer.activation is Activation.RELU:
            delta = delta * (cache.preacts[i] > 0.0)
        gw[i] = cache.inputs[i].T @ delta
        gb[i] = delta.sum(axis=0)
        delta = delta @ layer.weights.T
    return GradBundle(gw, gb), (delta if cache.batched else delta[0])


def softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(logits, labels) -> np.ndarray | float:
    """Per-sample ``-log softmax(logits)[label]``.

    Computed as ``(max - z_y) + log(1 + sum_{j != argmax} exp(z_j - max))``
    so confident predictions keep full relative precision.
    """
    z = np.asarray(logits, dtype=np.float64)
    single = z.ndim == 1
    z2 = z[None, :] if single else z
    y = np.atleast_1d(np.asarray(labels))
    if y.shape[0] != z2.shape[0]:
        raise ConfigError(f"{y.shape[0]} labels for {z2.shape[0]} logit rows")
    if np.any(y < 0) or np.any(y >= z2.shape[1]):
        raise ConfigError(f"label out of range for {z2.shape[1]} classes")
    if not np.all(np.isfinite(z2)):
        raise NumericalError("non-finite logits")
    rows = np.arange(z2.shape[0])
    top = z2.argmax(axis=1)
    m = z2[rows, top]
    e = np.exp(z2 - m[:, None])
    e[rows, top] = 0.0
    s = e.sum(axis=1)
    tail = np.where(s >= 1.0, np.log(1.0 + s), np.log1p(s))
    loss = (m - z2[rows, y]) + tail
    return float(loss[0]) if single else loss


def cross_entropy_grad(logits, labels) -> np.ndarray:
    """d CE / d logits = softmax - onehot (per sample, not averaged)."""
    z = np.asarray(logits, dtype=np.float64)
    p = softmax(z)
    if z.ndim == 1:
        p[int(labels)] -= 1.0
    else:
        p[np.arange(z.shape[0]), np.asarray(labels)] -= 1.0
    return p


def sgd_step(stack: DenseStack, grads: GradBundle, lr: float) -> None:
    if not lr > 0:
        raise ConfigError(f"learning rate must be positive, got {lr}")
    if len(grads.weights) != len(stack.layers):
        raise ConfigError("gradient bundle does not match stack")
    for i, (gw, gb) in enumerate(zip(grads.weights, grads.biases)):
        if not (np.all(np.isfinite(gw)) and np.all(np.isfinite(gb))):
            raise NumericalError(f"non-finite gradient in layer {i}")
    for layer, gw, gb in zip(stack.layers, grads.weights, grads.biases):
        if gw.shape != layer.weights.shape or gb.shape != layer.bias.shape:
            raise ConfigError("gradient shape does not match layer")
        layer.weights -= lr * gw
        layer.bias -= lr * gb


def stack_loss(stack: DenseStack, x, label) -> float:
    out, _ = stack_forward(stack, x)
    return cross_entropy(out, label)


def grad_check(stack: DenseStack, x, label: int, fd_epsilon: float = 1e-5,
               grads: GradBundle | None = None) -> float:
    """Max relative error between backprop and central differences.

    Error per entry is ``|a - fd| / max(1, |a|, |fd|)``. Pass ``grads`` to
    audit a precomputed bundle instead of a fresh backward pass. The stack is
    perturbed in place and restored exactly.
    """
    if not 0 < fd_epsilon <= 1e-2:
        raise ConfigError(f"fd_epsilon must lie in (0, 1e-2], got {fd_epsilon}")
    if grads is None:
        out, cache = stack_forward(stack, x)
        grads, _ = stack_backward(stack, cache, cross_entropy_grad(out, label))
    worst = 0.0
    for param, analytic in zip(stack.parameters(), grads.parameters()):
        flat, aflat = param.reshape(-1), analytic.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + fd_epsilon
            up = stack_loss(stack, x, label)
            flat[j] = orig - fd_epsilon
            down = stack_loss(stack, x, label)
            flat[j] = orig
            fd = (up - down) / (2.0 * fd_epsilon)
            a = aflat[j]
            worst = max(worst, abs(a - fd) / max(1.0, abs(a), abs(fd)))
    return worst


def dense_param_count(d_in: int, d_out: int) -> int:
    return d_in * d_out + d_out


def param_count(stack: DenseStack) -> int:
    return sum(dense_param_count(layer.d_in, layer.d_out) for layer in stack.layers)


def forward_flops(stack: DenseStack) -> int:
    """Multiply-adds counted as 2 FLOPs; bias and activation are free."""
    return sum(2 * layer.d_in * layer.d_out for layer in stack.layers)


def param_hash(*stacks: DenseStack) -> str:
    h = hashlib.sha256()
    for stack in stacks:
        for p in stack.parameters():
            h.update(np.ascontiguousarray(p).tobytes())
    return h.hexdigest()
