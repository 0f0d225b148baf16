"""Dense MLP numerics: forward/backward passes, losses, momentum SGD and the
warmup + cosine learning-rate schedule.

Matrices are plain ``float64`` numpy arrays of shape ``(rows, cols)``; a weight
matrix maps ``in -> out`` so an affine layer is ``x @ W + b``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Mapping, Sequence

import numpy as np

DTYPE = np.float64


class ShapeError(ValueError):
    """Raised when array shapes do not line up."""


class NumericError(FloatingPointError):
    """Raised when a NaN or infinity shows up where finite values are required."""


@dataclass
class Layer:
    name: str
    weight: np.ndarray
    bias: np.ndarray
    weight_velocity: np.ndarray = field(default=None, repr=False)  # type: ignore[assignment]
    bias_velocity: np.ndarray = field(default=None, repr=False)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        self.weight = np.asarray(self.weight, dtype=DTYPE)
        self.bias = np.asarray(self.bias, dtype=DTYPE)
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[1],):
            raise ShapeError(
                f"layer {self.name}: weight {self.weight.shape} / bias {self.bias.shape} mismatch"
            )
        if self.weight_velocity is None:
            self.weight_velocity = np.zeros_like(self.weight)
        if self.bias_velocity is None:
            self.bias_velocity = np.zeros_like(self.bias)

    @property
    def fan_in(self) -> int:
        return self.weight.shape[0]

    @property
    def fan_out(self) -> int:
        return self.weight.shape[1]


class ParameterSet:
    """An ordered stack of affine layers with their momentum buffers.

    Also used to carry gradients (velocities are then unused).
    """

    def __init__(self, layers: Sequence[Layer]):
        self.layers = list(layers)
        names = [layer.name for layer in self.layers]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate layer names: {names}")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.fan_out != nxt.fan_in:
                raise ShapeError(
                    f"layer {prev.name} outputs {prev.fan_out} but {nxt.name} expects {nxt.fan_in}"
                )

    @classmethod
    def init_mlp(
        cls, sizes: Sequence[int], rng: np.random.Generator, prefix: str = "fc"
    ) -> "ParameterSet":
        """He-style fan-in uniform init, zero biases."""
        layers = []
        for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            bound = math.sqrt(6.0 / fan_in)
            w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
            layers.append(Layer(f"{prefix}{i}", w, np.zeros(fan_out)))
        return cls(layers)

    @classmethod
    def zeros(cls, sizes: Sequence[int], prefix: str = "fc") -> "ParameterSet":
        return cls(
            [
                Layer(f"{prefix}{i}", np.zeros((a, b)), np.zeros(b))
                for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:]))
            ]
        )

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def in_dim(self) -> int:
        return self.layers[0].fan_in

    @property
    def out_dim(self) -> int:
        return self.layers[-1].fan_out

    @property
    def sizes(self) -> list[int]:
        return [self.in_dim] + [layer.fan_out for layer in self.layers]

    def __len__(self) -> int:
        return len(self.layers)

    def __getitem__(self, name: str) -> Layer:
        for layer in self.layers:
            if layer.name == name:
                return layer
        raise KeyError(name)

    def tensors(self) -> Iterator[tuple[str, np.ndarray]]:
        """Yield ``(key, array)`` pairs for every weight and bias, in a fixed order."""
        for layer in self.layers:
            yield f"{layer.name}.weight", layer.weight
            yield f"{layer.name}.bias", layer.bias

    def num_params(self) -> int:
        return sum(arr.size for _, arr in self.tensors())

    def copy(self) -> "ParameterSet":
        return ParameterSet(
            [
                Layer(
                    layer.name,
                    layer.weight.copy(),
                    layer.bias.copy(),
                    layer.weight_velocity.copy(),
                    layer.bias_velocity.copy(),
                )
                for layer in self.layers
            ]
        )

    def zeros_like(self) -> "ParameterSet":
        return ParameterSet(
            [
                Layer(layer.name, np.zeros_like(layer.weight), np.zeros_like(layer.bias))
                for layer in self.layers
            ]
        )

    def reset_momentum(self) -> None:
        for layer in self.layers:
            layer.weight_velocity[...] = 0.0
            layer.bias_velocity[...] = 0.0

    def flatten(self) -> np.ndarray:
        return np.concatenate([arr.ravel() for _, arr in self.tensors()])

    def assign_flat(self, flat: np.ndarray) -> None:
        offset = 0
        for _, arr in self.tensors():
            arr[...] = flat[offset : offset + arr.size].reshape(arr.shape)
            offset += arr.size
        if offset != flat.size:
            raise ShapeError(f"flat vector has {flat.size} entries, expected {offset}")

    def add_(self, other: "ParameterSet", scale: float = 1.0) -> "ParameterSet":
        for (_, mine), (_, theirs) in zip(self.tensors(), other.tensors()):
            mine += scale * theirs
        return self

    def equals(self, other: "ParameterSet") -> bool:
        """Bitwise equality of all weights and biases."""
        if [l.name for l in self.layers] != [l.name for l in other.layers]:
            return False
        return all(
            a.shape == b.shape and a.tobytes() == b.tobytes()
            for (_, a), (_, b) in zip(self.tensors(), other.tensors())
        )


@dataclass
class MlpCache:
    """Per-layer inputs and pre-activations recorded by :func:`forward_mlp`."""

    inputs: list[np.ndarray]
    pre_activations: list[np.ndarray]


def forward_mlp(params: ParameterSet, inputs: np.ndarray) -> tuple[MlpCache, np.ndarray]:
    """Run an MLP with ReLU hidden layers and an affine output layer."""
    x = np.asarray(inputs, dtype=DTYPE)
    if x.ndim != 2 or x.shape[1] != params.in_dim:
        raise ShapeError(f"input shape {x.shape} does not match input dim {params.in_dim}")
    cache = MlpCache([], [])
    last = len(params.layers) - 1
    for i, layer in enumerate(params.layers):
        cache.inputs.append(x)
        pre = x @ layer.weight + layer.bias
        cache.pre_activations.append(pre)
        x = np.maximum(pre, 0.0) if i < last else pre
    return cache, x


def backward_mlp(
    params: ParameterSet, cache: MlpCache, upstream_grad: np.ndarray
) -> tuple[ParameterSet, np.ndarray]:
    """Reverse-mode pass. Returns parameter gradients and the gradient w.r.t. the inputs.

    The ReLU subgradient at exactly zero is taken to be 0.
    """
    if len(cache.inputs) != len(params.layers):
        raise ShapeError("cache depth does not match parameter depth")
    grad = np.asarray(upstream_grad, dtype=DTYPE)
    grads = []
    last = len(params.layers) - 1
    for i in range(last, -1, -1):
        layer = params.layers[i]
        x_in = cache.inputs[i]
        pre = cache.pre_activations[i]
        if x_in.shape[1] != layer.fan_in or pre.shape[1] != layer.fan_out or grad.shape != pre.shape:
            raise ShapeError(f"stale cache for layer {layer.name}")
        if i < last:
            grad = grad * (pre > 0.0)
        grads.append(Layer(layer.name, x_in.T @ grad, grad.sum(axis=0)))
        grad = grad @ layer.weight.T
    return ParameterSet(grads[::-1]), grad


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def per_example_cross_entropy(logits: np.ndarray, targets: np.ndarray) -> np.ndarray:
    targets = _check_targets(logits, targets)
    return -log_softmax(logits)[np.arange(len(targets)), targets]


def softmax_cross_entropy(logits: np.ndarray, targets: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean negative log-likelihood (nats) and its gradient w.r.t. the logits."""
    targets = _check_targets(logits, targets)
    n = logits.shape[0]
    logp = log_softmax(logits)
    loss = -float(logp[np.arange(n), targets].mean())
    grad = np.exp(logp)
    grad[np.arange(n), targets] -= 1.0
    grad /= n
    return loss, grad


def kl_divergence(
    reference_logits: np.ndarray, logits: np.ndarray
) -> tuple[float, np.ndarray]:
    """Batch-mean KL(softmax(reference) || softmax(logits)) and its gradient w.r.t. ``logits``."""
    if reference_logits.shape != logits.shape:
        raise ShapeError(f"{reference_logits.shape} vs {logits.shape}")
    n = logits.shape[0]
    log_ref = log_softmax(reference_logits)
    log_cur = log_softmax(logits)
    ref = np.exp(log_ref)
    value = float((ref * (log_ref - log_cur)).sum(axis=1).mean())
    grad = (np.exp(log_cur) - ref) / n
    return value, grad


def l1_penalty(params: ParameterSet) -> tuple[float, ParameterSet]:
    """Sum of absolute values of all parameters and its subgradient (0 at 0)."""
    grads = params.zeros_like()
    total = 0.0
    for (_, p), (_, g) in zip(params.tensors(), grads.tensors()):
        total += float(np.abs(p).sum())
        g[...] = np.sign(p)
    return total, grads


def clip_grad_norm(grads: ParameterSet, max_norm: float | None) -> float:
    """Rescale ``grads`` in place so their global L2 norm is at most ``max_norm``.

    Returns the norm before clipping. ``None`` disables clipping.
    """
    norm = math.sqrt(sum(float((g * g).sum()) for _, g in grads.tensors()))
    if max_norm is not None and norm > max_norm:
        scale = max_norm / norm
        for _, g in grads.tensors():
            g *= scale
    return norm


def _check_targets(logits: np.ndarray, targets: np.ndarray) -> np.ndarray:
    targets = np.asarray(targets)
    if logits.ndim != 2 or targets.shape != (logits.shape[0],):
        raise ShapeError(f"logits {logits.shape} vs targets {targets.shape}")
    if targets.size and (targets.min() < 0 or targets.max() >= logits.shape[1]):
        raise IndexError(f"targets must lie in [0, {logits.shape[1]})")
    return targets.astype(np.intp, copy=False)


def sgd_step(
    params: ParameterSet,
    grads: ParameterSet,
    lr: float,
    momentum: float = 0.9,
    weight_decay: float = 0.0,
    masks: Mapping[str, np.ndarray] | None = None,
) -> ParameterSet:
    """In-place classical momentum step: ``v = m*v + g + wd*p; p -= lr*v``.

    ``masks`` maps tensor keys (``"fc0.weight"``) to 0/1 arrays; entries with
    mask 0 keep both their value and their momentum buffer.
    """
    if len(params.layers) != len(grads.layers):
        raise ShapeError("gradient depth does not match parameters")
    for layer, glayer in zip(params.layers, grads.layers):
        for kind, p, v, g in (
            ("weight", layer.weight, layer.weight_velocity, glayer.weight),
            ("bias", layer.bias, layer.bias_velocity, glayer.bias),
        ):
            if g.shape != p.shape:
                raise ShapeError(f"{layer.name}.{kind}: grad {g.shape} vs param {p.shape}")
            if not np.isfinite(g).all():
                raise NumericError(f"non-finite gradient in layer {layer.name}.{kind}")
            update = momentum * v + g
            if weight_decay:
                update = update + weight_decay * p
            mask = None if masks is None else masks.get(f"{layer.name}.{kind}")
            if mask is None:
                v[...] = update
                p -= lr * v
            else:
                keep = mask.astype(bool)
                v[keep] = update[keep]
                p[keep] -= lr * v[keep]
    return params


@dataclass
class ScheduleState:
    base_lr: float
    warmup_epochs: int
    total_epochs: int
    steps_per_epoch: int
    current_step: int = 0

    @property
    def total_steps(self) -> int:
        return self.total_epochs * self.steps_per_epoch

    @property
    def warmup_steps(self) -> int:
        return min(self.warmup_epochs, self.total_epochs) * self.steps_per_epoch


def lr_at(schedule: ScheduleState) -> float:
    """Linear warmup from 0 to ``base_lr``, then cosine decay to 0 at the final step."""
    step = schedule.current_step
    total = schedule.total_steps
    warm = schedule.warmup_steps
    if step > total:
        raise ValueError(f"step {step} beyond schedule end {total}")
    if warm and step < warm:
        return schedule.base_lr * step / warm
    if total == warm:
        return schedule.base_lr if step < total else 0.0
    progress = (step - warm) / (total - warm)
    return schedule.base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))
