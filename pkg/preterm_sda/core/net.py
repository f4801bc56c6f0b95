"""Fully convolutional seizure detector with an analytic backward pass, written in numpy.

Activations are laid out as ``(..., N, L, F)``: any leading batch axes, EEG channel,
time, feature map. Every convolution runs along time only, so the channel axis is
carried through untouched until the global head takes the mean over time and the max
over channels.

Each layer function returns ``(output, cache)``; the matching ``*_backward`` takes
``(cache, grad_out)`` and returns the gradients of its inputs and parameters.
"""

import hashlib
import json
from dataclasses import asdict, dataclass, field
from typing import Any, Literal

import numpy as np

from preterm_sda.core.errors import ArchitectureMismatchError, RunningStatsError, ShapeError, TrainingError

Mode = Literal["train", "infer"]
LayerKind = Literal["conv", "relu", "batchnorm", "avgpool", "global_head", "softmax"]

BN_MOMENTUM = 0.9
BN_EPS = 1e-5
INPUT_SCALE_UV = 100.0


# --- Architecture ---


@dataclass(frozen=True)
class LayerSpec:
    name: str
    kind: LayerKind
    maps_out: int = 0
    kernel: int = 0
    stride: int = 0


@dataclass(frozen=True)
class Architecture:
    """Feature blocks of (conv, conv, conv, batchnorm, avgpool), then a classification block."""

    name: str = "standard"
    feature_maps: int = 32
    n_blocks: int = 3
    convs_per_block: int = 3
    n_classes: int = 2
    kernel: int = 3
    pool_size: int = 4
    pool_stride: int = 3

    def layers(self) -> tuple[LayerSpec, ...]:
        specs: list[LayerSpec] = []
        conv = 0
        for block in range(1, self.n_blocks + 1):
            for _ in range(self.convs_per_block):
                conv += 1
                specs.append(LayerSpec(f"conv{conv}", "conv", self.feature_maps, self.kernel, 1))
                specs.append(LayerSpec(f"relu{conv}", "relu"))
            specs.append(LayerSpec(f"bn{block}", "batchnorm", self.feature_maps))
            specs.append(LayerSpec(f"pool{block}", "avgpool", 0, self.pool_size, self.pool_stride))
        conv += 1
        specs.append(LayerSpec(f"conv{conv}", "conv", self.n_classes, self.kernel, 1))
        specs.append(LayerSpec(f"relu{conv}", "relu"))
        specs.append(LayerSpec("head", "global_head", self.n_classes))
        specs.append(LayerSpec("softmax", "softmax", self.n_classes))
        return tuple(specs)

    @property
    def n_convs(self) -> int:
        return self.n_blocks * self.convs_per_block + 1

    def tensor_specs(self) -> list[tuple[str, tuple[int, ...], bool]]:
        """(name, shape, trainable) for every stored tensor, in checkpoint order."""
        specs: list[tuple[str, tuple[int, ...], bool]] = []
        maps_in = 1
        for layer in self.layers():
            if layer.kind == "conv":
                specs.append((f"{layer.name}.weight", (layer.kernel, maps_in, layer.maps_out), True))
                specs.append((f"{layer.name}.bias", (layer.maps_out,), True))
                maps_in = layer.maps_out
            elif layer.kind == "batchnorm":
                n = layer.maps_out
                specs.append((f"{layer.name}.gamma", (n,), True))
                specs.append((f"{layer.name}.beta", (n,), True))
                specs.append((f"{layer.name}.running_mean", (n,), False))
                specs.append((f"{layer.name}.running_var", (n,), False))
        return specs

    @property
    def hash(self) -> str:
        payload = json.dumps(asdict(self), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]

    def temporal_lengths(self, length: int) -> list[int]:
        """Time length entering each pooling stage and the head."""
        lengths = [length]
        for _ in range(self.n_blocks):
            length = (length - self.pool_size) // self.pool_stride + 1
            lengths.append(length)
        return lengths


STANDARD = Architecture()
TINY = Architecture(name="tiny", feature_maps=2)


@dataclass
class NetworkParams:
    """Learnable tensors plus batch-norm running statistics for one architecture."""

    architecture: Architecture
    tensors: dict[str, np.ndarray]
    stats_batches: int = 0

    def __post_init__(self) -> None:
        expected = {name: shape for name, shape, _ in self.architecture.tensor_specs()}
        if set(expected) != set(self.tensors):
            raise ArchitectureMismatchError(
                f"Tensors do not match architecture '{self.architecture.name}'"
            )
        for name, shape in expected.items():
            if self.tensors[name].shape != shape:
                raise ArchitectureMismatchError(
                    f"{name} has shape {self.tensors[name].shape}, expected {shape}"
                )

    @property
    def architecture_hash(self) -> str:
        return self.architecture.hash

    @property
    def dtype(self) -> np.dtype:
        return self.tensors["conv1.weight"].dtype

    def trainable_names(self) -> list[str]:
        return [name for name, _, trainable in self.architecture.tensor_specs() if trainable]

    def names(self) -> list[str]:
        return [name for name, _, _ in self.architecture.tensor_specs()]

    def copy(self) -> "NetworkParams":
        return NetworkParams(
            architecture=self.architecture,
            tensors={name: t.copy() for name, t in self.tensors.items()},
            stats_batches=self.stats_batches,
        )

    def astype(self, dtype: Any) -> "NetworkParams":
        return NetworkParams(
            architecture=self.architecture,
            tensors={name: t.astype(dtype) for name, t in self.tensors.items()},
            stats_batches=self.stats_batches,
        )

    def with_running_stats(self, stats: dict[str, tuple[np.ndarray, np.ndarray]]) -> "NetworkParams":
        tensors = dict(self.tensors)
        for layer, (mean, var) in stats.items():
            tensors[f"{layer}.running_mean"] = mean
            tensors[f"{layer}.running_var"] = var
        return NetworkParams(self.architecture, tensors, self.stats_batches + 1)


def init_params(seed: int, architecture: Architecture = STANDARD, dtype: Any = np.float64) -> NetworkParams:
    """Uniform(-b, b) conv weights with b = sqrt(6 / fan_in); zero biases; identity batch-norm."""
    rng = np.random.default_rng(seed)
    tensors: dict[str, np.ndarray] = {}
    for name, shape, _ in architecture.tensor_specs():
        if name.endswith(".weight"):
            kernel, maps_in, _ = shape
            bound = np.sqrt(6.0 / (kernel * maps_in))
            tensors[name] = rng.uniform(-bound, bound, size=shape).astype(dtype)
        elif name.endswith((".gamma", ".running_var")):
            tensors[name] = np.ones(shape, dtype=dtype)
        else:
            tensors[name] = np.zeros(shape, dtype=dtype)
    return NetworkParams(architecture, tensors)


# --- Layers ---


def _im2col(x: np.ndarray) -> np.ndarray:
    """Stacks x[t-1], x[t], x[t+1] along the map axis, zero beyond either end."""
    zero = np.zeros_like(x[..., :1, :])
    previous = np.concatenate([zero, x[..., :-1, :]], axis=-2)
    following = np.concatenate([x[..., 1:, :], zero], axis=-2)
    return np.concatenate([previous, x, following], axis=-1)


def conv1d_forward(x: np.ndarray, weights: np.ndarray, bias: np.ndarray) -> tuple[np.ndarray, tuple]:
    """Kernel-3, stride-1 convolution over time with zero "same" padding."""
    if weights.ndim != 3 or weights.shape[0] != 3:
        raise ShapeError(f"Convolution weights must be (3, maps_in, maps_out), got {weights.shape}")
    _, maps_in, maps_out = weights.shape
    if x.ndim < 2 or x.shape[-1] != maps_in:
        raise ShapeError(f"Input with {x.shape[-1] if x.ndim else 0} maps for a {maps_in}-map convolution")
    if bias.shape != (maps_out,):
        raise ShapeError(f"Bias shape {bias.shape} does not match {maps_out} output maps")
    cols = _im2col(x)
    out = cols @ weights.reshape(3 * maps_in, maps_out) + bias
    return out, (cols, weights)


def conv1d_backward(cache: tuple, grad_out: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    cols, weights = cache
    kernel, maps_in, maps_out = weights.shape
    if grad_out.shape != cols.shape[:-1] + (maps_out,):
        raise ShapeError(f"grad_out shape {grad_out.shape} does not match the forward output")
    flat_grad = grad_out.reshape(-1, maps_out)
    grad_w = (cols.reshape(-1, kernel * maps_in).T @ flat_grad).reshape(weights.shape)
    grad_b = flat_grad.sum(axis=0)
    grad_cols = grad_out @ weights.reshape(kernel * maps_in, maps_out).T
    grad_prev, grad_x, grad_next = np.split(grad_cols, 3, axis=-1)
    grad_x = grad_x.copy()
    grad_x[..., :-1, :] += grad_prev[..., 1:, :]
    grad_x[..., 1:, :] += grad_next[..., :-1, :]
    return grad_x, grad_w, grad_b


def relu_forward(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return np.maximum(x, 0), x


def relu_backward(cache: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    return grad_out * (cache > 0)


def batchnorm_forward(
    x: np.ndarray,
    gamma: np.ndarray,
    beta: np.ndarray,
    mode: Mode,
    running_mean: np.ndarray | None = None,
    running_var: np.ndarray | None = None,
    momentum: float = BN_MOMENTUM,
    eps: float = BN_EPS,
) -> tuple[np.ndarray, tuple | None, tuple[np.ndarray, np.ndarray] | None]:
    """Per-map normalization over every axis except the map axis.

    Returns ``(out, cache, running)``; in train mode ``running`` holds the updated
    running mean and variance, in infer mode the running statistics are used and both
    ``cache`` and ``running`` are None.
    """
    axes = tuple(range(x.ndim - 1))
    if mode == "train":
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        inv_std = 1.0 / np.sqrt(var + eps)
        x_hat = (x - mean) * inv_std
        running = None
        if running_mean is not None and running_var is not None:
            running = (
                momentum * running_mean + (1.0 - momentum) * mean,
                momentum * running_var + (1.0 - momentum) * var,
            )
        return gamma * x_hat + beta, (x_hat, inv_std, gamma), running
    if mode == "infer":
        if running_mean is None or running_var is None:
            raise RunningStatsError("Batch normalization has no running statistics yet")
        x_hat = (x - running_mean) / np.sqrt(running_var + eps)
        return gamma * x_hat + beta, None, None
    raise ValueError(f"Unknown mode: {mode}")


def batchnorm_backward(cache: tuple, grad_out: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    x_hat, inv_std, gamma = cache
    axes = tuple(range(x_hat.ndim - 1))
    m = x_hat.size // x_hat.shape[-1]
    grad_beta = grad_out.sum(axis=axes)
    grad_gamma = (grad_out * x_hat).sum(axis=axes)
    grad_hat = grad_out * gamma
    grad_x = (inv_std / m) * (
        m * grad_hat - grad_hat.sum(axis=axes) - x_hat * (grad_hat * x_hat).sum(axis=axes)
    )
    return grad_x, grad_gamma, grad_beta


def avgpool_forward(x: np.ndarray, size: int = 4, stride: int = 3) -> tuple[np.ndarray, tuple]:
    length = x.shape[-2]
    if length < size:
        raise ShapeError(f"Cannot pool a length-{length} sequence with size {size}")
    n_out = (length - size) // stride + 1
    span = stride * (n_out - 1) + 1
    out = x[..., 0:span:stride, :].copy()
    for k in range(1, size):
        out += x[..., k : k + span : stride, :]
    out /= size
    return out, (x.shape, size, stride)


def avgpool_backward(cache: tuple, grad_out: np.ndarray) -> np.ndarray:
    shape, size, stride = cache
    span = stride * (grad_out.shape[-2] - 1) + 1
    grad_x = np.zeros(shape, dtype=grad_out.dtype)
    share = grad_out / size
    for k in range(size):
        grad_x[..., k : k + span : stride, :] += share
    return grad_x


def global_head_forward(x: np.ndarray) -> tuple[np.ndarray, tuple]:
    """Mean over time per channel and map, then max over channels (first index on ties)."""
    means = x.mean(axis=-2)
    winners = np.argmax(means, axis=-2)
    logits = np.take_along_axis(means, winners[..., None, :], axis=-2)[..., 0, :]
    return logits, (x.shape, winners)


def global_head_backward(cache: tuple, grad_logits: np.ndarray) -> np.ndarray:
    shape, winners = cache
    grad_means = np.zeros(shape[:-2] + shape[-1:], dtype=grad_logits.dtype)
    np.put_along_axis(grad_means, winners[..., None, :], grad_logits[..., None, :], axis=-2)
    return np.broadcast_to(grad_means[..., None, :] / shape[-2], shape).copy()


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=-1, keepdims=True)


# --- Model ---


@dataclass
class ForwardCache:
    layers: list[tuple[LayerSpec, Any]] = field(default_factory=list)
    probs: np.ndarray | None = None
    running_stats: dict[str, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)


def model_forward(
    params: NetworkParams, windows: np.ndarray, mode: Mode = "infer"
) -> tuple[np.ndarray | float, ForwardCache | None]:
    """Seizure probability for one window ``(N, L)`` or a batch ``(B, N, L)``.

    In train mode batch normalization uses batch statistics and the returned cache
    carries what ``model_backward`` needs plus the updated running statistics.
    """
    x = np.asarray(windows, dtype=params.dtype)
    single = x.ndim == 2
    if single:
        x = x[None]
    if x.ndim != 3:
        raise ShapeError(f"Expected (N, L) or (B, N, L) windows, got shape {np.shape(windows)}")
    if mode == "infer" and params.stats_batches == 0:
        raise RunningStatsError("Inference requested before any running statistics exist")

    t = params.tensors
    arch = params.architecture
    x = x[..., None] / INPUT_SCALE_UV
    cache = ForwardCache() if mode == "train" else None

    for layer in arch.layers():
        if layer.kind == "conv":
            x, layer_cache = conv1d_forward(x, t[f"{layer.name}.weight"], t[f"{layer.name}.bias"])
        elif layer.kind == "relu":
            x, layer_cache = relu_forward(x)
        elif layer.kind == "batchnorm":
            x, layer_cache, running = batchnorm_forward(
                x,
                t[f"{layer.name}.gamma"],
                t[f"{layer.name}.beta"],
                mode,
                t[f"{layer.name}.running_mean"],
                t[f"{layer.name}.running_var"],
            )
            if cache is not None and running is not None:
                cache.running_stats[layer.name] = running
        elif layer.kind == "avgpool":
            x, layer_cache = avgpool_forward(x, layer.kernel, layer.stride)
        elif layer.kind == "global_head":
            x, layer_cache = global_head_forward(x)
        else:
            x = softmax(x)
            layer_cache = None
        if cache is not None:
            cache.layers.append((layer, layer_cache))

    if cache is not None:
        cache.probs = x
    seizure = x[..., 1]
    if single:
        return float(seizure[0]), cache
    return seizure, cache


def model_backward(
    params: NetworkParams,
    cache: ForwardCache | None,
    labels: np.ndarray,
    sample_weights: np.ndarray,
    loss_scale: float = 1.0,
) -> dict[str, np.ndarray]:
    """Gradients of ``loss_scale * sum_i w_i * CE(softmax(logits_i), label_i)``."""
    if cache is None or cache.probs is None:
        raise TrainingError("model_backward needs the cache of a train-mode forward pass")
    probs = cache.probs
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    weights = np.asarray(sample_weights, dtype=probs.dtype).reshape(-1) * loss_scale
    if labels.shape[0] != probs.shape[0] or weights.shape[0] != probs.shape[0]:
        raise ShapeError("labels and sample_weights must match the batch size")

    onehot = np.zeros_like(probs)
    onehot[np.arange(labels.size), labels] = 1.0
    grad = weights[:, None] * (probs - onehot)

    grads: dict[str, np.ndarray] = {}
    for layer, layer_cache in reversed(cache.layers):
        if layer.kind == "softmax":
            continue
        if layer.kind == "global_head":
            grad = global_head_backward(layer_cache, grad)
        elif layer.kind == "relu":
            grad = relu_backward(layer_cache, grad)
        elif layer.kind == "conv":
            grad, grad_w, grad_b = conv1d_backward(layer_cache, grad)
            grads[f"{layer.name}.weight"] = grad_w
            grads[f"{layer.name}.bias"] = grad_b
        elif layer.kind == "batchnorm":
            grad, grad_gamma, grad_beta = batchnorm_backward(layer_cache, grad)
            grads[f"{layer.name}.gamma"] = grad_gamma
            grads[f"{layer.name}.beta"] = grad_beta
        elif layer.kind == "avgpool":
            grad = avgpool_backward(layer_cache, grad)
    return {name: grads[name] for name in params.trainable_names()}


def predict_proba(params: NetworkParams, windows: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Infer-mode seizure probabilities for ``(B, N, L)`` windows, in fixed-size chunks."""
    windows = np.asarray(windows)
    if windows.ndim != 3:
        raise ShapeError(f"Expected (B, N, L) windows, got shape {windows.shape}")
    out = np.empty(windows.shape[0], dtype=np.float64)
    for start in range(0, windows.shape[0], batch_size):
        probs, _ = model_forward(params, windows[start : start + batch_size], "infer")
        out[start : start + batch_size] = probs
    return out


def check_architecture(params: NetworkParams, expected_hash: str) -> None:
    if params.architecture_hash != expected_hash:
        raise ArchitectureMismatchError(
            f"Architecture hash {params.architecture_hash} does not match {expected_hash}"
        )
