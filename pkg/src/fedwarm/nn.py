"""Minimal dense/conv network engine: forward, backprop, SGD with layer freezing.

All parameters of a model live in one flat float32 vector so that federated
averaging, divergence metrics, and prefix freezing can treat a model as a
plain vector. Per parameterized layer the layout is:

    dense  -> row-major (in_dim, out_dim) weight block, then out_dim biases
    conv2d -> (out_channels, in_channels, k, k) kernel block, then biases

Activations are float32 in training; gradient checking recomputes both the
analytic and numeric gradients in float64 because float32 central
differences at eps=1e-4 are dominated by rounding noise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import rng
from .errors import ConfigError, ContractError, ShapeError

# ---------------------------------------------------------------------------
# layer descriptors and model spec


@dataclass(frozen=True)
class Dense:
    in_dim: int
    out_dim: int

    def __post_init__(self):
        if self.in_dim < 1 or self.out_dim < 1:
            raise ConfigError(f"dense dims must be positive, got {self.in_dim}x{self.out_dim}")

    @property
    def param_count(self) -> int:
        return self.in_dim * self.out_dim + self.out_dim


@dataclass(frozen=True)
class Conv2d:
    in_channels: int
    out_channels: int
    kernel_size: int
    stride: int = 1

    def __post_init__(self):
        if min(self.in_channels, self.out_channels, self.kernel_size, self.stride) < 1:
            raise ConfigError(f"conv2d fields must be positive, got {self}")

    @property
    def param_count(self) -> int:
        k = self.kernel_size
        return self.out_channels * self.in_channels * k * k + self.out_channels


@dataclass(frozen=True)
class Relu:
    pass


@dataclass(frozen=True)
class Flatten:
    pass


Layer = Dense | Conv2d | Relu | Flatten


@dataclass(frozen=True)
class ModelSpec:
    """Architecture description: an ordered layer list plus input/output contract.

    input_shape is (features,) for flat inputs or (height, width, channels)
    for images; inputs are always fed to the engine as (batch, features)
    rows and reshaped internally.
    """

    layers: tuple[Layer, ...]
    input_shape: tuple[int, ...]
    num_classes: int


def _start_shape(spec: ModelSpec) -> tuple[int, ...]:
    # internal convention: flat = (features,), spatial = (channels, h, w)
    s = tuple(int(d) for d in spec.input_shape)
    if any(d < 1 for d in s):
        raise ConfigError(f"input_shape must be positive, got {spec.input_shape}")
    if len(s) == 1:
        return s
    if len(s) == 2:
        return (1, s[0], s[1])
    if len(s) == 3:
        h, w, c = s
        return (c, h, w)
    raise ConfigError(f"input_shape must have 1-3 dims, got {spec.input_shape}")


def _shape_after(layer: Layer, shape: tuple[int, ...], index: int, prev: str) -> tuple[int, ...]:
    """Shape one layer's output given its input shape; raise naming the pair."""

    def fail(reason: str):
        raise ShapeError(
            f"layer {index} ({_describe(layer)}) cannot follow {prev}: {reason}"
        )

    if isinstance(layer, Dense):
        if len(shape) != 1:
            fail(f"dense needs a flat input, got {shape} (insert flatten)")
        if shape[0] != layer.in_dim:
            fail(f"expects {layer.in_dim} features, gets {shape[0]}")
        return (layer.out_dim,)
    if isinstance(layer, Conv2d):
        if len(shape) != 3:
            fail(f"conv2d needs a (h, w, c) input, got flat {shape}")
        c, h, w = shape
        if c != layer.in_channels:
            fail(f"expects {layer.in_channels} channels, gets {c}")
        k, s = layer.kernel_size, layer.stride
        if h < k or w < k:
            fail(f"kernel {k}x{k} larger than input {h}x{w}")
        return (layer.out_channels, (h - k) // s + 1, (w - k) // s + 1)
    if isinstance(layer, Relu):
        return shape
    if isinstance(layer, Flatten):
        return (int(np.prod(shape)),)
    raise ConfigError(f"unknown layer type {type(layer).__name__}")


def _describe(layer: Layer) -> str:
    if isinstance(layer, Dense):
        return f"dense {layer.in_dim}->{layer.out_dim}"
    if isinstance(layer, Conv2d):
        return f"conv2d {layer.in_channels}->{layer.out_channels} k{layer.kernel_size}s{layer.stride}"
    return type(layer).__name__.lower()


def layer_shapes(spec: ModelSpec) -> list[tuple[int, ...]]:
    """Output shape after each layer (internal channel-first convention)."""
    shape = _start_shape(spec)
    prev = f"input shape {spec.input_shape}"
    out = []
    for i, layer in enumerate(spec.layers):
        shape = _shape_after(layer, shape, i, prev)
        prev = f"layer {i} ({_describe(layer)}) output {shape}"
        out.append(shape)
    return out


def validate_spec(spec: ModelSpec) -> None:
    """Raise unless every adjacent layer pair composes and the tail is (M,)."""
    if not spec.layers:
        raise ConfigError("model has no layers")
    if spec.num_classes < 1:
        raise ConfigError(f"num_classes must be positive, got {spec.num_classes}")
    final = layer_shapes(spec)[-1]
    if final != (spec.num_classes,):
        raise ShapeError(
            f"final layer produces {final}, expected ({spec.num_classes},) class scores"
        )


def param_layers(spec: ModelSpec) -> list[tuple[int, Layer]]:
    """(index in spec.layers, layer) for each parameterized layer, in order."""
    return [(i, l) for i, l in enumerate(spec.layers) if isinstance(l, (Dense, Conv2d))]


def param_count(spec: ModelSpec) -> int:
    return sum(l.param_count for _, l in param_layers(spec))


def param_offsets(spec: ModelSpec) -> tuple[int, ...]:
    offsets, pos = [], 0
    for _, layer in param_layers(spec):
        offsets.append(pos)
        pos += layer.param_count
    return tuple(offsets)


# ---------------------------------------------------------------------------
# weights


@dataclass
class ModelWeights:
    """Flat float32 parameter vector plus freezing state.

    frozen_prefix counts parameterized layers (from the input side) whose
    slices SGD must never touch.
    """

    params: np.ndarray
    layer_offsets: tuple[int, ...]
    frozen_prefix: int = 0

    def copy(self) -> "ModelWeights":
        return ModelWeights(self.params.copy(), self.layer_offsets, self.frozen_prefix)


def layer_slices(weights: ModelWeights) -> list[slice]:
    """One slice of weights.params per parameterized layer."""
    bounds = list(weights.layer_offsets) + [weights.params.shape[0]]
    return [slice(bounds[j], bounds[j + 1]) for j in range(len(weights.layer_offsets))]


def frozen_region(weights: ModelWeights) -> slice:
    """The contiguous prefix of params covered by frozen layers."""
    if weights.frozen_prefix <= 0:
        return slice(0, 0)
    if weights.frozen_prefix >= len(weights.layer_offsets):
        return slice(0, weights.params.shape[0])
    return slice(0, weights.layer_offsets[weights.frozen_prefix])


def init_weights(spec: ModelSpec, seed: int) -> ModelWeights:
    """Glorot-uniform weights, zero biases, one init stream per layer.

    Identical (spec, seed) pairs produce bitwise-identical vectors.
    """
    validate_spec(spec)
    plist = param_layers(spec)
    total = sum(l.param_count for _, l in plist)
    params = np.zeros(total, dtype=np.float32)
    pos = 0
    offsets = []
    for j, (_, layer) in enumerate(plist):
        offsets.append(pos)
        gen = rng.stream(seed, rng.INIT, j)
        if isinstance(layer, Dense):
            n_w = layer.in_dim * layer.out_dim
            fan_in, fan_out = layer.in_dim, layer.out_dim
        else:
            k = layer.kernel_size
            n_w = layer.out_channels * layer.in_channels * k * k
            fan_in = layer.in_channels * k * k
            fan_out = layer.out_channels * k * k
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        params[pos : pos + n_w] = gen.uniform(-limit, limit, size=n_w).astype(np.float32)
        pos += layer.param_count  # biases stay zero
    return ModelWeights(params, tuple(offsets), frozen_prefix=0)


# ---------------------------------------------------------------------------
# batches and forward/backward


@dataclass(frozen=True)
class Batch:
    """A block of training rows: inputs (B, features), labels (B,) ints."""

    inputs: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        if self.inputs.ndim != 2:
            raise ShapeError(f"batch inputs must be 2-d, got shape {self.inputs.shape}")
        if self.labels.ndim != 1:
            raise ShapeError(f"batch labels must be 1-d, got shape {self.labels.shape}")
        if self.inputs.shape[0] != self.labels.shape[0]:
            raise ShapeError(
                f"batch has {self.inputs.shape[0]} rows but {self.labels.shape[0]} labels"
            )


@dataclass
class ForwardCache:
    """Intermediate activations from one forward pass.

    Tied to the exact parameter vector that produced it; backward rejects a
    cache built from different weights.
    """

    params: np.ndarray
    batch_size: int
    steps: list = field(default_factory=list)


def _dense_views(params: np.ndarray, offset: int, layer: Dense):
    n_w = layer.in_dim * layer.out_dim
    w = params[offset : offset + n_w].reshape(layer.in_dim, layer.out_dim)
    b = params[offset + n_w : offset + n_w + layer.out_dim]
    return w, b


def _conv_views(params: np.ndarray, offset: int, layer: Conv2d):
    k = layer.kernel_size
    n_w = layer.out_channels * layer.in_channels * k * k
    # kernel as (out_channels, in_channels * k * k) rows for the im2col matmul
    wmat = params[offset : offset + n_w].reshape(layer.out_channels, layer.in_channels * k * k)
    b = params[offset + n_w : offset + n_w + layer.out_channels]
    return wmat, b


def _im2col(x: np.ndarray, k: int, s: int):
    """Unfold (B, C, H, W) into rows of receptive fields.

    Returns (B*Ho*Wo, C*k*k) where row order is batch-major then
    output-position row-major, matching the reshape in _conv_forward.
    """
    b, c, h, w = x.shape
    ho = (h - k) // s + 1
    wo = (w - k) // s + 1
    cols = np.empty((b, c, k, k, ho, wo), dtype=x.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, :, i, j, :, :] = x[:, :, i : i + s * ho : s, j : j + s * wo : s]
    return cols.transpose(0, 4, 5, 1, 2, 3).reshape(b * ho * wo, c * k * k), ho, wo


def _col2im(dcols: np.ndarray, x_shape: tuple[int, ...], k: int, s: int) -> np.ndarray:
    """Scatter-add column gradients back onto the input tensor."""
    b, c, h, w = x_shape
    ho = (h - k) // s + 1
    wo = (w - k) // s + 1
    d6 = dcols.reshape(b, ho, wo, c, k, k).transpose(0, 3, 4, 5, 1, 2)
    dx = np.zeros(x_shape, dtype=dcols.dtype)
    for i in range(k):
        for j in range(k):
            dx[:, :, i : i + s * ho : s, j : j + s * wo : s] += d6[:, :, i, j]
    return dx


def _forward(spec: ModelSpec, params: np.ndarray, inputs: np.ndarray):
    """Run the network; returns (logits, per-layer cache steps)."""
    if inputs.ndim != 2:
        raise ShapeError(f"inputs must be (batch, features), got shape {inputs.shape}")
    start = _start_shape(spec)
    expected = int(np.prod(start))
    if inputs.shape[1] != expected:
        raise ShapeError(
            f"model expects {expected} features per row "
            f"(input_shape {spec.input_shape}), got {inputs.shape[1]}"
        )
    b = inputs.shape[0]
    x = inputs
    if len(start) == 3:
        c, h, w = start
        # rows arrive as flattened (h, w, c); convert to channel-first
        x = np.ascontiguousarray(x.reshape(b, h, w, c).transpose(0, 3, 1, 2))
    steps = []
    pj = 0
    offsets = param_offsets(spec)
    for i, layer in enumerate(spec.layers):
        if isinstance(layer, Dense):
            w_mat, bias = _dense_views(params, offsets[pj], layer)
            steps.append(("dense", pj, x))
            x = x @ w_mat + bias
            pj += 1
        elif isinstance(layer, Conv2d):
            wmat, bias = _conv_views(params, offsets[pj], layer)
            cols, ho, wo = _im2col(x, layer.kernel_size, layer.stride)
            steps.append(("conv", pj, x.shape, cols))
            out = cols @ wmat.T + bias
            x = np.ascontiguousarray(
                out.reshape(b, ho, wo, layer.out_channels).transpose(0, 3, 1, 2)
            )
            pj += 1
        elif isinstance(layer, Relu):
            steps.append(("relu", x))
            x = np.maximum(x, 0)
        else:  # Flatten
            steps.append(("flatten", x.shape))
            x = x.reshape(b, -1)
    if x.ndim != 2 or x.shape[1] != spec.num_classes:
        raise ShapeError(
            f"network produced shape {x.shape}, expected ({b}, {spec.num_classes}) logits"
        )
    return x, steps


def _backward(spec: ModelSpec, params: np.ndarray, steps: list, grad_logits: np.ndarray):
    """Backpropagate grad_logits through cached steps into a flat gradient."""
    grad = np.zeros(params.shape[0], dtype=grad_logits.dtype)
    offsets = param_offsets(spec)
    plist = param_layers(spec)
    g = grad_logits
    for step in reversed(steps):
        kind = step[0]
        if kind == "dense":
            _, pj, x_in = step[0], step[1], step[2]
            layer = plist[pj][1]
            w_mat, _ = _dense_views(params, offsets[pj], layer)
            off = offsets[pj]
            n_w = layer.in_dim * layer.out_dim
            grad[off : off + n_w] = (x_in.T @ g).reshape(-1)
            grad[off + n_w : off + n_w + layer.out_dim] = g.sum(axis=0)
            g = g @ w_mat.T
        elif kind == "conv":
            _, pj, x_shape, cols = step
            layer = plist[pj][1]
            wmat, _ = _conv_views(params, offsets[pj], layer)
            off = offsets[pj]
            k = layer.kernel_size
            n_w = layer.out_channels * layer.in_channels * k * k
            # g: (B, out_c, Ho, Wo) -> rows aligned with im2col output
            g2 = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(-1, layer.out_channels)
            grad[off : off + n_w] = (g2.T @ cols).reshape(-1)
            grad[off + n_w : off + n_w + layer.out_channels] = g2.sum(axis=0)
            g = _col2im(g2 @ wmat, x_shape, k, layer.stride)
        elif kind == "relu":
            g = g * (step[1] > 0)
        else:  # flatten
            g = g.reshape(step[1])
    return grad


def forward(spec: ModelSpec, weights: ModelWeights, batch: Batch):
    """Class scores for a batch. Returns (logits (B, M) float32, cache)."""
    inputs = np.asarray(batch.inputs, dtype=np.float32)
    logits, steps = _forward(spec, weights.params, inputs)
    return logits, ForwardCache(params=weights.params, batch_size=inputs.shape[0], steps=steps)


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean negative log-likelihood and its gradient w.r.t. logits.

    Stable via row-max subtraction; the log argument is clamped at 1e-12 so
    a fully confident wrong prediction yields a finite loss. The returned
    gradient is (softmax - onehot) / batch_size in the logits dtype.
    """
    if logits.ndim != 2:
        raise ShapeError(f"logits must be (batch, classes), got shape {logits.shape}")
    labels = np.asarray(labels)
    if labels.shape != (logits.shape[0],):
        raise ShapeError(
            f"labels shape {labels.shape} does not match batch of {logits.shape[0]}"
        )
    m = logits.shape[1]
    if labels.size and (labels.min() < 0 or labels.max() >= m):
        raise ContractError(f"labels must lie in [0, {m}), got range "
                            f"[{labels.min()}, {labels.max()}]")
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=1, keepdims=True)
    rows = np.arange(logits.shape[0])
    losses = -np.log(np.maximum(p[rows, labels], 1e-12))
    loss = float(np.mean(losses, dtype=np.float64))
    grad = p.copy()
    grad[rows, labels] -= 1.0
    grad /= logits.shape[0]
    return loss, grad


def backward(spec: ModelSpec, weights: ModelWeights, cache: ForwardCache,
             grad_logits: np.ndarray) -> np.ndarray:
    """Gradient of the cached forward pass w.r.t. the flat parameter vector."""
    if cache.params is not weights.params:
        raise ContractError("cache was produced by a different parameter vector")
    if grad_logits.shape != (cache.batch_size, spec.num_classes):
        raise ShapeError(
            f"grad_logits shape {grad_logits.shape} does not match "
            f"({cache.batch_size}, {spec.num_classes})"
        )
    return _backward(spec, weights.params, cache.steps, grad_logits)


def sgd_step(weights: ModelWeights, grad: np.ndarray, lr: float) -> ModelWeights:
    """One gradient step, skipping frozen layers. Returns new weights.

    The frozen prefix is copied bit-for-bit; the input weights are never
    mutated.
    """
    if lr <= 0:
        raise ConfigError(f"learning rate must be positive, got {lr}")
    if grad.shape != weights.params.shape:
        raise ShapeError(
            f"gradient length {grad.shape} does not match params {weights.params.shape}"
        )
    new = weights.params.copy()
    live = slice(frozen_region(weights).stop, new.shape[0])
    new[live] -= np.float32(lr) * grad[live].astype(np.float32, copy=False)
    return ModelWeights(new, weights.layer_offsets, weights.frozen_prefix)


def predict(spec: ModelSpec, weights: ModelWeights, inputs: np.ndarray) -> np.ndarray:
    """Argmax class per row (ties break to the lowest index). Chunks big inputs."""
    inputs = np.asarray(inputs, dtype=np.float32)
    if inputs.ndim != 2:
        raise ShapeError(f"inputs must be (batch, features), got shape {inputs.shape}")
    preds = np.empty(inputs.shape[0], dtype=np.int64)
    chunk = 2048  # bounds im2col scratch memory on large eval sets
    for lo in range(0, inputs.shape[0], chunk):
        logits, _ = _forward(spec, weights.params, inputs[lo : lo + chunk])
        preds[lo : lo + chunk] = np.argmax(logits, axis=1)
    return preds


def loss_at(spec: ModelSpec, params: np.ndarray, inputs: np.ndarray,
            labels: np.ndarray) -> float:
    """Scalar loss for a raw parameter vector (gradient-check helper)."""
    logits, _ = _forward(spec, params, inputs)
    loss, _ = softmax_cross_entropy(logits, labels)
    return loss


def _loss_and_relu_signs(spec: ModelSpec, params: np.ndarray, inputs: np.ndarray,
                         labels: np.ndarray):
    logits, steps = _forward(spec, params, inputs)
    loss, _ = softmax_cross_entropy(logits, labels)
    signs = [s[1] > 0 for s in steps if s[0] == "relu"]
    return loss, signs


def gradient_check(spec: ModelSpec, weights: ModelWeights, batch: Batch,
                   epsilon: float = 1e-4) -> float:
    """Max relative error between analytic and central-difference gradients.

    Both sides are computed in float64. Relative error per parameter is
    |a - n| / max(|a|, |n|, 1e-8); the max over parameters is returned.

    A parameter is skipped when its +eps and -eps evaluations disagree on
    any relu's activation pattern: the loss is non-differentiable somewhere
    on that interval, so a central difference there measures the kink, not
    the gradient. At any generic point this excludes a negligible handful.
    """
    if not (0 < epsilon <= 1e-2):
        raise ConfigError(f"epsilon must be in (0, 1e-2], got {epsilon}")
    p64 = weights.params.astype(np.float64)
    x = np.asarray(batch.inputs, dtype=np.float64)
    labels = batch.labels
    logits, steps = _forward(spec, p64, x)
    _, grad_logits = softmax_cross_entropy(logits, labels)
    analytic = _backward(spec, p64, steps, grad_logits)
    numeric = np.empty_like(p64)
    smooth = np.ones(p64.size, dtype=bool)
    for i in range(p64.size):
        orig = p64[i]
        p64[i] = orig + epsilon
        lp, signs_p = _loss_and_relu_signs(spec, p64, x, labels)
        p64[i] = orig - epsilon
        lm, signs_m = _loss_and_relu_signs(spec, p64, x, labels)
        p64[i] = orig
        numeric[i] = (lp - lm) / (2.0 * epsilon)
        if any(not np.array_equal(a, b) for a, b in zip(signs_p, signs_m)):
            smooth[i] = False
    if not smooth.any():
        raise ContractError(
            "every parameter's perturbation crossed a relu kink; "
            "check at a different point"
        )
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    rel = np.abs(analytic - numeric) / denom
    return float(np.max(rel[smooth]))
