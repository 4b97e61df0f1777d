"""Small dense-tensor engine: conv / max-pool / LRN / fully-connected layers.

Tensors are plain numpy arrays in NHWC layout (batch first, channels last).
Parameters are stored as float32; loss sums and bias reductions are
accumulated in float64.
"""
from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    """Raised when an input does not fit a layer's expected dimensions."""


class StateError(RuntimeError):
    """Raised when backward is requested without a matching forward pass."""


class LayerKind(str, enum.Enum):
    CONV = "conv"
    MAXPOOL = "maxpool"
    LRN = "lrn"
    FC = "fc"


_KIND_TAGS = {LayerKind.CONV: 1, LayerKind.MAXPOOL: 2, LayerKind.LRN: 3, LayerKind.FC: 4}
_TAG_KINDS = {v: k for k, v in _KIND_TAGS.items()}


@dataclass(frozen=True)
class LayerSpec:
    kind: LayerKind
    kernel_count: int = 0
    kernel_size: int = 0
    stride: int = 1
    pool_size: int = 3
    lrn_size: int = 5
    lrn_alpha: float = 1e-4
    lrn_beta: float = 0.75
    lrn_bias: float = 2.0
    output_units: int = 0
    relu: bool = False
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "kind", LayerKind(self.kind))
        if self.kind is LayerKind.CONV:
            if self.stride != 1:
                raise ValueError("convolutions use stride 1")
            if self.kernel_count <= 0 or self.kernel_size <= 0:
                raise ValueError("conv needs positive kernel_count and kernel_size")
        elif self.kind is LayerKind.MAXPOOL:
            if self.pool_size <= 0 or self.stride <= 0:
                raise ValueError("pool_size and stride must be positive")
        elif self.kind is LayerKind.LRN:
            if self.lrn_size <= 0 or self.lrn_size % 2 == 0:
                raise ValueError("lrn_size must be a positive odd number")
        elif self.kind is LayerKind.FC and self.output_units <= 0:
            raise ValueError("fc needs positive output_units")


def conv(k: int, s: int, relu: bool = True, name: str = "") -> LayerSpec:
    return LayerSpec(LayerKind.CONV, kernel_count=k, kernel_size=s, relu=relu, name=name)


def maxpool(pool_size: int = 3, stride: int = 2, name: str = "") -> LayerSpec:
    return LayerSpec(LayerKind.MAXPOOL, pool_size=pool_size, stride=stride, name=name)


def lrn(name: str = "", **params) -> LayerSpec:
    return LayerSpec(LayerKind.LRN, name=name, **{f"lrn_{k}": v for k, v in params.items()})


def fc(units: int, relu: bool = False, name: str = "") -> LayerSpec:
    return LayerSpec(LayerKind.FC, output_units=units, relu=relu, name=name)


@dataclass
class LayerState:
    weights: np.ndarray | None = None
    biases: np.ndarray | None = None
    grad_weights: np.ndarray | None = None
    grad_biases: np.ndarray | None = None
    cache: dict = field(default_factory=dict)

    def has_params(self) -> bool:
        return self.weights is not None


def output_shape(spec: LayerSpec, in_shape: tuple[int, ...]) -> tuple[int, ...]:
    """Per-sample output shape for a per-sample input shape (no batch axis)."""
    if spec.kind is LayerKind.FC:
        return (spec.output_units,)
    if len(in_shape) != 3:
        raise ShapeError(f"{spec.kind.value} expects an HxWxC input, got shape {in_shape}")
    h, w, c = in_shape
    if spec.kind is LayerKind.CONV:
        s = spec.kernel_size
        if h < s or w < s:
            raise ShapeError(f"conv kernel {s}x{s} larger than input {h}x{w}")
        return (h - s + 1, w - s + 1, spec.kernel_count)
    if spec.kind is LayerKind.MAXPOOL:
        p, st = spec.pool_size, spec.stride
        if h < p or w < p:
            raise ShapeError(f"pool window {p}x{p} larger than input {h}x{w}")
        return ((h - p) // st + 1, (w - p) // st + 1, c)
    return in_shape


def init_state(spec: LayerSpec, in_shape: tuple[int, ...], rng: np.random.Generator,
               conv_std: float = 0.01, fc_std: float = 0.005,
               scheme: str = "gaussian") -> LayerState:
    """Allocate parameters for ``spec`` applied to a per-sample ``in_shape``.

    ``scheme="gaussian"`` draws zero-mean Gaussians with the fixed stds;
    ``scheme="he"`` scales the std by sqrt(2 / fan_in).
    """
    output_shape(spec, in_shape)
    if spec.kind is LayerKind.CONV:
        c = in_shape[2]
        s = spec.kernel_size
        fan_in = c * s * s
        std = conv_std if scheme == "gaussian" else np.sqrt(2.0 / fan_in)
        w = rng.normal(0.0, std, size=(c, s, s, spec.kernel_count))
        return LayerState(w.astype(np.float32), np.zeros(spec.kernel_count, np.float32))
    if spec.kind is LayerKind.FC:
        fan_in = int(np.prod(in_shape))
        std = fc_std if scheme == "gaussian" else np.sqrt((2.0 if spec.relu else 1.0) / fan_in)
        w = rng.normal(0.0, std, size=(fan_in, spec.output_units))
        return LayerState(w.astype(np.float32), np.zeros(spec.output_units, np.float32))
    return LayerState()


def _check_input(spec: LayerSpec, state: LayerState, x: np.ndarray) -> None:
    if spec.kind is LayerKind.FC:
        fan_in = int(np.prod(x.shape[1:]))
        if fan_in != state.weights.shape[0]:
            raise ShapeError(f"fc expects {state.weights.shape[0]} inputs per sample, got {fan_in}")
        return
    if x.ndim != 4:
        raise ShapeError(f"{spec.kind.value} expects NxHxWxC input, got shape {x.shape}")
    output_shape(spec, x.shape[1:])
    if spec.kind is LayerKind.CONV and x.shape[3] != state.weights.shape[0]:
        raise ShapeError(f"conv kernel depth {state.weights.shape[0]} != input channels {x.shape[3]}")


def _lrn_window_sum(a: np.ndarray, size: int) -> np.ndarray:
    half = size // 2
    c = a.shape[-1]
    padded = np.zeros(a.shape[:-1] + (c + 2 * half + 1,), dtype=a.dtype)
    np.cumsum(a, axis=-1, out=padded[..., half + 1: half + 1 + c])
    padded[..., half + 1 + c:] = padded[..., half + c: half + 1 + c]
    return padded[..., size:size + c] - padded[..., :c]


def layer_forward(spec: LayerSpec, state: LayerState, x: np.ndarray) -> np.ndarray:
    """Forward pass over a batch; caches what the backward pass needs."""
    _check_input(spec, state, x)
    kind = spec.kind
    if kind is LayerKind.CONV:
        s = spec.kernel_size
        n, h, w, c = x.shape
        ho, wo = h - s + 1, w - s + 1
        cols = sliding_window_view(x, (s, s), axis=(1, 2)).reshape(n * ho * wo, c * s * s)
        wmat = state.weights.reshape(c * s * s, -1)
        out = (cols @ wmat + state.biases).reshape(n, ho, wo, -1)
        state.cache = {"cols": cols, "in_shape": x.shape}
    elif kind is LayerKind.MAXPOOL:
        p, st = spec.pool_size, spec.stride
        n, h, w, c = x.shape
        ho, wo = (h - p) // st + 1, (w - p) // st + 1
        win = sliding_window_view(x, (p, p), axis=(1, 2))[:, : st * (ho - 1) + 1: st, : st * (wo - 1) + 1: st]
        win = win.reshape(n, ho, wo, c, p * p)
        idx = win.argmax(axis=-1)
        out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
        state.cache = {"argmax": idx, "in_shape": x.shape}
        return out
    elif kind is LayerKind.LRN:
        k = spec.lrn_alpha / spec.lrn_size
        scale = spec.lrn_bias + k * _lrn_window_sum(x * x, spec.lrn_size)
        out = x * scale ** (-spec.lrn_beta)
        state.cache = {"x": x, "scale": scale}
        return out
    else:
        n = x.shape[0]
        flat = x.reshape(n, -1)
        out = flat @ state.weights + state.biases
        state.cache = {"x": flat, "in_shape": x.shape}
    if spec.relu:
        np.maximum(out, 0, out=out)
        state.cache["mask"] = out > 0
    return out


def layer_backward(spec: LayerSpec, state: LayerState, grad_out: np.ndarray, input_grad: bool = True):
    """Returns (grad_in, grad_weights, grad_biases); the last two are None for
    parameter-free layers. Parameter gradients are also stored on ``state``.
    With ``input_grad=False`` a conv or fc layer skips grad_in and returns None."""
    if not state.cache:
        raise StateError(f"backward called on {spec.kind.value} layer before forward")
    cache = state.cache
    kind = spec.kind
    g = grad_out
    if spec.relu:
        g = g * cache["mask"]
    gw = gb = None
    if kind is LayerKind.CONV:
        n, h, w, c = cache["in_shape"]
        s = spec.kernel_size
        ho, wo = h - s + 1, w - s + 1
        g2 = g.reshape(-1, spec.kernel_count)
        cols = cache["cols"]
        gw = (cols.T @ g2).reshape(state.weights.shape)
        gb = g2.sum(axis=0, dtype=np.float64).astype(g2.dtype)
        if not input_grad:
            state.grad_weights, state.grad_biases = gw, gb
            return None, gw, gb
        gcols = (g2 @ state.weights.reshape(c * s * s, -1).T).reshape(n, ho, wo, c, s, s)
        grad_in = np.zeros((n, h, w, c), dtype=g2.dtype)
        for i in range(s):
            for j in range(s):
                grad_in[:, i:i + ho, j:j + wo, :] += gcols[..., i, j]
    elif kind is LayerKind.MAXPOOL:
        n, h, w, c = cache["in_shape"]
        p, st = spec.pool_size, spec.stride
        idx = cache["argmax"]
        ho, wo = idx.shape[1:3]
        grad_in = np.zeros((n, h, w, c), dtype=g.dtype)
        for k in range(p * p):
            di, dj = divmod(k, p)
            grad_in[:, di:di + st * (ho - 1) + 1: st, dj:dj + st * (wo - 1) + 1: st, :] += g * (idx == k)
    elif kind is LayerKind.LRN:
        x, scale = cache["x"], cache["scale"]
        beta = spec.lrn_beta
        k = spec.lrn_alpha / spec.lrn_size
        inner = _lrn_window_sum(g * x * scale ** (-beta - 1.0), spec.lrn_size)
        grad_in = g * scale ** (-beta) - 2.0 * k * beta * x * inner
    else:
        flat = cache["x"]
        gw = flat.T @ g
        gb = g.sum(axis=0, dtype=np.float64).astype(g.dtype)
        grad_in = (g @ state.weights.T).reshape(cache["in_shape"]) if input_grad else None
    state.grad_weights, state.grad_biases = gw, gb
    return grad_in, gw, gb


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_ce_loss(logits: np.ndarray, labels: np.ndarray, valid: np.ndarray | None = None):
    """Summed cross-entropy over valid sites.

    ``logits`` has shape (..., K); ``labels`` and ``valid`` have the leading
    shape. Returns ``(loss, grad_logits)``; invalid sites get zero gradient.
    """
    logits = np.asarray(logits)
    labels = np.asarray(labels)
    k = logits.shape[-1]
    if labels.shape != logits.shape[:-1]:
        raise ShapeError(f"labels shape {labels.shape} does not match logits {logits.shape[:-1]}")
    valid = np.ones(labels.shape, bool) if valid is None else np.asarray(valid, bool)
    if not valid.any():
        raise ValueError("softmax_ce_loss needs at least one valid site")
    lab = labels[valid]
    if lab.min() < 0 or lab.max() >= k:
        raise ValueError(f"labels must lie in [0, {k})")
    z = logits.astype(np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    logp = z - logsum
    safe = np.where(valid, labels, 0)
    picked = np.take_along_axis(logp, safe[..., None], axis=-1)[..., 0]
    loss = float(-picked[valid].sum())
    grad = np.exp(logp)
    np.put_along_axis(grad, safe[..., None], np.take_along_axis(grad, safe[..., None], axis=-1) - 1.0, axis=-1)
    grad[~valid] = 0.0
    return loss, grad.astype(logits.dtype if logits.dtype.kind == "f" else np.float64)


def sgd_step(state: LayerState, grads: tuple[np.ndarray, np.ndarray] | None, learning_rate: float) -> LayerState:
    """In-place ``w -= lr * g`` on weights and biases; returns ``state``."""
    if not state.has_params():
        return state
    gw, gb = grads if grads is not None else (state.grad_weights, state.grad_biases)
    if gw.shape != state.weights.shape or gb.shape != state.biases.shape:
        raise ShapeError(f"gradient shapes {gw.shape}/{gb.shape} do not match "
                         f"parameters {state.weights.shape}/{state.biases.shape}")
    state.weights -= np.asarray(learning_rate * gw, dtype=state.weights.dtype)
    state.biases -= np.asarray(learning_rate * gb, dtype=state.biases.dtype)
    return state


def grad_check(network, x, labels, n_samples: int = 20, h: float = 1e-5, seed: int = 0) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``network`` must expose ``loss_and_grads(x, labels) -> loss`` (filling
    parameter gradients) and ``parameters()`` yielding ``(array, grad_array)``
    pairs. Up to ``n_samples`` entries of every parameter array are probed.
    The check runs on a float64 copy so the network itself is untouched.
    """
    net = network.astype(np.float64)
    x = np.asarray(x, dtype=np.float64)
    net.loss_and_grads(x, labels)
    rng = np.random.default_rng(seed)
    worst = 0.0
    analytic_all = [g.copy() for _, g in net.parameters()]
    for (param, _), analytic in zip(list(net.parameters()), analytic_all):
        flat = param.reshape(-1)
        size = flat.size
        picks = np.arange(size) if size <= n_samples else rng.choice(size, n_samples, replace=False)
        aflat = analytic.reshape(-1)
        for i in picks:
            old = flat[i]
            flat[i] = old + h
            lp = net.loss_and_grads(x, labels, backward=False)
            flat[i] = old - h
            lm = net.loss_and_grads(x, labels, backward=False)
            flat[i] = old
            numeric = (lp - lm) / (2 * h)
            a = float(aflat[i])
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst


# --- NFW1 weight files -------------------------------------------------------

_MAGIC = b"NFW1"


def save_weights(path, layers) -> None:
    """Write ``[(LayerSpec, LayerState), ...]`` to an NFW1 file.

    Layout (little-endian): magic, u32 layer count, then per layer: u8 kind
    tag, u32 weight ndim + u32 extents, u32 bias ndim + u32 extents, raw
    float32 weights, raw float32 biases. Parameter-free layers use ndim 0 and
    carry no data.
    """
    with open(path, "wb") as f:
        f.write(weights_bytes(layers))


def weights_bytes(layers) -> bytes:
    chunks = [_MAGIC, struct.pack("<I", len(layers))]
    for spec, state in layers:
        chunks.append(struct.pack("<B", _KIND_TAGS[spec.kind]))
        for arr in (state.weights, state.biases):
            dims = () if arr is None else arr.shape
            chunks.append(struct.pack("<I", len(dims)))
            chunks.append(struct.pack(f"<{len(dims)}I", *dims))
        for arr in (state.weights, state.biases):
            if arr is not None:
                chunks.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(chunks)


def load_weights(path) -> list[tuple[LayerKind, np.ndarray | None, np.ndarray | None]]:
    """Read an NFW1 file into ``[(kind, weights, biases), ...]``."""
    with open(path, "rb") as f:
        buf = f.read()
    if buf[:4] != _MAGIC:
        raise ValueError(f"{path}: not an NFW1 weight file")
    pos = 4
    (count,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    out = []
    for _ in range(count):
        (tag,) = struct.unpack_from("<B", buf, pos)
        pos += 1
        shapes = []
        for _ in range(2):
            (nd,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            dims = struct.unpack_from(f"<{nd}I", buf, pos)
            pos += 4 * nd
            shapes.append(dims if nd else None)
        arrays = []
        for dims in shapes:
            if dims is None:
                arrays.append(None)
                continue
            n = int(np.prod(dims))
            arr = np.frombuffer(buf, dtype="<f4", count=n, offset=pos).reshape(dims).astype(np.float32)
            pos += 4 * n
            arrays.append(arr)
        out.append((_TAG_KINDS[tag], arrays[0], arrays[1]))
    if pos != len(buf):
        raise ValueError(f"{path}: {len(buf) - pos} trailing bytes")
    return out
