"""Multi-head network container built from a :class:`NetworkSpec`."""
from __future__ import annotations

import copy
import hashlib
import zlib

import numpy as np

from ..engine import (init_state, layer_backward, layer_forward,
                      load_weights, output_shape, save_weights, softmax, softmax_ce_loss)
from .architecture import NetworkSpec


def baseline_regression_loss(raw: np.ndarray, gt: np.ndarray, valid: np.ndarray | None = None):
    """Negative mean dot product between per-pixel normalized ``raw`` and ``gt``.

    ``raw`` and ``gt`` have shape (..., 3). Returns ``(loss, grad_raw)`` with
    the gradient taken through the normalization.
    """
    raw64 = np.asarray(raw, dtype=np.float64)
    gt64 = np.asarray(gt, dtype=np.float64)
    valid = np.ones(raw64.shape[:-1], bool) if valid is None else np.asarray(valid, bool)
    count = int(valid.sum())
    if count == 0:
        raise ValueError("baseline_regression_loss needs at least one valid pixel")
    norm = np.maximum(np.linalg.norm(raw64, axis=-1, keepdims=True), 1e-12)
    unit = raw64 / norm
    dots = (unit * gt64).sum(axis=-1)
    loss = -float(dots[valid].sum()) / count
    grad = -(gt64 - dots[..., None] * unit) / norm / count
    grad[~valid] = 0.0
    return loss, grad.astype(raw.dtype if np.asarray(raw).dtype.kind == "f" else np.float64)


def _layer_seed(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng([seed, zlib.crc32(name.encode())])


class Network:
    """Shared convolutional trunk feeding one or more heads.

    Each layer gets its own RNG stream keyed by layer name, so adding or
    removing a head never perturbs the initialization of the others.
    """

    def __init__(self, spec: NetworkSpec, seed: int = 0, init: str = "gaussian", dtype=np.float32,
                 conv_std: float = 0.01, fc_std: float = 0.005):
        self.spec = spec
        self.seed = seed
        shape = spec.input_shape
        self.trunk = []
        for ls in spec.trunk:
            st = init_state(ls, shape, _layer_seed(seed, ls.name), conv_std, fc_std, init)
            self.trunk.append((ls, st))
            shape = output_shape(ls, shape)
        self.trunk_shape = shape
        self.heads = {}
        for head in spec.heads:
            hshape = shape
            layers = []
            for ls in head.layers:
                st = init_state(ls, hshape, _layer_seed(seed, ls.name), conv_std, fc_std, init)
                layers.append((ls, st))
                hshape = output_shape(ls, hshape)
            self.heads[head.name] = layers
        if dtype != np.float32:
            self._cast(dtype)

    # -- parameter plumbing -------------------------------------------------
    def layers(self):
        out = list(self.trunk)
        for head in self.spec.heads:
            out.extend(self.heads[head.name])
        return out

    def parameters(self):
        for _, st in self.layers():
            if st.has_params():
                yield st.weights, st.grad_weights
                yield st.biases, st.grad_biases

    def _cast(self, dtype):
        for _, st in self.layers():
            if st.has_params():
                st.weights = st.weights.astype(dtype)
                st.biases = st.biases.astype(dtype)
                st.grad_weights = st.grad_biases = None

    def astype(self, dtype) -> "Network":
        other = copy.deepcopy(self)
        for _, st in other.layers():
            st.cache = {}
        other._cast(dtype)
        return other

    @property
    def dtype(self):
        for _, st in self.layers():
            if st.has_params():
                return st.weights.dtype
        return np.dtype(np.float32)

    def checksum(self) -> str:
        h = hashlib.sha256()
        for _, st in self.layers():
            if st.has_params():
                h.update(np.ascontiguousarray(st.weights).tobytes())
                h.update(np.ascontiguousarray(st.biases).tobytes())
        return h.hexdigest()

    def n_parameters(self) -> int:
        return sum(int(p.size) for p, _ in self.parameters())

    def save(self, path) -> None:
        save_weights(path, self.layers())

    def load(self, path) -> "Network":
        records = load_weights(path)
        layers = self.layers()
        if len(records) != len(layers):
            raise ValueError(f"{path}: {len(records)} layers, network expects {len(layers)}")
        for (spec, st), (kind, w, b) in zip(layers, records):
            if kind is not spec.kind:
                raise ValueError(f"{path}: layer kind {kind.value} where {spec.kind.value} expected")
            if st.has_params():
                if w is None or w.shape != st.weights.shape or b.shape != st.biases.shape:
                    raise ValueError(f"{path}: parameter shape mismatch in layer {spec.name}")
                st.weights = w.astype(st.weights.dtype)
                st.biases = b.astype(st.biases.dtype)
        return self

    # -- passes ---------------------------------------------------------------
    def forward(self, x: np.ndarray, heads=None) -> dict[str, np.ndarray]:
        x = np.asarray(x, dtype=self.dtype)
        if x.ndim == 3:
            x = x[None]
        if tuple(x.shape[1:]) != tuple(self.spec.input_shape):
            raise ValueError(f"{self.spec.kind.value} network expects input "
                             f"{self.spec.input_shape}, got {x.shape[1:]}")
        for spec, st in self.trunk:
            x = layer_forward(spec, st, x)
        self._trunk_out = x.shape
        outputs = {}
        for head in self.spec.heads:
            if heads is not None and head.name not in heads:
                continue
            h = x
            for spec, st in self.heads[head.name]:
                h = layer_forward(spec, st, h)
            outputs[head.name] = h.reshape((h.shape[0],) + head.output_shape)
        return outputs

    def backward(self, grads: dict[str, np.ndarray], input_grad: bool = False) -> np.ndarray | None:
        g_trunk = None
        for head in self.spec.heads:
            layers = self.heads[head.name]
            g = grads.get(head.name)
            if g is None:
                for _, st in layers:
                    if st.has_params():
                        st.grad_weights = np.zeros_like(st.weights)
                        st.grad_biases = np.zeros_like(st.biases)
                continue
            g = np.asarray(g, dtype=self.dtype).reshape(g.shape[0], -1)
            for spec, st in reversed(layers):
                g, _, _ = layer_backward(spec, st, g)
            g = g.reshape(self._trunk_out)
            g_trunk = g if g_trunk is None else g_trunk + g
        for i in range(len(self.trunk) - 1, -1, -1):
            spec, st = self.trunk[i]
            g_trunk, _, _ = layer_backward(spec, st, g_trunk, input_grad=i > 0 or input_grad)
        return g_trunk

    def head_losses(self, outputs, targets, multipliers=None):
        """Batch-mean loss per head and the matching output gradients.

        ``targets[name]`` is either a label array or a ``(labels, valid)``
        pair. Softmax heads sum cross-entropy over sites; gradients are
        scaled by the head multiplier and divided by the batch size.
        """
        multipliers = multipliers or {}
        losses, grads = {}, {}
        for head in self.spec.heads:
            if head.name not in targets or head.name not in outputs:
                continue
            t = targets[head.name]
            labels, valid = (t if isinstance(t, tuple) else (t, None))
            out = outputs[head.name]
            n = out.shape[0]
            if head.loss == "softmax":
                loss, g = softmax_ce_loss(out, labels, valid)
            else:
                loss, g = baseline_regression_loss(out, labels, valid)
                loss, g = loss * n, g * n
            mult = multipliers.get(head.name, head.multiplier)
            losses[head.name] = loss / n
            grads[head.name] = g * (mult / n)
        return losses, grads

    def total_loss(self, losses, multipliers=None) -> float:
        multipliers = multipliers or {}
        return float(sum(multipliers.get(h.name, h.multiplier) * losses[h.name]
                         for h in self.spec.heads if h.name in losses))

    def loss_and_grads(self, x, targets, backward: bool = True, multipliers=None) -> float:
        outputs = self.forward(x, heads=set(targets))
        losses, grads = self.head_losses(outputs, targets, multipliers)
        if backward:
            self.backward(grads)
        return self.total_loss(losses, multipliers)

    def predict_proba(self, x, batch_size: int = 64) -> dict[str, np.ndarray]:
        x = np.asarray(x)
        if x.ndim == 3:
            x = x[None]
        chunks: dict[str, list] = {}
        for i in range(0, len(x), batch_size):
            out = self.forward(x[i:i + batch_size])
            for h in self.spec.heads:
                o = out[h.name]
                chunks.setdefault(h.name, []).append(softmax(o) if h.loss == "softmax" else o)
        for _, st in self.layers():
            st.cache = {}
        return {k: np.concatenate(v) for k, v in chunks.items()}

    def first_nonfinite_layer(self, x) -> str | None:
        """Name of the first layer whose forward output is not finite."""
        x = np.asarray(x, dtype=self.dtype)
        for spec, st in self.trunk:
            x = layer_forward(spec, st, x)
            if not np.isfinite(x).all():
                return spec.name
        for head in self.spec.heads:
            h = x
            for spec, st in self.heads[head.name]:
                h = layer_forward(spec, st, h)
                if not np.isfinite(h).all():
                    return spec.name
        return None

    def describe(self) -> list[str]:
        rows = []
        shape = self.spec.input_shape
        for ls, _ in self.trunk:
            shape = output_shape(ls, shape)
            rows.append(f"{ls.name}: {ls.kind.value} -> {shape}")
        for head in self.spec.heads:
            for ls, _ in self.heads[head.name]:
                rows.append(f"{ls.name}: {ls.kind.value} -> ({ls.output_units},)")
        return rows

