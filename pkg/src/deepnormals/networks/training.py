"""Mini-batch SGD over the summed head losses of a :class:`Network`."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..engine import sgd_step
from .model import Network


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 30
    batch_size: int = 16
    seed: int = 0
    multipliers: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning rate must be positive")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")


@dataclass
class TrainResult:
    history: list[float]          # mean batch loss per epoch
    initial_loss: float           # full-set loss before the first step
    head_history: list[dict] = field(default_factory=list)


def _take(targets, idx):
    out = {}
    for k, t in targets.items():
        out[k] = tuple(np.asarray(a)[idx] for a in t) if isinstance(t, tuple) else np.asarray(t)[idx]
    return out


def dataset_loss(net: Network, X, targets, multipliers=None, batch_size: int = 64) -> float:
    """Mean per-sample total loss over the whole set, without touching gradients."""
    total, n = 0.0, len(X)
    for i in range(0, n, batch_size):
        idx = np.arange(i, min(i + batch_size, n))
        total += net.loss_and_grads(X[idx], _take(targets, idx), False, multipliers) * len(idx)
    for _, st in net.layers():
        st.cache = {}
    return total / n


def sgd_update(net: Network, learning_rate: float) -> None:
    for _, st in net.layers():
        if st.has_params():
            sgd_step(st, None, learning_rate)


def train_joint(net: Network, X, targets, cfg: TrainConfig, callback=None) -> TrainResult:
    """Train ``net`` in place on images ``X`` and per-head ``targets``.

    Each step back-propagates the sum of head losses; the secondary head's
    gradient carries the multiplier from its head definition unless ``cfg.multipliers``
    overrides it. Batches come from a seeded permutation per epoch.
    """
    X = np.asarray(X)
    n = len(X)
    if n == 0:
        raise ValueError("empty training set")
    for k, t in targets.items():
        lab = t[0] if isinstance(t, tuple) else t
        expect = net.spec.head(k).output_shape
        lab_shape = np.shape(lab)[1:]
        if net.spec.head(k).loss == "softmax":
            expect = expect[:-1]
        if len(lab) != n or tuple(lab_shape) != tuple(expect):
            raise ValueError(f"targets for head {k!r} have shape {np.shape(lab)}, "
                             f"expected ({n}, {', '.join(map(str, expect))})")
    mult = cfg.multipliers or None
    rng = np.random.default_rng(cfg.seed)
    initial = dataset_loss(net, X, targets, mult)
    history, head_history = [], []
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        epoch_loss, per_head = 0.0, {}
        for i in range(0, n, cfg.batch_size):
            idx = np.sort(order[i:i + cfg.batch_size])
            xb = X[idx]
            outputs = net.forward(xb, heads=set(targets))
            losses, grads = net.head_losses(outputs, _take(targets, idx), mult)
            loss = net.total_loss(losses, mult)
            if not np.isfinite(loss):
                layer = net.first_nonfinite_layer(xb) or "loss"
                raise TrainingError(f"non-finite loss in epoch {epoch}; first non-finite layer: {layer}")
            net.backward(grads)
            sgd_update(net, cfg.learning_rate)
            epoch_loss += loss * len(idx)
            for k, v in losses.items():
                per_head[k] = per_head.get(k, 0.0) + v * len(idx)
        history.append(epoch_loss / n)
        head_history.append({k: v / n for k, v in per_head.items()})
        if callback is not None:
            callback(epoch, history[-1])
    for _, st in net.layers():
        st.cache = {}
    return TrainResult(history, initial, head_history)
