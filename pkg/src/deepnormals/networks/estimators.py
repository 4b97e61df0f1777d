"""Estimator wrappers (fit / predict_proba / predict) around the four networks."""
from __future__ import annotations

import numpy as np
from PIL import Image
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .architecture import WINDOW, NetworkKind, build_network
from .model import Network
from .sliding import infer_sliding
from .training import TrainConfig, train_joint


def preprocess_image(image) -> np.ndarray:
    """uint8 RGB -> float32 in [-0.5, 0.5]; float input is passed through."""
    img = np.asarray(image)
    if img.dtype == np.uint8:
        return img.astype(np.float32) / 255.0 - 0.5
    return img.astype(np.float32)


def fusion_input(stack) -> np.ndarray:
    """Feature stack (..., 18) with rgb in [0, 1] -> network input with rgb centred like images."""
    x = np.array(stack, dtype=np.float32)
    x[..., -3:] -= 0.5
    return x


def resize_image(image: np.ndarray, size: int = WINDOW) -> np.ndarray:
    """Bilinear resize of a uint8 RGB image to ``size`` x ``size``."""
    return np.asarray(Image.fromarray(np.asarray(image, np.uint8)).resize((size, size), Image.BILINEAR))


def _with_valid(labels, valid):
    return labels if valid is None else (labels, np.asarray(valid, bool))


class _NetworkEstimator(BaseEstimator):
    _kind: NetworkKind
    _prepare = staticmethod(preprocess_image)

    def __init__(self, tiny: bool = False, learning_rate: float = 1e-3, epochs: int = 30,
                 batch_size: int = 16, random_state: int = 0, init: str = "he",
                 secondary_multiplier: float = 50.0):
        self.tiny = tiny
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.random_state = random_state
        self.init = init
        self.secondary_multiplier = secondary_multiplier

    def _spec_kwargs(self) -> dict:
        return {}

    def build(self) -> Network:
        spec = build_network(self._kind, self.tiny, secondary_multiplier=self.secondary_multiplier,
                             **self._spec_kwargs())
        return Network(spec, seed=self.random_state, init=self.init)

    def _train_config(self) -> TrainConfig:
        return TrainConfig(self.learning_rate, self.epochs, self.batch_size, self.random_state)

    def _fit(self, X, targets, callback=None):
        self.network_ = self.build()
        res = train_joint(self.network_, self._prepare(X), targets, self._train_config(), callback)
        self.history_ = res.history
        self.head_history_ = res.head_history
        self.initial_loss_ = res.initial_loss
        return self

    def predict_proba(self, X) -> dict[str, np.ndarray]:
        check_is_fitted(self, "network_")
        return self.network_.predict_proba(self._prepare(X))

    def save(self, path) -> None:
        check_is_fitted(self, "network_")
        self.network_.save(path)

    def load(self, path):
        self.network_ = self.build().load(path)
        return self


class TopDownNetwork(_NetworkEstimator):
    """Whole-image network: coarse 20x20 normal classes plus a layout class."""
    _kind = NetworkKind.TOPDOWN

    def __init__(self, n_layouts: int = 300, coarse_classes: int = 20, tiny: bool = False,
                 learning_rate: float = 1e-3, epochs: int = 30, batch_size: int = 16,
                 random_state: int = 0, init: str = "he", secondary_multiplier: float = 50.0):
        super().__init__(tiny, learning_rate, epochs, batch_size, random_state, init,
                         secondary_multiplier)
        self.n_layouts = n_layouts
        self.coarse_classes = coarse_classes

    def _spec_kwargs(self):
        return {"n_layouts": self.n_layouts, "coarse_classes": self.coarse_classes}

    def fit(self, X, y_normals, y_layout, valid=None, callback=None):
        return self._fit(X, {"normals": _with_valid(y_normals, valid), "layout": np.asarray(y_layout)},
                         callback)

    def predict(self, X):
        p = self.predict_proba(X)
        return p["normals"].argmax(-1), p["layout"].argmax(-1)


class BottomUpNetwork(_NetworkEstimator):
    """Window network: 13x13 centre normal classes plus the centre edge label."""
    _kind = NetworkKind.BOTTOMUP

    def __init__(self, local_classes: int = 40, tiny: bool = False, learning_rate: float = 1e-3,
                 epochs: int = 30, batch_size: int = 16, random_state: int = 0,
                 init: str = "he", secondary_multiplier: float = 50.0):
        super().__init__(tiny, learning_rate, epochs, batch_size, random_state, init,
                         secondary_multiplier)
        self.local_classes = local_classes

    def _spec_kwargs(self):
        return {"local_classes": self.local_classes}

    def fit(self, X, y_normals, y_edges, valid=None, callback=None):
        return self._fit(X, {"normals": _with_valid(y_normals, valid), "edges": np.asarray(y_edges)},
                         callback)

    def predict(self, X):
        p = self.predict_proba(X)
        return p["normals"].argmax(-1), p["edges"].argmax(-1)

    def predict_dense(self, image, stride: int = 13):
        check_is_fitted(self, "network_")
        return infer_sliding(self.network_, preprocess_image(image), stride)


class FusionNetwork(_NetworkEstimator):
    """Window network over the 18-channel feature stack."""
    _kind = NetworkKind.FUSION
    _prepare = staticmethod(fusion_input)

    def __init__(self, local_classes: int = 40, tiny: bool = False, learning_rate: float = 1e-3,
                 epochs: int = 30, batch_size: int = 16, random_state: int = 0,
                 init: str = "he"):
        super().__init__(tiny, learning_rate, epochs, batch_size, random_state, init, 1.0)
        self.local_classes = local_classes

    def _spec_kwargs(self):
        return {"local_classes": self.local_classes}

    def fit(self, X, y_normals, valid=None, callback=None):
        return self._fit(X, {"normals": _with_valid(y_normals, valid)},
                         callback)

    def predict(self, X):
        return self.predict_proba(X)["normals"].argmax(-1)

    def predict_dense(self, stack, stride: int = 13):
        check_is_fitted(self, "network_")
        return infer_sliding(self.network_, fusion_input(stack), stride)


class BaselineRegressionNetwork(_NetworkEstimator):
    """Coarse 20x20x3 direct regression trained with the negative dot product."""
    _kind = NetworkKind.BASELINE

    def __init__(self, tiny: bool = False, learning_rate: float = 1e-3, epochs: int = 30,
                 batch_size: int = 16, random_state: int = 0, init: str = "he"):
        super().__init__(tiny, learning_rate, epochs, batch_size, random_state, init, 1.0)

    def fit(self, X, y_normals, valid=None, callback=None):
        return self._fit(X, {"normals": _with_valid(np.asarray(y_normals, np.float32), valid)},
                         callback)

    def predict(self, X):
        raw = self.predict_proba(X)["normals"].astype(np.float64)
        return raw / np.maximum(np.linalg.norm(raw, axis=-1, keepdims=True), 1e-12)


def infer_topdown(model, image) -> tuple[np.ndarray, np.ndarray]:
    """Per-site normal distributions (20, 20, K_t) and the layout distribution for one image."""
    net = model.network_ if isinstance(model, _NetworkEstimator) else model
    img = np.asarray(image)
    if img.shape != tuple(net.spec.input_shape):
        raise ValueError(f"top-down input must be {net.spec.input_shape}, got {img.shape}")
    p = net.predict_proba(preprocess_image(img)[None])
    return p["normals"][0], p["layout"][0]
