"""Room-layout codebook learned with k-medoids (PAM) over layout normal maps."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

GRID = 20


def layout_distances(A: np.ndarray, B: np.ndarray | None = None) -> np.ndarray:
    """Mean per-pixel angular error (degrees) between every pair of layout maps.

    ``A`` is (n, h, w, 3); ``B`` defaults to ``A``.
    """
    a = np.asarray(A, dtype=np.float64).reshape(len(A), -1, 3)
    b = a if B is None else np.asarray(B, dtype=np.float64).reshape(len(B), -1, 3)
    if a.shape[1] != b.shape[1]:
        raise ValueError("layout maps differ in resolution")
    a = a / np.linalg.norm(a, axis=-1, keepdims=True)
    b = b / np.linalg.norm(b, axis=-1, keepdims=True)
    out = np.zeros((len(a), len(b)))
    # chord form: exactly zero for identical maps
    for px in range(a.shape[1]):
        chord = np.linalg.norm(a[:, None, px] - b[None, :, px], axis=-1)
        out += 2.0 * np.arcsin(np.minimum(chord / 2.0, 1.0))
    out = np.degrees(out / a.shape[1])
    if B is None:
        np.fill_diagonal(out, 0.0)
        out = np.minimum(out, out.T)
    return out


def farthest_point_init(D: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(D)
    chosen = [int(rng.integers(n))]
    nearest = D[chosen[0]].copy()
    for _ in range(1, k):
        nxt = int(np.argmax(nearest))
        chosen.append(nxt)
        nearest = np.minimum(nearest, D[nxt])
    return np.array(chosen)


def pam_swap(D: np.ndarray, medoids: np.ndarray, max_iter: int = 1000, tol: float = 1e-10):
    """Best-improvement PAM swap phase.

    Returns ``(medoids, cost_history)``; every iteration applies the single
    (medoid, non-medoid) exchange that lowers total cost the most.
    """
    medoids = np.array(medoids, dtype=np.int64)
    n, k = len(D), len(medoids)
    history = [float(D[medoids].min(axis=0).sum())]
    for _ in range(max_iter):
        dm = D[medoids]                                   # (k, n)
        order = np.argsort(dm, axis=0, kind="stable")
        nearest_idx = order[0]
        nearest = dm[nearest_idx, np.arange(n)]
        second = dm[order[1], np.arange(n)] if k > 1 else np.full(n, np.inf)
        # distance each point falls back to when medoid i is removed
        fallback = np.where(nearest_idx[None, :] == np.arange(k)[:, None], second[None, :], nearest[None, :])
        is_medoid = np.zeros(n, bool)
        is_medoid[medoids] = True
        best_delta, best = -tol, None
        for h in np.flatnonzero(~is_medoid):
            costs = np.minimum(fallback, D[h][None, :]).sum(axis=1)
            i = int(np.argmin(costs))
            delta = costs[i] - history[-1]
            if delta < best_delta:
                best_delta, best = delta, (i, int(h))
        if best is None:
            break
        medoids[best[0]] = best[1]
        history.append(float(D[medoids].min(axis=0).sum()))
    return medoids, history


class LayoutCodebook(BaseEstimator):
    """k-medoids codebook of layout normal maps; each medoid is one class."""

    def __init__(self, n_layouts: int = 300, random_state: int = 0, max_iter: int = 1000):
        self.n_layouts = n_layouts
        self.random_state = random_state
        self.max_iter = max_iter

    def fit(self, X, y=None, distances: np.ndarray | None = None):
        x = _check_layouts(X)
        n = len(x)
        if self.n_layouts > n:
            raise ValueError(f"cannot pick {self.n_layouts} medoids from {n} layouts")
        D = layout_distances(x) if distances is None else np.asarray(distances)
        rng = np.random.default_rng(self.random_state)
        init = farthest_point_init(D, self.n_layouts, rng)
        medoids, history = pam_swap(D, init, self.max_iter)
        self.medoid_indices_ = medoids
        self.medoids_ = x[medoids].astype(np.float32)
        self.cost_history_ = history
        self.cost_ = history[-1]
        self.labels_ = np.argmin(D[medoids], axis=0)
        return self

    @classmethod
    def from_medoids(cls, medoids) -> "LayoutCodebook":
        m = _check_layouts(medoids)
        lcb = cls(n_layouts=len(m))
        lcb.medoids_ = m.astype(np.float32)
        return lcb

    @property
    def grid_shape(self) -> tuple[int, int]:
        check_is_fitted(self, "medoids_")
        return self.medoids_.shape[1:3]

    def predict(self, X):
        """Index of the nearest medoid (lowest index on ties) per layout."""
        check_is_fitted(self, "medoids_")
        x = _check_layouts(X)
        if x.shape[1:3] != self.grid_shape:
            raise ValueError(f"layout resolution {x.shape[1:3]} != codebook grid {self.grid_shape}")
        return np.argmin(layout_distances(x, self.medoids_), axis=1)

    def decode(self, idx) -> np.ndarray:
        check_is_fitted(self, "medoids_")
        idx = int(idx)
        if not 0 <= idx < len(self.medoids_):
            raise IndexError(f"layout class {idx} outside [0, {len(self.medoids_)})")
        return self.medoids_[idx]

    inverse_transform = decode

    def to_text(self) -> str:
        check_is_fitted(self, "medoids_")
        k, h, w = self.medoids_.shape[:3]
        lines = [f"LCB1 {k} {w} {h}"]
        for m in self.medoids_:
            lines += [" ".join(repr(float(v)) for v in px) for px in m.reshape(-1, 3)]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "LayoutCodebook":
        lines = text.splitlines()
        head = lines[0].split()
        if head[0] != "LCB1":
            raise ValueError("not a layout codebook file")
        k, w, h = (int(v) for v in head[1:4])
        if len(lines) != 1 + k * w * h:
            raise ValueError(f"expected {1 + k * w * h} lines, found {len(lines)}")
        vals = np.array([[float(v) for v in ln.split()] for ln in lines[1:]], dtype=np.float32)
        lcb = cls(n_layouts=k)
        lcb.medoids_ = vals.reshape(k, h, w, 3)
        return lcb

    def save(self, path) -> None:
        with open(path, "w") as f:
            f.write(self.to_text())

    @classmethod
    def load(cls, path) -> "LayoutCodebook":
        with open(path) as f:
            return cls.from_text(f.read())


def _check_layouts(X) -> np.ndarray:
    x = np.asarray(X)
    if x.ndim == 3:
        x = x[None]
    if x.ndim != 4 or x.shape[-1] != 3:
        raise ValueError(f"layouts must be (n, h, w, 3), got {x.shape}")
    return x


def build_layout_codebook(layouts, K_l: int, seed: int = 0) -> LayoutCodebook:
    return LayoutCodebook(n_layouts=K_l, random_state=seed).fit(layouts)
