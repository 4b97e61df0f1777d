"""Triangular coding of surface normals over a k-means codebook.

Codewords live on the camera-facing hemisphere (z <= 0). They are projected
stereographically from the pole (0, 0, 1) onto the plane z = 0, where the
Delaunay cover and all barycentric weights are computed.
"""
from __future__ import annotations

import warnings

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ..validation import check_distributions, check_unit_normals
from .delaunay import bowyer_watson

POLE = (0.0, 0.0, 1.0)


def stereographic(n: np.ndarray) -> np.ndarray:
    n = np.asarray(n, dtype=np.float64)
    return n[..., :2] / (1.0 - n[..., 2:3])


def inverse_stereographic(p: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    r2 = (p * p).sum(axis=-1, keepdims=True)
    return np.concatenate([2 * p, r2 - 1.0], axis=-1) / (r2 + 1.0)


def spherical_kmeans(x: np.ndarray, k: int, rng: np.random.Generator, max_iter: int = 100):
    """Cosine k-means with k-means++ seeding. Returns (centers, labels)."""
    n = len(x)
    centers = np.empty((k, 3))
    centers[0] = x[rng.integers(n)]
    dist = 1.0 - x @ centers[0]
    for j in range(1, k):
        w = np.maximum(dist, 0.0)
        total = w.sum()
        idx = rng.choice(n, p=w / total) if total > 0 else int(np.argmax(w))
        centers[j] = x[idx]
        dist = np.minimum(dist, 1.0 - x @ centers[j])
    labels = None
    for _ in range(max_iter):
        new = np.argmax(x @ centers.T, axis=1)
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        sums = np.zeros((k, 3))
        np.add.at(sums, labels, x)
        counts = np.bincount(labels, minlength=k)
        for j in np.flatnonzero(counts == 0):
            far = int(np.argmin((x * centers[labels]).sum(axis=1)))
            sums[j] = x[far]
            labels[far] = j
        centers = sums / np.linalg.norm(sums, axis=1, keepdims=True)
    return centers, labels


class NormalCodebook(TransformerMixin, BaseEstimator):
    """Codebook of unit normals with a Delaunay cover for triangular coding.

    ``transform`` encodes normals as barycentric class distributions,
    ``predict`` gives the hard class (largest weight), and
    ``inverse_transform`` decodes distributions back to normals.
    """

    def __init__(self, n_codewords: int = 40, random_state: int = 0, max_iter: int = 100):
        self.n_codewords = n_codewords
        self.random_state = random_state
        self.max_iter = max_iter

    def fit(self, X, y=None):
        if self.n_codewords < 3:
            raise ValueError("need at least 3 codewords to triangulate")
        x = check_unit_normals(X).reshape(-1, 3)
        if len(x) < self.n_codewords:
            raise ValueError(f"{len(x)} samples for {self.n_codewords} codewords")
        if (x[:, 2] > 1e-6).any():
            raise ValueError("codebook samples must be camera-facing (z <= 0)")
        rng = np.random.default_rng(self.random_state)
        centers, _ = spherical_kmeans(x, self.n_codewords, rng, self.max_iter)
        centers = _dedupe(centers)
        if len(centers) < 3:
            raise ValueError("codewords collapsed to fewer than 3 distinct directions")
        if len(centers) < self.n_codewords:
            warnings.warn(f"codebook collapsed to {len(centers)} distinct codewords")
        return self._set_codewords(centers)

    def _set_codewords(self, codewords, triangles=None):
        codewords = np.asarray(codewords, dtype=np.float64)
        codewords[:, 2] = np.minimum(codewords[:, 2], 0.0)
        self.codewords_ = codewords / np.linalg.norm(codewords, axis=1, keepdims=True)
        self.projected_ = stereographic(self.codewords_)
        if triangles is None:
            triangles = bowyer_watson(self.projected_)
        self.triangles_ = np.asarray(triangles, dtype=np.int64)
        if len(self.triangles_) == 0:
            raise ValueError("codewords are collinear in projection; no triangles")
        return self._prepare()

    def _prepare(self):
        a, b, c = (self.projected_[self.triangles_[:, i]] for i in range(3))
        self._tri_origin = a
        self._tri_inv = np.linalg.inv(np.stack([b - a, c - a], axis=-1))
        return self

    @classmethod
    def from_codewords(cls, codewords, triangles=None) -> "NormalCodebook":
        codewords = np.asarray(codewords, dtype=np.float64)
        cb = cls(n_codewords=len(codewords))
        return cb._set_codewords(codewords, triangles)

    @property
    def n_classes(self) -> int:
        check_is_fitted(self, "codewords_")
        return len(self.codewords_)

    # -- encoding -------------------------------------------------------------
    def barycentric(self, X):
        """Per-normal (triangle index, 3 weights); triangle -1 if outside hull."""
        check_is_fitted(self, "codewords_")
        x = check_unit_normals(X).reshape(-1, 3)
        p = stereographic(x)
        tri = np.full(len(x), -1, dtype=np.int64)
        weights = np.zeros((len(x), 3))
        eps = 1e-9
        for s in range(0, len(x), 4096):
            d = p[s:s + 4096, None, :] - self._tri_origin[None]
            uv = np.einsum("tij,ntj->nti", self._tri_inv, d)
            w = np.concatenate([1.0 - uv.sum(-1, keepdims=True), uv], axis=-1)
            inside = (w >= -eps).all(axis=-1)
            hit = inside.any(axis=1)
            first = np.argmax(inside, axis=1)
            rows = np.flatnonzero(hit)
            tri[s + rows] = first[rows]
            ww = np.clip(w[rows, first[rows]], 0.0, None)
            weights[s + rows] = ww / ww.sum(axis=1, keepdims=True)
        return tri, weights

    def transform(self, X):
        """Encode normals (..., 3) as distributions (..., K)."""
        x = np.asarray(X, dtype=np.float64)
        lead = x.shape[:-1]
        flat = x.reshape(-1, 3)
        tri, w = self.barycentric(flat)
        out = np.zeros((len(flat), self.n_classes))
        rows = np.flatnonzero(tri >= 0)
        verts = self.triangles_[tri[rows]]
        for j in range(3):
            np.add.at(out, (rows, verts[:, j]), w[rows, j])
        miss = np.flatnonzero(tri < 0)
        if len(miss):
            nearest = np.argmax(flat[miss] @ self.codewords_.T, axis=1)
            out[miss, nearest] = 1.0
        return out.reshape(lead + (self.n_classes,))

    def predict(self, X):
        """Hard class per normal: the codeword with the largest coding weight."""
        return np.argmax(self.transform(X), axis=-1)

    # -- decoding -------------------------------------------------------------
    def decode_triangle(self, P):
        """Normals from distributions via the max-total-probability triangle."""
        check_is_fitted(self, "codewords_")
        p = check_distributions(P, self.n_classes)
        lead = p.shape[:-1]
        p = p.reshape(-1, self.n_classes)
        out = np.empty((len(p), 3))
        for s in range(0, len(p), 8192):
            chunk = p[s:s + 8192]
            vp = chunk[:, self.triangles_]                     # (n, T, 3)
            best = np.argmax(vp.sum(axis=-1), axis=1)
            w = vp[np.arange(len(chunk)), best]
            w = w / w.sum(axis=1, keepdims=True)
            v = np.einsum("nj,njk->nk", w, self.codewords_[self.triangles_[best]])
            out[s:s + 8192] = v / np.linalg.norm(v, axis=1, keepdims=True)
        return out.reshape(lead + (3,))

    def decode_soft(self, P):
        """Normals as the normalized probability-weighted mean of all codewords."""
        check_is_fitted(self, "codewords_")
        p = check_distributions(P, self.n_classes)
        v = p @ self.codewords_
        norm = np.linalg.norm(v, axis=-1, keepdims=True)
        if (norm < 1e-6).any():
            raise ValueError("weighted mean of codewords is (near) zero")
        return v / norm

    def inverse_transform(self, P, mode: str = "triangle"):
        if mode == "triangle":
            return self.decode_triangle(P)
        if mode == "soft":
            return self.decode_soft(P)
        raise ValueError(f"unknown decode mode {mode!r}")

    # -- diagnostics ----------------------------------------------------------
    def nearest_spacing_deg(self) -> np.ndarray:
        """Angle from every codeword to its nearest neighbour codeword."""
        c = self.codewords_
        dots = np.clip(c @ c.T, -1.0, 1.0)
        np.fill_diagonal(dots, -1.0)
        return np.degrees(np.arccos(dots.max(axis=1)))

    # -- text format ------------------------------------------------------------
    def to_text(self) -> str:
        check_is_fitted(self, "codewords_")
        lines = [f"NCB1 {len(self.codewords_)} {len(self.triangles_)} stereographic "
                 f"{POLE[0]!r} {POLE[1]!r} {POLE[2]!r}"]
        lines += [" ".join(repr(float(v)) for v in c) for c in self.codewords_]
        lines += [" ".join(str(int(v)) for v in t) for t in self.triangles_]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "NormalCodebook":
        lines = text.splitlines()
        head = lines[0].split()
        if head[0] != "NCB1" or head[3] != "stereographic":
            raise ValueError("not a normal codebook file")
        if tuple(float(v) for v in head[4:7]) != POLE:
            raise ValueError("unsupported projection pole")
        k, t = int(head[1]), int(head[2])
        if len(lines) != 1 + k + t:
            raise ValueError(f"expected {1 + k + t} lines, found {len(lines)}")
        cw = np.array([[float(v) for v in ln.split()] for ln in lines[1:1 + k]])
        tris = np.array([[int(v) for v in ln.split()] for ln in lines[1 + k:]], dtype=np.int64)
        cb = cls(n_codewords=k)
        cb.codewords_ = cw
        cb.projected_ = stereographic(cw)
        cb.triangles_ = tris.reshape(-1, 3)
        return cb._prepare()

    def save(self, path) -> None:
        with open(path, "w") as f:
            f.write(self.to_text())

    @classmethod
    def load(cls, path) -> "NormalCodebook":
        with open(path) as f:
            return cls.from_text(f.read())


def _dedupe(centers: np.ndarray, tol_deg: float = 1e-6) -> np.ndarray:
    keep = []
    cos_tol = np.cos(np.radians(tol_deg))
    for c in centers:
        if all(float(c @ k) < cos_tol for k in keep):
            keep.append(c)
    return np.array(keep)


def build_normal_codebook(samples, K: int, seed: int = 0) -> NormalCodebook:
    return NormalCodebook(n_codewords=K, random_state=seed).fit(samples)
