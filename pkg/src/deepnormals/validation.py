"""Input validation helpers shared by the estimators."""
from __future__ import annotations

import numpy as np


def check_unit_normals(X, tol: float = 1e-4) -> np.ndarray:
    """Return ``X`` as a float64 array of shape (..., 3) of unit vectors."""
    x = np.asarray(X, dtype=np.float64)
    if x.ndim == 1:
        x = x[None]
    if x.shape[-1] != 3:
        raise ValueError(f"normals must have a trailing axis of size 3, got shape {x.shape}")
    if not np.isfinite(x).all():
        raise ValueError("normals contain NaN or Inf")
    norms = np.linalg.norm(x, axis=-1)
    if x.size and np.abs(norms - 1.0).max() > tol:
        raise ValueError(f"normals must be unit length (max deviation {np.abs(norms - 1.0).max():.2e})")
    return x


def check_distributions(P, n_classes: int, tol: float = 1e-4) -> np.ndarray:
    """Return ``P`` as float64 (..., n_classes) non-negative rows summing to 1."""
    p = np.asarray(P, dtype=np.float64)
    if p.ndim == 1:
        p = p[None]
    if p.shape[-1] != n_classes:
        raise ValueError(f"expected {n_classes} classes, got trailing axis {p.shape[-1]}")
    if (p < -1e-12).any():
        raise ValueError("distributions must be non-negative")
    sums = p.sum(axis=-1)
    if (sums <= 0).any():
        raise ValueError("all-zero distribution cannot be decoded")
    if np.abs(sums - 1.0).max() > tol:
        raise ValueError(f"distributions must sum to 1 (max deviation {np.abs(sums - 1.0).max():.2e})")
    return np.clip(p, 0.0, None)


def check_image(image, channels: int = 3) -> np.ndarray:
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[2] != channels:
        raise ValueError(f"expected an HxWx{channels} image, got shape {img.shape}")
    return img


def check_same_shape(name_a: str, a, name_b: str, b) -> None:
    if np.shape(a)[:2] != np.shape(b)[:2]:
        raise ValueError(f"{name_a} has resolution {np.shape(a)[:2]} but {name_b} has {np.shape(b)[:2]}")


def check_orthonormal(vps, tol: float = 1e-4) -> np.ndarray:
    v = np.asarray(vps, dtype=np.float64).reshape(3, 3)
    if np.abs(np.linalg.norm(v, axis=1) - 1.0).max() > tol:
        raise ValueError("vanishing directions must be unit vectors")
    g = v @ v.T
    off = np.abs(g - np.diag(np.diag(g))).max()
    if off >= tol:
        raise ValueError(f"vanishing directions are not mutually orthogonal (max |dot| {off:.2e})")
    return v
