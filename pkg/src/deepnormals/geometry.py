"""Small vector helpers used across the package."""
from __future__ import annotations

import numpy as np


def angle_deg(a, b) -> np.ndarray:
    """Angle in degrees between corresponding 3-vectors along the last axis.

    Uses atan2(|a x b|, a . b), which is exact for identical vectors and
    never produces NaN from a dot product rounding past 1.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    cross = np.linalg.norm(np.cross(a, b), axis=-1)
    dot = (a * b).sum(axis=-1)
    return np.degrees(np.arctan2(cross, dot))


def normalize(v, axis: int = -1) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v, axis=axis, keepdims=True)


def resize_nearest(arr: np.ndarray, height: int, width: int) -> np.ndarray:
    """Nearest-neighbour resize of the two leading axes.

    Output pixel (r, c) reads input (floor(r * h / height), floor(c * w / width)).
    """
    h, w = arr.shape[:2]
    rows = (np.arange(height) * h) // height
    cols = (np.arange(width) * w) // width
    return arr[rows][:, cols]


def sample_grid(arr: np.ndarray, grid_h: int, grid_w: int | None = None) -> np.ndarray:
    """Sample a coarse grid at the centres of the blocks that ``resize_nearest``
    maps back onto each grid site."""
    grid_w = grid_h if grid_w is None else grid_w
    h, w = arr.shape[:2]
    rows = np.array([_block_center(i, grid_h, h) for i in range(grid_h)])
    cols = np.array([_block_center(j, grid_w, w) for j in range(grid_w)])
    return arr[rows][:, cols]


def _block_center(i: int, n: int, size: int) -> int:
    # pixels r with floor(r * n / size) == i
    lo = -(-i * size // n)
    hi = -(-(i + 1) * size // n) - 1
    return (lo + hi) // 2
