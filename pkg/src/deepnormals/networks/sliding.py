"""Dense prediction by sliding a 55x55 window at a 13-pixel stride."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .architecture import WINDOW

STRIDE = 13
MARGIN = (WINDOW - STRIDE) // 2


@dataclass(frozen=True)
class WindowGrid:
    """Window placement over an image and the pixel -> window-cell mapping.

    The image is edge-padded by ``pad`` pixels per side before windows are
    cut, so with the default margin every 13x13 cell of the image is the
    centre of its own window. Window tops are in padded coordinates.
    """
    height: int
    width: int
    window: int = WINDOW
    stride: int = STRIDE
    cell: int = STRIDE
    pad: int = MARGIN

    def __post_init__(self):
        if not 0 <= self.pad <= self.origin:
            raise ValueError(f"pad must lie in [0, {self.origin}]")
        if self.height < self.window or self.width < self.window:
            raise ValueError(f"image {self.height}x{self.width} is smaller than the "
                             f"{self.window}x{self.window} window")

    @property
    def rows(self) -> int:
        return (self.height + 2 * self.pad - self.window) // self.stride + 1

    @property
    def cols(self) -> int:
        return (self.width + 2 * self.pad - self.window) // self.stride + 1

    @property
    def origin(self) -> int:
        """Offset of the centre cell inside a window."""
        return (self.window - self.cell) // 2

    @property
    def first_cell(self) -> int:
        """Image coordinate where the first window's centre cell starts."""
        return self.origin - self.pad

    def tops(self) -> np.ndarray:
        return np.arange(self.rows) * self.stride

    def lefts(self) -> np.ndarray:
        return np.arange(self.cols) * self.stride

    def pixel_to_cell(self):
        """(row index (H,), col index (W,)): covering window per pixel, borders clamped."""
        o = self.first_cell
        r = np.clip((np.arange(self.height) - o) // self.stride, 0, self.rows - 1)
        c = np.clip((np.arange(self.width) - o) // self.stride, 0, self.cols - 1)
        return r, c

    def pixel_offsets(self):
        """Offset of each pixel inside its window's centre cell, clamped at borders."""
        r, c = self.pixel_to_cell()
        o = self.first_cell
        dr = np.clip(np.arange(self.height) - o - r * self.stride, 0, self.cell - 1)
        dc = np.clip(np.arange(self.width) - o - c * self.stride, 0, self.cell - 1)
        return dr, dc

    def coverage(self) -> np.ndarray:
        """How many window centres write each pixel (before border filling)."""
        out = np.zeros((self.height, self.width), np.int64)
        o, m = self.first_cell, self.cell
        for t in self.tops():
            for s in self.lefts():
                out[t + o:t + o + m, s + o:s + o + m] += 1
        return out


def pad_edges(x: np.ndarray, pad: int) -> np.ndarray:
    """Replicate the outermost rows and columns ``pad`` times."""
    if pad == 0:
        return x
    return np.pad(x, ((pad, pad), (pad, pad)) + ((0, 0),) * (x.ndim - 2), mode="edge")


def windows(x: np.ndarray, grid: WindowGrid) -> np.ndarray:
    """All windows of an (H, W, C) array as (rows*cols, window, window, C)."""
    x = pad_edges(x, grid.pad)
    v = sliding_window_view(x, (grid.window, grid.window), axis=(0, 1))[::grid.stride, ::grid.stride]
    v = v[:grid.rows, :grid.cols]
    return np.ascontiguousarray(v.transpose(0, 1, 3, 4, 2)).reshape(-1, grid.window, grid.window, x.shape[2])


def cells_to_map(cells: np.ndarray, grid: WindowGrid) -> np.ndarray:
    """Place per-window centre predictions (rows, cols, cell, cell, ...) on the pixel grid.

    Covered pixels read their own window; pixels outside every centre cell
    replicate the nearest covered pixel.
    """
    r, c = grid.pixel_to_cell()
    dr, dc = grid.pixel_offsets()
    return cells[r[:, None], c[None, :], dr[:, None], dc[None, :]]


def grid_to_map(values: np.ndarray, grid: WindowGrid) -> np.ndarray:
    """Broadcast one value per window (rows, cols, ...) over its centre cell."""
    r, c = grid.pixel_to_cell()
    return values[r][:, c]


def infer_sliding(net, x: np.ndarray, stride: int = STRIDE, batch_size: int = 64, pad: int = MARGIN):
    """Bottom-up style dense prediction.

    Returns ``(normal distributions (H, W, K), edge grid (rows, cols, 4) or None, grid)``.
    ``x`` is an already preprocessed (H, W, C) float array.
    """
    x = np.asarray(x)
    if x.ndim != 3:
        raise ValueError(f"expected an (H, W, C) input, got shape {x.shape}")
    grid = WindowGrid(x.shape[0], x.shape[1], stride=stride, pad=pad)
    probs = net.predict_proba(windows(x, grid), batch_size)
    normals = probs["normals"]
    m, k = normals.shape[1], normals.shape[-1]
    if m != grid.cell:
        raise ValueError(f"network predicts {m}x{m} centres, window grid uses {grid.cell}")
    cells = normals.reshape(grid.rows, grid.cols, m, m, k)
    edges = probs.get("edges")
    if edges is not None:
        edges = edges.reshape(grid.rows, grid.cols, -1)
    return cells_to_map(cells, grid), edges, grid
