"""Random 55x55 training windows for the bottom-up network."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .edges import region_edge_label

PATCH = 55
CENTER = 13


@dataclass
class PatchSet:
    images: np.ndarray      # (n, patch, patch, 3) uint8
    labels: np.ndarray      # (n, 13, 13) normal-codebook classes
    valid: np.ndarray       # (n, 13, 13) bool
    edges: np.ndarray       # (n,) EdgeLabel of the centre cell
    positions: np.ndarray   # (n, 2) top-left (row, col)

    def __len__(self) -> int:
        return len(self.images)


def center_offset(patch: int = PATCH, center: int = CENTER) -> int:
    return (patch - center) // 2


def _pad(a: np.ndarray, pad: int) -> np.ndarray:
    if pad == 0:
        return a
    return np.pad(a, ((pad, pad), (pad, pad)) + ((0, 0),) * (a.ndim - 2), mode="edge")


def position_range(height: int, width: int, patch: int = PATCH, center: int = CENTER, pad: int = 0):
    """Inclusive (max top, max left) for windows on an image edge-padded by ``pad``.

    A window must lie inside the padded image and its centre block inside the
    original image. Positions are in padded coordinates.
    """
    o = center_offset(patch, center)
    if not 0 <= pad <= o:
        raise ValueError(f"pad must lie in [0, {o}]")
    top = min(height + 2 * pad - patch, height - center - o + pad)
    left = min(width + 2 * pad - patch, width - center - o + pad)
    if top < 0 or left < 0:
        raise ValueError(f"{patch}x{patch} patch does not fit a {height}x{width} image")
    return top, left


def window_positions(rng: np.random.Generator, height: int, width: int, count: int,
                     patch: int = PATCH, center: int = CENTER, pad: int = 0) -> np.ndarray:
    """``count`` uniformly random (top, left) window positions."""
    if count <= 0:
        raise ValueError("count must be positive")
    top, left = position_range(height, width, patch, center, pad)
    return np.stack([rng.integers(0, top + 1, count), rng.integers(0, left + 1, count)], 1)


def patch_at(sample, codebook, top: int, left: int, patch: int = PATCH, center: int = CENTER,
             pad: int = 0, padded_image: np.ndarray | None = None):
    """(image window, centre labels, centre valid mask, centre edge label) at one position.

    ``top``/``left`` are in the coordinates of the image edge-padded by ``pad``.
    """
    H, W = sample.shape
    max_top, max_left = position_range(H, W, patch, center, pad)
    if not (0 <= top <= max_top and 0 <= left <= max_left):
        raise ValueError(f"patch at {(top, left)} does not fit a {H}x{W} image")
    o = center_offset(patch, center) - pad
    image = _pad(sample.image, pad) if padded_image is None else padded_image
    img = image[top:top + patch, left:left + patch]
    sl = np.s_[top + o:top + o + center, left + o:left + o + center]
    labels = codebook.predict(sample.normals.normals[sl])
    valid = sample.normals.valid[sl]
    edge = region_edge_label(sample.depth, sample.normals.normals, top + o, left + o, center,
                             sample.camera.hfov_deg)
    return img, labels, valid, int(edge)


def sample_patches(sample, count: int, codebook, patch: int = PATCH, seed: int = 0,
                   center: int = CENTER, pad: int = 0) -> PatchSet:
    """``count`` windows at uniformly random positions.

    With ``pad`` > 0 the image is edge-padded first so centre blocks can reach
    the image border.
    """
    if count <= 0:
        raise ValueError("count must be positive")
    H, W = sample.shape
    pos = window_positions(np.random.default_rng(seed), H, W, count, patch, center, pad)
    image = _pad(sample.image, pad)
    parts = [patch_at(sample, codebook, int(r), int(c), patch, center, pad, image) for r, c in pos]
    return PatchSet(
        images=np.stack([p[0] for p in parts]),
        labels=np.stack([p[1] for p in parts]).astype(np.int64),
        valid=np.stack([p[2] for p in parts]),
        edges=np.array([p[3] for p in parts], dtype=np.int64),
        positions=pos,
    )
