"""Training-time augmentation: horizontal flip, colour change, random crop."""
from __future__ import annotations

import dataclasses

import numpy as np

from ..geometry import resize_nearest
from ..normalmap import NormalMap
from .edges import derive_edge_labels

_MIRROR = np.array([-1.0, 1.0, 1.0])


def _relabel(sample, image, normals, depth, layout, vps, face_ids, hfov_deg, cell):
    n = normals.astype(np.float32)
    edges = derive_edge_labels(depth, n, cell, hfov_deg)
    return dataclasses.replace(
        sample, image=image, normals=NormalMap(n, None), depth=depth.astype(np.float32),
        layout_gt=NormalMap(layout.astype(np.float32), None), layout_class=-1, edges=edges,
        vps=vps, face_ids=face_ids, cuboids=list(sample.cuboids))


def hflip(sample, cell: int = 13):
    """Mirror left-right: normal and vanishing-direction x components flip sign."""
    flip = np.s_[:, ::-1]
    face = None if sample.face_ids is None else sample.face_ids[flip].copy()
    return _relabel(
        sample,
        image=sample.image[flip].copy(),
        normals=sample.normals.normals[flip] * _MIRROR.astype(np.float32),
        depth=sample.depth[flip].copy(),
        layout=sample.layout_gt.normals[flip] * _MIRROR.astype(np.float32),
        vps=sample.vps * _MIRROR,
        face_ids=face,
        hfov_deg=sample.camera.hfov_deg,
        cell=cell,
    )


def color_jitter(sample, rng: np.random.Generator, low: float = 0.8, high: float = 1.2):
    """Scale each RGB channel by an independent factor in [low, high]."""
    scale = rng.uniform(low, high, 3)
    img = np.clip(np.floor(sample.image.astype(np.float64) * scale + 0.5), 0, 255).astype(np.uint8)
    return dataclasses.replace(sample, image=img)


def crop_window(sample, top: int, left: int, height: int, width: int, cell: int = 13):
    """Cut the window and rescale it to the original resolution (nearest neighbour)."""
    H, W = sample.shape
    if top < 0 or left < 0 or top + height > H or left + width > W or height < 1 or width < 1:
        raise ValueError(f"crop window {(top, left, height, width)} outside a {H}x{W} image")
    win = np.s_[top:top + height, left:left + width]

    def rs(a):
        return resize_nearest(a[win], H, W)

    hfov = sample.camera.hfov_deg
    eff_hfov = float(np.degrees(2 * np.arctan(np.tan(np.radians(hfov) / 2) * width / W)))
    face = None if sample.face_ids is None else rs(sample.face_ids)
    return _relabel(sample, rs(sample.image), rs(sample.normals.normals), rs(sample.depth),
                    rs(sample.layout_gt.normals), sample.vps.copy(), face, eff_hfov, cell)


def random_crop(sample, rng: np.random.Generator, min_scale: float = 0.8, cell: int = 13):
    H, W = sample.shape
    s = rng.uniform(min_scale, 1.0)
    h, w = max(1, int(round(H * s))), max(1, int(round(W * s)))
    top = int(rng.integers(0, H - h + 1))
    left = int(rng.integers(0, W - w + 1))
    return crop_window(sample, top, left, h, w, cell)


def augment(sample, seed: int, flip_prob: float = 0.5, crop_prob: float = 0.5, cell: int = 13):
    """Random flip, colour change and crop, each driven by ``seed``.

    Geometry-changing steps reset ``layout_class`` to -1; callers re-encode
    the layout against their codebook.
    """
    rng = np.random.default_rng(seed)
    out = sample
    if rng.random() < flip_prob:
        out = hflip(out, cell)
    out = color_jitter(out, rng)
    if rng.random() < crop_prob:
        out = random_crop(out, rng, cell=cell)
    return out
