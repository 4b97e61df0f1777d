"""Edge labels per image cell, from depth + normals or from scene geometry.

Every pixel is paired with its right and lower neighbour; a cell (or any
region) collects the pairs whose first pixel lies inside it. A region is
Occlusion if any pair is occluding, otherwise Convex/Concave by majority
vote of its crease pairs (ties go to Concave), otherwise NoEdge.
"""
from __future__ import annotations

import numpy as np

from ..coding.edges import EdgeLabel
from .render import ROOM, object_ids, pixel_rays

_NONE, _CONVEX, _CONCAVE, _OCCL = 0, 1, 2, 3


def backproject(depth: np.ndarray, hfov_deg: float) -> np.ndarray:
    h, w = depth.shape
    return depth.astype(np.float64)[..., None] * pixel_rays(h, w, hfov_deg)


def _pair_views(a: np.ndarray):
    """(first, second) views for right pairs and for down pairs."""
    return (a[:, :-1], a[:, 1:]), (a[:-1], a[1:])


def _crease_sign(n1, n2, p1, p2) -> np.ndarray:
    # outward normals: (n1 - n2) . (p2 - p1) is negative across a convex crease
    s = ((n1 - n2) * (p2 - p1)).sum(axis=-1)
    return np.where(s < 0, _CONVEX, np.where(s > 0, _CONCAVE, _NONE))


def pair_codes(depth, normals, hfov_deg: float = 60.0, depth_ratio: float = 1.07,
               crease_deg: float = 20.0):
    """Pair classifications ``(right (H, W-1), down (H-1, W))`` from depth and normals."""
    return _pair_codes_pts(depth, normals, backproject(np.asarray(depth), hfov_deg),
                           depth_ratio, crease_deg)


def _per_pixel(codes_r: np.ndarray, codes_d: np.ndarray, shape):
    h, w = shape
    occl = np.zeros((h, w), bool)
    convex = np.zeros((h, w), np.int32)
    concave = np.zeros((h, w), np.int32)
    for codes, sl in ((codes_r, np.s_[:, :-1]), (codes_d, np.s_[:-1, :])):
        occl[sl] |= codes == _OCCL
        convex[sl] += codes == _CONVEX
        concave[sl] += codes == _CONCAVE
    return occl, convex, concave


def _label(occl, convex, concave) -> EdgeLabel:
    if occl.any():
        return EdgeLabel.OCCLUSION
    cv, cc = int(convex.sum()), int(concave.sum())
    if cv == 0 and cc == 0:
        return EdgeLabel.NO_EDGE
    return EdgeLabel.CONVEX if cv > cc else EdgeLabel.CONCAVE


def _grid(fields, shape, cell: int) -> np.ndarray:
    h, w = shape
    rows, cols = -(-h // cell), -(-w // cell)
    out = np.empty((rows, cols), np.int8)
    for i in range(rows):
        for j in range(cols):
            sl = np.s_[i * cell:(i + 1) * cell, j * cell:(j + 1) * cell]
            out[i, j] = _label(*(f[sl] for f in fields))
    return out


def derive_edge_labels(depth, normals, cell: int = 13, hfov_deg: float = 60.0,
                       depth_ratio: float = 1.07, crease_deg: float = 20.0) -> np.ndarray:
    """EdgeLabel grid (ceil(H/cell), ceil(W/cell)) from depth and normals.

    Occlusion when an adjacent-pixel depth ratio exceeds ``depth_ratio``;
    a crease when adjacent normals differ by more than ``crease_deg``.
    """
    depth = np.asarray(depth)
    fields = _per_pixel(*pair_codes(depth, normals, hfov_deg, depth_ratio, crease_deg), depth.shape)
    return _grid(fields, depth.shape, cell)


def region_edge_label(depth, normals, top: int, left: int, size: int = 13, hfov_deg: float = 60.0,
                      depth_ratio: float = 1.07, crease_deg: float = 20.0) -> EdgeLabel:
    """Edge label of the ``size``x``size`` block at (top, left), same rule as a grid cell."""
    h, w = np.shape(depth)
    r0, r1 = top, min(top + size + 1, h)
    c0, c1 = left, min(left + size + 1, w)
    d = np.asarray(depth)[r0:r1, c0:c1]
    n = np.asarray(normals)[r0:r1, c0:c1]
    # full-image intrinsics, cropped
    rays = pixel_rays(h, w, hfov_deg)[r0:r1, c0:c1]
    fields = _per_pixel(*_pair_codes_pts(d, n, d[..., None] * rays, depth_ratio, crease_deg), d.shape)
    sl = np.s_[:size, :size]
    return _label(*(f[sl] for f in fields))


def _pair_codes_pts(d, n, pts, depth_ratio, crease_deg):
    d = np.asarray(d, dtype=np.float64)
    n = np.asarray(n, dtype=np.float64)
    cos_t = np.cos(np.radians(crease_deg))
    out = []
    for (d1, d2), (n1, n2), (p1, p2) in zip(_pair_views(d), _pair_views(n), _pair_views(pts)):
        occl = np.maximum(d1 / d2, d2 / d1) > depth_ratio
        crease = (n1 * n2).sum(axis=-1) < cos_t
        code = np.where(crease, _crease_sign(n1, n2, p1, p2), _NONE)
        out.append(np.where(occl, _OCCL, code).astype(np.int8))
    return tuple(out)


def analytic_pair_codes(sample, contact_px: float = 4.0):
    """Pair classifications from the generator's face ids and geometry.

    Room/room pairs are concave, two faces of one cuboid are convex, a cuboid
    face meeting the floor along its bottom is concave, everything else
    across objects is an occlusion.
    """
    if sample.face_ids is None:
        raise ValueError("sample carries no face ids (loaded from disk?)")
    cam = sample.camera
    h, w = sample.shape
    f = cam.focal(w)
    pts_cam = backproject(sample.depth, cam.hfov_deg)
    world = cam.position + pts_cam @ cam.rotation.T
    face = sample.face_ids
    obj = object_ids(face)
    depth = sample.depth.astype(np.float64)
    out = []
    for (f1, f2), (o1, o2), (w1, w2), (d1, d2) in zip(
            _pair_views(face), _pair_views(obj), _pair_views(world), _pair_views(depth)):
        code = np.full(f1.shape, _NONE, np.int8)
        diff = f1 != f2
        same_obj = o1 == o2
        code[diff & same_obj & (o1 == ROOM)] = _CONCAVE
        code[diff & same_obj & (o1 != ROOM)] = _CONVEX
        cross = diff & ~same_obj
        tol = contact_px * np.maximum(d1, d2) / f
        contact = np.zeros(f1.shape, bool)
        for cub_face, floor_pt, cub_pt, cub_obj, floor_face in (
                (f1, w2, w1, o1, f2), (f2, w1, w2, o2, f1)):
            cand = cross & (cub_obj != ROOM) & (floor_face == 2)
            if not cand.any():
                continue
            local = cub_face - 6 - 6 * (cub_obj - 1)
            axis = local // 2
            for b, (lo, hi) in enumerate(sample.cuboids):
                m = cand & (cub_obj == b + 1)
                if not m.any():
                    continue
                ax = axis[m]
                plane = np.where(local[m] % 2 == 1, hi[ax], lo[ax])
                near_plane = np.abs(floor_pt[m][np.arange(m.sum()), ax] - plane) < tol[m]
                low = cub_pt[m][:, 1] < tol[m]
                side = ax != 1
                contact[m] = near_plane & low & side
        code[cross & contact] = _CONCAVE
        code[cross & ~contact] = _OCCL
        out.append(code)
    return tuple(out)


def analytic_edge_labels(sample, cell: int = 13) -> np.ndarray:
    fields = _per_pixel(*analytic_pair_codes(sample), sample.shape)
    return _grid(fields, sample.shape, cell)


def edge_boundary_mask(face_ids: np.ndarray, radius: int = 3) -> np.ndarray:
    """Pixels within ``radius`` of a change in face id."""
    from scipy.ndimage import binary_dilation

    b = np.zeros(face_ids.shape, bool)
    b[:, :-1] |= face_ids[:, :-1] != face_ids[:, 1:]
    b[:, 1:] |= face_ids[:, :-1] != face_ids[:, 1:]
    b[:-1] |= face_ids[:-1] != face_ids[1:]
    b[1:] |= face_ids[:-1] != face_ids[1:]
    return binary_dilation(b, iterations=radius)
