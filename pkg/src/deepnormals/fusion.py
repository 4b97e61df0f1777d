"""Assembly of the 18-channel fusion input and dense fusion prediction."""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .geometry import resize_nearest
from .networks.estimators import fusion_input
from .networks.sliding import WindowGrid, grid_to_map, infer_sliding
from .normalmap import NormalMap
from .validation import check_distributions, check_orthonormal, check_same_shape

N_CHANNELS = 18
CHANNELS = {
    "coarse": slice(0, 3),
    "layout": slice(3, 6),
    "local": slice(6, 9),
    "edge": slice(9, 12),
    "vp": slice(12, 15),
    "rgb": slice(15, 18),
}
OPTIONAL = ("layout", "edge", "vp")
_FST = b"FST1"


@dataclass
class FeatureStack:
    data: np.ndarray        # (H, W, 18) float32, channel order as in CHANNELS

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.ndim != 3 or self.data.shape[2] != N_CHANNELS:
            raise ValueError(f"feature stack must be HxWx{N_CHANNELS}, got {self.data.shape}")

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape[:2]

    def channel(self, name: str) -> np.ndarray:
        return self.data[..., CHANNELS[name]]

    def to_bytes(self) -> bytes:
        h, w, c = self.data.shape
        planes = np.ascontiguousarray(self.data.transpose(2, 0, 1), dtype="<f4")
        return _FST + struct.pack("<III", w, h, c) + planes.tobytes()

    @classmethod
    def from_bytes(cls, buf: bytes) -> "FeatureStack":
        if buf[:4] != _FST:
            raise ValueError("not an FST1 feature stack")
        w, h, c = struct.unpack_from("<III", buf, 4)
        if len(buf) != 16 + 4 * w * h * c:
            raise ValueError("FST1 payload size mismatch")
        planes = np.frombuffer(buf, "<f4", offset=16).reshape(c, h, w)
        return cls(planes.transpose(1, 2, 0).astype(np.float32))

    def save(self, path) -> None:
        with open(path, "wb") as f:
            f.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "FeatureStack":
        with open(path, "rb") as f:
            return cls.from_bytes(f.read())


def coarse_to_map(dist, codebook, height: int, width: int, mode: str = "triangle") -> np.ndarray:
    """Decode a (M, M, K) site field and upscale it by nearest neighbour."""
    decoded = codebook.inverse_transform(dist, mode)
    return resize_nearest(decoded, height, width)


def layout_to_map(layout_dist, layout_codebook, height: int, width: int) -> np.ndarray:
    p = check_distributions(layout_dist, layout_codebook.medoids_.shape[0]).ravel()
    idx = int(np.argmax(p))        # first maximum: lowest index wins ties
    medoid = layout_codebook.decode(idx).astype(np.float64)
    medoid = medoid / np.linalg.norm(medoid, axis=-1, keepdims=True)
    return resize_nearest(medoid, height, width)


def edges_to_map(edge_grid, height: int, width: int, grid: WindowGrid | None = None) -> np.ndarray:
    """(convex, concave, occlusion) probabilities broadcast over each window's centre cell."""
    e = np.asarray(edge_grid, dtype=np.float64)
    if e.ndim != 3 or e.shape[2] != 4:
        raise ValueError(f"edge grid must be (rows, cols, 4), got {e.shape}")
    check_distributions(e, 4)
    grid = grid or WindowGrid(height, width)
    if e.shape[:2] != (grid.rows, grid.cols):
        raise ValueError(f"edge grid is {e.shape[:2]}, windows form {(grid.rows, grid.cols)}")
    return grid_to_map(e[..., :3], grid)


def facing_axes(vps) -> np.ndarray:
    v = check_orthonormal(vps)
    signed = np.concatenate([v, -v])
    return signed[signed[:, 2] <= 0]


def vp_rectify(normals, vps, tau_deg: float = 30.0) -> np.ndarray:
    """Snap each normal to the nearest camera-facing Manhattan axis within ``tau_deg``."""
    n = np.asarray(normals, dtype=np.float64)
    axes = facing_axes(vps)
    dots = n @ axes.T
    best = np.argmax(dots, axis=-1)
    cos_best = np.take_along_axis(dots, best[..., None], -1)[..., 0]
    snap = cos_best >= np.cos(np.radians(tau_deg))
    out = n.copy()
    out[snap] = axes[best[snap]]
    return out


def assemble(coarse_dist, layout_dist, local_dist_map, edge_grid, vps, image, *,
             coarse_codebook, local_codebook, layout_codebook, tau_deg: float = 30.0,
             channels=OPTIONAL, mode: str = "triangle") -> FeatureStack:
    """Stack the fusion inputs in the fixed channel order.

    Optional channels (``layout``, ``edge``, ``vp``) missing from ``channels``
    are zero-filled so the stack always has 18 channels.
    """
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"image must be HxWx3, got {img.shape}")
    h, w = img.shape[:2]
    check_same_shape("local normal distributions", local_dist_map, "image", img)
    unknown = set(channels) - set(OPTIONAL)
    if unknown:
        raise ValueError(f"unknown fusion channels {sorted(unknown)}")
    out = np.zeros((h, w, N_CHANNELS), np.float64)
    coarse = coarse_to_map(coarse_dist, coarse_codebook, h, w, mode)
    out[..., CHANNELS["coarse"]] = coarse
    out[..., CHANNELS["local"]] = local_codebook.inverse_transform(local_dist_map, mode)
    if "layout" in channels:
        out[..., CHANNELS["layout"]] = layout_to_map(layout_dist, layout_codebook, h, w)
    if "edge" in channels:
        out[..., CHANNELS["edge"]] = edges_to_map(edge_grid, h, w)
    if "vp" in channels:
        out[..., CHANNELS["vp"]] = vp_rectify(coarse, vps, tau_deg)
    rgb = img.astype(np.float64) / 255.0 if img.dtype == np.uint8 else img.astype(np.float64)
    out[..., CHANNELS["rgb"]] = rgb
    return FeatureStack(out)


def fusion_distributions(fusion_net, stack: FeatureStack, stride: int = 13) -> np.ndarray:
    """Per-pixel K_b distributions from sliding the fusion network over the stack."""
    net = getattr(fusion_net, "network_", fusion_net)
    return infer_sliding(net, fusion_input(stack.data), stride)[0]


def fuse_predict(fusion_net, stack: FeatureStack, codebook, mode: str = "triangle",
                 stride: int = 13, dist: np.ndarray | None = None) -> NormalMap:
    """Dense fusion prediction decoded per pixel; output matches the stack resolution.

    ``dist`` may carry precomputed distributions to decode the same pass twice.
    """
    if dist is None:
        dist = fusion_distributions(fusion_net, stack, stride)
    decoded = codebook.inverse_transform(dist, mode)
    return NormalMap(decoded.astype(np.float32), None)
