"""Ray-cast box-world scenes: an axis-aligned room with cuboid furniture.

World frame: x along the room width, y up, z along the room depth. The
camera frame has x right, y down, z forward; ``Camera.rotation`` holds the
camera axes as columns in world coordinates, so camera-frame vectors are
``world @ rotation``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..coding.edges import EdgeLabel
from ..normalmap import NormalMap

ROOM = 0
AXES = np.eye(3)


class SceneError(RuntimeError):
    pass


@dataclass(frozen=True)
class SceneConfig:
    height: int = 195
    width: int = 260
    hfov_deg: float = 60.0
    room_min: tuple = (3.5, 2.5, 3.5)
    room_max: tuple = (6.5, 3.2, 6.5)
    cam_height: tuple = (1.2, 1.7)
    yaw_deg: tuple = (30.0, 55.0)
    pitch_deg: tuple = (24.0, 40.0)
    furniture: tuple = (0, 4)
    furniture_min: tuple = (0.4, 0.4, 0.4)
    furniture_max: tuple = (1.4, 1.1, 1.4)
    light: tuple = (0.45, 0.8, -0.4)
    ambient: float = 0.25
    diffuse: float = 0.75
    noise_sigma: float = 4.0 / 255.0
    cell: int = 13
    depth_ratio: float = 1.07
    crease_deg: float = 20.0
    seed: int = 0

    def __post_init__(self):
        if min(self.room_min) <= 0 or any(a > b for a, b in zip(self.room_min, self.room_max)):
            raise ValueError("room extents must be positive with room_min <= room_max")
        if any(f >= 0.5 * r for f, r in zip(self.furniture_max[::2], self.room_min[::2])):
            raise ValueError("furniture does not fit inside the smallest room")
        if self.height <= 0 or self.width <= 0:
            raise ValueError("image size must be positive")

    @classmethod
    def tiny(cls, **kw) -> "SceneConfig":
        return cls(height=65, width=78, **kw)


@dataclass
class Camera:
    position: np.ndarray
    rotation: np.ndarray      # columns: camera x (right), y (down), z (forward) in world
    hfov_deg: float

    def focal(self, width: int) -> float:
        return (width / 2.0) / np.tan(np.radians(self.hfov_deg) / 2.0)

    def rays(self, height: int, width: int) -> np.ndarray:
        """Camera-frame ray directions with unit z, one per pixel centre."""
        return pixel_rays(height, width, self.hfov_deg)


def pixel_rays(height: int, width: int, hfov_deg: float) -> np.ndarray:
    f = (width / 2.0) / np.tan(np.radians(hfov_deg) / 2.0)
    xs = (np.arange(width) + 0.5 - width / 2.0) / f
    ys = (np.arange(height) + 0.5 - height / 2.0) / f
    x, y = np.meshgrid(xs, ys)
    return np.stack([x, y, np.ones_like(x)], axis=-1)


@dataclass
class SceneSample:
    image: np.ndarray                 # (H, W, 3) uint8
    normals: NormalMap
    depth: np.ndarray                 # (H, W) float32, camera z in metres
    layout_gt: NormalMap
    layout_class: int
    edges: np.ndarray                 # (H/cell, W/cell) int8 EdgeLabel values
    vps: np.ndarray                   # (3, 3) rows: room axes in camera frame
    room: np.ndarray                  # (3,) room extents
    camera: Camera
    face_ids: np.ndarray | None = None
    cuboids: list = field(default_factory=list)

    @property
    def shape(self) -> tuple[int, int]:
        return self.image.shape[:2]


def look_rotation(yaw_deg: float, pitch_deg: float) -> np.ndarray:
    """Camera axes for a camera turned by ``yaw`` about +y and tilted down by ``pitch``."""
    yaw, pitch = np.radians(yaw_deg), np.radians(pitch_deg)
    fwd = np.array([np.sin(yaw) * np.cos(pitch), -np.sin(pitch), np.cos(yaw) * np.cos(pitch)])
    right = np.cross(fwd, [0.0, 1.0, 0.0])
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    return np.stack([right, down, fwd], axis=1)


def pose_is_facing(rotation: np.ndarray, height: int, width: int, hfov_deg: float) -> bool:
    """True if no surface whose normal points away from the optical axis can be seen.

    Room and furniture normals are the six signed world axes. A direction n
    with n . forward > 0 is invisible when every ray d in the view frustum has
    d . n >= 0; checking the four frustum corners suffices.
    """
    f = (width / 2.0) / np.tan(np.radians(hfov_deg) / 2.0)
    hx, hy = width / 2.0 / f, height / 2.0 / f
    corners = np.array([[sx * hx, sy * hy, 1.0] for sx in (-1, 1) for sy in (-1, 1)]) @ rotation.T
    fwd = rotation[:, 2]
    for n in np.vstack([AXES, -AXES]):
        if n @ fwd > 1e-12 and (corners @ n < 0).any():
            return False
    return True


def _sample_furniture(rng, cfg: SceneConfig, room: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    count = int(rng.integers(cfg.furniture[0], cfg.furniture[1] + 1))
    boxes = []
    margin, gap = 0.15, 0.1
    for _ in range(count):
        for _attempt in range(50):
            size = rng.uniform(cfg.furniture_min, cfg.furniture_max)
            x0 = rng.uniform(margin, room[0] - margin - size[0])
            z0 = rng.uniform(margin, room[2] - margin - size[2])
            lo = np.array([x0, 0.0, z0])
            hi = lo + size
            if all(hi[0] + gap < blo[0] or bhi[0] + gap < lo[0] or hi[2] + gap < blo[2]
                   or bhi[2] + gap < lo[2] for blo, bhi in boxes):
                boxes.append((lo, hi))
                break
    return boxes


def sample_camera(rng, cfg: SceneConfig, room: np.ndarray, boxes, max_tries: int = 100) -> Camera:
    """Draw a camera pose that keeps every visible normal camera-facing and
    lies outside all furniture; raises after ``max_tries`` failures."""
    for _ in range(max_tries):
        yaw = rng.uniform(*cfg.yaw_deg) * (1 if rng.random() < 0.5 else -1)
        pitch = rng.uniform(*cfg.pitch_deg)
        rot = look_rotation(yaw, pitch)
        # stand in the back half, on the side away from where the camera looks
        side = 0.25 if yaw > 0 else 0.75
        pos = np.array([
            rng.uniform(side - 0.12, side + 0.12) * room[0],
            rng.uniform(*cfg.cam_height),
            rng.uniform(0.12, 0.35) * room[2],
        ])
        if not pose_is_facing(rot, cfg.height, cfg.width, cfg.hfov_deg):
            continue
        if any((lo - 0.3 <= pos).all() and (pos <= hi + 0.3).all() for lo, hi in boxes):
            continue
        return Camera(pos, rot, cfg.hfov_deg)
    raise SceneError(f"no valid camera pose after {max_tries} attempts")


def raycast(room: np.ndarray, boxes, camera: Camera, height: int, width: int):
    """Returns (depth, world normals, face ids, object ids) for every pixel.

    Room faces get ids 0..5 (axis*2 + [min, max]); cuboid b face f gets
    6 + 6*b + f. Object id 0 is the room, b+1 is cuboid b.
    """
    rays_cam = camera.rays(height, width).reshape(-1, 3)
    d = rays_cam @ camera.rotation.T
    o = camera.position
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
        t_room = np.where(d > 0, (room[None] - o) * inv, np.where(d < 0, -o * inv, np.inf))
    axis = np.argmin(t_room, axis=1)
    t = t_room[np.arange(len(d)), axis]
    positive = d[np.arange(len(d)), axis] > 0
    face = axis * 2 + positive
    normal = np.zeros_like(d)
    normal[np.arange(len(d)), axis] = np.where(positive, -1.0, 1.0)
    obj = np.zeros(len(d), dtype=np.int64)
    for b, (lo, hi) in enumerate(boxes):
        with np.errstate(divide="ignore", invalid="ignore"):
            t1 = (lo - o) * inv
            t2 = (hi - o) * inv
        tnear = np.minimum(t1, t2)
        tfar = np.maximum(t1, t2)
        tnear = np.where(np.isnan(tnear), -np.inf, tnear)
        tfar = np.where(np.isnan(tfar), np.inf, tfar)
        enter = tnear.max(axis=1)
        leave = tfar.min(axis=1)
        hit = (enter <= leave) & (enter > 1e-9) & (enter < t)
        if not hit.any():
            continue
        ax = np.argmax(tnear, axis=1)
        idx = np.flatnonzero(hit)
        t[idx] = enter[idx]
        a = ax[idx]
        sign = -np.sign(d[idx, a])
        normal[idx] = 0.0
        normal[idx, a] = sign
        face[idx] = 6 + 6 * b + a * 2 + (sign > 0)
        obj[idx] = b + 1
    depth = t.reshape(height, width)          # rays have unit camera z
    return (depth, normal.reshape(height, width, 3), face.reshape(height, width),
            obj.reshape(height, width))


def _shade(rng, cfg: SceneConfig, normals_world, face_ids, n_boxes: int) -> np.ndarray:
    light = np.asarray(cfg.light, dtype=np.float64)
    light /= np.linalg.norm(light)
    wall = rng.uniform(0.45, 0.9, 3)
    floor = rng.uniform(0.3, 0.8, 3)
    ceiling = rng.uniform(0.6, 0.95, 3)
    albedo = np.empty((6 + 6 * n_boxes, 3))
    albedo[:6] = wall
    albedo[2] = floor            # y-min face
    albedo[3] = ceiling          # y-max face
    for b in range(n_boxes):
        albedo[6 + 6 * b: 12 + 6 * b] = rng.uniform(0.2, 0.95, 3)
    lambert = np.clip(normals_world @ light, 0.0, None)
    shade = cfg.ambient + cfg.diffuse * lambert
    rgb = albedo[face_ids] * shade[..., None]
    rgb = rgb + rng.normal(0.0, cfg.noise_sigma, rgb.shape)
    return np.clip(np.floor(rgb * 255.0 + 0.5), 0, 255).astype(np.uint8)


def render_layout(room, camera: Camera, height: int, width: int) -> NormalMap:
    """Camera-frame normals of the empty room (walls, floor, ceiling only)."""
    _, nw, _, _ = raycast(np.asarray(room, dtype=np.float64), [], camera, height, width)
    return NormalMap((nw @ camera.rotation).astype(np.float32), None)


def generate_scene(cfg: SceneConfig, seed: int | None = None) -> SceneSample:
    from .edges import derive_edge_labels

    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    room = rng.uniform(cfg.room_min, cfg.room_max)
    boxes = _sample_furniture(rng, cfg, room)
    camera = sample_camera(rng, cfg, room, boxes)
    depth, nw, face, obj = raycast(room, boxes, camera, cfg.height, cfg.width)
    normals = (nw @ camera.rotation).astype(np.float32)
    normals[..., 2] = np.minimum(normals[..., 2], 0.0)
    image = _shade(rng, cfg, nw, face, len(boxes))
    depth32 = depth.astype(np.float32)
    nmap = NormalMap(normals, None)
    edges = derive_edge_labels(depth32, normals, cfg.cell, cfg.hfov_deg, cfg.depth_ratio, cfg.crease_deg)
    return SceneSample(
        image=image,
        normals=nmap,
        depth=depth32,
        layout_gt=render_layout(room, camera, cfg.height, cfg.width),
        layout_class=-1,
        edges=edges,
        vps=camera.rotation.copy(),
        room=room,
        camera=camera,
        face_ids=face,
        cuboids=boxes,
    )


def object_ids(face_ids: np.ndarray) -> np.ndarray:
    return np.where(face_ids < 6, ROOM, (face_ids - 6) // 6 + 1)


__all__ = ["Camera", "EdgeLabel", "SceneConfig", "SceneError", "SceneSample", "generate_scene",
           "look_rotation", "pixel_rays", "pose_is_facing", "raycast", "render_layout"]
