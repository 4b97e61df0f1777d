"""Per-pixel normal map with a validity mask, plus its NRM1 binary format."""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

_MAGIC = b"NRM1"


@dataclass
class NormalMap:
    normals: np.ndarray        # (H, W, 3) float32, camera frame
    valid: np.ndarray          # (H, W) bool

    def __post_init__(self):
        self.normals = np.asarray(self.normals, dtype=np.float32)
        if self.normals.ndim != 3 or self.normals.shape[2] != 3:
            raise ValueError(f"normals must be HxWx3, got {self.normals.shape}")
        if self.valid is None:
            self.valid = np.ones(self.normals.shape[:2], bool)
        self.valid = np.asarray(self.valid, dtype=bool)
        if self.valid.shape != self.normals.shape[:2]:
            raise ValueError("validity mask does not match normal map resolution")

    @property
    def height(self) -> int:
        return self.normals.shape[0]

    @property
    def width(self) -> int:
        return self.normals.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.normals.shape[:2]

    def to_bytes(self) -> bytes:
        h, w = self.shape
        return b"".join([
            _MAGIC,
            struct.pack("<II", w, h),
            np.ascontiguousarray(self.normals, dtype="<f4").tobytes(),
            self.valid.astype(np.uint8).tobytes(),
        ])

    @classmethod
    def from_bytes(cls, buf: bytes) -> "NormalMap":
        if buf[:4] != _MAGIC:
            raise ValueError("not an NRM1 normal map")
        w, h = struct.unpack_from("<II", buf, 4)
        n = w * h
        expected = 12 + 12 * n + n
        if len(buf) != expected:
            raise ValueError(f"NRM1 payload is {len(buf)} bytes, expected {expected}")
        normals = np.frombuffer(buf, dtype="<f4", count=3 * n, offset=12).reshape(h, w, 3)
        valid = np.frombuffer(buf, dtype=np.uint8, count=n, offset=12 + 12 * n).reshape(h, w)
        return cls(normals.astype(np.float32), valid.astype(bool))

    def save(self, path) -> None:
        with open(path, "wb") as f:
            f.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "NormalMap":
        with open(path, "rb") as f:
            return cls.from_bytes(f.read())

    def visualize(self) -> np.ndarray:
        """RGB uint8 image with (x, y, z) -> (x+1, y+1, 1-z) * 127.5, rounded half up."""
        n = self.normals.astype(np.float64)
        rgb = np.stack([n[..., 0] + 1.0, n[..., 1] + 1.0, 1.0 - n[..., 2]], axis=-1) * 127.5
        out = np.floor(rgb + 0.5)
        out[~self.valid] = 0
        return np.clip(out, 0, 255).astype(np.uint8)
