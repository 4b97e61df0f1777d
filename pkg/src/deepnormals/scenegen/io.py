"""On-disk dataset format: NNNN.ppm, NNNN.nrm, NNNN.dpt, NNNN.meta plus a manifest."""
from __future__ import annotations

import os
import struct

import numpy as np

from ..coding.edges import EdgeLabel
from ..normalmap import NormalMap
from .render import Camera, SceneSample, raycast, render_layout

MANIFEST = "manifest.txt"
_DPT = b"DPT1"


class DataError(ValueError):
    """A dataset file is missing or malformed."""


# --- PPM -----------------------------------------------------------------

def ppm_bytes(image: np.ndarray) -> bytes:
    img = np.ascontiguousarray(image, dtype=np.uint8)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"PPM needs an HxWx3 image, got {img.shape}")
    h, w = img.shape[:2]
    return b"P6\n%d %d\n255\n" % (w, h) + img.tobytes()


def ppm_from_bytes(buf: bytes) -> np.ndarray:
    tokens, pos = [], 0
    while len(tokens) < 4:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if buf[pos:pos + 1] == b"#":
            pos = buf.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise DataError("truncated PPM header")
        tokens.append(buf[start:pos])
    if tokens[0] != b"P6":
        raise DataError("not a binary PPM (P6) file")
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise DataError("only 8-bit PPM is supported")
    pos += 1
    data = buf[pos:pos + w * h * 3]
    if len(data) != w * h * 3:
        raise DataError("truncated PPM pixel data")
    return np.frombuffer(data, np.uint8).reshape(h, w, 3).copy()


def write_ppm(path, image) -> None:
    with open(path, "wb") as f:
        f.write(ppm_bytes(image))


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as f:
        return ppm_from_bytes(f.read())


# --- depth ---------------------------------------------------------------

def depth_bytes(depth: np.ndarray) -> bytes:
    h, w = depth.shape
    return _DPT + struct.pack("<II", w, h) + np.ascontiguousarray(depth, "<f4").tobytes()


def depth_from_bytes(buf: bytes) -> np.ndarray:
    if buf[:4] != _DPT:
        raise DataError("not a DPT1 depth file")
    w, h = struct.unpack_from("<II", buf, 4)
    if len(buf) != 12 + 4 * w * h:
        raise DataError("DPT1 payload size mismatch")
    return np.frombuffer(buf, "<f4", offset=12).reshape(h, w).astype(np.float32)


# --- meta ----------------------------------------------------------------

def _floats(vals) -> str:
    return " ".join(repr(float(v)) for v in np.ravel(vals))


def meta_text(sample: SceneSample) -> str:
    cam = sample.camera
    lines = [
        f"layout_class {int(sample.layout_class)}",
        f"vps {_floats(sample.vps)}",
        f"room {_floats(sample.room)}",
        f"camera {_floats(cam.position)} {_floats(cam.rotation)} {float(cam.hfov_deg)!r}",
    ]
    lines += [f"cuboid {_floats(lo)} {_floats(hi)}" for lo, hi in sample.cuboids]
    rows, cols = sample.edges.shape
    lines.append(f"edges {rows} {cols}")
    lines += ["".join(EdgeLabel(v).char for v in row) for row in sample.edges]
    return "\n".join(lines) + "\n"


def parse_meta(text: str) -> dict:
    lines = text.splitlines()
    out = {"cuboids": []}
    i = 0
    while i < len(lines):
        key, _, rest = lines[i].partition(" ")
        vals = rest.split()
        i += 1
        if key == "layout_class":
            out["layout_class"] = int(vals[0])
        elif key == "vps":
            out["vps"] = np.array(vals, float).reshape(3, 3)
        elif key == "room":
            out["room"] = np.array(vals, float)
        elif key == "camera":
            v = np.array(vals, float)
            out["camera"] = Camera(v[:3], v[3:12].reshape(3, 3), float(v[12]))
        elif key == "cuboid":
            v = np.array(vals, float)
            out["cuboids"].append((v[:3], v[3:]))
        elif key == "edges":
            rows, cols = int(vals[0]), int(vals[1])
            grid = lines[i:i + rows]
            if len(grid) != rows or any(len(r) != cols for r in grid):
                raise DataError("edge grid does not match its declared size")
            out["edges"] = np.array([[EdgeLabel.from_char(c) for c in r] for r in grid], np.int8)
            i += rows
        elif key:
            raise DataError(f"unknown meta key {key!r}")
    missing = {"layout_class", "vps", "edges"} - out.keys()
    if missing:
        raise DataError(f"meta lacks {sorted(missing)}")
    return out


# --- samples -------------------------------------------------------------

def sample_paths(directory, idx: int) -> dict[str, str]:
    stem = os.path.join(directory, f"{idx:04d}")
    return {ext: f"{stem}.{ext}" for ext in ("ppm", "nrm", "dpt", "meta")}


def write_sample(directory, idx: int, sample: SceneSample) -> None:
    p = sample_paths(directory, idx)
    write_ppm(p["ppm"], sample.image)
    sample.normals.save(p["nrm"])
    with open(p["dpt"], "wb") as f:
        f.write(depth_bytes(sample.depth))
    with open(p["meta"], "w") as f:
        f.write(meta_text(sample))


def read_sample(directory, idx: int) -> SceneSample:
    p = sample_paths(directory, idx)
    missing = [k for k, v in p.items() if not os.path.exists(v)]
    if missing:
        raise DataError(f"sample {idx:04d} is missing {', '.join(missing)} files in {directory}")
    image = read_ppm(p["ppm"])
    normals = NormalMap.load(p["nrm"])
    with open(p["dpt"], "rb") as f:
        depth = depth_from_bytes(f.read())
    with open(p["meta"]) as f:
        meta = parse_meta(f.read())
    h, w = image.shape[:2]
    cam = meta.get("camera")
    room = meta.get("room")
    face = None
    if cam is not None and room is not None:
        layout = render_layout(room, cam, h, w)
        face = raycast(room, meta["cuboids"], cam, h, w)[2]
    else:
        layout = NormalMap(np.zeros((h, w, 3), np.float32), np.zeros((h, w), bool))
    return SceneSample(image=image, normals=normals, depth=depth, layout_gt=layout,
                       layout_class=meta["layout_class"], edges=meta["edges"], vps=meta["vps"],
                       room=room, camera=cam, face_ids=face, cuboids=meta["cuboids"])


def write_manifest(directory, ids, **info) -> None:
    lines = [f"{k} = {v}" for k, v in sorted(info.items())]
    lines.append(f"count = {len(ids)}")
    lines += [f"sample = {i:04d}" for i in ids]
    with open(os.path.join(directory, MANIFEST), "w") as f:
        f.write("\n".join(lines) + "\n")


def read_manifest(directory) -> tuple[list[int], dict[str, str]]:
    path = os.path.join(directory, MANIFEST)
    if not os.path.exists(path):
        raise DataError(f"no {MANIFEST} in {directory}")
    ids, info = [], {}
    with open(path) as f:
        for line in f:
            key, _, val = line.strip().partition(" = ")
            if key == "sample":
                ids.append(int(val))
            elif key:
                info[key] = val
    if int(info.get("count", len(ids))) != len(ids):
        raise DataError("manifest count does not match its sample list")
    return ids, info


def write_dataset(directory, samples, **info) -> list[int]:
    os.makedirs(directory, exist_ok=True)
    ids = []
    for i, s in enumerate(samples):
        write_sample(directory, i, s)
        ids.append(i)
    write_manifest(directory, ids, **info)
    return ids


def read_dataset(directory) -> list[SceneSample]:
    ids, _ = read_manifest(directory)
    return [read_sample(directory, i) for i in ids]


def set_layout_class(directory, idx: int, layout_class: int) -> None:
    """Rewrite the layout_class line of one meta file in place."""
    path = sample_paths(directory, idx)["meta"]
    with open(path) as f:
        lines = f.read().splitlines()
    lines[0] = f"layout_class {int(layout_class)}"
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")
