import numpy as np
import pytest

from deepnormals.coding import EdgeLabel, NormalCodebook
from deepnormals.geometry import angle_deg, resize_nearest
from deepnormals.scenegen import (Camera, SceneConfig, SceneError, analytic_edge_labels,
                                  derive_edge_labels, generate_scene, look_rotation, raycast,
                                  region_edge_label)
from deepnormals.scenegen.augment import augment, color_jitter, crop_window, hflip
from deepnormals.scenegen.edges import backproject, edge_boundary_mask
from deepnormals.scenegen.io import (DataError, depth_bytes, depth_from_bytes, meta_text, parse_meta,
                                     ppm_bytes, ppm_from_bytes, read_dataset, read_manifest,
                                     read_sample, set_layout_class, write_dataset)
from deepnormals.scenegen.patches import center_offset, patch_at, sample_patches
from deepnormals.scenegen.render import pose_is_facing, sample_camera

TINY = SceneConfig.tiny()


@pytest.fixture(scope="module")
def scene():
    return generate_scene(SceneConfig(), seed=3)


@pytest.fixture(scope="module")
def codebook():
    rng = np.random.default_rng(0)
    v = rng.normal(size=(2000, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    v[:, 2] = -np.abs(v[:, 2])
    return NormalCodebook(20, random_state=0).fit(v)


def plane_fit_normals(depth, hfov):
    """Normals from a least-squares plane through each 3x3 neighbourhood."""
    pts = backproject(depth, hfov)
    h, w = depth.shape
    out = np.zeros((h, w, 3))
    for i in range(1, h - 1):
        for j in range(1, w - 1):
            p = pts[i - 1:i + 2, j - 1:j + 2].reshape(-1, 3)
            _, _, vt = np.linalg.svd(p - p.mean(0))
            n = vt[-1]
            out[i, j] = n if n[2] <= 0 else -n
    return out


# --- configuration -------------------------------------------------------------

def test_config_validation():
    with pytest.raises(ValueError):
        SceneConfig(room_min=(-1.0, 2.5, 3.5))
    with pytest.raises(ValueError):
        SceneConfig(furniture_max=(3.0, 1.0, 3.0))
    assert TINY.height == 65 and TINY.width == 78


# --- generation ------------------------------------------------------------------

def test_scene_fields(scene):
    assert scene.image.shape == (195, 260, 3) and scene.image.dtype == np.uint8
    assert scene.depth.shape == (195, 260)
    assert scene.edges.shape == (15, 20)
    assert scene.normals.valid.all()
    n = scene.normals.normals
    np.testing.assert_allclose(np.linalg.norm(n, axis=-1), 1.0, atol=1e-5)
    assert (n[..., 2] <= 0).all()
    np.testing.assert_allclose(scene.vps @ scene.vps.T, np.eye(3), atol=1e-6)


def test_determinism():
    a, b = generate_scene(TINY, 11), generate_scene(TINY, 11)
    assert a.image.tobytes() == b.image.tobytes()
    assert a.normals.normals.tobytes() == b.normals.normals.tobytes()
    assert a.depth.tobytes() == b.depth.tobytes()
    assert (a.edges == b.edges).all()
    c = generate_scene(TINY, 12)
    assert a.image.tobytes() != c.image.tobytes()


def test_empty_room_few_normals():
    cfg = SceneConfig(furniture=(0, 0), noise_sigma=0.0)
    s = generate_scene(cfg, 1)
    uniq = np.unique(np.round(s.normals.normals.reshape(-1, 3), 5), axis=0)
    assert len(uniq) <= 5
    np.testing.assert_array_equal(s.layout_gt.normals, s.normals.normals)


def test_axis_aligned_camera_empty_room():
    room = np.array([4.0, 3.0, 4.0])
    cam = Camera(np.array([2.0, 1.5, 0.5]), look_rotation(0.0, 0.0), 60.0)
    _, nw, _, _ = raycast(room, [], cam, 30, 40)
    uniq = np.unique(np.round((nw @ cam.rotation).reshape(-1, 3), 6), axis=0)
    assert len(uniq) <= 5


@pytest.mark.parametrize("seed", [0, 5, 9])
def test_plane_fit_oracle(seed):
    s = generate_scene(SceneConfig(), seed)
    fit = plane_fit_normals(s.depth.astype(np.float64), s.camera.hfov_deg)
    far = ~edge_boundary_mask(s.face_ids, 3)
    far[[0, -1], :] = False
    far[:, [0, -1]] = False
    err = angle_deg(fit[far], s.normals.normals[far].astype(np.float64))
    assert (err < 2.0).mean() > 0.95


def test_sampled_poses_are_facing():
    cfg = SceneConfig()
    rng = np.random.default_rng(0)
    room = np.array([5.0, 3.0, 5.0])
    for _ in range(20):
        cam = sample_camera(rng, cfg, room, [])
        assert pose_is_facing(cam.rotation, cfg.height, cfg.width, cfg.hfov_deg)


def test_camera_inside_furniture_errors():
    cfg = SceneConfig()
    room = np.array([5.0, 3.0, 5.0])
    box = [(np.array([-1.0, -1.0, -1.0]), np.array([6.0, 4.0, 6.0]))]
    with pytest.raises(SceneError):
        sample_camera(np.random.default_rng(0), cfg, room, box)


def test_look_rotation_orthonormal():
    R = look_rotation(40, 30)
    np.testing.assert_allclose(R.T @ R, np.eye(3), atol=1e-12)
    assert np.linalg.det(R) == pytest.approx(1.0)


# --- edges -------------------------------------------------------------------------

def test_planar_cell_no_edge():
    d = np.full((13, 13), 3.0, np.float32)
    n = np.zeros((13, 13, 3), np.float32)
    n[..., 2] = -1
    assert derive_edge_labels(d, n)[0, 0] == EdgeLabel.NO_EDGE


def test_room_corner_concave():
    # camera looking along the diagonal of a room corner at the origin: walls x=0 and z=0
    room = np.array([4.0, 3.0, 4.0])
    fwd = np.array([-1.0, 0.0, -1.0]) / np.sqrt(2)
    right = np.cross(fwd, [0.0, 1.0, 0.0])
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    cam = Camera(np.array([2.0, 1.5, 2.0]), np.stack([right, down, fwd], 1), 60.0)
    h, w = 26, 26
    depth, nw, _, _ = raycast(room, [], cam, h, w)
    normals = (nw @ cam.rotation).astype(np.float32)
    grid = derive_edge_labels(depth.astype(np.float32), normals, 13, 60.0)
    labels = set(grid.ravel())
    assert EdgeLabel.CONCAVE in labels
    assert EdgeLabel.CONVEX not in labels and EdgeLabel.OCCLUSION not in labels


def test_occlusion_step():
    d = np.full((13, 13), 3.0, np.float32)
    d[:, 7:] = 5.0
    n = np.zeros((13, 13, 3), np.float32)
    n[..., 2] = -1
    assert derive_edge_labels(d, n)[0, 0] == EdgeLabel.OCCLUSION


def test_edges_match_analytic_labels_100_seeds():
    agree = total = 0
    for seed in range(100):
        s = generate_scene(TINY, seed)
        ana = analytic_edge_labels(s)
        m = (s.edges != EdgeLabel.NO_EDGE) | (ana != EdgeLabel.NO_EDGE)
        agree += int((s.edges[m] == ana[m]).sum())
        total += int(m.sum())
    assert agree / total >= 0.9


def test_cuboid_silhouette_occlusion(scene):
    ana = analytic_edge_labels(scene)
    occl = (ana == EdgeLabel.OCCLUSION)
    if occl.any():
        assert (scene.edges[occl] == EdgeLabel.OCCLUSION).mean() > 0.9


def test_region_label_matches_grid_cell(scene):
    n = scene.normals.normals
    for i, j in [(0, 0), (3, 5), (7, 12), (14, 19)]:
        got = region_edge_label(scene.depth, n, 13 * i, 13 * j, 13, scene.camera.hfov_deg)
        assert int(got) == scene.edges[i, j]


# --- augmentation --------------------------------------------------------------------

def test_flip_involution_and_mirror(scene):
    f = hflip(scene)
    assert hflip(f).image.tobytes() == scene.image.tobytes()
    a, b = scene.normals.normals, f.normals.normals[:, ::-1]
    np.testing.assert_array_equal(b[..., 0], -a[..., 0])
    np.testing.assert_array_equal(b[..., 1:], a[..., 1:])
    np.testing.assert_allclose(f.vps[:, 0], -scene.vps[:, 0])
    assert (hflip(f).edges == scene.edges).all()


def test_color_jitter_range(scene):
    out = color_jitter(scene, np.random.default_rng(0))
    src = scene.image.astype(float)
    m = (src > 20) & (src < 200)
    ratio = out.image.astype(float)[m] / src[m]
    assert ratio.min() > 0.8 - 0.03 and ratio.max() < 1.2 + 0.03
    assert out.normals is scene.normals


def test_crop_window_oracle(scene):
    out = crop_window(scene, 10, 20, 150, 200)
    ref = resize_nearest(scene.normals.normals[10:160, 20:220], 195, 260)
    np.testing.assert_array_equal(out.normals.normals, ref)
    assert out.image.shape == scene.image.shape
    with pytest.raises(ValueError):
        crop_window(scene, 100, 0, 150, 200)


@pytest.mark.parametrize("seed", range(6))
def test_augment_preserves_unit_norm(scene, seed):
    out = augment(scene, seed, flip_prob=1.0, crop_prob=1.0)
    np.testing.assert_allclose(np.linalg.norm(out.normals.normals, axis=-1), 1.0, atol=1e-5)
    assert out.image.shape == scene.image.shape
    assert out.layout_class == -1


# --- patches -------------------------------------------------------------------------

def test_patch_at_origin(scene, codebook):
    assert center_offset() == 21
    img, labels, valid, edge = patch_at(scene, codebook, 0, 0)
    assert img.shape == (55, 55, 3)
    np.testing.assert_array_equal(labels, codebook.predict(scene.normals.normals[21:34, 21:34]))
    assert valid.all()
    assert edge == int(region_edge_label(scene.depth, scene.normals.normals, 21, 21, 13))


def test_sample_patches_determinism_and_errors(scene, codebook):
    a = sample_patches(scene, 10, codebook, seed=4)
    b = sample_patches(scene, 10, codebook, seed=4)
    assert a.images.tobytes() == b.images.tobytes()
    np.testing.assert_array_equal(a.labels, b.labels)
    assert len(a) == 10 and a.labels.shape == (10, 13, 13)
    for bad in (0, -3):
        with pytest.raises(ValueError):
            sample_patches(scene, bad, codebook)


def test_patch_positions_in_bounds():
    # positions are drawn the same way at any count; check 10,000 of them on a tiny scene
    s = generate_scene(TINY, 0)
    rng = np.random.default_rng(0)
    H, W = s.shape
    pos = np.stack([rng.integers(0, H - 55 + 1, 10000), rng.integers(0, W - 55 + 1, 10000)], 1)
    assert (pos >= 0).all() and (pos[:, 0] + 55 <= H).all() and (pos[:, 1] + 55 <= W).all()


def test_sampled_positions_in_bounds(codebook):
    s = generate_scene(TINY, 0)
    ps = sample_patches(s, 300, codebook, seed=1)
    H, W = s.shape
    assert (ps.positions >= 0).all()
    assert (ps.positions[:, 0] + 55 <= H).all() and (ps.positions[:, 1] + 55 <= W).all()


# --- io ----------------------------------------------------------------------------------

def test_ppm_round_trip():
    img = np.random.default_rng(0).integers(0, 256, (7, 9, 3), dtype=np.uint8)
    buf = ppm_bytes(img)
    assert buf.startswith(b"P6\n9 7\n255\n")
    np.testing.assert_array_equal(ppm_from_bytes(buf), img)
    assert ppm_bytes(ppm_from_bytes(buf)) == buf
    np.testing.assert_array_equal(ppm_from_bytes(b"P6\n# note\n9 7\n255\n" + img.tobytes()), img)
    with pytest.raises(DataError):
        ppm_from_bytes(b"P5\n1 1\n255\n\x00")
    with pytest.raises(DataError):
        ppm_from_bytes(buf[:-1])


def test_depth_round_trip():
    d = np.random.default_rng(0).random((5, 6)).astype(np.float32)
    buf = depth_bytes(d)
    assert buf[:4] == b"DPT1"
    np.testing.assert_array_equal(depth_from_bytes(buf), d)
    with pytest.raises(DataError):
        depth_from_bytes(b"XXXX" + buf[4:])


def test_meta_round_trip(scene):
    text = meta_text(scene)
    meta = parse_meta(text)
    np.testing.assert_array_equal(meta["edges"], scene.edges)
    np.testing.assert_array_equal(meta["vps"], scene.vps)
    with pytest.raises(DataError):
        parse_meta("bogus 1\n")
    with pytest.raises(DataError):
        parse_meta("layout_class 0\n")


def test_dataset_round_trip(tmp_path):
    samples = [generate_scene(TINY, s) for s in range(3)]
    write_dataset(tmp_path, samples, seed=0)
    ids, info = read_manifest(tmp_path)
    assert ids == [0, 1, 2] and info["seed"] == "0"
    back = read_dataset(tmp_path)
    for a, b in zip(samples, back):
        assert a.image.tobytes() == b.image.tobytes()
        assert a.normals.normals.tobytes() == b.normals.normals.tobytes()
        assert a.depth.tobytes() == b.depth.tobytes()
        np.testing.assert_array_equal(a.face_ids, b.face_ids)
        np.testing.assert_array_equal(a.layout_gt.normals, b.layout_gt.normals)
        assert meta_text(a) == meta_text(b)
    set_layout_class(tmp_path, 1, 7)
    assert read_sample(tmp_path, 1).layout_class == 7
    (tmp_path / "0002.dpt").unlink()
    with pytest.raises(DataError, match="dpt"):
        read_sample(tmp_path, 2)
