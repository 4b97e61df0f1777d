from pathlib import Path

import numpy as np
import pytest

from deepnormals.coding import LayoutCodebook, NormalCodebook
from deepnormals.fusion import (CHANNELS, N_CHANNELS, FeatureStack, assemble, coarse_to_map,
                                edges_to_map, facing_axes, fuse_predict, layout_to_map, vp_rectify)
from deepnormals.geometry import angle_deg
from deepnormals.networks import FusionNetwork, WindowGrid, infer_sliding
from deepnormals.networks.estimators import fusion_input

GOLDEN = Path(__file__).parent / "data" / "golden_stack.fst"
H, W = 94, 107


def hemisphere(n, seed):
    v = np.random.default_rng(seed).normal(size=(n, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    v[:, 2] = -np.abs(v[:, 2])
    return v


@pytest.fixture(scope="module")
def books():
    coarse = NormalCodebook(20, random_state=0).fit(hemisphere(2000, 0))
    local = NormalCodebook(40, random_state=0).fit(hemisphere(4000, 1))
    layouts = hemisphere(3, 2)[np.random.default_rng(3).integers(0, 3, (8, 20, 20))]
    return coarse, local, LayoutCodebook(4, random_state=0).fit(layouts)


def inputs(books, seed=0, h=H, w=W):
    coarse, local, lcb = books
    rng = np.random.default_rng(seed)
    g = WindowGrid(h, w)
    return dict(
        coarse_dist=rng.dirichlet(np.ones(20), (20, 20)),
        layout_dist=rng.dirichlet(np.ones(4)),
        local_dist_map=rng.dirichlet(np.ones(40), (h, w)),
        edge_grid=rng.dirichlet(np.ones(4), (g.rows, g.cols)),
        vps=np.eye(3),
        image=rng.integers(0, 256, (h, w, 3), dtype=np.uint8),
    )


def build(books, **over):
    coarse, local, lcb = books
    kw = inputs(books)
    kw.update(over)
    return assemble(**kw, coarse_codebook=coarse, local_codebook=local, layout_codebook=lcb)


def rot(axis, deg):
    axis = np.asarray(axis, float) / np.linalg.norm(axis)
    t = np.radians(deg)
    K = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
    return np.eye(3) + np.sin(t) * K + (1 - np.cos(t)) * K @ K


# --- map builders -----------------------------------------------------------------------

def test_coarse_one_hot_constant(books):
    coarse = books[0]
    d = np.zeros((20, 20, 20))
    d[..., 4] = 1
    m = coarse_to_map(d, coarse, 195, 260)
    np.testing.assert_allclose(m, np.broadcast_to(coarse.codewords_[4], m.shape), atol=1e-12)


def test_coarse_index_mapping(books):
    coarse = books[0]
    d = np.random.default_rng(0).dirichlet(np.ones(20), (20, 20))
    dec = coarse.decode_triangle(d)
    m = coarse_to_map(d, coarse, 195, 260)
    for r, c in [(0, 0), (194, 259), (97, 130), (10, 13), (9, 12)]:
        np.testing.assert_array_equal(m[r, c], dec[r * 20 // 195, c * 20 // 260])
    np.testing.assert_allclose(np.linalg.norm(m, axis=-1), 1.0, atol=1e-5)


def test_layout_map_argmax_and_ties(books):
    lcb = books[2]
    p = np.zeros(4)
    p[2] = 1
    m = layout_to_map(p, lcb, 195, 260)
    assert m.shape == (195, 260, 3)
    np.testing.assert_allclose(m[0, 0], lcb.decode(2)[0, 0], atol=1e-6)
    p = np.array([0.1, 0.4, 0.1, 0.4])
    np.testing.assert_allclose(layout_to_map(p, lcb, 20, 20), lcb.decode(1), atol=1e-6)
    rng = np.random.default_rng(1)
    for _ in range(50):
        p = rng.dirichlet(np.ones(4))
        best = 0
        for i in range(4):
            if p[i] > p[best]:
                best = i
        np.testing.assert_allclose(layout_to_map(p, lcb, 20, 20), lcb.decode(best), atol=1e-6)


def test_layout_tie_3_and_7():
    meds = hemisphere(8, 5)[:, None, None, :] * np.ones((8, 4, 4, 1))
    lcb = LayoutCodebook.from_medoids(meds)
    p = np.zeros(8)
    p[[3, 7]] = 0.5
    np.testing.assert_allclose(layout_to_map(p, lcb, 4, 4), meds[3], atol=1e-6)


def test_edges_to_map_cases():
    g = WindowGrid(H, W)
    e = np.zeros((g.rows, g.cols, 4))
    e[..., 3] = 1
    e[1, 2] = [1, 0, 0, 0]
    m = edges_to_map(e, H, W)
    o = g.first_cell
    block = m[o + 13:o + 26, o + 26:o + 39]
    np.testing.assert_array_equal(block, np.broadcast_to([1.0, 0, 0], block.shape))
    assert m[o, o].sum() == 0
    rand = np.random.default_rng(0).dirichlet(np.ones(4), (g.rows, g.cols))
    mr = edges_to_map(rand, H, W)
    assert (mr.sum(-1) <= 1 + 1e-12).all() and (mr >= 0).all()
    with pytest.raises(ValueError):
        edges_to_map(rand[:2], H, W)
    with pytest.raises(ValueError):
        edges_to_map(rand * 2, H, W)


# --- vanishing-point rectification ----------------------------------------------------

def test_vp_rectify_cases():
    vps = rot([1, 2, 3], 25)
    axes = facing_axes(vps)
    assert len(axes) == 3 and (axes[:, 2] <= 0).all()
    a = axes[0]
    np.testing.assert_array_equal(vp_rectify(a[None], vps)[0], a)
    perp = np.cross(a, [0.3, 0.1, 0.9])
    perp /= np.linalg.norm(perp)
    n10 = rot(perp, 10) @ a
    np.testing.assert_allclose(vp_rectify(n10[None], vps)[0], a, atol=1e-12)


def test_vp_rectify_far_normal_unchanged():
    n = np.array([1.0, 1.0, -1.0]) / np.sqrt(3)        # about 54.7 deg from each facing axis
    n45 = np.array([1.0, 0.0, -1.0]) / np.sqrt(2)      # 45 deg from -z and from +x
    vps = np.eye(3)
    np.testing.assert_array_equal(vp_rectify(n[None], vps)[0], n)
    np.testing.assert_array_equal(vp_rectify(n45[None], vps)[0], n45)


def test_vp_rectify_never_increases_distance():
    vps = rot([0.2, 1, 0.1], 40)
    axes = facing_axes(vps)
    n = hemisphere(2000, 7)
    out = vp_rectify(n, vps)
    dist = lambda v: angle_deg(v[:, None, :], axes[None]).min(1)
    assert (dist(out) <= dist(n) + 1e-9).all()


def test_vp_rectify_rejects_non_orthonormal():
    with pytest.raises(ValueError):
        vp_rectify(hemisphere(3, 0), np.array([[1, 0, 0], [0.5, 0.5, 0], [0, 0, 1.0]]))


# --- assemble ---------------------------------------------------------------------------

def test_assemble_channels_and_invariants(books):
    st = build(books)
    assert st.data.shape == (H, W, N_CHANNELS) == (H, W, 18)
    for name in ("coarse", "layout", "local", "vp"):
        np.testing.assert_allclose(np.linalg.norm(st.channel(name), axis=-1), 1.0, atol=1e-5)
    e = st.channel("edge")
    assert (e >= 0).all() and (e <= 1).all()
    rgb = st.channel("rgb")
    np.testing.assert_allclose(rgb, inputs(books)["image"] / 255.0, atol=1e-7)
    local = books[1].decode_triangle(inputs(books)["local_dist_map"])
    np.testing.assert_allclose(st.channel("local"), local, atol=1e-6)


def test_assemble_tau_zero_identity(books):
    coarse, local, lcb = books
    kw = inputs(books)
    st = assemble(**kw, coarse_codebook=coarse, local_codebook=local, layout_codebook=lcb, tau_deg=0.0)
    np.testing.assert_array_equal(st.channel("vp"), st.channel("coarse"))


def test_assemble_deterministic_and_golden(books):
    a, b = build(books).to_bytes(), build(books).to_bytes()
    assert a == b
    assert GOLDEN.read_bytes() == a


def test_assemble_channel_toggles(books):
    coarse, local, lcb = books
    st = assemble(**inputs(books), coarse_codebook=coarse, local_codebook=local, layout_codebook=lcb,
                  channels=())
    for name in ("layout", "edge", "vp"):
        assert not st.channel(name).any()
    full = build(books)
    np.testing.assert_array_equal(st.channel("coarse"), full.channel("coarse"))
    with pytest.raises(ValueError):
        assemble(**inputs(books), coarse_codebook=coarse, local_codebook=local, layout_codebook=lcb,
                 channels=("bogus",))


def test_assemble_resolution_mismatch_named(books):
    with pytest.raises(ValueError, match="local normal distributions"):
        build(books, local_dist_map=np.full((H - 1, W, 40), 1 / 40))
    with pytest.raises(ValueError):
        build(books, image=np.zeros((H, W), np.uint8))


def test_channel_slices_cover_18():
    covered = sorted(i for s in CHANNELS.values() for i in range(s.start, s.stop))
    assert covered == list(range(18))
    assert list(CHANNELS) == ["coarse", "layout", "local", "edge", "vp", "rgb"]


def test_fst1_round_trip(tmp_path, books):
    st = build(books)
    path = tmp_path / "s.fst"
    st.save(path)
    raw = path.read_bytes()
    assert raw[:4] == b"FST1"
    assert int.from_bytes(raw[4:8], "little") == W and int.from_bytes(raw[8:12], "little") == H
    back = FeatureStack.load(path)
    np.testing.assert_array_equal(back.data, st.data)
    assert back.to_bytes() == raw
    with pytest.raises(ValueError):
        FeatureStack.from_bytes(raw[:-4])
    with pytest.raises(ValueError):
        FeatureStack(np.zeros((4, 4, 17)))


# --- fuse_predict -----------------------------------------------------------------------

@pytest.fixture(scope="module")
def fusion_net():
    return FusionNetwork(tiny=True, epochs=0).fit(np.zeros((1, 55, 55, 18), np.float32),
                                                  np.zeros((1, 13, 13), int))


def test_fuse_predict_resolution_and_coverage(books, fusion_net):
    st = build(books)
    out = fuse_predict(fusion_net, st, books[1])
    assert out.normals.shape == (H, W, 3) and out.valid.all()
    dist, _, grid = infer_sliding(fusion_net.network_, fusion_input(st.data))
    np.testing.assert_allclose(out.normals, books[1].decode_triangle(dist), atol=1e-6)
    assert grid.coverage().max() == 1


def test_fusion_input_centres_rgb_only(books):
    st = build(books)
    x = fusion_input(st.data)
    np.testing.assert_array_equal(x[..., :15], st.data[..., :15].astype(np.float32))
    np.testing.assert_allclose(x[..., 15:], st.data[..., 15:] - 0.5, atol=1e-7)
    assert x.dtype == np.float32 and st.data[..., 15:].min() >= 0


def test_soft_and_triangle_agree_on_one_hot(books, fusion_net):
    st = build(books)
    one_hot = np.zeros((H, W, 40))
    one_hot[..., 5] = 1
    tri = fuse_predict(fusion_net, st, books[1], "triangle", dist=one_hot)
    soft = fuse_predict(fusion_net, st, books[1], "soft", dist=one_hot)
    np.testing.assert_array_equal(tri.normals, soft.normals)
