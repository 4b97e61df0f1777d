import numpy as np
import pytest

from deepnormals.engine import (LayerKind, LayerSpec, LayerState, ShapeError, StateError, conv, fc,
                                grad_check, init_state, layer_backward, layer_forward, load_weights,
                                lrn, maxpool, output_shape, save_weights, sgd_step, softmax,
                                softmax_ce_loss, weights_bytes)
from deepnormals.networks.architecture import HeadSpec, NetworkKind, NetworkSpec
from deepnormals.networks.model import Network


def make_state(spec, in_shape, seed=0, dtype=np.float64):
    st = init_state(spec, in_shape, np.random.default_rng(seed), conv_std=0.5, fc_std=0.5)
    if st.has_params():
        st.weights = st.weights.astype(dtype)
        st.biases = rng_biases(st.biases.shape, seed).astype(dtype)
    return st


def rng_biases(shape, seed):
    return np.random.default_rng(seed + 100).normal(0, 0.1, shape)


def naive_conv(x, w, b):
    n, h, wd, c = x.shape
    _, s, _, k = w.shape
    out = np.zeros((n, h - s + 1, wd - s + 1, k))
    for i in range(n):
        for r in range(h - s + 1):
            for q in range(wd - s + 1):
                for o in range(k):
                    acc = b[o]
                    for ch in range(c):
                        for dr in range(s):
                            for dq in range(s):
                                acc += x[i, r + dr, q + dq, ch] * w[ch, dr, dq, o]
                    out[i, r, q, o] = acc
    return out


def fd_grad(f, x, h=1e-6):
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        gflat[i] = (fp - fm) / (2 * h)
    return g


def rel_err(a, b):
    return np.abs(a - b).max() / max(np.abs(a).max(), np.abs(b).max(), 1e-8)


# --- forward ----------------------------------------------------------------

def test_identity_conv():
    spec = conv(1, 1, relu=False)
    st = LayerState(np.ones((1, 1, 1, 1), np.float32), np.zeros(1, np.float32))
    x = np.random.default_rng(0).normal(size=(2, 6, 7, 1)).astype(np.float32)
    np.testing.assert_array_equal(layer_forward(spec, st, x), x)


def test_maxpool_center_spike():
    x = np.zeros((1, 5, 5, 1))
    x[0, 2, 2, 0] = 7.0
    out = layer_forward(maxpool(), LayerState(), x)
    assert out.shape == (1, 2, 2, 1)
    np.testing.assert_array_equal(out, 7.0)


def test_conv_matches_nested_loops():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(1, 7, 7, 2))
    spec = conv(2, 3, relu=False)
    st = make_state(spec, (7, 7, 2))
    np.testing.assert_allclose(layer_forward(spec, st, x), naive_conv(x, st.weights, st.biases), atol=1e-5)


@pytest.mark.parametrize("spec,in_shape,out", [
    (conv(8, 5), (55, 55, 3), (51, 51, 8)),
    (maxpool(), (51, 51, 8), (25, 25, 8)),
    (lrn(), (25, 25, 8), (25, 25, 8)),
    (fc(10), (7, 7, 4), (10,)),
])
def test_output_shapes(spec, in_shape, out):
    assert output_shape(spec, in_shape) == out
    st = make_state(spec, in_shape)
    y = layer_forward(spec, st, np.zeros((2,) + in_shape))
    assert y.shape == (2,) + out


def test_shape_errors():
    spec = conv(2, 3)
    st = make_state(spec, (5, 5, 2))
    with pytest.raises(ShapeError, match="channels"):
        layer_forward(spec, st, np.zeros((1, 5, 5, 3)))
    with pytest.raises(ShapeError, match="larger"):
        layer_forward(spec, st, np.zeros((1, 2, 2, 2)))
    with pytest.raises(ShapeError):
        layer_forward(fc(3), make_state(fc(3), (4,)), np.zeros((1, 5)))


def test_conv_stride_must_be_one():
    with pytest.raises(ValueError):
        LayerSpec(LayerKind.CONV, kernel_count=2, kernel_size=3, stride=2)
    assert maxpool().pool_size == 3 and maxpool().stride == 2


def test_lrn_equal_inputs_scale_uniformly_within_window():
    x = np.full((1, 3, 3, 9), 2.5)
    out = layer_forward(lrn(), LayerState(), x)
    # channels whose full window lies inside the channel range see identical scaling
    interior = out[..., 2:7]
    np.testing.assert_allclose(interior, interior[..., :1].repeat(5, -1))
    assert np.all(out > 0)


# --- backward ---------------------------------------------------------------

def test_backward_before_forward():
    with pytest.raises(StateError):
        layer_backward(fc(3), make_state(fc(3), (4,)), np.zeros((1, 3)))


@pytest.mark.parametrize("spec,in_shape", [
    (conv(3, 3), (5, 5, 2)), (maxpool(), (7, 7, 2)), (lrn(), (3, 3, 6)), (fc(4, relu=True), (6,))])
def test_zero_grad_out_gives_zero_grads(spec, in_shape):
    st = make_state(spec, in_shape)
    x = np.random.default_rng(0).normal(size=(2,) + in_shape)
    y = layer_forward(spec, st, x)
    gi, gw, gb = layer_backward(spec, st, np.zeros_like(y))
    assert gi.shape == x.shape and not gi.any()
    if gw is not None:
        assert gw.shape == st.weights.shape and not gw.any()
        assert gb.shape == st.biases.shape and not gb.any()


def _sum_loss_check(spec, in_shape, seed, h=1e-3):
    rng = np.random.default_rng(seed)
    st = make_state(spec, in_shape, seed)
    x = rng.normal(size=(2,) + in_shape)
    proj = rng.normal(size=(2,) + output_shape(spec, in_shape))

    def loss():
        return float((layer_forward(spec, st, x) * proj).sum())

    loss()
    gi, gw, gb = layer_backward(spec, st, proj)
    errs = [rel_err(gi, fd_grad(loss, x, h))]
    if gw is not None:
        errs.append(rel_err(gw, fd_grad(loss, st.weights, h)))
        errs.append(rel_err(gb, fd_grad(loss, st.biases, h)))
    return max(errs)


def test_fc_grad_weights_match_finite_differences():
    assert _sum_loss_check(fc(2), (3,), 0) < 1e-3


def test_conv_grad_in_matches_finite_differences():
    assert _sum_loss_check(conv(2, 3, relu=False), (5, 5, 2), 0) < 1e-3


@pytest.mark.parametrize("trial", range(20))
def test_random_layers_match_finite_differences(trial):
    rng = np.random.default_rng(trial)
    if trial % 2:
        spec = conv(int(rng.integers(1, 4)), int(rng.integers(1, 4)), relu=False)
        in_shape = (int(rng.integers(4, 7)), int(rng.integers(4, 7)), int(rng.integers(1, 4)))
    else:
        spec = fc(int(rng.integers(1, 6)))
        in_shape = (int(rng.integers(1, 8)),)
    assert _sum_loss_check(spec, in_shape, trial) < 1e-3


def test_lrn_backward_matches_finite_differences():
    assert _sum_loss_check(LayerSpec(LayerKind.LRN, lrn_alpha=0.5, lrn_size=3), (2, 2, 5), 3) < 1e-4


def test_maxpool_routes_each_gradient_once():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(1, 9, 9, 2))
    spec = maxpool(3, 3)           # disjoint windows
    st = LayerState()
    y = layer_forward(spec, st, x)
    g = rng.normal(size=y.shape)
    gi, _, _ = layer_backward(spec, st, g)
    assert np.count_nonzero(gi) == g.size
    assert np.isclose(gi.sum(), g.sum())


def test_input_grad_can_be_skipped():
    spec = conv(2, 3)
    st = make_state(spec, (5, 5, 2))
    y = layer_forward(spec, st, np.ones((1, 5, 5, 2)))
    gi, gw, _ = layer_backward(spec, st, np.ones_like(y), input_grad=False)
    assert gi is None and gw.shape == st.weights.shape


# --- loss -------------------------------------------------------------------

def test_ce_uniform_logits():
    loss, _ = softmax_ce_loss(np.zeros((1, 20)), np.array([3]))
    assert loss == pytest.approx(np.log(20), abs=1e-4)


def test_ce_confident_site():
    loss, grad = softmax_ce_loss(np.array([[10.0, 0.0, 0.0]]), np.array([0]))
    assert loss == pytest.approx(9.08e-5, rel=1e-2)
    assert grad[0, 0] == pytest.approx(-9.08e-5, rel=1e-2)


def test_ce_grad_matches_finite_differences():
    rng = np.random.default_rng(5)
    z = rng.normal(size=(4, 5))
    lab = rng.integers(0, 5, 4)
    _, g = softmax_ce_loss(z, lab)
    num = fd_grad(lambda: softmax_ce_loss(z, lab)[0], z)
    assert rel_err(g, num) < 1e-4


def test_ce_invalid_sites_and_row_sums():
    rng = np.random.default_rng(6)
    z = rng.normal(size=(3, 4, 6))
    lab = rng.integers(0, 6, (3, 4))
    valid = rng.random((3, 4)) < 0.5
    valid[0, 0] = True
    loss, g = softmax_ce_loss(z, lab, valid)
    np.testing.assert_allclose(g.sum(-1), 0.0, atol=1e-12)
    assert not g[~valid].any()
    z2 = z.copy()
    z2[~valid] = rng.normal(size=((~valid).sum(), 6)) * 50
    assert softmax_ce_loss(z2, lab, valid)[0] == pytest.approx(loss)


def test_ce_errors():
    with pytest.raises(ValueError):
        softmax_ce_loss(np.zeros((2, 3)), np.zeros(2, int), np.zeros(2, bool))
    with pytest.raises(ValueError):
        softmax_ce_loss(np.zeros((2, 3)), np.array([0, 3]))


def test_softmax_rows_sum_to_one():
    p = softmax(np.random.default_rng(0).normal(size=(5, 7)) * 30)
    np.testing.assert_allclose(p.sum(-1), 1.0)


# --- sgd --------------------------------------------------------------------

def test_sgd_zero_rate_and_arithmetic():
    st = LayerState(np.array([[1.0]]), np.array([1.0]))
    sgd_step(st, (np.array([[2.0]]), np.array([2.0])), 0.0)
    assert st.weights[0, 0] == 1.0
    sgd_step(st, (np.array([[2.0]]), np.array([2.0])), 0.5)
    assert st.weights[0, 0] == 0.0 and st.biases[0] == 0.0


def test_sgd_is_stateful_on_quadratic():
    # f(w) = w^2, grad 2w. Two steps recompute the gradient; one summed step does not.
    w0, lr = 1.0, 0.25
    st = LayerState(np.array([[w0]]), np.array([0.0]))
    for _ in range(2):
        g = 2 * st.weights
        sgd_step(st, (g, np.zeros(1)), lr)
    two_steps = st.weights[0, 0]
    one_step = w0 - lr * (2 * w0 + 2 * w0)
    assert two_steps == pytest.approx(0.25)
    assert one_step == pytest.approx(0.0)
    assert two_steps != one_step


def test_sgd_shape_mismatch():
    st = LayerState(np.zeros((2, 2)), np.zeros(2))
    with pytest.raises(ShapeError):
        sgd_step(st, (np.zeros((2, 3)), np.zeros(2)), 0.1)


# --- grad_check -------------------------------------------------------------

def _net(trunk, head_layers, head_shape, in_shape, seed=0):
    spec = NetworkSpec(NetworkKind.TOPDOWN, in_shape, tuple(trunk),
                       (HeadSpec("out", tuple(head_layers), head_shape),))
    net = Network(spec, seed=seed, conv_std=0.3, fc_std=0.3)
    # nonzero biases keep ReLU pre-activations off the kink at exactly 0
    rng = np.random.default_rng(seed + 100)
    for _, st in net.layers():
        if st.has_params():
            st.biases[...] = rng.normal(0.0, 0.1, st.biases.shape)
    return net


def test_grad_check_linear_net():
    net = _net([], [fc(4, name="fc")], (4,), (3, 3, 1))
    x = np.random.default_rng(0).normal(size=(2, 3, 3, 1))
    assert grad_check(net, x, {"out": np.array([1, 3])}) < 1e-4


def test_grad_check_micro_conv_net():
    trunk = [conv(2, 3, name="c1"), maxpool(name="p1"), lrn(name="n1"), conv(3, 3, name="c2"),
             conv(4, 1, name="c3"), conv(4, 3, name="c4")]
    net = _net(trunk, [fc(5, name="fc")], (5,), (15, 15, 3))
    x = np.random.default_rng(1).normal(size=(2, 15, 15, 3))
    assert grad_check(net, x, {"out": np.array([0, 4])}) < 1e-3


def test_grad_check_zero_network():
    net = _net([conv(2, 3, name="c1")], [fc(3, name="fc")], (3,), (5, 5, 1))
    for p, _ in net.parameters():
        p[...] = 0
    assert grad_check(net, np.zeros((1, 5, 5, 1)), {"out": np.array([0])}) < 1e-9
    net.loss_and_grads(np.zeros((1, 5, 5, 1)), {"out": np.array([0])})
    for _, g in list(net.parameters())[:3]:
        assert not g.any()


def test_grad_check_leaves_network_untouched():
    net = _net([conv(2, 3, name="c1")], [fc(3, name="fc")], (3,), (5, 5, 1))
    before = net.checksum()
    grad_check(net, np.ones((1, 5, 5, 1)), {"out": np.array([2])})
    assert net.checksum() == before and net.dtype == np.float32


# --- NFW1 -------------------------------------------------------------------

def test_weights_round_trip(tmp_path):
    rng = np.random.default_rng(7)
    layers = [(conv(3, 3), make_state(conv(3, 3), (5, 5, 2), dtype=np.float32)),
              (maxpool(), LayerState()), (lrn(), LayerState()),
              (fc(4), make_state(fc(4), (6,), dtype=np.float32))]
    path = tmp_path / "w.nfw"
    save_weights(path, layers)
    buf = path.read_bytes()
    assert buf[:4] == b"NFW1"
    recs = load_weights(path)
    assert [r[0] for r in recs] == [LayerKind.CONV, LayerKind.MAXPOOL, LayerKind.LRN, LayerKind.FC]
    rebuilt = [(spec, LayerState(w, b)) for (spec, _), (_, w, b) in zip(layers, recs)]
    assert weights_bytes(rebuilt) == buf
    np.testing.assert_array_equal(recs[0][1], layers[0][1].weights)
    del rng


def test_weights_bad_magic(tmp_path):
    p = tmp_path / "bad.nfw"
    p.write_bytes(b"XXXX\x00\x00\x00\x00")
    with pytest.raises(ValueError):
        load_weights(p)
