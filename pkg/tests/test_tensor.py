import numpy as np
import pytest

from lanedet import tensor as T
from lanedet.tensor import Tensor

from helpers import conv2d_loops, max_rel_grad_error


def test_conv2d_all_ones_center():
    x = Tensor(np.ones((1, 1, 3, 3)))
    k = Tensor(np.ones((1, 1, 3, 3)))
    out = T.conv2d(x, k, padding=1)
    assert out.data[0, 0, 1, 1] == 9.0


def test_conv2d_identity_kernel():
    rng = np.random.default_rng(3)
    x = Tensor(rng.normal(size=(2, 3, 7, 9)))
    k = np.zeros((3, 3, 3, 3))
    # per-channel identity: kernel c picks channel c's center tap
    for c in range(3):
        k[c, c, 1, 1] = 1.0
    out = T.conv2d(x, Tensor(k), padding=1)
    np.testing.assert_array_equal(out.data, x.data)


def test_conv2d_depthwise_dilated_matches_loop_oracle():
    rng = np.random.default_rng(7)
    x = rng.normal(size=(1, 2, 8, 8))
    w = rng.normal(size=(2, 1, 3, 3))
    out = T.conv2d(Tensor(x), Tensor(w), dilation=2, groups=2, padding=2)
    ref = conv2d_loops(x, w, dilation=2, groups=2, padding=2)
    np.testing.assert_allclose(out.data, ref, atol=1e-12)


@pytest.mark.parametrize("stride,dilation,groups,padding", [
    (1, 1, 1, 1), (2, 1, 1, 1), (1, 2, 2, 2), (2, 4, 4, 4), (1, 1, 2, 0),
])
def test_conv2d_matches_loops_random(stride, dilation, groups, padding):
    rng = np.random.default_rng(stride * 100 + dilation * 10 + groups)
    c_in, c_out = groups * 2, groups * 3
    x = rng.normal(size=(2, c_in, 10, 11))
    w = rng.normal(size=(c_out, c_in // groups, 3, 3))
    out = T.conv2d(Tensor(x), Tensor(w), stride, dilation, groups, padding)
    ref = conv2d_loops(x, w, stride, dilation, groups, padding)
    np.testing.assert_allclose(out.data, ref, atol=1e-12)


def test_grouped_conv_equals_independent_single_channel_convs():
    rng = np.random.default_rng(11)
    c = 4
    x = rng.normal(size=(1, c, 9, 9))
    w = rng.normal(size=(c, 1, 3, 3))
    full = T.conv2d(Tensor(x), Tensor(w), groups=c, padding=1).data
    for ch in range(c):
        single = T.conv2d(
            Tensor(x[:, ch : ch + 1]), Tensor(w[ch : ch + 1]), padding=1
        ).data
        np.testing.assert_allclose(full[:, ch : ch + 1], single, atol=1e-12)


def test_conv2d_shape_error_names_axis():
    x = Tensor(np.zeros((1, 4, 8, 8)))
    w = Tensor(np.zeros((4, 3, 3, 3)))  # wrong per-group input channels
    with pytest.raises(T.DimensionError, match="channel"):
        T.conv2d(x, w, groups=1)


def test_pixel_shuffle_definitional():
    x = Tensor(np.array([0.0, 1.0, 2.0, 3.0]).reshape(1, 4, 1, 1))
    out = T.pixel_shuffle(x, 2)
    np.testing.assert_array_equal(out.data[0, 0], [[0.0, 1.0], [2.0, 3.0]])


def test_pixel_shuffle_space_to_depth_inverse_bit_exact():
    rng = np.random.default_rng(13)
    x = Tensor(rng.normal(size=(3, 8, 5, 6)))
    back = T.space_to_depth(T.pixel_shuffle(x, 2), 2)
    assert np.array_equal(back.data, x.data)


def test_pixel_shuffle_unit_jacobian():
    x = Tensor(np.random.default_rng(5).normal(size=(1, 4, 2, 3)), requires_grad=True)
    T.backward(T.tsum(T.pixel_shuffle(x, 2)))
    np.testing.assert_array_equal(x.grad, np.ones_like(x.data))


def test_pixel_shuffle_channel_error():
    with pytest.raises(T.DimensionError, match="divisible"):
        T.pixel_shuffle(Tensor(np.zeros((1, 3, 2, 2))), 2)


def test_pointwise_values():
    assert T.sigmoid(Tensor(0.0)).item() == 0.5
    assert T.relu(Tensor(-3.0)).item() == 0.0
    assert T.relu(Tensor(2.5)).item() == 2.5
    assert abs(T.tanh(Tensor(0.5)).item() - np.tanh(0.5)) < 1e-15


@pytest.mark.parametrize("op", [T.sigmoid, T.tanh])
def test_pointwise_gradients_match_finite_differences(op):
    rng = np.random.default_rng(17)
    x = Tensor(rng.normal(size=(4, 4)), requires_grad=True)
    err = max_rel_grad_error(lambda: T.tsum(op(x)), [x], rng=rng, max_entries_per_param=16)
    assert err <= 1e-6


def test_relu_gradient_zero_at_zero():
    x = Tensor(np.array([0.0, -1.0, 2.0]), requires_grad=True)
    T.backward(T.tsum(T.relu(x)))
    np.testing.assert_array_equal(x.grad, [0.0, 0.0, 1.0])


def test_max_over_points_value_and_grad_routing():
    x = Tensor(np.array([[[1.0, 5.0, 3.0]]]), requires_grad=True)
    out = T.max_over_points(x)
    np.testing.assert_array_equal(out.data, [[5.0]])
    T.backward(T.tsum(out))
    np.testing.assert_array_equal(x.grad, [[[0.0, 1.0, 0.0]]])


def test_max_over_points_tie_goes_to_lowest_index():
    x = Tensor(np.array([[[4.0, 4.0, 1.0]]]), requires_grad=True)
    T.backward(T.tsum(T.max_over_points(x)))
    np.testing.assert_array_equal(x.grad, [[[1.0, 0.0, 0.0]]])


def test_avg_over_points():
    out = T.avg_over_points(Tensor(np.array([[[1.0, 5.0, 3.0]]])))
    np.testing.assert_array_equal(out.data, [[3.0]])


def test_max_over_points_permutation_invariant_bit_exact():
    rng = np.random.default_rng(19)
    x = rng.normal(size=(2, 5, 31))
    base = T.max_over_points(Tensor(x)).data
    for _ in range(10):
        perm = rng.permutation(31)
        permuted = T.max_over_points(Tensor(x[:, :, perm])).data
        assert np.array_equal(base, permuted)


def test_pooling_empty_axis_error():
    with pytest.raises(T.EmptyInputError):
        T.max_over_points(Tensor(np.zeros((1, 2, 0))))
    with pytest.raises(T.EmptyInputError):
        T.avg_over_points(Tensor(np.zeros((1, 2, 0))))


def test_max_pool2d_matches_naive():
    rng = np.random.default_rng(23)
    x = rng.normal(size=(2, 3, 8, 8))
    out = T.max_pool2d(Tensor(x), 2, 2)
    ref = x.reshape(2, 3, 4, 2, 4, 2).max(axis=(3, 5))
    np.testing.assert_array_equal(out.data, ref)


def test_max_pool2d_gradient():
    rng = np.random.default_rng(29)
    x = Tensor(rng.normal(size=(1, 2, 6, 6)), requires_grad=True)
    err = max_rel_grad_error(
        lambda: T.tsum(T.square(T.max_pool2d(x, 2, 2))), [x], rng=rng, max_entries_per_param=12
    )
    assert err <= 1e-6


def test_conv1d_identity_kernel():
    rng = np.random.default_rng(31)
    x = Tensor(rng.normal(size=(2, 4, 7)))
    out = T.conv1d(x, Tensor(np.eye(4)[:, :, None]))
    np.testing.assert_array_equal(out.data, x.data)


def test_conv1d_permutation_equivariant():
    rng = np.random.default_rng(37)
    x = rng.normal(size=(1, 3, 9))
    w = rng.normal(size=(5, 3, 1))
    base = T.conv1d(Tensor(x), Tensor(w)).data
    perm = rng.permutation(9)
    permuted = T.conv1d(Tensor(x[:, :, perm]), Tensor(w)).data
    np.testing.assert_array_equal(base[:, :, perm], permuted)


def test_conv1d_matches_per_point_matmul_oracle():
    rng = np.random.default_rng(41)
    x = rng.normal(size=(2, 3, 6))
    w = rng.normal(size=(4, 3, 1))
    out = T.conv1d(Tensor(x), Tensor(w)).data
    for n in range(2):
        for p in range(6):
            np.testing.assert_allclose(out[n, :, p], w[:, :, 0] @ x[n, :, p], atol=1e-12)


def _lstm_params(rng, d_in, d_h, zero=False):
    mk = (lambda s: np.zeros(s)) if zero else (lambda s: rng.normal(size=s) * 0.4)
    return (
        Tensor(mk((d_in, 4 * d_h)), requires_grad=True),
        Tensor(mk((d_h, 4 * d_h)), requires_grad=True),
        Tensor(mk((4 * d_h,)), requires_grad=True),
    )


def test_lstm_all_zero():
    rng = np.random.default_rng(43)
    wx, wh, b = _lstm_params(rng, 3, 4, zero=True)
    h, c = T.lstm_cell(Tensor(np.zeros((1, 3))), Tensor(np.zeros((1, 4))), Tensor(np.zeros((1, 4))), wx, wh, b)
    np.testing.assert_array_equal(h.data, np.zeros((1, 4)))
    np.testing.assert_array_equal(c.data, np.zeros((1, 4)))


def test_lstm_forget_gate_saturation():
    # with forget bias ~ +inf, c' ~= c + i*g
    rng = np.random.default_rng(47)
    d_in, d_h = 3, 4
    wx, wh, b = _lstm_params(rng, d_in, d_h)
    b.data[d_h : 2 * d_h] = 50.0
    x = Tensor(rng.normal(size=(2, d_in)))
    h0 = Tensor(rng.normal(size=(2, d_h)))
    c0 = Tensor(rng.normal(size=(2, d_h)))
    _, c1 = T.lstm_cell(x, h0, c0, wx, wh, b)
    z = x.data @ wx.data + h0.data @ wh.data + b.data
    i = 1.0 / (1.0 + np.exp(-z[:, :d_h]))
    g = np.tanh(z[:, 2 * d_h : 3 * d_h])
    assert np.max(np.abs(c1.data - c0.data - i * g)) <= 1e-9


def test_lstm_gradient_through_three_chained_steps():
    rng = np.random.default_rng(53)
    d_in, d_h = 2, 3
    wx, wh, b = _lstm_params(rng, d_in, d_h)
    xs = [Tensor(rng.normal(size=(1, d_in))) for _ in range(3)]

    def loss():
        h = Tensor(np.zeros((1, d_h)))
        c = Tensor(np.zeros((1, d_h)))
        for x in xs:
            h, c = T.lstm_cell(x, h, c, wx, wh, b)
        return T.tsum(T.square(h))

    err = max_rel_grad_error(loss, [wx, wh, b], rng=rng, max_entries_per_param=8, eps=1e-6)
    assert err <= 1e-4


def test_lstm_shape_error():
    rng = np.random.default_rng(59)
    wx, wh, b = _lstm_params(rng, 3, 4)
    with pytest.raises(T.DimensionError):
        T.lstm_cell(Tensor(np.zeros((1, 5))), Tensor(np.zeros((1, 4))), Tensor(np.zeros((1, 4))), wx, wh, b)


def test_backward_sum_gradient():
    p = Tensor(np.zeros(3), requires_grad=True)
    T.backward(T.tsum(p))
    np.testing.assert_array_equal(p.grad, [1.0, 1.0, 1.0])


def test_backward_square_and_sgd_step():
    p = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    T.backward(T.tsum(T.square(p)))
    np.testing.assert_array_equal(p.grad, [2.0, 4.0])
    opt = T.SGD([p], lr=0.1, momentum=0.0)
    opt.step()
    np.testing.assert_allclose(p.data, [0.8, 1.6], atol=1e-15)
    assert len(T.tape) == 0  # tape cleared by the step


def test_backward_rejects_non_scalar():
    p = Tensor(np.zeros(3), requires_grad=True)
    with pytest.raises(T.ContractError):
        T.backward(T.scale(p, 2.0))


def test_two_layer_net_gradient_vs_finite_differences():
    rng = np.random.default_rng(61)
    w1 = Tensor(rng.normal(size=(4, 5)) * 0.5, requires_grad=True)
    w2 = Tensor(rng.normal(size=(5, 2)) * 0.5, requires_grad=True)
    x = Tensor(rng.normal(size=(3, 4)))

    def loss():
        return T.tsum(T.square(T.matmul(T.tanh(T.matmul(x, w1)), w2)))

    err = max_rel_grad_error(loss, [w1, w2], rng=rng, max_entries_per_param=10)
    assert err <= 1e-4


def test_sgd_lr_zero_leaves_params_bit_identical():
    rng = np.random.default_rng(67)
    p = Tensor(rng.normal(size=(4,)), requires_grad=True)
    before = p.data.copy()
    T.backward(T.tsum(T.square(p)))
    T.SGD([p], lr=0.0, momentum=0.9).step()
    assert np.array_equal(p.data, before)


def test_sgd_momentum_update_rule():
    p = Tensor(np.array([1.0]), requires_grad=True)
    opt = T.SGD([p], lr=0.1, momentum=0.5)
    T.backward(T.tsum(T.square(p)))  # grad 2
    opt.step()  # v = -0.2, p = 0.8
    np.testing.assert_allclose(p.data, [0.8])
    T.backward(T.tsum(T.square(p)))  # grad 1.6
    opt.step()  # v = -0.1 - 0.16 = -0.26, p = 0.54
    np.testing.assert_allclose(p.data, [0.54])


def test_finite_check_raises(finite_checks):
    with pytest.raises(FloatingPointError):
        T.log(Tensor(np.array([-1.0])))


def test_checkpoint_roundtrip(tmp_path):
    rng = np.random.default_rng(71)
    params = {
        "a.w": Tensor(rng.normal(size=(3, 4)), requires_grad=True),
        "b": Tensor(rng.normal(size=(5,)), requires_grad=True),
    }
    path = tmp_path / "ck.lnck"
    T.save_checkpoint(params, path)
    loaded = T.load_checkpoint(path, {"a.w": (3, 4), "b": (5,)})
    for name in params:
        assert np.array_equal(loaded[name].data, params[name].data)


def test_checkpoint_bad_magic_and_shape(tmp_path):
    path = tmp_path / "bad.lnck"
    path.write_bytes(b"XXXX\x01\x00\x00\x00")
    with pytest.raises(T.CheckpointError, match="magic"):
        T.load_checkpoint(path)
    good = tmp_path / "good.lnck"
    T.save_checkpoint({"w": Tensor(np.zeros((2, 2)))}, good)
    with pytest.raises(T.CheckpointError, match="shape"):
        T.load_checkpoint(good, {"w": (3, 3)})
    with pytest.raises(T.CheckpointError):
        T.load_checkpoint(good, {"missing": (1,)})


def test_checkpoint_truncation_error(tmp_path):
    good = tmp_path / "good.lnck"
    T.save_checkpoint({"w": Tensor(np.arange(6, dtype=float).reshape(2, 3))}, good)
    blob = good.read_bytes()
    bad = tmp_path / "trunc.lnck"
    bad.write_bytes(blob[:-10])
    with pytest.raises(T.CheckpointError):
        T.load_checkpoint(bad)
