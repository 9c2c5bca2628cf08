"""Tests for the float32 autodiff kernel: values, gradients, tape order."""

from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gesturegen.errors import GraphError, ShapeError
from gesturegen.numeric import (
    Gradients,
    Graph,
    MomentumSGD,
    Tensor,
    add,
    add_bias,
    bce_with_logits,
    bone_lengths_t,
    concat_rows,
    conv1d,
    l1_loss,
    leaky_relu,
    mean_time,
    resample_time,
    scale,
    time_diff,
)

import oracles


def t32(values, requires_grad=False):
    return Tensor(np.asarray(values, dtype=np.float32), requires_grad=requires_grad)


# ---------------------------------------------------------------- values


def test_conv1d_identity_kernel():
    out = conv1d(t32([[1, 2, 3]]), t32([[[1]]]))
    assert np.array_equal(out.data, np.array([[1, 2, 3]], dtype=np.float32))


def test_conv1d_difference_kernel():
    out = conv1d(t32([[1, 2, 3]]), t32([[[1, -1]]]))
    assert np.array_equal(out.data, np.array([[-1, -1]], dtype=np.float32))


def test_conv1d_matches_loop_oracle():
    rng = np.random.default_rng(7)
    for stride, padding in [(1, 0), (1, 1), (2, 0), (2, 1), (3, 2)]:
        x = rng.standard_normal((3, 11)).astype(np.float32)
        k = rng.standard_normal((4, 3, 3)).astype(np.float32)
        got = conv1d(t32(x), t32(k), stride=stride, padding=padding).data
        want = oracles.conv1d_loops(x, k, stride=stride, padding=padding)
        assert got.shape == want.shape
        assert np.abs(got - want).max() < 1e-6


@settings(max_examples=60, deadline=None)
@given(
    t_in=st.integers(1, 40),
    width=st.integers(1, 7),
    stride=st.integers(1, 4),
    padding=st.integers(0, 3),
)
def test_conv1d_output_length_law(t_in, width, stride, padding):
    if t_in + 2 * padding < width:
        return
    x = Tensor(np.zeros((2, t_in), dtype=np.float32))
    k = Tensor(np.zeros((3, 2, width), dtype=np.float32))
    out = conv1d(x, k, stride=stride, padding=padding)
    assert out.data.shape == (3, (t_in + 2 * padding - width) // stride + 1)


def test_conv1d_channel_mismatch_is_descriptive():
    with pytest.raises(ShapeError, match="channel"):
        conv1d(t32(np.zeros((2, 5))), t32(np.zeros((1, 3, 2))))


def test_conv1d_window_wider_than_input():
    with pytest.raises(ShapeError):
        conv1d(t32(np.zeros((1, 2))), t32(np.zeros((1, 1, 5))))


def test_leaky_relu_example():
    out = leaky_relu(t32([-1.0, 0.0, 2.0]), 0.2)
    assert np.allclose(out.data, [-0.2, 0.0, 2.0], atol=1e-7)


def test_l1_loss_values():
    assert l1_loss(t32([1, 2, 3]), t32([1, 2, 3])).item() == 0.0
    assert l1_loss(t32([2, 0]), t32([0, 0])).item() == pytest.approx(1.0)


def test_l1_loss_empty_rejected():
    with pytest.raises(ShapeError):
        l1_loss(t32(np.zeros((0,))), t32(np.zeros((0,))))


def test_bce_logit_zero_is_log_two():
    for label in (0.0, 1.0):
        loss = bce_with_logits(t32([0.0]), t32([label]))
        assert loss.item() == pytest.approx(math.log(2.0), abs=1e-6)


def test_bce_confident_correct_is_tiny():
    loss = bce_with_logits(t32([100.0]), t32([1.0]))
    assert math.isfinite(loss.item())
    assert loss.item() <= 1e-6


def test_bce_extreme_logits_stay_finite():
    values = np.array([-1e4, -100.0, -1.0, 0.0, 1.0, 100.0, 1e4], dtype=np.float32)
    for label in (0.0, 1.0):
        labels = t32(np.full(7, label))
        xt = Tensor(values, requires_grad=True)
        with Graph() as g:
            loss = bce_with_logits(xt, labels)
        assert math.isfinite(loss.item())
        grads = g.backward(loss)
        assert np.all(np.isfinite(grads[xt]))


def test_bce_matches_reference_values():
    rng = np.random.default_rng(3)
    x = rng.standard_normal(20).astype(np.float32) * 3
    y = (rng.random(20) > 0.5).astype(np.float32)
    got = bce_with_logits(t32(x), t32(y)).item()
    assert got == pytest.approx(oracles.bce_with_logits_ref(x, y), abs=1e-6)


def test_resample_same_length_is_exact_copy():
    x = np.random.default_rng(0).standard_normal((3, 9)).astype(np.float32)
    out = resample_time(t32(x), 9)
    assert np.array_equal(out.data, x)


def test_resample_keeps_endpoints():
    x = np.random.default_rng(1).standard_normal((2, 7)).astype(np.float32)
    out = resample_time(t32(x), 13).data
    assert np.array_equal(out[:, 0], x[:, 0])
    assert np.allclose(out[:, -1], x[:, -1], atol=1e-6)


def test_resample_matches_interp_oracle():
    rng = np.random.default_rng(2)
    for t_in, t_out in [(5, 11), (11, 5), (2, 30), (30, 2), (1, 4), (9, 1)]:
        x = rng.standard_normal((3, t_in)).astype(np.float32)
        got = resample_time(t32(x), t_out).data
        want = oracles.resample_time_ref(x, t_out)
        assert np.abs(got - want).max() < 1e-6


def test_time_diff_example():
    out = time_diff(t32([[0.0, 1.0, 3.0]]))
    assert np.array_equal(out.data, np.array([[1.0, 2.0]], dtype=np.float32))


def test_mean_time_value():
    out = mean_time(t32([[1.0, 3.0], [2.0, 2.0]]))
    assert np.array_equal(out.data, np.array([[2.0], [2.0]], dtype=np.float32))


def test_bone_lengths_unit_and_degenerate():
    # two keypoints one unit apart plus a coincident pair
    frame = np.array(
        [[0.0], [0.0], [0.0], [1.0], [0.0], [0.0], [1.0], [0.0], [0.0]],
        dtype=np.float32,
    )
    out = bone_lengths_t(t32(frame), parents=[0, 1], children=[1, 2])
    assert out.data[0, 0] == pytest.approx(1.0, abs=1e-6)
    assert out.data[1, 0] < 1e-5  # epsilon floor, not NaN


def test_concat_and_bias_values():
    joined = concat_rows(t32([[1.0, 2.0]]), t32([[3.0, 4.0], [5.0, 6.0]]))
    assert joined.data.shape == (3, 2)
    biased = add_bias(t32([[0.0, 0.0], [0.0, 0.0]]), t32([1.0, -1.0]))
    assert np.array_equal(biased.data, np.array([[1, 1], [-1, -1]], dtype=np.float32))


# ---------------------------------------------------------------- tape


def test_square_gradient_via_repeated_input():
    # f(x) = x * x built from conv1d with x as both input and kernel;
    # the tape must accumulate both contributions: f'(3) = 6.
    x = Tensor(np.array([[3.0]], dtype=np.float32), requires_grad=True)
    k = Tensor(x.data.reshape(1, 1, 1), requires_grad=True)
    with Graph() as g:
        y = conv1d(x, k)
        loss = l1_loss(y, t32([[0.0]]))
    grads = g.backward(loss)
    # loss = |x*x| so d/dx through both slots: k + x = 2x = 6
    total = float(grads[x].reshape(-1)[0] + grads[k].reshape(-1)[0])
    assert total == pytest.approx(6.0, abs=1e-5)


def test_disconnected_parameter_gets_zero_gradient():
    used = Tensor(np.ones(3, dtype=np.float32), requires_grad=True)
    unused = Tensor(np.ones(4, dtype=np.float32), requires_grad=True)
    with Graph() as g:
        loss = l1_loss(used, t32([0.0, 0.0, 0.0]))
    grads = g.backward(loss, wrt=[used, unused])
    assert np.array_equal(unused.grad, np.zeros(4, dtype=np.float32))
    assert np.abs(grads[used]).sum() > 0


def test_backward_twice_is_bit_identical():
    rng = np.random.default_rng(5)
    x = Tensor(rng.standard_normal((2, 8)).astype(np.float32), requires_grad=True)
    k = Tensor(rng.standard_normal((3, 2, 3)).astype(np.float32), requires_grad=True)
    with Graph() as g:
        h = leaky_relu(conv1d(x, k, stride=2, padding=1), 0.2)
        loss = l1_loss(h, Tensor(rng.standard_normal(h.shape).astype(np.float32)))
    a = g.backward(loss)
    b = g.backward(loss)
    assert np.array_equal(a[x], b[x])
    assert np.array_equal(a[k], b[k])


def test_tape_records_in_construction_order():
    x = Tensor(np.ones((1, 6), dtype=np.float32), requires_grad=True)
    k = Tensor(np.ones((1, 1, 3), dtype=np.float32), requires_grad=True)
    with Graph() as g:
        h = conv1d(x, k)
        h2 = leaky_relu(h, 0.1)
        loss = l1_loss(h2, t32(np.zeros(h2.shape)))
    outs = [node.out.uid for node in g.nodes]
    assert outs == sorted(outs)
    for node in g.nodes:
        assert all(inp.uid < node.out.uid for inp in node.inputs)
    assert [n.op_name for n in g.nodes] == ["conv1d", "leaky_relu", "l1_loss"]


def test_backward_requires_scalar_loss():
    x = Tensor(np.ones((2, 2), dtype=np.float32), requires_grad=True)
    with Graph() as g:
        y = leaky_relu(x, 0.2)
    with pytest.raises(GraphError):
        g.backward(y)


def test_no_graph_means_no_recording():
    x = Tensor(np.ones((1, 4), dtype=np.float32), requires_grad=True)
    out = leaky_relu(x, 0.2)
    assert out.requires_grad is False


def test_detach_blocks_gradient():
    x = Tensor(np.array([2.0, -1.0], dtype=np.float32), requires_grad=True)
    with Graph() as g:
        frozen = x.detach()
        loss = l1_loss(frozen, t32([0.0, 0.0]))
    grads = g.backward(loss, wrt=[x])
    assert np.array_equal(x.grad, np.zeros(2, dtype=np.float32))


# ---------------------------------------------------------------- gradients vs finite differences


def _fd_check_unary(op32, op_ref, x, target, seed_note, **kwargs):
    """Run op under the graph, then compare backward to FD of the float64 oracle."""
    xt = Tensor(x, requires_grad=True)
    with Graph() as g:
        out = op32(xt, **kwargs)
        loss = l1_loss(out, Tensor(target))
    grads = g.backward(loss)

    def scalar(arrays):
        return oracles.l1_loss_ref(op_ref(arrays[0], **kwargs), target)

    fd = oracles.fd_gradient(scalar, [x], 0)
    assert oracles.gradient_close(grads[xt], fd), seed_note


def test_fd_leaky_relu():
    rng = np.random.default_rng(11)
    x = (rng.standard_normal((3, 7)) * 2).astype(np.float32)
    x += np.where(np.abs(x) < 0.05, 0.2, 0.0).astype(np.float32)  # keep away from the kink
    target = rng.standard_normal((3, 7)).astype(np.float32)
    _fd_check_unary(leaky_relu, oracles.leaky_relu_ref, x, target, "leaky_relu", slope=0.2)


def test_fd_resample_time():
    rng = np.random.default_rng(12)
    for t_out in (4, 9, 17):
        x = rng.standard_normal((2, 9)).astype(np.float32)
        target = rng.standard_normal((2, t_out)).astype(np.float32)
        _fd_check_unary(resample_time, oracles.resample_time_ref, x, target,
                        f"resample {t_out}", out_len=t_out)


def test_fd_mean_time():
    rng = np.random.default_rng(13)
    x = rng.standard_normal((4, 6)).astype(np.float32)
    target = rng.standard_normal((4, 1)).astype(np.float32)
    _fd_check_unary(mean_time, oracles.mean_time_ref, x, target, "mean_time")


def test_fd_time_diff():
    rng = np.random.default_rng(14)
    x = rng.standard_normal((3, 8)).astype(np.float32)
    target = rng.standard_normal((3, 7)).astype(np.float32)
    _fd_check_unary(time_diff, oracles.time_diff_ref, x, target, "time_diff")


def test_fd_conv1d_both_inputs():
    rng = np.random.default_rng(15)
    x = rng.standard_normal((2, 10)).astype(np.float32)
    k = rng.standard_normal((3, 2, 3)).astype(np.float32)
    target = rng.standard_normal((3, 5)).astype(np.float32)
    xt = Tensor(x, requires_grad=True)
    kt = Tensor(k, requires_grad=True)
    with Graph() as g:
        out = conv1d(xt, kt, stride=2, padding=1)
        loss = l1_loss(out, Tensor(target))
    grads = g.backward(loss)

    def scalar(arrays):
        return oracles.l1_loss_ref(
            oracles.conv1d_loops(arrays[0], arrays[1], stride=2, padding=1), target
        )

    assert oracles.gradient_close(grads[xt], oracles.fd_gradient(scalar, [x, k], 0))
    assert oracles.gradient_close(grads[kt], oracles.fd_gradient(scalar, [x, k], 1))


def test_fd_bone_lengths():
    rng = np.random.default_rng(16)
    x = rng.standard_normal((9, 4)).astype(np.float32)  # 3 keypoints
    parents = [0, 1]
    children = [1, 2]
    target = rng.standard_normal((2, 4)).astype(np.float32) + 3
    xt = Tensor(x, requires_grad=True)
    with Graph() as g:
        out = bone_lengths_t(xt, parents, children)
        loss = l1_loss(out, Tensor(target))
    grads = g.backward(loss)

    def scalar(arrays):
        return oracles.l1_loss_ref(oracles.bone_lengths_ref(arrays[0], parents, children), target)

    assert oracles.gradient_close(grads[xt], oracles.fd_gradient(scalar, [x], 0))


def test_fd_bce_with_logits():
    rng = np.random.default_rng(17)
    x = (rng.standard_normal(12) * 2).astype(np.float32)
    y = (rng.random(12) > 0.5).astype(np.float32)
    xt = Tensor(x, requires_grad=True)
    with Graph() as g:
        loss = bce_with_logits(xt, Tensor(y))
    grads = g.backward(loss)

    def scalar(arrays):
        return oracles.bce_with_logits_ref(arrays[0], y)

    assert oracles.gradient_close(grads[xt], oracles.fd_gradient(scalar, [x], 0))


def test_fd_concat_add_bias_scale_add():
    rng = np.random.default_rng(18)
    a = rng.standard_normal((2, 5)).astype(np.float32)
    b = rng.standard_normal((3, 5)).astype(np.float32)
    bias = rng.standard_normal(5).astype(np.float32)
    target = rng.standard_normal((5, 5)).astype(np.float32)
    at, bt, biast = Tensor(a, requires_grad=True), Tensor(b, requires_grad=True), Tensor(bias, requires_grad=True)
    with Graph() as g:
        joined = concat_rows(at, bt)
        shifted = add_bias(joined, biast)
        doubled = add(shifted, shifted)
        loss = l1_loss(scale(doubled, 0.7), Tensor(target))
    grads = g.backward(loss)

    def scalar(arrays):
        joined = oracles.concat_rows_ref(arrays[0], arrays[1])
        shifted = oracles.add_bias_ref(joined, arrays[2])
        return oracles.l1_loss_ref(0.7 * (shifted + shifted), target)

    for i, tensor in enumerate((at, bt, biast)):
        fd = oracles.fd_gradient(scalar, [a, b, bias], i)
        assert oracles.gradient_close(grads[tensor], fd), f"input {i}"


# ---------------------------------------------------------------- optimizer


def test_sgd_zero_lr_keeps_parameters():
    p = Tensor(np.array([1.0, 2.0], dtype=np.float32), requires_grad=True)
    before = p.data.copy()
    opt = MomentumSGD(lr=0.0, momentum=0.9)
    with Graph() as g:
        loss = l1_loss(p, t32([0.0, 0.0]))
    opt.step([p], g.backward(loss))
    assert np.array_equal(p.data, before)


def test_sgd_momentum_accumulates_velocity():
    # constant gradient of 1: step sizes lr, lr*(1+mu), lr*(1+mu+mu^2), ...
    p = Tensor(np.array([10.0], dtype=np.float32), requires_grad=True)
    opt = MomentumSGD(lr=0.1, momentum=0.5)
    values = [10.0]
    for _ in range(3):
        with Graph() as g:
            loss = l1_loss(p, t32([-100.0]))  # sign is +1 throughout
        opt.step([p], g.backward(loss))
        values.append(float(p.data[0]))
    steps = -np.diff(values)
    assert steps[0] == pytest.approx(0.1, abs=1e-6)
    assert steps[1] == pytest.approx(0.15, abs=1e-6)
    assert steps[2] == pytest.approx(0.175, abs=1e-6)


def test_sgd_rejects_bad_hyperparameters():
    with pytest.raises(ValueError):
        MomentumSGD(lr=-1.0)
    with pytest.raises(ValueError):
        MomentumSGD(lr=0.1, momentum=1.0)


def test_gradients_mapping_zeros_for_unknown():
    p = Tensor(np.ones(3, dtype=np.float32), requires_grad=True)
    grads = Gradients({})
    assert np.array_equal(grads[p], np.zeros(3, dtype=np.float32))
    assert p not in grads
