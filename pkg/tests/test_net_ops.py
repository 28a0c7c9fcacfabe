"""Tensor kernels against naive oracles and finite differences."""

import math

import numpy as np
import pytest

from afpseg.errors import ShapeError
from afpseg.net import (
    conv2d,
    conv2d_backward,
    crop_to,
    loss_and_grad,
    maxpool2,
    maxpool2_backward,
    pad_to,
    relu,
    relu_backward,
    softmax,
    upsample2,
    upsample2_backward,
)


def _conv_brute(x, w, b, pad):
    """Seven nested loops, straight from the cross-correlation definition."""
    n, h, wd, c_in = x.shape
    kh, kw, _, c_out = w.shape
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    oh = h + 2 * pad - kh + 1
    ow = wd + 2 * pad - kw + 1
    out = np.zeros((n, oh, ow, c_out))
    for s in range(n):
        for oy in range(oh):
            for ox in range(ow):
                for co in range(c_out):
                    acc = 0.0
                    for ky in range(kh):
                        for kx in range(kw):
                            for ci in range(c_in):
                                acc += xp[s, oy + ky, ox + kx, ci] * w[ky, kx, ci, co]
                    out[s, oy, ox, co] = acc + b[co]
    return out


def _fd_grad(objective, arr, eps=1e-6):
    """Central-difference gradient of a scalar objective w.r.t. arr."""
    grad = np.zeros_like(arr)
    flat = arr.ravel()
    grad_flat = grad.ravel()
    for i in range(flat.size):
        saved = flat[i]
        flat[i] = saved + eps
        hi = objective()
        flat[i] = saved - eps
        lo = objective()
        flat[i] = saved
        grad_flat[i] = (hi - lo) / (2.0 * eps)
    return grad


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------


def test_conv_1x1_identity_kernel_passes_input_through():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((2, 5, 6, 3))
    w = np.eye(3)[np.newaxis, np.newaxis]  # (1, 1, 3, 3)
    out = conv2d(x, w, np.zeros(3))
    assert np.allclose(out, x)


def test_conv_ones_kernel_counts_taps():
    x = np.full((1, 6, 6, 2), 1.5)
    w = np.ones((3, 3, 2, 1))
    out = conv2d(x, w, np.zeros(1), pad=1)
    assert out.shape == (1, 6, 6, 1)
    assert out[0, 3, 3, 0] == pytest.approx(9 * 2 * 1.5)  # interior: 9 taps
    assert out[0, 0, 0, 0] == pytest.approx(4 * 2 * 1.5)  # corner: 4 taps
    assert out[0, 0, 3, 0] == pytest.approx(6 * 2 * 1.5)  # edge: 6 taps


def test_conv_matches_brute_force_over_random_instances():
    rng = np.random.default_rng(7)
    for _ in range(12):
        n = int(rng.integers(1, 3))
        h = int(rng.integers(3, 8))
        wd = int(rng.integers(3, 8))
        c_in = int(rng.integers(1, 4))
        c_out = int(rng.integers(1, 4))
        k = int(rng.choice([1, 3]))
        pad = int(rng.integers(0, 2))
        x = rng.standard_normal((n, h, wd, c_in))
        w = rng.standard_normal((k, k, c_in, c_out))
        b = rng.standard_normal(c_out)
        got = conv2d(x, w, b, pad=pad)
        want = _conv_brute(x, w, b, pad)
        assert got.shape == want.shape
        assert np.allclose(got, want, rtol=1e-10, atol=1e-10)


def test_conv_bias_is_added_per_output_channel():
    x = np.zeros((1, 4, 4, 2))
    w = np.zeros((3, 3, 2, 3))
    b = np.array([1.0, -2.0, 0.25])
    out = conv2d(x, w, b, pad=1)
    assert np.allclose(out, np.broadcast_to(b, out.shape))


def test_conv_backward_matches_finite_differences():
    rng = np.random.default_rng(21)
    x = rng.standard_normal((1, 4, 5, 2))
    w = rng.standard_normal((3, 3, 2, 2))
    b = rng.standard_normal(2)
    upstream = rng.standard_normal((1, 4, 5, 2))

    def objective():
        return float((conv2d(x, w, b, pad=1) * upstream).sum())

    dx, dw, db = conv2d_backward(upstream, x, w, pad=1)
    assert np.allclose(dx, _fd_grad(objective, x), atol=1e-7)
    assert np.allclose(dw, _fd_grad(objective, w), atol=1e-7)
    assert np.allclose(db, _fd_grad(objective, b), atol=1e-7)


def test_conv_shape_validation():
    x = np.zeros((1, 4, 4, 3))
    with pytest.raises(ShapeError):
        conv2d(np.zeros((4, 4, 3)), np.zeros((3, 3, 3, 1)), np.zeros(1))
    with pytest.raises(ShapeError):
        conv2d(x, np.zeros((3, 3, 2, 1)), np.zeros(1))  # channel mismatch
    with pytest.raises(ShapeError):
        conv2d(x, np.zeros((3, 3, 3, 2)), np.zeros(3))  # bias length
    with pytest.raises(ShapeError):
        conv2d(x, np.zeros((7, 7, 3, 1)), np.zeros(1))  # kernel larger than input


# ---------------------------------------------------------------------------
# pooling / upsampling
# ---------------------------------------------------------------------------


def test_maxpool_single_window():
    x = np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 2, 2, 1)
    out, argmax = maxpool2(x)
    assert out.shape == (1, 1, 1, 1)
    assert out[0, 0, 0, 0] == 4.0
    assert argmax[0, 0, 0, 0] == 3  # row-major position within the window


def test_maxpool_ties_go_to_the_first_cell():
    out, argmax = maxpool2(np.ones((1, 4, 4, 2)))
    assert np.all(out == 1.0)
    assert np.all(argmax == 0)


def test_maxpool_matches_naive_window_scan():
    rng = np.random.default_rng(3)
    for _ in range(25):
        n = int(rng.integers(1, 3))
        h = 2 * int(rng.integers(1, 5))
        w = 2 * int(rng.integers(1, 5))
        c = int(rng.integers(1, 4))
        x = rng.standard_normal((n, h, w, c))
        out, _ = maxpool2(x)
        want = np.empty((n, h // 2, w // 2, c))
        for s in range(n):
            for i in range(h // 2):
                for j in range(w // 2):
                    for ch in range(c):
                        want[s, i, j, ch] = x[
                            s, 2 * i : 2 * i + 2, 2 * j : 2 * j + 2, ch
                        ].max()
        assert np.array_equal(out, want)


def test_maxpool_backward_routes_to_winning_cell():
    x = np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 2, 2, 1)
    _, argmax = maxpool2(x)
    dx = maxpool2_backward(np.full((1, 1, 1, 1), 5.0), argmax)
    assert np.array_equal(dx.reshape(2, 2), [[0.0, 0.0], [0.0, 5.0]])


def test_maxpool_backward_matches_finite_differences():
    rng = np.random.default_rng(17)
    x = rng.standard_normal((2, 4, 6, 3))  # distinct values, no ties
    upstream = rng.standard_normal((2, 2, 3, 3))

    def objective():
        return float((maxpool2(x)[0] * upstream).sum())

    _, argmax = maxpool2(x)
    dx = maxpool2_backward(upstream, argmax)
    assert np.allclose(dx, _fd_grad(objective, x), atol=1e-7)


def test_maxpool_rejects_odd_extents():
    with pytest.raises(ShapeError):
        maxpool2(np.zeros((1, 3, 4, 1)))
    with pytest.raises(ShapeError):
        maxpool2(np.zeros((1, 4, 5, 1)))


def test_upsample_replicates_cells():
    x = np.array([[7.0]]).reshape(1, 1, 1, 1)
    assert np.array_equal(upsample2(x), np.full((1, 2, 2, 1), 7.0))
    rng = np.random.default_rng(5)
    y = rng.standard_normal((2, 3, 4, 2))
    up = upsample2(y)
    assert up.shape == (2, 6, 8, 2)
    for i in range(6):
        for j in range(8):
            assert np.array_equal(up[:, i, j, :], y[:, i // 2, j // 2, :])


def test_upsample_backward_sums_replica_blocks():
    dx = upsample2_backward(np.ones((1, 4, 4, 1)))
    assert np.array_equal(dx, np.full((1, 2, 2, 1), 4.0))

    rng = np.random.default_rng(13)
    x = rng.standard_normal((1, 3, 2, 2))
    upstream = rng.standard_normal((1, 6, 4, 2))

    def objective():
        return float((upsample2(x) * upstream).sum())

    assert np.allclose(upsample2_backward(upstream), _fd_grad(objective, x), atol=1e-7)
    with pytest.raises(ShapeError):
        upsample2_backward(np.zeros((1, 3, 4, 1)))


# ---------------------------------------------------------------------------
# padding helpers
# ---------------------------------------------------------------------------


def test_pad_and_crop_round_trip():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((2, 5, 7, 3))
    padded = pad_to(x, 8, 8)
    assert padded.shape == (2, 8, 8, 3)
    assert np.array_equal(padded[:, :5, :7, :], x)
    assert not padded[:, 5:, :, :].any()
    assert not padded[:, :, 7:, :].any()
    assert np.array_equal(crop_to(padded, 5, 7), x)


def test_pad_and_crop_reject_wrong_direction():
    x = np.zeros((1, 5, 5, 1))
    with pytest.raises(ShapeError):
        pad_to(x, 4, 6)
    with pytest.raises(ShapeError):
        crop_to(x, 6, 4)


# ---------------------------------------------------------------------------
# activations and loss
# ---------------------------------------------------------------------------


def test_relu_and_its_gradient():
    x = np.array([-2.0, -0.0, 0.0, 0.5, 3.0])
    assert np.array_equal(relu(x), [0.0, 0.0, 0.0, 0.5, 3.0])
    dout = np.ones(5)
    assert np.array_equal(relu_backward(dout, x), [0.0, 0.0, 0.0, 1.0, 1.0])


def test_softmax_properties():
    rng = np.random.default_rng(6)
    logits = rng.standard_normal((2, 3, 4, 5))
    probs = softmax(logits)
    assert np.allclose(probs.sum(axis=-1), 1.0, atol=1e-12)
    assert probs.min() > 0.0
    assert np.allclose(softmax(logits + 3.7), probs)  # shift invariance
    assert np.allclose(softmax(np.zeros((1, 1, 1, 4))), 0.25)
    huge = softmax(np.array([1000.0, 0.0, -1000.0, 500.0]).reshape(1, 1, 1, 4))
    assert np.isfinite(huge).all()


def test_loss_reference_values():
    labels = np.zeros((1, 2, 2), dtype=np.int64)
    uniform = np.full((1, 2, 2, 4), 0.25)
    loss, _ = loss_and_grad(uniform, labels)
    assert loss == pytest.approx(math.log(4.0))

    perfect = np.zeros((1, 2, 2, 4))
    perfect[..., 0] = 1.0
    loss, _ = loss_and_grad(perfect, labels)
    assert loss == pytest.approx(0.0, abs=1e-12)


def test_loss_gradient_matches_finite_differences():
    rng = np.random.default_rng(14)
    logits = rng.standard_normal((2, 3, 4, 4))
    labels = rng.integers(0, 4, size=(2, 3, 4))

    def objective():
        return loss_and_grad(softmax(logits), labels)[0]

    _, dlogits = loss_and_grad(softmax(logits), labels)
    assert np.allclose(dlogits, _fd_grad(objective, logits), atol=1e-9)


def test_loss_gradient_closed_form():
    rng = np.random.default_rng(15)
    logits = rng.standard_normal((1, 2, 3, 4))
    labels = rng.integers(0, 4, size=(1, 2, 3))
    probs = softmax(logits)
    _, dlogits = loss_and_grad(probs, labels)
    onehot = np.eye(4)[labels]
    assert np.allclose(dlogits, (probs - onehot) / labels.size)


def test_loss_validates_inputs():
    probs = np.full((1, 2, 2, 4), 0.25)
    with pytest.raises(ShapeError):
        loss_and_grad(probs, np.zeros((1, 2, 3), dtype=int))
    with pytest.raises(ShapeError):
        loss_and_grad(probs, np.full((1, 2, 2), 4, dtype=int))
    with pytest.raises(ShapeError):
        loss_and_grad(probs, np.full((1, 2, 2), -1, dtype=int))
    with pytest.raises(ShapeError):
        loss_and_grad(np.zeros((2, 2, 4)), np.zeros((2, 2), dtype=int))
