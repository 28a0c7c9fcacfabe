"""Dense tensor kernels with hand-derived backward passes.

Layout is channels-last throughout: activations are (batch, height,
width, channels), convolution weights are (kh, kw, c_in, c_out).
Convolution is implemented as the shift-and-matmul decomposition: one
GEMM per kernel tap. That keeps memory flat (no im2col buffer) while
still routing the inner loops through BLAS, and the same decomposition
transposes cleanly for the gradient.
"""

from __future__ import annotations

import numpy as np

from ..errors import ShapeError

__all__ = [
    "conv2d",
    "conv2d_backward",
    "maxpool2",
    "maxpool2_backward",
    "upsample2",
    "upsample2_backward",
    "pad_to",
    "crop_to",
    "relu",
    "relu_backward",
    "softmax",
    "loss_and_grad",
]


def _check_nhwc(x: np.ndarray, name: str = "x") -> None:
    if x.ndim != 4:
        raise ShapeError(f"{name} must be 4-D (batch, height, width, channels), got {x.shape}")


def conv2d(x: np.ndarray, w: np.ndarray, b: np.ndarray, pad: int = 0) -> np.ndarray:
    """2-D cross-correlation with zero padding, stride 1.

    x: (n, h, w, c_in); w: (kh, kw, c_in, c_out); b: (c_out,).
    Output spatial extents are h + 2*pad - kh + 1 by w + 2*pad - kw + 1.
    """
    _check_nhwc(x)
    if w.ndim != 4:
        raise ShapeError(f"conv weights must be 4-D (kh, kw, c_in, c_out), got {w.shape}")
    kh, kw, c_in, c_out = w.shape
    if x.shape[3] != c_in:
        raise ShapeError(f"input has {x.shape[3]} channels, weights expect {c_in}")
    if b.shape != (c_out,):
        raise ShapeError(f"bias must have shape ({c_out},), got {b.shape}")

    if pad:
        x = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    n, h, wd, _ = x.shape
    oh = h - kh + 1
    ow = wd - kw + 1
    if oh <= 0 or ow <= 0:
        raise ShapeError(
            f"kernel {kh}x{kw} does not fit the padded input {h}x{wd}"
        )

    out = np.zeros((n, oh, ow, c_out), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            out += x[:, i : i + oh, j : j + ow, :] @ w[i, j]
    out += b
    return out


def conv2d_backward(
    dout: np.ndarray, x: np.ndarray, w: np.ndarray, pad: int = 0
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of conv2d: returns (dx, dw, db) for upstream dout."""
    kh, kw, c_in, c_out = w.shape
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0))) if pad else x
    n, h, wd, _ = xp.shape
    oh, ow = dout.shape[1], dout.shape[2]

    dw = np.zeros_like(w)
    dxp = np.zeros_like(xp)
    flat_dout = dout.reshape(-1, c_out)
    for i in range(kh):
        for j in range(kw):
            patch = xp[:, i : i + oh, j : j + ow, :].reshape(-1, c_in)
            dw[i, j] = patch.T @ flat_dout
            dxp[:, i : i + oh, j : j + ow, :] += dout @ w[i, j].T
    db = dout.sum(axis=(0, 1, 2))

    if pad:
        dx = dxp[:, pad : pad + x.shape[1], pad : pad + x.shape[2], :]
    else:
        dx = dxp
    return dx, dw, db


def maxpool2(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """2x2 max pooling with stride 2; also returns the argmax routing.

    Both spatial extents must be even. The argmax holds the flat index
    (0..3, row-major within the window) of the winning cell; ties go to
    the first such cell.
    """
    _check_nhwc(x)
    n, h, w, c = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool2 needs even spatial extents, got {h}x{w}")
    windows = x.reshape(n, h // 2, 2, w // 2, 2, c)
    # (n, h2, w2, c, 4) with window cells in row-major order
    stacked = windows.transpose(0, 1, 3, 5, 2, 4).reshape(n, h // 2, w // 2, c, 4)
    argmax = stacked.argmax(axis=-1)
    out = np.take_along_axis(stacked, argmax[..., np.newaxis], axis=-1)[..., 0]
    return out, argmax


def maxpool2_backward(dout: np.ndarray, argmax: np.ndarray) -> np.ndarray:
    """Scatter the upstream gradient back to each window's argmax cell."""
    n, h2, w2, c = dout.shape
    scattered = np.zeros((n, h2, w2, c, 4), dtype=dout.dtype)
    np.put_along_axis(scattered, argmax[..., np.newaxis], dout[..., np.newaxis], axis=-1)
    windows = scattered.reshape(n, h2, w2, c, 2, 2).transpose(0, 1, 4, 2, 5, 3)
    return windows.reshape(n, h2 * 2, w2 * 2, c)


def upsample2(x: np.ndarray) -> np.ndarray:
    """Nearest-neighbour 2x upscaling of both spatial extents."""
    _check_nhwc(x)
    return np.repeat(np.repeat(x, 2, axis=1), 2, axis=2)


def upsample2_backward(dout: np.ndarray) -> np.ndarray:
    """Each source cell collects the gradient of its 2x2 replica block."""
    n, h, w, c = dout.shape
    if h % 2 or w % 2:
        raise ShapeError(f"upsample2_backward needs even extents, got {h}x{w}")
    return dout.reshape(n, h // 2, 2, w // 2, 2, c).sum(axis=(2, 4))


def pad_to(x: np.ndarray, height: int, width: int) -> np.ndarray:
    """Zero-pad the bottom/right of the spatial extents up to a target."""
    _check_nhwc(x)
    dh = height - x.shape[1]
    dw = width - x.shape[2]
    if dh < 0 or dw < 0:
        raise ShapeError(
            f"cannot pad {x.shape[1]}x{x.shape[2]} down to {height}x{width}"
        )
    if dh == 0 and dw == 0:
        return x
    return np.pad(x, ((0, 0), (0, dh), (0, dw), (0, 0)))


def crop_to(x: np.ndarray, height: int, width: int) -> np.ndarray:
    """Drop bottom/right rows and columns; inverse of pad_to."""
    _check_nhwc(x)
    if height > x.shape[1] or width > x.shape[2]:
        raise ShapeError(
            f"cannot crop {x.shape[1]}x{x.shape[2]} up to {height}x{width}"
        )
    return x[:, :height, :width, :]


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_backward(dout: np.ndarray, x: np.ndarray) -> np.ndarray:
    return dout * (x > 0)


def softmax(logits: np.ndarray) -> np.ndarray:
    """Softmax over the trailing (class) axis, numerically stabilised."""
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def loss_and_grad(probs: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean per-pixel cross-entropy and its gradient w.r.t. the logits.

    probs: (n, h, w, classes) softmax outputs; labels: (n, h, w) ints.
    With q = softmax(logits) the logit gradient is (q - onehot) / n_pixels,
    n_pixels counting every pixel in the batch.
    """
    if probs.ndim != 4:
        raise ShapeError(f"probs must be 4-D, got {probs.shape}")
    if labels.shape != probs.shape[:3]:
        raise ShapeError(
            f"labels shape {labels.shape} does not match probs {probs.shape[:3]}"
        )
    classes = probs.shape[3]
    lab = labels.astype(np.intp)
    if lab.min() < 0 or lab.max() >= classes:
        raise ShapeError(f"labels must lie in [0, {classes})")

    n_pixels = lab.size
    picked = np.take_along_axis(probs, lab[..., np.newaxis], axis=-1)[..., 0]
    # float64 accumulation regardless of activation dtype
    loss = float(-np.log(np.maximum(picked, np.finfo(np.float64).tiny)).mean(dtype=np.float64))

    dlogits = probs.copy()
    flat = dlogits.reshape(-1, classes)
    flat[np.arange(n_pixels), lab.ravel()] -= 1.0
    dlogits /= n_pixels
    return loss, dlogits
