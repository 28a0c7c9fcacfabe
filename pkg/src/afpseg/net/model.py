"""Encoder/decoder segmentation network built from the kernels in ops.

The architecture is a U-shaped fully convolutional net: the first
encoder block runs at full resolution (no pooling), every further level
halves the spatial extents and doubles the feature count, and the
decoder mirrors the encoder with nearest-neighbour upscaling, padding,
and skip concatenation before each pair of convolutions. Every
convolution is 3x3 with one pixel of zero padding (the head is 1x1), so
spatial extents are preserved within a level and the output is
per-pixel class probabilities at input resolution.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from ..errors import ConfigurationError, ShapeError
from .ops import (
    conv2d,
    conv2d_backward,
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

__all__ = ["NetworkConfig", "Network", "forward", "forward_with_cache", "backward"]

_STREAM_PARAMS = 101


@dataclass(frozen=True)
class NetworkConfig:
    levels: int = 4
    base_features: int = 16
    classes: int = 4
    input_channels: int = 1

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.levels < 2:
            raise ConfigurationError("levels must be >= 2")
        if self.base_features < 1:
            raise ConfigurationError("base_features must be >= 1")
        if self.classes < 2:
            raise ConfigurationError("classes must be >= 2")
        if self.input_channels < 1:
            raise ConfigurationError("input_channels must be >= 1")

    @property
    def divisor(self) -> int:
        """Spatial extents must be divisible by this (one pool per level)."""
        return 2 ** (self.levels - 1)

    def features(self, level: int) -> int:
        return self.base_features * (2**level)

    @classmethod
    def full_scale(cls) -> "NetworkConfig":
        return cls(levels=4, base_features=16)

    @classmethod
    def desk_scale(cls) -> "NetworkConfig":
        return cls(levels=3, base_features=8)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "NetworkConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigurationError(
                "unknown network config keys: " + ", ".join(sorted(unknown))
            )
        return cls(**data)


class Network:
    """Parameter container plus the architecture defined by its config.

    Parameters live in an ordered dict keyed by stable names
    (enc0_conv1_w, ..., dec0_conv2_b, head_w, head_b); optimizers and
    checkpoints address them by these names.
    """

    def __init__(self, config: NetworkConfig, dtype=np.float32, seed: int = 0,
                 params: dict[str, np.ndarray] | None = None):
        self.config = config
        self.dtype = np.dtype(dtype)
        if params is not None:
            self.params = params
        else:
            self.params = self._init_params(seed)

    def _init_params(self, seed: int) -> dict[str, np.ndarray]:
        """He-style fan-in-scaled uniform weights, zero biases.

        The 1x1 head is additionally scaled down so a fresh network
        predicts near-uniform class probabilities (pre-training loss
        within a few hundredths of ln(classes)) while keeping enough
        signal in the paths above it for finite-difference checks.
        """
        cfg = self.config
        key = np.array([seed & ((1 << 64) - 1), _STREAM_PARAMS], dtype=np.uint64)
        rng = np.random.Generator(np.random.Philox(key=key))
        params: dict[str, np.ndarray] = {}

        def add_conv(name, kh, kw, c_in, c_out, scale=1.0):
            limit = scale * np.sqrt(6.0 / (kh * kw * c_in))
            params[name + "_w"] = rng.uniform(-limit, limit, (kh, kw, c_in, c_out)).astype(
                self.dtype
            )
            params[name + "_b"] = np.zeros(c_out, dtype=self.dtype)

        for i in range(cfg.levels):
            c_in = cfg.input_channels if i == 0 else cfg.features(i - 1)
            c_out = cfg.features(i)
            add_conv(f"enc{i}_conv1", 3, 3, c_in, c_out)
            add_conv(f"enc{i}_conv2", 3, 3, c_out, c_out)
        for i in range(cfg.levels - 2, -1, -1):
            c_cat = cfg.features(i + 1) + cfg.features(i)
            c_out = cfg.features(i)
            add_conv(f"dec{i}_conv1", 3, 3, c_cat, c_out)
            add_conv(f"dec{i}_conv2", 3, 3, c_out, c_out)
        add_conv("head", 1, 1, cfg.base_features, cfg.classes, scale=0.05)
        return params

    def cast(self, dtype) -> "Network":
        """Copy of this network with parameters in another float width."""
        params = {k: v.astype(dtype) for k, v in self.params.items()}
        net = Network(self.config, dtype=dtype, params=params)
        return net

    def parameter_count(self) -> int:
        return sum(p.size for p in self.params.values())


def _as_batch(x: np.ndarray, config: NetworkConfig) -> tuple[np.ndarray, int]:
    """Normalise input rank to (n, h, w, c); returns the original rank."""
    arr = np.asarray(x)
    rank = arr.ndim
    if rank == 2:
        arr = arr[np.newaxis, :, :, np.newaxis]
    elif rank == 3:
        arr = arr[np.newaxis, :, :, :]
    elif rank != 4:
        raise ShapeError(f"input must be 2-D, 3-D or 4-D, got shape {arr.shape}")
    if arr.shape[3] != config.input_channels:
        raise ShapeError(
            f"input has {arr.shape[3]} channels, network expects {config.input_channels}"
        )
    return arr, rank


def forward_with_cache(net: Network, x: np.ndarray) -> tuple[np.ndarray, dict]:
    """Full forward pass; returns (probs, cache) for the backward pass.

    x must be (n, h, w, c) with h and w divisible by 2^(levels-1).
    """
    cfg = net.config
    p = net.params
    if x.ndim != 4:
        raise ShapeError(f"forward_with_cache expects a 4-D batch, got {x.shape}")
    h, w = x.shape[1], x.shape[2]
    div = cfg.divisor
    if h % div or w % div:
        raise ShapeError(
            f"spatial extents {h}x{w} must be divisible by {div} "
            f"for a {cfg.levels}-level network"
        )
    x = x.astype(net.dtype, copy=False)

    enc_caches = []
    skips = []
    cur = x
    for i in range(cfg.levels):
        ec: dict = {}
        if i > 0:
            cur, ec["pool_arg"] = maxpool2(cur)
        ec["c1_in"] = cur
        pre1 = conv2d(cur, p[f"enc{i}_conv1_w"], p[f"enc{i}_conv1_b"], pad=1)
        ec["c1_pre"] = pre1
        a1 = relu(pre1)
        ec["c2_in"] = a1
        pre2 = conv2d(a1, p[f"enc{i}_conv2_w"], p[f"enc{i}_conv2_b"], pad=1)
        ec["c2_pre"] = pre2
        cur = relu(pre2)
        ec["out"] = cur
        enc_caches.append(ec)
        skips.append(cur)

    dec_caches = []
    for i in range(cfg.levels - 2, -1, -1):
        dc: dict = {"level": i}
        dc["up_in_shape"] = cur.shape
        up = upsample2(cur)
        dc["pre_pad_shape"] = up.shape
        skip = skips[i]
        up = pad_to(up, skip.shape[1], skip.shape[2])
        dc["up_channels"] = up.shape[3]
        cat = np.concatenate([up, skip], axis=3)
        dc["c1_in"] = cat
        pre1 = conv2d(cat, p[f"dec{i}_conv1_w"], p[f"dec{i}_conv1_b"], pad=1)
        dc["c1_pre"] = pre1
        a1 = relu(pre1)
        dc["c2_in"] = a1
        pre2 = conv2d(a1, p[f"dec{i}_conv2_w"], p[f"dec{i}_conv2_b"], pad=1)
        dc["c2_pre"] = pre2
        cur = relu(pre2)
        dec_caches.append(dc)

    logits = conv2d(cur, p["head_w"], p["head_b"], pad=0)
    probs = softmax(logits)
    cache = {
        "enc": enc_caches,
        "dec": dec_caches,
        "head_in": cur,
        "logits": logits,
        "probs": probs,
    }
    return probs, cache


def forward(net: Network, x: np.ndarray) -> np.ndarray:
    """Per-pixel class probabilities; accepts (h, w), (h, w, c) or batches."""
    batch, rank = _as_batch(x, net.config)
    probs, _ = forward_with_cache(net, batch)
    if rank == 2 or rank == 3:
        return probs[0]
    return probs


def backward(net: Network, cache: dict, dlogits: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients of the loss w.r.t. every parameter, given dloss/dlogits."""
    cfg = net.config
    p = net.params
    grads: dict[str, np.ndarray] = {}

    dcur, grads["head_w"], grads["head_b"] = conv2d_backward(
        dlogits, cache["head_in"], p["head_w"], pad=0
    )

    dskips: list[np.ndarray | None] = [None] * cfg.levels
    # Decoder caches were appended deep-to-shallow; walk them shallow-to-deep.
    for dc in reversed(cache["dec"]):
        i = dc["level"]
        dpre2 = relu_backward(dcur, dc["c2_pre"])
        da1, grads[f"dec{i}_conv2_w"], grads[f"dec{i}_conv2_b"] = conv2d_backward(
            dpre2, dc["c2_in"], p[f"dec{i}_conv2_w"], pad=1
        )
        dpre1 = relu_backward(da1, dc["c1_pre"])
        dcat, grads[f"dec{i}_conv1_w"], grads[f"dec{i}_conv1_b"] = conv2d_backward(
            dpre1, dc["c1_in"], p[f"dec{i}_conv1_w"], pad=1
        )
        c_up = dc["up_channels"]
        dskip = dcat[..., c_up:]
        dskips[i] = dskip if dskips[i] is None else dskips[i] + dskip
        dup = dcat[..., :c_up]
        # undo pad_to, then collapse the 2x2 replica blocks
        _, ph, pw, _ = dc["pre_pad_shape"]
        dup = dup[:, :ph, :pw, :]
        dcur = upsample2_backward(dup)

    # dcur is now the gradient at the deepest encoder output.
    dout_level = dcur
    for i in range(cfg.levels - 1, -1, -1):
        ec = cache["enc"][i]
        total = dout_level
        if dskips[i] is not None:
            total = total + dskips[i]
        dpre2 = relu_backward(total, ec["c2_pre"])
        da1, grads[f"enc{i}_conv2_w"], grads[f"enc{i}_conv2_b"] = conv2d_backward(
            dpre2, ec["c2_in"], p[f"enc{i}_conv2_w"], pad=1
        )
        dpre1 = relu_backward(da1, ec["c1_pre"])
        dc1in, grads[f"enc{i}_conv1_w"], grads[f"enc{i}_conv1_b"] = conv2d_backward(
            dpre1, ec["c1_in"], p[f"enc{i}_conv1_w"], pad=1
        )
        if i > 0:
            dout_level = maxpool2_backward(dc1in, ec["pool_arg"])

    return grads


def loss_for(net: Network, x: np.ndarray, labels: np.ndarray) -> float:
    """Scalar cross-entropy of the network on one batch (no gradients)."""
    probs, _ = forward_with_cache(net, x)
    loss, _ = loss_and_grad(probs, labels)
    return loss
