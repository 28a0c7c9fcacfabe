"""From-scratch dense tensor kernels and the segmentation network.

Everything here is plain numpy: forward kernels, hand-derived backward
passes, the encoder/decoder model, optimizers, checkpoint I/O, and a
finite-difference gradient checker. No autograd framework is involved.
"""

from .ops import (
    conv2d,
    conv2d_backward,
    maxpool2,
    maxpool2_backward,
    upsample2,
    upsample2_backward,
    pad_to,
    crop_to,
    relu,
    relu_backward,
    softmax,
    loss_and_grad,
)
from .model import Network, NetworkConfig, forward, forward_with_cache, backward
from .optim import OptimizerState, init_optimizer, apply_gradients, train_step
from .checkpoint import save_checkpoint, load_checkpoint
from .gradcheck import gradient_check

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
    "Network",
    "NetworkConfig",
    "forward",
    "forward_with_cache",
    "backward",
    "OptimizerState",
    "init_optimizer",
    "apply_gradients",
    "train_step",
    "save_checkpoint",
    "load_checkpoint",
    "gradient_check",
]
