"""From-scratch differentiable tensor core used by the fusion models."""

from .checkpoint import load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint
from .gradcheck import grad_check
from .ops import (
    BNState,
    add,
    avgpool,
    batch_norm,
    bilinear_kernel,
    channel_shuffle,
    concat_channels,
    conv2d,
    crop_hw,
    maxpool,
    relu,
    transposed_conv2d,
    weighted_cross_entropy,
)
from .optim import Adam, Param
from .tensor import Tensor, grad_enabled, no_grad, result, tensor

__all__ = [
    "Adam",
    "BNState",
    "Param",
    "Tensor",
    "add",
    "avgpool",
    "batch_norm",
    "bilinear_kernel",
    "channel_shuffle",
    "concat_channels",
    "conv2d",
    "crop_hw",
    "grad_check",
    "grad_enabled",
    "load_checkpoint",
    "maxpool",
    "no_grad",
    "read_checkpoint",
    "relu",
    "result",
    "save_checkpoint",
    "tensor",
    "transposed_conv2d",
    "weighted_cross_entropy",
    "write_checkpoint",
]
