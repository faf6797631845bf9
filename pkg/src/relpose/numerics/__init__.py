"""Minimal tensor kernel: reverse-mode autodiff, network layers, AdamW, checkpoints."""
from .checkpoint import load_checkpoint, save_checkpoint
from .layers import (
    BN_EPS,
    BN_MOMENTUM,
    LEAKY_SLOPE,
    LayerParams,
    batch_norm,
    conv1d,
    dense,
    dropout,
    init_batchnorm,
    init_conv,
    init_dense,
    leaky_relu,
    mpjpe_loss,
)
from .optim import LR_DECAY, OptimizerState, adamw_step, decay_lr
from .tensor import Tensor, as_tensor, backward, concat, narrow, reshape, take, transpose

__all__ = [
    "BN_EPS",
    "BN_MOMENTUM",
    "LEAKY_SLOPE",
    "LR_DECAY",
    "LayerParams",
    "OptimizerState",
    "Tensor",
    "adamw_step",
    "as_tensor",
    "backward",
    "batch_norm",
    "concat",
    "conv1d",
    "decay_lr",
    "dense",
    "dropout",
    "init_batchnorm",
    "init_conv",
    "init_dense",
    "leaky_relu",
    "load_checkpoint",
    "mpjpe_loss",
    "narrow",
    "reshape",
    "save_checkpoint",
    "take",
    "transpose",
]
