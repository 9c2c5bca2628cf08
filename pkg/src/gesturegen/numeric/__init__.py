"""Float32 reverse-mode autodiff kernel: tensors, tape, ops, optimizer."""

from .optim import MomentumSGD
from .ops import (
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
from .tensor import Gradients, Graph, Tensor, active_graph

__all__ = [
    "Gradients",
    "Graph",
    "MomentumSGD",
    "Tensor",
    "active_graph",
    "add",
    "add_bias",
    "bce_with_logits",
    "bone_lengths_t",
    "concat_rows",
    "conv1d",
    "l1_loss",
    "leaky_relu",
    "mean_time",
    "resample_time",
    "scale",
    "time_diff",
]
