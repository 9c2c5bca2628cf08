"""Differentiable operations over channel-major float32 tensors.

All sequence ops use the layout [channels, time]. Forward results are
computed eagerly with numpy; when a Graph is active and any input requires a
gradient, a node with a hand-written backward closure is recorded. Backward
closures receive the upstream gradient and return one entry per input (None
for inputs that need no gradient). Scatter accumulation uses np.add.at, which
applies updates sequentially, so repeated indices are deterministic.
"""

from __future__ import annotations

import numpy as np

from ..errors import ShapeError
from .tensor import Graph, Tensor, active_graph

# Keeps sqrt differentiable at zero-length bones without visibly changing
# lengths that matter (1e-6 absolute floor, below float32 resolution at 1.0).
_LENGTH_EPS2 = np.float32(1e-12)


def _finish(out_data: np.ndarray, inputs: tuple, backward, op_name: str) -> Tensor:
    out = Tensor(out_data)
    graph = active_graph()
    if graph is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        graph.record(out, inputs, backward, op_name)
    return out


def _needs(inputs: tuple) -> tuple:
    return tuple(t.requires_grad for t in inputs)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum of two same-shape tensors."""
    if a.data.shape != b.data.shape:
        raise ShapeError(f"add shapes differ: {a.data.shape} vs {b.data.shape}")
    na, nb = _needs((a, b))

    def backward(g):
        return (g if na else None, g if nb else None)

    return _finish(a.data + b.data, (a, b), backward, "add")


def scale(x: Tensor, factor: float) -> Tensor:
    """Multiply by a python scalar (stays float32)."""
    factor = float(factor)

    def backward(g):
        return (g * np.float32(factor),)

    return _finish(x.data * np.float32(factor), (x,), backward, "scale")


def add_bias(x: Tensor, bias: Tensor) -> Tensor:
    """Add a per-channel bias [C] to a [C, T] tensor."""
    if x.data.ndim != 2 or bias.data.shape != (x.data.shape[0],):
        raise ShapeError(
            f"add_bias expects [C, T] and [C], got {x.data.shape} and {bias.data.shape}"
        )
    nx, nb = _needs((x, bias))

    def backward(g):
        return (g if nx else None, g.sum(axis=1) if nb else None)

    return _finish(x.data + bias.data[:, None], (x, bias), backward, "add_bias")


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    """max(v, slope*v) elementwise; slope of 1 is the identity."""
    slope = np.float32(slope)
    positive = x.data >= 0
    out = np.where(positive, x.data, slope * x.data)

    def backward(g):
        return (np.where(positive, g, slope * g),)

    return _finish(out, (x,), backward, "leaky_relu")


def conv1d(x: Tensor, kernel: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlate [C_in, T] with [C_out, C_in, W] into [C_out, T_out].

    T_out = floor((T + 2*padding - W) / stride) + 1. Padding is zeros on both
    ends of the time axis. No kernel flip (machine learning convention).
    """
    if x.data.ndim != 2:
        raise ShapeError(f"conv1d input must be [C_in, T], got {x.data.shape}")
    if kernel.data.ndim != 3:
        raise ShapeError(f"conv1d kernel must be [C_out, C_in, W], got {kernel.data.shape}")
    c_in, t_in = x.data.shape
    c_out, c_k, width = kernel.data.shape
    if c_k != c_in:
        raise ShapeError(
            f"conv1d channel mismatch: input has {c_in} channels, kernel expects {c_k}"
        )
    if stride < 1:
        raise ShapeError(f"conv1d stride must be >= 1, got {stride}")
    if padding < 0:
        raise ShapeError(f"conv1d padding must be >= 0, got {padding}")
    t_pad = t_in + 2 * padding
    if t_pad < width:
        raise ShapeError(
            f"conv1d window {width} exceeds padded length {t_pad}"
        )
    t_out = (t_pad - width) // stride + 1

    padded = np.pad(x.data, ((0, 0), (padding, padding))) if padding else x.data
    windows = np.lib.stride_tricks.sliding_window_view(padded, width, axis=1)
    windows = windows[:, ::stride][:, :t_out]              # [C_in, T_out, W]
    patches = windows.transpose(1, 0, 2).reshape(t_out, c_in * width)
    k2 = kernel.data.reshape(c_out, c_in * width)
    out = np.ascontiguousarray((patches @ k2.T).T)
    nx, nk = _needs((x, kernel))

    def backward(g):
        dx = None
        if nx:
            dpat = g.T @ k2                                 # [T_out, C_in*W]
            dpat = dpat.reshape(t_out, c_in, width)
            dxp = np.zeros((c_in, t_pad), dtype=np.float32)
            for w in range(width):
                dxp[:, w : w + stride * t_out : stride] += dpat[:, :, w].T
            dx = dxp[:, padding : t_pad - padding] if padding else dxp
        dk = (g @ patches).reshape(c_out, c_in, width) if nk else None
        return (dx, dk)

    return _finish(out, (x, kernel), backward, "conv1d")


def resample_time(x: Tensor, out_len: int) -> Tensor:
    """Linearly resample [C, T] to [C, out_len] with aligned endpoints.

    Output column j samples input position j*(T-1)/(out_len-1); when the
    lengths match the result is an exact copy. A single-column input is
    broadcast.
    """
    if x.data.ndim != 2:
        raise ShapeError(f"resample_time input must be [C, T], got {x.data.shape}")
    if out_len < 1:
        raise ShapeError(f"resample_time needs out_len >= 1, got {out_len}")
    c, t_in = x.data.shape
    if t_in == out_len:
        def backward_id(g):
            return (g,)
        return _finish(x.data.copy(), (x,), backward_id, "resample_time")

    if t_in == 1:
        out = np.repeat(x.data, out_len, axis=1)

        def backward_b(g):
            return (g.sum(axis=1, keepdims=True),)

        return _finish(out, (x,), backward_b, "resample_time")

    if out_len == 1:
        pos = np.zeros(1)
    else:
        pos = np.arange(out_len) * ((t_in - 1) / (out_len - 1))
    lo = np.minimum(np.floor(pos).astype(np.int64), t_in - 2)
    frac = (pos - lo).astype(np.float32)
    hi = lo + 1
    out = x.data[:, lo] * (1 - frac) + x.data[:, hi] * frac

    def backward(g):
        dx = np.zeros((c, t_in), dtype=np.float32)
        np.add.at(dx, (slice(None), lo), g * (1 - frac))
        np.add.at(dx, (slice(None), hi), g * frac)
        return (dx,)

    return _finish(out, (x,), backward, "resample_time")


def concat_rows(a: Tensor, b: Tensor) -> Tensor:
    """Stack two [C, T] tensors along the channel axis."""
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[1]:
        raise ShapeError(
            f"concat_rows needs matching time lengths, got {a.data.shape} and {b.data.shape}"
        )
    c_a = a.data.shape[0]
    na, nb = _needs((a, b))

    def backward(g):
        return (g[:c_a] if na else None, g[c_a:] if nb else None)

    return _finish(np.concatenate([a.data, b.data], axis=0), (a, b), backward, "concat_rows")


def mean_time(x: Tensor) -> Tensor:
    """Average [C, T] over time into [C, 1]."""
    if x.data.ndim != 2 or x.data.shape[1] < 1:
        raise ShapeError(f"mean_time input must be [C, T>=1], got {x.data.shape}")
    t_in = x.data.shape[1]

    def backward(g):
        return (np.broadcast_to(g / np.float32(t_in), x.data.shape).copy(),)

    return _finish(x.data.mean(axis=1, keepdims=True), (x,), backward, "mean_time")


def time_diff(x: Tensor) -> Tensor:
    """Consecutive-column differences: out[:, t] = x[:, t+1] - x[:, t]."""
    if x.data.ndim != 2 or x.data.shape[1] < 2:
        raise ShapeError(f"time_diff input must be [C, T>=2], got {x.data.shape}")

    def backward(g):
        dx = np.zeros_like(x.data)
        dx[:, 1:] += g
        dx[:, :-1] -= g
        return (dx,)

    return _finish(x.data[:, 1:] - x.data[:, :-1], (x,), backward, "time_diff")


def bone_lengths_t(x: Tensor, parents: np.ndarray, children: np.ndarray) -> Tensor:
    """Per-frame bone lengths of a flattened pose tensor.

    Args:
        x: [K*3, T] tensor; row k*3+c holds coordinate c of keypoint k.
        parents, children: int arrays [B] indexing keypoints per bone.

    Returns:
        [B, T] tensor of Euclidean segment lengths.
    """
    if x.data.ndim != 2 or x.data.shape[0] % 3 != 0:
        raise ShapeError(f"bone_lengths_t input must be [K*3, T], got {x.data.shape}")
    k = x.data.shape[0] // 3
    parents = np.asarray(parents, dtype=np.int64)
    children = np.asarray(children, dtype=np.int64)
    if parents.shape != children.shape or parents.ndim != 1:
        raise ShapeError("bone index arrays must be 1-D and the same length")
    if parents.size and (parents.max() >= k or children.max() >= k):
        raise ShapeError(f"bone index out of range for {k} keypoints")
    points = x.data.reshape(k, 3, -1)
    delta = points[children] - points[parents]             # [B, 3, T]
    out = np.sqrt((delta * delta).sum(axis=1) + _LENGTH_EPS2)

    def backward(g):
        scaled = delta * (g / out)[:, None, :]
        dpoints = np.zeros_like(points)
        np.add.at(dpoints, children, scaled)
        np.add.at(dpoints, parents, -scaled)
        return (dpoints.reshape(x.data.shape),)

    return _finish(out, (x,), backward, "bone_lengths_t")


def l1_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean absolute difference, reduced to a scalar."""
    if pred.data.shape != target.data.shape:
        raise ShapeError(
            f"l1_loss shapes differ: {pred.data.shape} vs {target.data.shape}"
        )
    if pred.data.size == 0:
        raise ShapeError("l1_loss on an empty tensor")
    diff = pred.data - target.data
    n = np.float32(diff.size)
    np_, nt = _needs((pred, target))

    def backward(g):
        signs = np.sign(diff) * (g / n)
        return (signs if np_ else None, -signs if nt else None)

    return _finish(np.abs(diff).mean(dtype=np.float32), (pred, target), backward, "l1_loss")


def bce_with_logits(logits: Tensor, labels: Tensor) -> Tensor:
    """Numerically stable binary cross entropy from raw logits, mean-reduced.

    Uses max(x, 0) - x*y + log(1 + exp(-|x|)), which stays finite for any
    float32 logit magnitude.
    """
    if logits.data.shape != labels.data.shape:
        raise ShapeError(
            f"bce_with_logits shapes differ: {logits.data.shape} vs {labels.data.shape}"
        )
    if logits.data.size == 0:
        raise ShapeError("bce_with_logits on an empty tensor")
    x = logits.data
    y = labels.data
    per_elem = np.maximum(x, 0) - x * y + np.log1p(np.exp(-np.abs(x)))
    n = np.float32(x.size)
    nx, ny = _needs((logits, labels))

    def backward(g):
        sig = np.where(
            x >= 0,
            1.0 / (1.0 + np.exp(-np.abs(x))),
            np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))),
        ).astype(np.float32)
        dx = (sig - y) * (g / n) if nx else None
        dy = -x * (g / n) if ny else None
        return (dx, dy)

    return _finish(per_elem.mean(dtype=np.float32), (logits, labels), backward, "bce_with_logits")
