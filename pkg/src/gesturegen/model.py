"""Speech-to-pose network and its adversarial losses.

The generator is a 1-D convolutional encoder-decoder over the feature time
axis. Four stride-2 stages halve the 198-frame input repeatedly, a
bottleneck convolution mixes the deepest features, and the decoder walks
back up by linear time-resampling, concatenating the matching encoder level
(skip connections carry low-level prosody), and convolving. A width-1
projection produces one channel per pose coordinate and the head resamples
the result to the 30 output frames of a two-second chunk.

The discriminator judges motion, not poses: it consumes frame-to-frame
deltas, applies a stride-2 convolution stack, average-pools over time, and
projects to a single real/fake logit.

Losses: the generator minimizes mean L1 pose error plus lambda_bone times
the mean L1 change of consecutive-frame bone lengths of its own output,
plus the adversarial term. The discriminator minimizes binary cross entropy
pushing real motion toward 1 and generated motion toward 0; the negated
discriminator loss is the value of the adversarial minimax objective.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .audio import FeatureSequence
from .errors import ShapeError
from .numeric import (
    Graph,
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
from .pose import MotionSequence, PoseSequence, SkeletonTopology, upper_body_skeleton


def validate_lambda_bone(value: float) -> float:
    """Bone-length smoothness weight: a fraction of the L1 term.

    Zero is allowed so ablation runs can switch the term off entirely.
    """
    value = float(value)
    if not 0.0 <= value < 1.0:
        raise ValueError(f"lambda_bone must be in [0, 1), got {value}")
    return value


@dataclass(frozen=True)
class GeneratorConfig:
    bands: int = 64
    frames: int = 198
    widths: tuple = (64, 128, 256, 512)
    kernel: int = 3
    out_frames: int = 30
    keypoints: int = 49
    slope: float = 0.2
    feature_log_floor: float = 1e-10

    def __post_init__(self):
        if not self.widths:
            raise ValueError("generator needs at least one encoder stage")
        if self.kernel % 2 != 1 or self.kernel < 1:
            raise ValueError(f"kernel width must be odd, got {self.kernel}")
        if self.out_frames < 2 or self.keypoints < 2:
            raise ValueError("out_frames and keypoints must each be at least 2")


@dataclass(frozen=True)
class DiscriminatorConfig:
    keypoints: int = 49
    widths: tuple = (64, 128, 256)
    kernel: int = 3
    slope: float = 0.2

    def __post_init__(self):
        if not self.widths:
            raise ValueError("discriminator needs at least one stage")
        if self.kernel % 2 != 1 or self.kernel < 1:
            raise ValueError(f"kernel width must be odd, got {self.kernel}")


def generator_layout(config: GeneratorConfig) -> list[tuple[str, tuple, int]]:
    """(name, shape, fan_in) for every generator parameter, in init order."""
    k = config.kernel
    n = len(config.widths)
    layout = []
    prev = config.bands
    for i, width in enumerate(config.widths):
        layout.append((f"enc{i}.w", (width, prev, k), prev * k))
        layout.append((f"enc{i}.b", (width,), prev * k))
        prev = width
    deep = config.widths[-1]
    layout.append(("mid.w", (deep, deep, k), deep * k))
    layout.append(("mid.b", (deep,), deep * k))
    for j in reversed(range(n)):
        skip = config.bands if j == 0 else config.widths[j - 1]
        out = config.widths[0] if j == 0 else config.widths[j - 1]
        cin = config.widths[j] + skip
        layout.append((f"dec{j}.w", (out, cin, k), cin * k))
        layout.append((f"dec{j}.b", (out,), cin * k))
    head_in = config.widths[0]
    layout.append(("head.w", (config.keypoints * 3, head_in, 1), head_in))
    layout.append(("head.b", (config.keypoints * 3,), head_in))
    return layout


def discriminator_layout(config: DiscriminatorConfig) -> list[tuple[str, tuple, int]]:
    k = config.kernel
    layout = []
    prev = config.keypoints * 3
    for i, width in enumerate(config.widths):
        layout.append((f"conv{i}.w", (width, prev, k), prev * k))
        layout.append((f"conv{i}.b", (width,), prev * k))
        prev = width
    layout.append(("head.w", (1, prev, 1), prev))
    layout.append(("head.b", (1,), prev))
    return layout


def _init_named(layout, rng) -> dict[str, Tensor]:
    named = {}
    for name, shape, fan_in in layout:
        bound = 1.0 / math.sqrt(fan_in)
        data = rng.uniform(-bound, bound, size=shape).astype(np.float32)
        named[name] = Tensor(data, requires_grad=True, name=name)
    return named


class GeneratorParams:
    """Learnable generator weights keyed by layer name."""

    def __init__(self, config: GeneratorConfig, named: dict):
        self.config = config
        expected = {name: shape for name, shape, _ in generator_layout(config)}
        if set(named) != set(expected):
            raise ShapeError("generator parameter names do not match the layout")
        for name, tensor in named.items():
            if tensor.data.shape != expected[name]:
                raise ShapeError(
                    f"generator parameter {name}: shape {tensor.data.shape}, "
                    f"expected {expected[name]}"
                )
        self.named = {name: named[name] for name, _, _ in generator_layout(config)}

    @classmethod
    def init(cls, config: GeneratorConfig, rng) -> "GeneratorParams":
        return cls(config, _init_named(generator_layout(config), rng))

    def tensors(self) -> list:
        return list(self.named.values())


class DiscriminatorParams:
    """Learnable discriminator weights keyed by layer name."""

    def __init__(self, config: DiscriminatorConfig, named: dict):
        self.config = config
        expected = {name: shape for name, shape, _ in discriminator_layout(config)}
        if set(named) != set(expected):
            raise ShapeError("discriminator parameter names do not match the layout")
        for name, tensor in named.items():
            if tensor.data.shape != expected[name]:
                raise ShapeError(
                    f"discriminator parameter {name}: shape {tensor.data.shape}, "
                    f"expected {expected[name]}"
                )
        self.named = {name: named[name] for name, _, _ in discriminator_layout(config)}

    @classmethod
    def init(cls, config: DiscriminatorConfig, rng) -> "DiscriminatorParams":
        return cls(config, _init_named(discriminator_layout(config), rng))

    def tensors(self) -> list:
        return list(self.named.values())


@dataclass
class GanParams:
    """All learnable weights of the generator/discriminator pair."""

    gen: GeneratorParams
    disc: DiscriminatorParams


def init_gan_params(gen_config: GeneratorConfig, disc_config: DiscriminatorConfig,
                    seed: int) -> GanParams:
    """Draw both parameter sets from one seeded generator, generator first."""
    rng = np.random.default_rng(seed)
    return GanParams(
        gen=GeneratorParams.init(gen_config, rng),
        disc=DiscriminatorParams.init(disc_config, rng),
    )


# ---------------------------------------------------------------- forward passes


def normalize_features(data: np.ndarray, log_floor: float = 1e-10) -> np.ndarray:
    """Affine rescale of log-mel values so silence is 0 and 0 dB energy is 1."""
    floor_log = math.log(log_floor)
    return ((np.asarray(data, dtype=np.float32) - np.float32(floor_log))
            / np.float32(-floor_log)).astype(np.float32)


def rows_from_frames(frames: np.ndarray) -> np.ndarray:
    """[T, K, 3] -> [K*3, T]; row k*3+c is coordinate c of keypoint k."""
    frames = np.asarray(frames, dtype=np.float32)
    t, k, _ = frames.shape
    return np.ascontiguousarray(frames.transpose(1, 2, 0).reshape(k * 3, t))


def frames_from_rows(rows: np.ndarray) -> np.ndarray:
    """[K*3, T] -> [T, K, 3], inverse of rows_from_frames."""
    rows = np.asarray(rows, dtype=np.float32)
    k3, t = rows.shape
    return np.ascontiguousarray(rows.reshape(k3 // 3, 3, t).transpose(2, 0, 1))


def generator_forward(params: GeneratorParams, features) -> Tensor:
    """Map one feature chunk to pose rows [keypoints*3, out_frames].

    features may be a FeatureSequence or a raw [frames, bands] array; its
    shape must match the config exactly.
    """
    cfg = params.config
    data = features.data if isinstance(features, FeatureSequence) else np.asarray(features)
    if data.shape != (cfg.frames, cfg.bands):
        raise ShapeError(
            f"features shape {data.shape}, generator expects ({cfg.frames}, {cfg.bands})"
        )
    pad = cfg.kernel // 2
    named = params.named
    x = Tensor(normalize_features(data, cfg.feature_log_floor).T)
    levels = [x]
    for i in range(len(cfg.widths)):
        x = conv1d(x, named[f"enc{i}.w"], stride=2, padding=pad)
        x = leaky_relu(add_bias(x, named[f"enc{i}.b"]), cfg.slope)
        levels.append(x)
    x = conv1d(x, named["mid.w"], stride=1, padding=pad)
    x = leaky_relu(add_bias(x, named["mid.b"]), cfg.slope)
    for j in reversed(range(len(cfg.widths))):
        skip = levels[j]
        up = resample_time(x, skip.data.shape[1])
        x = conv1d(concat_rows(up, skip), named[f"dec{j}.w"], stride=1, padding=pad)
        x = leaky_relu(add_bias(x, named[f"dec{j}.b"]), cfg.slope)
    out = add_bias(conv1d(x, named["head.w"]), named["head.b"])
    return resample_time(out, cfg.out_frames)


def predict_pose(params: GeneratorParams, features, fps: float = 15.0,
                 skeleton: SkeletonTopology | None = None) -> PoseSequence:
    """Inference convenience: forward without recording, as a PoseSequence."""
    out = generator_forward(params, features)
    return PoseSequence(
        frames=frames_from_rows(out.data),
        fps=fps,
        skeleton=skeleton if skeleton is not None else upper_body_skeleton(),
    )


def discriminator_forward(params: DiscriminatorParams, deltas) -> Tensor:
    """Score a motion-delta sequence; returns a [1, 1] logit tensor.

    deltas may be a MotionSequence, a [T-1, K, 3] array, or a [K*3, T-1]
    tensor already in row layout (the training path).
    """
    cfg = params.config
    if isinstance(deltas, MotionSequence):
        x = Tensor(rows_from_frames(deltas.deltas))
    elif isinstance(deltas, Tensor):
        x = deltas
    else:
        arr = np.asarray(deltas, dtype=np.float32)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ShapeError(f"deltas must be [T-1, K, 3], got {arr.shape}")
        x = Tensor(rows_from_frames(arr))
    if x.data.shape[0] != cfg.keypoints * 3:
        raise ShapeError(
            f"deltas have {x.data.shape[0]} rows, discriminator expects {cfg.keypoints * 3}"
        )
    if x.data.shape[1] < 1:
        raise ShapeError("discriminator needs at least one motion delta")
    pad = cfg.kernel // 2
    named = params.named
    for i in range(len(cfg.widths)):
        x = conv1d(x, named[f"conv{i}.w"], stride=2, padding=pad)
        x = leaky_relu(add_bias(x, named[f"conv{i}.b"]), cfg.slope)
    pooled = mean_time(x)
    return add_bias(conv1d(pooled, named["head.w"]), named["head.b"])


# ---------------------------------------------------------------- losses


def generator_loss_terms(pred_rows: Tensor, target_rows: Tensor,
                         skeleton: SkeletonTopology) -> tuple[Tensor, Tensor]:
    """(L1 pose term, bone smoothness term) as graph tensors.

    The bone term is the mean absolute change of the prediction's own bone
    lengths between consecutive frames; a frame-constant skeleton gives 0.
    """
    parents, children = skeleton.parents_children()
    l1 = l1_loss(pred_rows, target_rows)
    lengths = bone_lengths_t(pred_rows, parents, children)
    steps = time_diff(lengths)
    bone = l1_loss(steps, Tensor(np.zeros(steps.data.shape, dtype=np.float32)))
    return l1, bone


def generator_loss(pred: PoseSequence, gt: PoseSequence, lambda_bone: float = 0.5) -> float:
    """Reconstruction objective: mean L1 error + lambda_bone * bone term."""
    lambda_bone = validate_lambda_bone(lambda_bone)
    if pred.frames.shape != gt.frames.shape:
        raise ShapeError(
            f"pred {pred.frames.shape} and gt {gt.frames.shape} shapes differ"
        )
    pred_rows = Tensor(rows_from_frames(pred.frames))
    target_rows = Tensor(rows_from_frames(gt.frames))
    l1, bone = generator_loss_terms(pred_rows, target_rows, pred.skeleton)
    return float(add(l1, scale(bone, lambda_bone)).item())


class GanLossValues(NamedTuple):
    d_loss: float
    g_adv: float


def gan_losses(real: MotionSequence, fake: MotionSequence,
               disc: DiscriminatorParams) -> GanLossValues:
    """Adversarial losses for one real/generated motion pair.

    d_loss = bce(D(real), 1) + bce(D(fake), 0); the discriminator ascends
    the minimax objective by minimizing this, and -d_loss is the objective's
    value. g_adv = bce(D(fake), 1) is the generator's fooling loss.
    """
    real_logit = discriminator_forward(disc, real)
    fake_logit = discriminator_forward(disc, fake)
    one = Tensor(np.ones((1, 1), dtype=np.float32))
    zero = Tensor(np.zeros((1, 1), dtype=np.float32))
    d_loss = add(bce_with_logits(real_logit, one), bce_with_logits(fake_logit, zero))
    g_adv = bce_with_logits(fake_logit, one)
    return GanLossValues(d_loss=float(d_loss.item()), g_adv=float(g_adv.item()))
