"""Keypoints to skeletal animation: rotations, constraints, smoothing.

Predicted keypoints carry positions only; renderers want joint rotations
on a skeleton whose bone lengths never change. Each bone gets the shortest
rotation taking its rest direction to the observed direction, expressed in
its parent bone's frame; the roll left undefined by that swing is pinned
for the upper arms by aiming the forearm at the observed wrist (a one-link
IK step). The clip stores bone lengths once, in the rest offsets, so
forward kinematics reproduces them identically in every frame.

Quaternions are (w, x, y, z), unit norm, w kept non-negative.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import GestureGenError, ShapeError
from .pose import PoseSequence, SkeletonTopology, upper_body_rest_pose, upper_body_skeleton


class AnimationError(GestureGenError):
    """A clip or retargeting input is malformed."""


# ---------------------------------------------------------------- quaternions


def quat_normalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    norm = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(norm < 1e-12):
        raise AnimationError("cannot normalize a zero quaternion")
    return q / norm


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product; composition a*b applies b first, then a."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    aw, ax, ay, az = np.moveaxis(a, -1, 0)
    bw, bx, by, bz = np.moveaxis(b, -1, 0)
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def quat_conjugate(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def quat_rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate vectors [..., 3] by unit quaternions [..., 4]."""
    q = np.asarray(q, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    w = q[..., :1]
    u = q[..., 1:]
    cross1 = np.cross(u, v) + w * v
    return v + 2.0 * np.cross(u, cross1)


def quat_from_axis_angle(axis: np.ndarray, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=np.float64)
    norm = np.linalg.norm(axis)
    if norm < 1e-12:
        raise AnimationError("rotation axis must be nonzero")
    half = 0.5 * float(angle)
    return np.concatenate([[math.cos(half)], math.sin(half) * axis / norm])


def quat_between(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Shortest-arc rotation taking unit vector u to unit vector v."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    d = float(np.dot(u, v))
    if d > 1.0 - 1e-12:
        return np.array([1.0, 0.0, 0.0, 0.0])
    if d < -1.0 + 1e-12:
        # 180 degrees: any axis perpendicular to u works; build one
        pick = np.zeros(3)
        pick[int(np.argmin(np.abs(u)))] = 1.0
        axis = np.cross(u, pick)
        return quat_from_axis_angle(axis, math.pi)
    axis = np.cross(u, v)
    q = np.concatenate([[1.0 + d], axis])
    return quat_normalize(q)


def quat_canonical(q: np.ndarray) -> np.ndarray:
    """Flip signs so w >= 0; q and -q are the same rotation."""
    q = np.asarray(q, dtype=np.float64)
    flip = np.where(q[..., :1] < 0.0, -1.0, 1.0)
    return q * flip


def quat_angle(q: np.ndarray) -> np.ndarray:
    """Rotation angle in radians, in [0, pi]."""
    q = np.asarray(q, dtype=np.float64)
    w = np.clip(np.abs(q[..., 0]) / np.linalg.norm(q, axis=-1), -1.0, 1.0)
    return 2.0 * np.arccos(w)


def _scipy_rotation(q_wxyz: np.ndarray) -> Rotation:
    q = np.asarray(q_wxyz, dtype=np.float64)
    return Rotation.from_quat(np.concatenate([q[..., 1:], q[..., :1]], axis=-1))


def quat_to_euler(q_wxyz: np.ndarray, order: str) -> np.ndarray:
    """Intrinsic Euler angles in degrees for the given axis order."""
    return _scipy_rotation(q_wxyz).as_euler(order, degrees=True)


def euler_to_quat(angles_deg: np.ndarray, order: str) -> np.ndarray:
    xyzw = Rotation.from_euler(order, angles_deg, degrees=True).as_quat()
    xyzw = np.asarray(xyzw, dtype=np.float64)
    return quat_canonical(np.concatenate([xyzw[..., 3:], xyzw[..., :3]], axis=-1))


# ---------------------------------------------------------------- clip type


@dataclass
class AnimationClip:
    """Per-bone rotation tracks over a fixed skeleton.

    rotations[t, b] is the local rotation of bone b in its parent bone's
    frame; rest_offsets[b] is the parent-to-child vector at rest, the only
    place bone lengths are stored.
    """

    skeleton: SkeletonTopology
    rest_offsets: np.ndarray
    rotations: np.ndarray
    root_positions: np.ndarray
    fps: float

    def __post_init__(self):
        n_bones = len(self.skeleton.bones)
        self.rest_offsets = np.ascontiguousarray(self.rest_offsets, dtype=np.float64)
        self.rotations = np.ascontiguousarray(self.rotations, dtype=np.float64)
        self.root_positions = np.ascontiguousarray(self.root_positions, dtype=np.float64)
        if self.rest_offsets.shape != (n_bones, 3):
            raise ShapeError(
                f"rest_offsets {self.rest_offsets.shape}, expected ({n_bones}, 3)"
            )
        if self.rotations.ndim != 3 or self.rotations.shape[1:] != (n_bones, 4):
            raise ShapeError(
                f"rotations {self.rotations.shape}, expected (T, {n_bones}, 4)"
            )
        if self.root_positions.shape != (self.rotations.shape[0], 3):
            raise ShapeError(
                f"root_positions {self.root_positions.shape} does not match "
                f"{self.rotations.shape[0]} frames"
            )
        if self.fps <= 0:
            raise ShapeError(f"fps must be positive, got {self.fps}")
        norms = np.linalg.norm(self.rotations, axis=-1)
        if np.any(np.abs(norms - 1.0) > 1e-5):
            raise AnimationError("clip quaternions must be unit norm within 1e-5")

    def __len__(self) -> int:
        return self.rotations.shape[0]

    @property
    def bone_lengths(self) -> np.ndarray:
        return np.linalg.norm(self.rest_offsets, axis=1)


def _parent_bone_table(skeleton: SkeletonTopology) -> np.ndarray:
    """For each bone, the index of the bone ending at its parent, or -1."""
    bone_ending_at = {c: i for i, (_, c) in enumerate(skeleton.bones)}
    return np.array(
        [bone_ending_at.get(p, -1) for p, _ in skeleton.bones], dtype=np.int64
    )


def _twist_references(skeleton: SkeletonTopology) -> dict:
    """bone index -> keypoint whose position pins the roll of that bone.

    Upper arms get their roll from the wrist: after the swing places the
    elbow, the rotation about the upper-arm axis is chosen so the forearm
    plane faces the observed wrist.
    """
    refs = {}
    names = set(skeleton.keypoint_names)
    for side in ("l", "r"):
        needed = {f"{side}_shoulder", f"{side}_elbow", f"{side}_wrist"}
        if needed <= names:
            s = skeleton.index_of(f"{side}_shoulder")
            e = skeleton.index_of(f"{side}_elbow")
            w = skeleton.index_of(f"{side}_wrist")
            for b, (p, c) in enumerate(skeleton.bones):
                if (p, c) == (s, e):
                    refs[b] = w
    return refs


def keypoints_to_rotations(seq: PoseSequence, skeleton: SkeletonTopology | None = None,
                           rest_pose: np.ndarray | None = None) -> AnimationClip:
    """Solve per-bone rotations that reproduce the observed bone directions.

    Swing-only per bone; upper-arm roll recovered from the wrist. A frame
    where a bone observes zero length keeps the previous frame's rotation
    (identity on the first frame), so degenerate predictions never halt a
    running stream.
    """
    skeleton = skeleton or seq.skeleton
    rest = np.asarray(
        upper_body_rest_pose() if rest_pose is None else rest_pose, dtype=np.float64
    )
    if rest.shape != (skeleton.n_keypoints, 3):
        raise ShapeError(
            f"rest pose {rest.shape}, expected ({skeleton.n_keypoints}, 3)"
        )
    bones = skeleton.bones
    n_bones = len(bones)
    rest_offsets = np.stack([rest[c] - rest[p] for p, c in bones])
    rest_lengths = np.linalg.norm(rest_offsets, axis=1)
    if np.any(rest_lengths < 1e-9):
        raise AnimationError("rest pose contains a zero-length bone")
    rest_dirs = rest_offsets / rest_lengths[:, None]
    parent_bone = _parent_bone_table(skeleton)
    twist_refs = _twist_references(skeleton)

    obs = seq.frames.astype(np.float64)
    n_frames = obs.shape[0]
    identity = np.array([1.0, 0.0, 0.0, 0.0])
    local = np.tile(identity, (n_frames, n_bones, 1))
    prev_local = np.tile(identity, (n_bones, 1))
    world = np.empty((n_bones, 4))

    for t in range(n_frames):
        for b, (p, c) in enumerate(bones):
            parent_q = identity if parent_bone[b] < 0 else world[parent_bone[b]]
            d = obs[t, c] - obs[t, p]
            length = np.linalg.norm(d)
            if length < 1e-6:
                q_local = prev_local[b]
                world[b] = quat_multiply(parent_q, q_local)
            else:
                carried = quat_rotate(parent_q, rest_dirs[b])
                swing = quat_between(carried, d / length)
                world_b = quat_multiply(swing, parent_q)
                ref = twist_refs.get(b)
                if ref is not None:
                    world_b = _recover_roll(world_b, d / length, obs[t, ref] - obs[t, c],
                                            rest, bones, b, ref)
                world[b] = world_b
                q_local = quat_canonical(quat_multiply(quat_conjugate(parent_q), world_b))
                prev_local[b] = q_local
            local[t, b] = q_local

    return AnimationClip(
        skeleton=skeleton,
        rest_offsets=rest_offsets,
        rotations=local,
        root_positions=obs[:, skeleton.root_index],
        fps=seq.fps,
    )


def _recover_roll(world_b: np.ndarray, bone_dir: np.ndarray, toward_ref: np.ndarray,
                  rest: np.ndarray, bones, b: int, ref: int) -> np.ndarray:
    """Twist world_b about the bone axis so the next link aims at the target."""
    child = bones[b][1]
    next_rest = rest[ref] - rest[child]
    pointed = quat_rotate(world_b, next_rest)
    a = pointed - np.dot(pointed, bone_dir) * bone_dir
    o = toward_ref - np.dot(toward_ref, bone_dir) * bone_dir
    if np.linalg.norm(a) < 1e-9 or np.linalg.norm(o) < 1e-9:
        return world_b
    angle = math.atan2(float(np.dot(bone_dir, np.cross(a, o))), float(np.dot(a, o)))
    return quat_multiply(quat_from_axis_angle(bone_dir, angle), world_b)


def fk(clip: AnimationClip) -> np.ndarray:
    """[T, K, 3] float64 keypoints of the clip; lengths come from rest only."""
    skeleton = clip.skeleton
    bones = skeleton.bones
    parent_bone = _parent_bone_table(skeleton)
    n_frames = len(clip)
    positions = np.zeros((n_frames, skeleton.n_keypoints, 3))
    positions[:, skeleton.root_index] = clip.root_positions
    identity = np.array([1.0, 0.0, 0.0, 0.0])
    for t in range(n_frames):
        world = np.empty((len(bones), 4))
        for b, (p, c) in enumerate(bones):
            parent_q = identity if parent_bone[b] < 0 else world[parent_bone[b]]
            world[b] = quat_multiply(parent_q, clip.rotations[t, b])
            positions[t, c] = positions[t, p] + quat_rotate(world[b], clip.rest_offsets[b])
    return positions


# ---------------------------------------------------------------- constraints


@dataclass(frozen=True)
class JointLimits:
    """Per-joint Euler ranges: joint name -> (axis order, three (lo, hi)).

    The order is chosen per joint class so the widest range sits on the
    first axis (the middle angle of an intrinsic decomposition only spans
    +-90 degrees).
    """

    ranges: dict

    def __post_init__(self):
        for joint, (order, bounds) in self.ranges.items():
            if sorted(order) != ["X", "Y", "Z"]:
                raise AnimationError(f"{joint}: order {order!r} is not an XYZ permutation")
            if len(bounds) != 3:
                raise AnimationError(f"{joint}: need three (lo, hi) pairs")
            for axis, (lo, hi) in zip(order, bounds):
                if lo > hi:
                    raise AnimationError(f"{joint} axis {axis}: min {lo} > max {hi}")
            mid_lo, mid_hi = bounds[1]
            if mid_lo < -90.0 or mid_hi > 90.0:
                raise AnimationError(
                    f"{joint}: middle-axis range [{mid_lo}, {mid_hi}] exceeds +-90"
                )


def default_joint_limits() -> JointLimits:
    """Plausibility ranges for the upper-body skeleton, in degrees."""
    shoulders = ("ZXY", ((-120.0, 120.0), (-90.0, 90.0), (-180.0, 180.0)))
    elbows = ("XZY", ((0.0, 150.0), (-10.0, 10.0), (-90.0, 90.0)))
    wrists = ("ZXY", ((-80.0, 80.0), (-80.0, 80.0), (-80.0, 80.0)))
    fingers = ("XZY", ((0.0, 100.0), (-10.0, 10.0), (-10.0, 10.0)))
    ranges = {
        "l_shoulder": shoulders, "r_shoulder": shoulders,
        "l_elbow": elbows, "r_elbow": elbows,
        "l_wrist": wrists, "r_wrist": wrists,
    }
    for side in ("l", "r"):
        for finger in ("thumb", "index", "middle", "ring", "pinky"):
            for j in range(1, 4):
                ranges[f"{side}_{finger}_{j}"] = fingers
    return JointLimits(ranges)


def apply_constraints(clip: AnimationClip, limits: JointLimits | None = None) -> AnimationClip:
    """Clamp each bone's local Euler angles into its joint's ranges.

    Joints without an entry pass through untouched. Applying the result a
    second time changes nothing: clamped angles are already in range.
    """
    limits = limits or default_joint_limits()
    names = clip.skeleton.keypoint_names
    rotations = clip.rotations.copy()
    for b, (p, _) in enumerate(clip.skeleton.bones):
        entry = limits.ranges.get(names[p])
        if entry is None:
            continue
        order, bounds = entry
        lo = np.array([a for a, _ in bounds])
        hi = np.array([a for _, a in bounds])
        angles = quat_to_euler(rotations[:, b], order)
        clipped = np.clip(angles, lo, hi)
        changed = np.any(np.abs(clipped - angles) > 1e-9, axis=1)
        if np.any(changed):
            rotations[changed, b] = euler_to_quat(clipped[changed], order)
    return replace(clip, rotations=rotations)


# ---------------------------------------------------------------- smoothing


def smooth(clip: AnimationClip, window: int = 5) -> AnimationClip:
    """Sign-aligned moving average of each bone's rotation track.

    The window shrinks near the ends; window 1 returns an identical clip.
    """
    if window < 1 or window % 2 == 0:
        raise ValueError(f"window must be a positive odd integer, got {window}")
    if window == 1:
        return replace(clip, rotations=clip.rotations.copy())
    half = window // 2
    n_frames = len(clip)
    out = np.empty_like(clip.rotations)
    for t in range(n_frames):
        lo = max(0, t - half)
        hi = min(n_frames, t + half + 1)
        block = clip.rotations[lo:hi]
        center = clip.rotations[t]
        sign = np.where(np.sum(block * center, axis=-1, keepdims=True) < 0.0, -1.0, 1.0)
        mean = (block * sign).mean(axis=0)
        out[t] = quat_canonical(quat_normalize(mean))
    return replace(clip, rotations=out)


def max_angular_step(clip: AnimationClip) -> float:
    """Largest frame-to-frame rotation angle over all bones, radians."""
    if len(clip) < 2:
        return 0.0
    a = clip.rotations[:-1]
    b = clip.rotations[1:]
    step = quat_multiply(quat_conjugate(a), b)
    return float(quat_angle(step).max())


# ---------------------------------------------------------------- blending


def interpolate(pose_a: np.ndarray, pose_b: np.ndarray, t: float, mode: str = "within") -> np.ndarray:
    """Blend two [K, 3] frames; exact endpoints at t = 0 and t = 1.

    mode "within" is plain linear; "between" eases with smoothstep
    (3t^2 - 2t^3), giving zero velocity at both ends of a chunk boundary.
    """
    a = np.asarray(pose_a, dtype=np.float32)
    b = np.asarray(pose_b, dtype=np.float32)
    if a.shape != b.shape:
        raise ShapeError(f"frame shapes differ: {a.shape} vs {b.shape}")
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t must be in [0, 1], got {t}")
    if mode not in ("within", "between"):
        raise ValueError(f"mode must be 'within' or 'between', got {mode!r}")
    if t == 0.0:
        return a.copy()
    if t == 1.0:
        return b.copy()
    if mode == "between":
        t = t * t * (3.0 - 2.0 * t)
    return (a + (b - a) * np.float32(t)).astype(np.float32)
