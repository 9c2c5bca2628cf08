"""Upper-body pose representation, metrics, and the pose text format.

Poses are arrays of 3-D keypoints on a fixed skeleton tree: a torso chain
(root, neck, head), two three-joint arms, and twenty keypoints per hand
(five fingers, four joints each), 49 keypoints and 48 bones in total.
Sequences are normalized so the root sits at the origin and the mean
shoulder-to-shoulder distance is 1, which makes the PCK radius and bone
terms comparable across recordings.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import GestureGenError, ShapeError


class SkeletonError(GestureGenError):
    """The keypoint topology is not a valid rooted tree."""


class NormalizationError(GestureGenError):
    """A sequence cannot be normalized (degenerate reference distance)."""


class PoseFileError(GestureGenError):
    """A pose text file is malformed."""


UPPER_ARM_LENGTH = 0.35
FOREARM_LENGTH = 0.35
SHOULDER_HALF_SPAN = 0.5
NECK_HEIGHT = 0.25
HEAD_HEIGHT = 0.5
REST_WRIST_DROP = -0.30          # wrist height below the shoulder at rest
REST_ELBOW_BEND_DEG = 20.0       # interior elbow bend at rest
FINGER_SEGMENT = 0.09

_FINGERS = ("thumb", "index", "middle", "ring", "pinky")


@dataclass(frozen=True)
class SkeletonTopology:
    """A rooted keypoint tree.

    bones are (parent, child) keypoint index pairs listed so that every
    parent is the root or the child of an earlier bone; that order is reused
    for bone-major arrays elsewhere (lengths, rotation tracks).
    """

    keypoint_names: tuple
    bones: tuple

    def __post_init__(self):
        names = tuple(self.keypoint_names)
        bones = tuple((int(p), int(c)) for p, c in self.bones)
        object.__setattr__(self, "keypoint_names", names)
        object.__setattr__(self, "bones", bones)
        k = len(names)
        if len(set(names)) != k:
            raise SkeletonError("duplicate keypoint names")
        if len(bones) != k - 1:
            raise SkeletonError(f"{k} keypoints need {k - 1} bones, got {len(bones)}")
        children = [c for _, c in bones]
        if len(set(children)) != len(children):
            raise SkeletonError("a keypoint is the child of more than one bone")
        reachable = set(range(k)) - set(children)
        if len(reachable) != 1:
            raise SkeletonError(f"expected exactly one root, found {sorted(reachable)}")
        seen = set(reachable)
        for p, c in bones:
            if not (0 <= p < k and 0 <= c < k):
                raise SkeletonError(f"bone ({p}, {c}) out of range for {k} keypoints")
            if p not in seen:
                raise SkeletonError(f"bone ({p}, {c}) appears before its parent is connected")
            seen.add(c)

    @property
    def n_keypoints(self) -> int:
        return len(self.keypoint_names)

    @property
    def root_index(self) -> int:
        return (set(range(self.n_keypoints)) - {c for _, c in self.bones}).pop()

    def parents_children(self) -> tuple[np.ndarray, np.ndarray]:
        parents = np.array([p for p, _ in self.bones], dtype=np.int64)
        children = np.array([c for _, c in self.bones], dtype=np.int64)
        return parents, children

    def index_of(self, name: str) -> int:
        try:
            return self.keypoint_names.index(name)
        except ValueError:
            raise SkeletonError(f"skeleton has no keypoint named {name!r}") from None


def arm_chain(drop: float, bend_rad: float, side: int) -> tuple[np.ndarray, np.ndarray]:
    """Planar two-link arm placement from wrist height and elbow bend.

    Args:
        drop: wrist height relative to the shoulder (negative is below).
        bend_rad: interior elbow bend, 0 is a straight arm.
        side: +1 places the arm toward +x, -1 toward -x.

    Returns:
        (elbow, wrist) offsets from the shoulder. The chain lives in the
        x-y plane; the shoulder angle is solved so the wrist lands at the
        requested height:
        reach R = sqrt(L1^2 + L2^2 + 2 L1 L2 cos(bend)), and the arm
        direction is arccos(-drop / R) minus the elbow's phase within the
        chain.
    """
    l1, l2 = UPPER_ARM_LENGTH, FOREARM_LENGTH
    reach = math.sqrt(l1 * l1 + l2 * l2 + 2 * l1 * l2 * math.cos(bend_rad))
    ratio = -drop / reach
    if not -1.0 <= ratio <= 1.0:
        raise ValueError(f"wrist height {drop} is outside the arm's reach {reach}")
    phase = math.atan2(l2 * math.sin(bend_rad), l1 + l2 * math.cos(bend_rad))
    theta = math.acos(ratio) - phase
    elbow = np.array([side * l1 * math.sin(theta), -l1 * math.cos(theta), 0.0])
    wrist = elbow + np.array(
        [side * l2 * math.sin(theta + bend_rad), -l2 * math.cos(theta + bend_rad), 0.0]
    )
    return elbow, wrist


def finger_offsets(side: int) -> np.ndarray:
    """[5, 4, 3] offsets of finger joints from the wrist, fanned in z."""
    out = np.zeros((5, 4, 3))
    for f in range(5):
        direction = np.array([side * 0.9, -0.25, 0.15 * (f - 2)])
        direction /= np.linalg.norm(direction)
        for j in range(4):
            out[f, j] = direction * (FINGER_SEGMENT * (j + 1))
    return out


@lru_cache(maxsize=1)
def upper_body_skeleton() -> SkeletonTopology:
    """The 49-keypoint upper-body tree used throughout the package."""
    names = ["root", "neck", "head",
             "l_shoulder", "l_elbow", "l_wrist",
             "r_shoulder", "r_elbow", "r_wrist"]
    for side in ("l", "r"):
        for finger in _FINGERS:
            names += [f"{side}_{finger}_{j}" for j in range(1, 5)]
    bones = [(0, 1), (1, 2), (1, 3), (3, 4), (4, 5), (1, 6), (6, 7), (7, 8)]
    for wrist, base in ((5, 9), (8, 29)):
        for f in range(5):
            first = base + 4 * f
            bones += [(wrist, first), (first, first + 1),
                      (first + 1, first + 2), (first + 2, first + 3)]
    return SkeletonTopology(tuple(names), tuple(bones))


def build_pose(drop: float, bend_rad: float) -> np.ndarray:
    """[49, 3] float32 pose with both arms at the given wrist drop and bend.

    The torso is fixed (shoulders 1.0 apart, root at the origin); fingers
    ride on the wrist with constant offsets, so every bone length is
    independent of the arguments.
    """
    pose = np.zeros((49, 3))
    pose[1] = (0.0, NECK_HEIGHT, 0.0)
    pose[2] = (0.0, HEAD_HEIGHT, 0.0)
    for side, shoulder_i, elbow_i, wrist_i, hand_base in (
        (+1, 3, 4, 5, 9),
        (-1, 6, 7, 8, 29),
    ):
        shoulder = np.array([side * SHOULDER_HALF_SPAN, NECK_HEIGHT, 0.0])
        pose[shoulder_i] = shoulder
        elbow, wrist = arm_chain(drop, bend_rad, side)
        pose[elbow_i] = shoulder + elbow
        pose[wrist_i] = shoulder + wrist
        hands = finger_offsets(side)
        for f in range(5):
            for j in range(4):
                pose[hand_base + 4 * f + j] = pose[wrist_i] + hands[f, j]
    return pose.astype(np.float32)


@lru_cache(maxsize=1)
def upper_body_rest_pose() -> np.ndarray:
    """[49, 3] float32 rest positions; shoulders 1.0 apart, root at origin."""
    out = build_pose(REST_WRIST_DROP, math.radians(REST_ELBOW_BEND_DEG))
    out.setflags(write=False)
    return out


@dataclass
class PoseSequence:
    """frames[t, k, c]: keypoint k of frame t, float32, finite."""

    frames: np.ndarray
    fps: float
    skeleton: SkeletonTopology = field(default_factory=upper_body_skeleton)

    def __post_init__(self):
        self.frames = np.ascontiguousarray(self.frames, dtype=np.float32)
        if self.frames.ndim != 3 or self.frames.shape[2] != 3:
            raise ShapeError(f"pose frames must be [T, K, 3], got {self.frames.shape}")
        if self.frames.shape[1] != self.skeleton.n_keypoints:
            raise ShapeError(
                f"{self.frames.shape[1]} keypoints, skeleton has {self.skeleton.n_keypoints}"
            )
        if self.fps <= 0:
            raise ShapeError(f"fps must be positive, got {self.fps}")
        if not np.all(np.isfinite(self.frames)):
            raise ShapeError("pose frames contain non-finite values")

    def __len__(self) -> int:
        return self.frames.shape[0]


@dataclass
class MotionSequence:
    """Frame-to-frame displacements: deltas[t] = frames[t+1] - frames[t]."""

    deltas: np.ndarray
    fps: float
    skeleton: SkeletonTopology = field(default_factory=upper_body_skeleton)


def motion(seq: PoseSequence) -> MotionSequence:
    """First differences along time; a T-frame sequence yields T-1 deltas."""
    if len(seq) < 2:
        raise ShapeError(f"motion needs at least 2 frames, got {len(seq)}")
    return MotionSequence(
        deltas=seq.frames[1:] - seq.frames[:-1], fps=seq.fps, skeleton=seq.skeleton
    )


def bone_lengths(frame: np.ndarray, skeleton: SkeletonTopology) -> np.ndarray:
    """Euclidean length of every bone in one [K, 3] frame (zero stays zero)."""
    frame = np.asarray(frame)
    if frame.shape != (skeleton.n_keypoints, 3):
        raise ShapeError(
            f"frame shape {frame.shape}, expected ({skeleton.n_keypoints}, 3)"
        )
    parents, children = skeleton.parents_children()
    return np.linalg.norm(frame[children] - frame[parents], axis=1)


def bone_lengths_sequence(frames: np.ndarray, skeleton: SkeletonTopology) -> np.ndarray:
    """[T, B] bone lengths for a [T, K, 3] array."""
    frames = np.asarray(frames)
    parents, children = skeleton.parents_children()
    return np.linalg.norm(frames[:, children] - frames[:, parents], axis=2)


def pck(pred: PoseSequence, gt: PoseSequence, alpha: float = 0.2) -> float:
    """Percentage of keypoints within alpha times the reference length.

    The reference is the ground-truth shoulder-to-shoulder distance of each
    frame; errors are 3-D Euclidean distances. Returns a value in [0, 100].
    """
    if pred.frames.shape != gt.frames.shape:
        raise ShapeError(
            f"pred {pred.frames.shape} and gt {gt.frames.shape} shapes differ"
        )
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    skel = gt.skeleton
    ls, rs = skel.index_of("l_shoulder"), skel.index_of("r_shoulder")
    ref = np.linalg.norm(gt.frames[:, ls] - gt.frames[:, rs], axis=1)
    if np.any(ref <= 1e-9):
        raise NormalizationError("zero shoulder distance in a reference frame")
    err = np.linalg.norm(
        pred.frames.astype(np.float64) - gt.frames.astype(np.float64), axis=2
    )
    hits = err <= alpha * ref[:, None]
    return float(100.0 * hits.mean())


def normalize_pose(frames: np.ndarray, fps: float,
                   skeleton: SkeletonTopology | None = None) -> PoseSequence:
    """Center the root at the origin and scale mean shoulder distance to 1."""
    if skeleton is None:
        skeleton = upper_body_skeleton()
    frames = np.asarray(frames, dtype=np.float32)
    if frames.ndim != 3 or frames.shape[1:] != (skeleton.n_keypoints, 3):
        raise ShapeError(
            f"expected [T, {skeleton.n_keypoints}, 3], got {frames.shape}"
        )
    ls, rs = skeleton.index_of("l_shoulder"), skeleton.index_of("r_shoulder")
    centered = frames - frames[:, skeleton.root_index : skeleton.root_index + 1]
    span = np.linalg.norm(centered[:, ls] - centered[:, rs], axis=1).mean()
    if span < 1e-8:
        raise NormalizationError(f"mean shoulder distance {span} is too small to scale by")
    return PoseSequence(frames=centered / np.float32(span), fps=fps, skeleton=skeleton)


def interpolate_frames(frames: np.ndarray, positions: np.ndarray) -> np.ndarray:
    """Sample a [T, K, 3] array at fractional frame positions (linear).

    Integer positions return the exact original frames.
    """
    frames = np.asarray(frames)
    t = frames.shape[0]
    positions = np.asarray(positions, dtype=np.float64)
    if positions.size and (positions.min() < 0 or positions.max() > t - 1):
        raise ShapeError(
            f"positions span [{positions.min()}, {positions.max()}], frames cover [0, {t - 1}]"
        )
    lo = np.minimum(np.floor(positions).astype(np.int64), max(t - 2, 0))
    frac = (positions - lo)[:, None, None]
    hi = np.minimum(lo + 1, t - 1)
    out = frames[lo] * (1 - frac) + frames[hi] * frac
    return out.astype(np.float32)


# ---------------------------------------------------------------- pose text files

_MAGIC = "gesturegen-pose"
_VERSION = 1


def write_pose_file(path, seq: PoseSequence, indices: np.ndarray | None = None) -> None:
    """Write a sequence as one header line plus one line per frame.

    Each frame line is its integer frame index followed by K*3 coordinates
    formatted %.9g (lossless for float32). Frame indices are normally
    consecutive from zero; gaps mark dropped frames for downstream pairing.
    """
    k = seq.skeleton.n_keypoints
    if indices is None:
        indices = np.arange(len(seq))
    names = ",".join(seq.skeleton.keypoint_names)
    lines = [f"{_MAGIC} {_VERSION} k={k} fps={seq.fps:.9g} names={names}"]
    for idx, frame in zip(indices, seq.frames):
        coords = " ".join(f"{v:.9g}" for v in frame.reshape(-1))
        lines.append(f"{int(idx)} {coords}")
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


@dataclass
class PoseFileData:
    """Parsed pose file: frames in file order plus their declared indices."""

    frames: np.ndarray
    fps: float
    names: tuple
    indices: np.ndarray

    @property
    def has_gaps(self) -> bool:
        if self.indices.size == 0:
            return False
        return bool(np.any(np.diff(self.indices) != 1)) or self.indices[0] != 0


def read_pose_file(path) -> PoseFileData:
    """Parse a pose text file; raises PoseFileError on any malformation."""
    with open(path, "r") as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    lines = [ln for ln in lines if ln.strip()]
    if not lines:
        raise PoseFileError(f"{path}: empty file")
    head = lines[0].split(maxsplit=4)
    if len(head) != 5 or head[0] != _MAGIC:
        raise PoseFileError(f"{path}: bad header line")
    if head[1] != str(_VERSION):
        raise PoseFileError(f"{path}: unsupported version {head[1]}")
    try:
        k = int(head[2].removeprefix("k="))
        fps = float(head[3].removeprefix("fps="))
        names = tuple(head[4].removeprefix("names=").split(","))
    except ValueError as exc:
        raise PoseFileError(f"{path}: malformed header fields") from exc
    if not head[2].startswith("k=") or not head[3].startswith("fps=") or not head[4].startswith("names="):
        raise PoseFileError(f"{path}: malformed header fields")
    if len(names) != k:
        raise PoseFileError(f"{path}: header declares k={k} but {len(names)} names")
    if fps <= 0:
        raise PoseFileError(f"{path}: non-positive fps")
    if len(lines) == 1:
        raise PoseFileError(f"{path}: no frames")

    indices = np.zeros(len(lines) - 1, dtype=np.int64)
    frames = np.zeros((len(lines) - 1, k, 3), dtype=np.float32)
    for row, line in enumerate(lines[1:]):
        parts = line.split()
        if len(parts) != 1 + 3 * k:
            raise PoseFileError(
                f"{path}: line {row + 2} has {len(parts)} fields, expected {1 + 3 * k}"
            )
        try:
            indices[row] = int(parts[0])
            frames[row] = np.array(parts[1:], dtype=np.float32).reshape(k, 3)
        except ValueError as exc:
            raise PoseFileError(f"{path}: line {row + 2} is not numeric") from exc
    if np.any(np.diff(indices) <= 0):
        raise PoseFileError(f"{path}: frame indices must be strictly increasing")
    return PoseFileData(frames=frames, fps=fps, names=names, indices=indices)
