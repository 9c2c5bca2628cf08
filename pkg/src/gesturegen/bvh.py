"""BVH skeletal-animation files for AnimationClips.

Every bone owns a zero-offset rotator joint ("<child>_rot") carrying its
Z-X-Y rotation channels; the child joint (or End Site, for leaves) then
carries the rest offset. This keeps per-bone rotations independent even
where several bones share a parent keypoint, which plain BVH cannot
express at one joint. Numbers are written with six decimals and LF line
endings, so export -> parse -> export reproduces the file byte for byte.
"""

from __future__ import annotations

import numpy as np

from .animate import AnimationClip, AnimationError, euler_to_quat, quat_to_euler
from .pose import SkeletonTopology

_ROT_SUFFIX = "_rot"
_EULER_ORDER = "ZXY"
_CHANNELS3 = "Zrotation Xrotation Yrotation"


class BvhError(AnimationError):
    """A BVH file cannot be written or parsed."""


def _fmt(v: float) -> str:
    s = f"{v:.6f}"
    # never emit negative zero: its sign would not survive a parse cycle
    return "0.000000" if s == "-0.000000" else s


def _children_of(skeleton: SkeletonTopology) -> dict:
    by_parent: dict = {}
    for b, (p, c) in enumerate(skeleton.bones):
        by_parent.setdefault(p, []).append((b, c))
    return by_parent


def export_bvh(clip: AnimationClip, path) -> None:
    """Write the clip as BVH; rotations become Z-X-Y Euler degrees."""
    skeleton = clip.skeleton
    for name in skeleton.keypoint_names:
        if name.endswith(_ROT_SUFFIX) or any(ch.isspace() for ch in name):
            raise BvhError(f"keypoint name {name!r} cannot be written to BVH")
    by_parent = _children_of(skeleton)
    lines: list = []
    channel_bones: list = []   # bone index per animated rotator, file order

    def emit_joint(kp: int, depth: int) -> None:
        pad = "  " * depth
        for b, child in by_parent.get(kp, []):
            off = clip.rest_offsets[b]
            lines.append(f"{pad}JOINT {skeleton.keypoint_names[child]}{_ROT_SUFFIX}")
            lines.append(f"{pad}{{")
            lines.append(f"{pad}  OFFSET 0.000000 0.000000 0.000000")
            lines.append(f"{pad}  CHANNELS 3 {_CHANNELS3}")
            channel_bones.append(b)
            if child in by_parent:
                lines.append(f"{pad}  JOINT {skeleton.keypoint_names[child]}")
                lines.append(f"{pad}  {{")
                lines.append(
                    f"{pad}    OFFSET {_fmt(off[0])} {_fmt(off[1])} {_fmt(off[2])}"
                )
                lines.append(f"{pad}    CHANNELS 3 {_CHANNELS3}")
                channel_bones.append(-1)   # structural joint, zero channels
                emit_joint(child, depth + 2)
                lines.append(f"{pad}  }}")
            else:
                lines.append(f"{pad}  End Site")
                lines.append(f"{pad}  {{")
                lines.append(
                    f"{pad}    OFFSET {_fmt(off[0])} {_fmt(off[1])} {_fmt(off[2])}"
                )
                lines.append(f"{pad}  }}")
            lines.append(f"{pad}}}")

    root_name = skeleton.keypoint_names[skeleton.root_index]
    lines.append("HIERARCHY")
    lines.append(f"ROOT {root_name}")
    lines.append("{")
    lines.append("  OFFSET 0.000000 0.000000 0.000000")
    lines.append(f"  CHANNELS 6 Xposition Yposition Zposition {_CHANNELS3}")
    emit_joint(skeleton.root_index, 1)
    lines.append("}")

    n_frames = len(clip)
    lines.append("MOTION")
    lines.append(f"Frames: {n_frames}")
    lines.append(f"Frame Time: {_fmt(1.0 / clip.fps)}")
    zero3 = ["0.000000"] * 3
    for t in range(n_frames):
        values: list = [_fmt(v) for v in clip.root_positions[t]] + list(zero3)
        for b in channel_bones:
            if b < 0:
                values += zero3
            else:
                e = quat_to_euler(clip.rotations[t, b], _EULER_ORDER)
                values += [_fmt(a) for a in e]
        lines.append(" ".join(values))
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def parse_bvh(path) -> AnimationClip:
    """Read a BVH file in this module's dialect back into a clip."""
    with open(path, "r", encoding="ascii") as fh:
        text = fh.read()
    tokens = text.split()
    pos = 0

    def take(*expected: str) -> str:
        nonlocal pos
        if pos >= len(tokens):
            raise BvhError("file ends unexpectedly")
        tok = tokens[pos]
        pos += 1
        if expected and tok not in expected:
            raise BvhError(f"expected {' or '.join(expected)}, got {tok!r}")
        return tok

    def take_floats(n: int) -> tuple:
        nonlocal pos
        if pos + n > len(tokens):
            raise BvhError("file ends inside a number block")
        try:
            out = tuple(float(tokens[pos + i]) for i in range(n))
        except ValueError as exc:
            raise BvhError(f"malformed number near token {pos}: {exc}") from None
        pos += n
        return out

    take("HIERARCHY")
    take("ROOT")
    root_name = take()
    take("{")
    take("OFFSET")
    take_floats(3)
    take("CHANNELS")
    if take() != "6":
        raise BvhError("root must have 6 channels")
    for _ in range(6):
        take()
    channel_owners: list = []   # (node, is_rotator) in channel order

    # keypoints and bones are discovered in file order
    names: list = [root_name]
    bones: list = []
    offsets: list = []
    rotator_of_bone: list = []

    def parse_children(parent_kp: int) -> None:
        while True:
            tok = take("JOINT", "End", "}")
            if tok == "}":
                return
            if tok == "End":
                raise BvhError("End Site outside a rotator joint")
            rot_name = take()
            if not rot_name.endswith(_ROT_SUFFIX):
                raise BvhError(f"expected a rotator joint, got {rot_name!r}")
            child_name = rot_name[: -len(_ROT_SUFFIX)]
            take("{")
            take("OFFSET")
            take_floats(3)
            take("CHANNELS")
            if take() != "3":
                raise BvhError(f"{rot_name}: rotator joints carry 3 channels")
            for _ in range(3):
                take()
            bone_index = len(bones)
            channel_owners.append(bone_index)
            nxt = take("JOINT", "End")
            if nxt == "JOINT":
                if take() != child_name:
                    raise BvhError(f"rotator {rot_name} must wrap joint {child_name}")
                take("{")
                take("OFFSET")
                off = take_floats(3)
                take("CHANNELS")
                if take() != "3":
                    raise BvhError(f"{child_name}: joints carry 3 channels")
                for _ in range(3):
                    take()
                channel_owners.append(-1)
                child_kp = len(names)
                names.append(child_name)
                bones.append((parent_kp, child_kp))
                offsets.append(off)
                parse_children(child_kp)
                take("}")   # close the rotator around the structural joint
            else:
                take("Site")
                take("{")
                take("OFFSET")
                off = take_floats(3)
                take("}")
                child_kp = len(names)
                names.append(child_name)
                bones.append((parent_kp, child_kp))
                offsets.append(off)
                take("}")   # close the rotator

    parse_children(0)
    take("MOTION")
    take("Frames:")
    try:
        n_frames = int(take())
    except ValueError:
        raise BvhError("frame count is not an integer") from None
    take("Frame")
    take("Time:")
    (frame_time,) = take_floats(1)
    if frame_time <= 0:
        raise BvhError(f"frame time must be positive, got {frame_time}")

    n_channels = 6 + 3 * len(channel_owners)
    n_bones = len(bones)
    rotations = np.zeros((n_frames, n_bones, 4))
    rotations[..., 0] = 1.0
    root_positions = np.zeros((n_frames, 3))
    for t in range(n_frames):
        row = take_floats(n_channels)
        root_positions[t] = row[0:3]
        at = 6
        for owner in channel_owners:
            angles = row[at : at + 3]
            at += 3
            if owner >= 0:
                rotations[t, owner] = euler_to_quat(np.asarray(angles), _EULER_ORDER)
    if pos != len(tokens):
        raise BvhError(f"{len(tokens) - pos} unexpected trailing tokens")

    skeleton = SkeletonTopology(tuple(names), tuple(bones))
    return AnimationClip(
        skeleton=skeleton,
        rest_offsets=np.asarray(offsets, dtype=np.float64),
        rotations=rotations,
        root_positions=root_positions,
        fps=1.0 / frame_time,
    )
