"""Keypoints to skeletal animation: solve, clamp, smooth, export.

Takes a synthesized keypoint track through the full retargeting path and
writes a BVH file, then parses it back to show the round trip holds.

    python3 demos/retarget_to_bvh.py
"""

from pathlib import Path

import numpy as np

from gesturegen import synth
from gesturegen.animate import (
    apply_constraints,
    fk,
    keypoints_to_rotations,
    max_angular_step,
    smooth,
)
from gesturegen.bvh import export_bvh, parse_bvh
from gesturegen.pose import PoseSequence

OUT = Path(__file__).resolve().parent.parent / "demo_out"


def main():
    OUT.mkdir(exist_ok=True)
    rng = np.random.default_rng(2)
    frames = np.concatenate(
        [synth.render_pose(synth.draw_score(rng), 30, 15.0) for _ in range(3)]
    )
    seq = PoseSequence(frames, 15.0)

    clip = keypoints_to_rotations(seq)
    positions = fk(clip)
    drift = np.abs(positions - frames).max()
    print(f"solved {clip.rotations.shape[0]} frames x "
          f"{clip.rotations.shape[1]} bones; fk drift {drift:.2e}")

    clamped = apply_constraints(clip)
    changed = int((~np.isclose(clamped.rotations, clip.rotations)).any(axis=2).sum())
    print(f"joint limits touched {changed} bone-frames")

    smoothed = smooth(clamped, window=5)
    print(f"max angular step: raw {np.degrees(max_angular_step(clamped)):.2f} deg, "
          f"smoothed {np.degrees(max_angular_step(smoothed)):.2f} deg")

    path = OUT / "gesture.bvh"
    export_bvh(smoothed, path)
    text = path.read_text()
    print(f"wrote {path} ({len(text.splitlines())} lines)")
    print("\n".join(text.splitlines()[:6]))

    back = parse_bvh(path)
    same_tree = set(back.skeleton.keypoint_names) == set(seq.skeleton.keypoint_names)
    print(f"parse round trip: {back.rotations.shape[0]} frames, "
          f"fps {back.fps:g}, same tree {same_tree}")


if __name__ == "__main__":
    main()
