import math

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from gesturegen.animate import (
    AnimationClip,
    AnimationError,
    apply_constraints,
    default_joint_limits,
    euler_to_quat,
    fk,
    interpolate,
    JointLimits,
    keypoints_to_rotations,
    max_angular_step,
    quat_angle,
    quat_between,
    quat_canonical,
    quat_conjugate,
    quat_from_axis_angle,
    quat_multiply,
    quat_normalize,
    quat_rotate,
    quat_to_euler,
    smooth,
)
from gesturegen.errors import ShapeError
from gesturegen.pose import (
    PoseSequence,
    SkeletonTopology,
    upper_body_rest_pose,
    upper_body_skeleton,
)
from gesturegen.synth import draw_score, render_pose

IDENTITY = np.array([1.0, 0.0, 0.0, 0.0])


def _wxyz_to_rotation(q):
    q = np.asarray(q, dtype=np.float64)
    return Rotation.from_quat(np.concatenate([q[..., 1:], q[..., :1]], axis=-1))


def _random_unit_quats(rng, n):
    q = rng.normal(size=(n, 4))
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


# ------------------------------------------------------------- quaternion ops


def test_quat_multiply_matches_rotation_composition():
    rng = np.random.default_rng(0)
    a = _random_unit_quats(rng, 50)
    b = _random_unit_quats(rng, 50)
    got = quat_canonical(quat_multiply(a, b))
    want = (_wxyz_to_rotation(a) * _wxyz_to_rotation(b)).as_quat()
    want = quat_canonical(np.concatenate([want[:, 3:], want[:, :3]], axis=-1))
    np.testing.assert_allclose(got, want, atol=1e-12)


def test_quat_rotate_matches_rotation_apply():
    rng = np.random.default_rng(1)
    q = _random_unit_quats(rng, 50)
    v = rng.normal(size=(50, 3))
    np.testing.assert_allclose(quat_rotate(q, v), _wxyz_to_rotation(q).apply(v), atol=1e-12)


def test_quat_multiply_applies_right_factor_first():
    rng = np.random.default_rng(2)
    a = _random_unit_quats(rng, 1)[0]
    b = _random_unit_quats(rng, 1)[0]
    v = rng.normal(size=3)
    np.testing.assert_allclose(
        quat_rotate(quat_multiply(a, b), v), quat_rotate(a, quat_rotate(b, v)), atol=1e-12
    )


def test_quat_from_axis_angle_matches_rotvec():
    rng = np.random.default_rng(3)
    for _ in range(20):
        axis = rng.normal(size=3)
        angle = rng.uniform(-math.pi, math.pi)
        got = quat_from_axis_angle(axis, angle)
        want = Rotation.from_rotvec(angle * axis / np.linalg.norm(axis)).as_quat()
        want = np.concatenate([want[3:], want[:3]])
        np.testing.assert_allclose(quat_canonical(got), quat_canonical(want), atol=1e-12)


def test_quat_from_axis_angle_zero_axis_rejected():
    with pytest.raises(AnimationError):
        quat_from_axis_angle(np.zeros(3), 1.0)


def test_quat_between_takes_u_to_v():
    rng = np.random.default_rng(4)
    for _ in range(50):
        u = rng.normal(size=3)
        v = rng.normal(size=3)
        u /= np.linalg.norm(u)
        v /= np.linalg.norm(v)
        q = quat_between(u, v)
        assert abs(np.linalg.norm(q) - 1.0) < 1e-12
        np.testing.assert_allclose(quat_rotate(q, u), v, atol=1e-9)


def test_quat_between_handles_opposite_vectors():
    u = np.array([0.0, 1.0, 0.0])
    q = quat_between(u, -u)
    np.testing.assert_allclose(quat_rotate(q, u), -u, atol=1e-12)
    assert quat_angle(q) == pytest.approx(math.pi, abs=1e-12)


def test_quat_between_identical_vectors_is_identity():
    u = np.array([0.0, 0.0, 1.0])
    np.testing.assert_array_equal(quat_between(u, u), IDENTITY)


def test_quat_angle_matches_rotation_magnitude():
    rng = np.random.default_rng(5)
    q = _random_unit_quats(rng, 50)
    np.testing.assert_allclose(quat_angle(q), _wxyz_to_rotation(q).magnitude(), atol=1e-9)


def test_quat_canonical_fixes_sign_only():
    q = np.array([[-0.5, 0.5, 0.5, 0.5], [0.5, -0.5, -0.5, -0.5]])
    out = quat_canonical(q)
    assert np.all(out[:, 0] >= 0.0)
    np.testing.assert_allclose(np.abs(out), np.abs(q), atol=0)


def test_quat_normalize_zero_rejected():
    with pytest.raises(AnimationError):
        quat_normalize(np.zeros(4))


def test_quat_conjugate_inverts_unit_quaternions():
    rng = np.random.default_rng(6)
    q = _random_unit_quats(rng, 10)
    prod = quat_multiply(q, quat_conjugate(q))
    np.testing.assert_allclose(quat_canonical(prod), np.tile(IDENTITY, (10, 1)), atol=1e-12)


@pytest.mark.parametrize("order", ["ZXY", "XZY"])
def test_euler_round_trip(order):
    rng = np.random.default_rng(7)
    angles = rng.uniform([-170.0, -80.0, -170.0], [170.0, 80.0, 170.0], size=(40, 3))
    back = quat_to_euler(euler_to_quat(angles, order), order)
    np.testing.assert_allclose(back, angles, atol=1e-9)


# ------------------------------------------------------------------ clip type


def _chain_skeleton():
    return SkeletonTopology(("base", "a", "b"), ((0, 1), (1, 2)))


def _chain_rest():
    return np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0, 1.0, 0.0]])


def _chain_clip(rotations, fps=15.0):
    rotations = np.asarray(rotations, dtype=np.float64)
    return AnimationClip(
        skeleton=_chain_skeleton(),
        rest_offsets=np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]),
        rotations=rotations,
        root_positions=np.zeros((rotations.shape[0], 3)),
        fps=fps,
    )


def test_clip_rejects_wrong_offset_shape():
    with pytest.raises(ShapeError):
        AnimationClip(
            skeleton=_chain_skeleton(),
            rest_offsets=np.zeros((3, 3)),
            rotations=np.tile(IDENTITY, (2, 2, 1)),
            root_positions=np.zeros((2, 3)),
            fps=15.0,
        )


def test_clip_rejects_non_unit_quaternions():
    rot = np.tile(IDENTITY, (2, 2, 1))
    rot[1, 0] = [0.5, 0.0, 0.0, 0.0]
    with pytest.raises(AnimationError):
        _chain_clip(rot)


def test_clip_rejects_mismatched_root_track():
    with pytest.raises(ShapeError):
        AnimationClip(
            skeleton=_chain_skeleton(),
            rest_offsets=np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]),
            rotations=np.tile(IDENTITY, (2, 2, 1)),
            root_positions=np.zeros((3, 3)),
            fps=15.0,
        )


def test_clip_rejects_bad_fps():
    with pytest.raises(ShapeError):
        _chain_clip(np.tile(IDENTITY, (1, 2, 1)), fps=0.0)


def test_clip_bone_lengths_come_from_rest_offsets():
    clip = _chain_clip(np.tile(IDENTITY, (1, 2, 1)))
    np.testing.assert_array_equal(clip.bone_lengths, [1.0, 1.0])


# ----------------------------------------------------------------- retargeting


def test_rest_pose_sequence_gives_identity_rotations():
    rest = upper_body_rest_pose()
    seq = PoseSequence(
        frames=np.tile(rest, (4, 1, 1)), fps=15.0, skeleton=upper_body_skeleton()
    )
    clip = keypoints_to_rotations(seq)
    np.testing.assert_allclose(clip.rotations, np.tile(IDENTITY, (4, 48, 1)), atol=1e-7)
    np.testing.assert_allclose(
        clip.root_positions, np.tile(rest[0], (4, 1)).astype(np.float64), atol=0
    )


def test_single_bone_rotation_recovered_about_its_axis():
    rest = _chain_rest()
    frame = rest.copy()
    # rotate the second bone 90 degrees about +x: (0,1,0) -> (0,0,1)
    frame[2] = frame[1] + np.array([0.0, 0.0, 1.0])
    seq = PoseSequence(
        frames=frame[None].astype(np.float32), fps=15.0, skeleton=_chain_skeleton()
    )
    clip = keypoints_to_rotations(seq, rest_pose=rest)
    np.testing.assert_allclose(clip.rotations[0, 0], IDENTITY, atol=1e-7)
    want = quat_from_axis_angle(np.array([1.0, 0.0, 0.0]), math.pi / 2)
    np.testing.assert_allclose(clip.rotations[0, 1], want, atol=1e-4)
    assert quat_angle(clip.rotations[0, 1]) == pytest.approx(math.pi / 2, abs=1e-4)


def test_fk_reproduces_observed_directions_on_smooth_sequences():
    skeleton = upper_body_skeleton()
    pairs = np.array(skeleton.bones)
    worst = 0.0
    for seed in range(3):
        frames = render_pose(draw_score(np.random.default_rng(seed)), 30, 15.0)
        seq = PoseSequence(frames=frames, fps=15.0, skeleton=skeleton)
        clip = keypoints_to_rotations(seq)
        pos = fk(clip)
        assert pos.dtype == np.float64
        obs = frames.astype(np.float64)
        d_obs = obs[:, pairs[:, 1]] - obs[:, pairs[:, 0]]
        d_fk = pos[:, pairs[:, 1]] - pos[:, pairs[:, 0]]
        cos = np.sum(d_obs * d_fk, axis=-1)
        cos /= np.linalg.norm(d_obs, axis=-1) * np.linalg.norm(d_fk, axis=-1)
        worst = max(worst, float(np.arccos(np.clip(cos, -1.0, 1.0)).max()))
    assert worst < 1e-4


def test_fk_bone_lengths_equal_rest_lengths_every_frame():
    skeleton = upper_body_skeleton()
    frames = render_pose(draw_score(np.random.default_rng(11)), 30, 15.0)
    seq = PoseSequence(frames=frames, fps=15.0, skeleton=skeleton)
    clip = keypoints_to_rotations(seq)
    pos = fk(clip)
    pairs = np.array(skeleton.bones)
    lengths = np.linalg.norm(pos[:, pairs[:, 1]] - pos[:, pairs[:, 0]], axis=-1)
    np.testing.assert_allclose(lengths, np.tile(clip.bone_lengths, (30, 1)), rtol=1e-10)


def test_upper_arm_roll_recovered_from_wrist():
    skeleton = upper_body_skeleton()
    rest = upper_body_rest_pose().astype(np.float64)
    s = skeleton.index_of("l_shoulder")
    e = skeleton.index_of("l_elbow")
    w = skeleton.index_of("l_wrist")
    axis = rest[e] - rest[s]
    axis /= np.linalg.norm(axis)
    twist = quat_from_axis_angle(axis, math.radians(30.0))
    frame = rest.copy()
    frame[w] = rest[s] + quat_rotate(twist, rest[w] - rest[s])
    seq = PoseSequence(
        frames=frame[None].astype(np.float32), fps=15.0, skeleton=skeleton
    )
    clip = keypoints_to_rotations(seq)
    upper = [b for b, pc in enumerate(skeleton.bones) if pc == (s, e)][0]
    got = clip.rotations[0, upper]
    np.testing.assert_allclose(got, quat_canonical(twist), atol=1e-6)
    pos = fk(clip)
    np.testing.assert_allclose(pos[0, w], frame[w], atol=1e-5)


def test_degenerate_bone_carries_previous_rotation():
    rest = _chain_rest()
    f0 = rest.copy()
    f0[2] = f0[1]   # zero-length second bone on the first frame
    f1 = rest.copy()
    f1[2] = f1[1] + np.array([0.0, 0.0, 1.0])
    f2 = f0.copy()  # collapses again: should keep f1's answer
    frames = np.stack([f0, f1, f2]).astype(np.float32)
    seq = PoseSequence(frames=frames, fps=15.0, skeleton=_chain_skeleton())
    clip = keypoints_to_rotations(seq, rest_pose=rest)
    np.testing.assert_array_equal(clip.rotations[0, 1], IDENTITY)
    np.testing.assert_array_equal(clip.rotations[2, 1], clip.rotations[1, 1])
    assert quat_angle(clip.rotations[1, 1]) == pytest.approx(math.pi / 2, abs=1e-6)


def test_keypoints_to_rotations_rejects_zero_length_rest_bone():
    rest = _chain_rest()
    rest[2] = rest[1]
    frames = np.zeros((1, 3, 3), dtype=np.float32)
    seq = PoseSequence(frames=frames, fps=15.0, skeleton=_chain_skeleton())
    with pytest.raises(AnimationError):
        keypoints_to_rotations(seq, rest_pose=rest)


def test_keypoints_to_rotations_rejects_wrong_rest_shape():
    seq = PoseSequence(
        frames=np.zeros((1, 3, 3), dtype=np.float32), fps=15.0, skeleton=_chain_skeleton()
    )
    with pytest.raises(ShapeError):
        keypoints_to_rotations(seq, rest_pose=np.zeros((5, 3)))


# ----------------------------------------------------------------- constraints


def test_default_limits_cover_arm_and_finger_joints():
    limits = default_joint_limits()
    for name in ("l_shoulder", "r_elbow", "l_wrist", "r_index_2"):
        assert name in limits.ranges
    assert "root" not in limits.ranges


@pytest.mark.parametrize(
    "ranges",
    [
        {"j": ("ZZX", ((0.0, 1.0),) * 3)},
        {"j": ("ZXY", ((1.0, 0.0), (0.0, 1.0), (0.0, 1.0)))},
        {"j": ("ZXY", ((0.0, 1.0), (-100.0, 0.0), (0.0, 1.0)))},
        {"j": ("ZXY", ((0.0, 1.0), (0.0, 1.0)))},
    ],
)
def test_joint_limit_validation(ranges):
    with pytest.raises(AnimationError):
        JointLimits(ranges)


def _upper_body_identity_clip(n_frames=3):
    rest = upper_body_rest_pose()
    seq = PoseSequence(
        frames=np.tile(rest, (n_frames, 1, 1)), fps=15.0, skeleton=upper_body_skeleton()
    )
    return keypoints_to_rotations(seq)


def _bone_with_parent(skeleton, parent_name):
    p = skeleton.index_of(parent_name)
    return [b for b, (q, _) in enumerate(skeleton.bones) if q == p][0]


def test_constraints_leave_in_range_clip_unchanged():
    clip = _upper_body_identity_clip()
    rot = clip.rotations.copy()
    b = _bone_with_parent(clip.skeleton, "l_elbow")
    # 40 degree flexion sits inside the elbow's [0, 150] range
    rot[:, b] = euler_to_quat(np.array([40.0, 0.0, 0.0]), "XZY")
    clip = AnimationClip(clip.skeleton, clip.rest_offsets, rot, clip.root_positions, clip.fps)
    out = apply_constraints(clip)
    np.testing.assert_allclose(out.rotations, clip.rotations, atol=1e-6)


def test_constraints_clamp_hyperextended_elbow_to_zero():
    clip = _upper_body_identity_clip(1)
    rot = clip.rotations.copy()
    b = _bone_with_parent(clip.skeleton, "l_elbow")
    rot[0, b] = euler_to_quat(np.array([-30.0, 0.0, 0.0]), "XZY")
    clip = AnimationClip(clip.skeleton, clip.rest_offsets, rot, clip.root_positions, clip.fps)
    out = apply_constraints(clip)
    angles = quat_to_euler(out.rotations[0, b], "XZY")
    np.testing.assert_allclose(angles, [0.0, 0.0, 0.0], atol=1e-9)


def test_constraints_are_idempotent():
    clip = _upper_body_identity_clip(2)
    rot = clip.rotations.copy()
    sk = clip.skeleton
    rot[:, _bone_with_parent(sk, "l_elbow")] = euler_to_quat(
        np.array([-30.0, 0.0, 0.0]), "XZY"
    )
    rot[:, _bone_with_parent(sk, "r_shoulder")] = euler_to_quat(
        np.array([135.0, 20.0, 0.0]), "ZXY"
    )
    clip = AnimationClip(sk, clip.rest_offsets, rot, clip.root_positions, clip.fps)
    once = apply_constraints(clip)
    twice = apply_constraints(once)
    np.testing.assert_array_equal(once.rotations, twice.rotations)
    b = _bone_with_parent(sk, "r_shoulder")
    assert quat_to_euler(once.rotations[0, b], "ZXY")[0] == pytest.approx(120.0, abs=1e-6)


def test_constraints_ignore_joints_without_limits():
    clip = _upper_body_identity_clip(1)
    rot = clip.rotations.copy()
    b = _bone_with_parent(clip.skeleton, "neck")   # no entry for the neck
    rot[0, b] = quat_from_axis_angle(np.array([0.0, 0.0, 1.0]), math.radians(170.0))
    clip = AnimationClip(clip.skeleton, clip.rest_offsets, rot, clip.root_positions, clip.fps)
    out = apply_constraints(clip)
    np.testing.assert_array_equal(out.rotations[0, b], rot[0, b])


# ------------------------------------------------------------------- smoothing


def _jitter_clip(n_frames=9, degrees=5.0):
    rot = np.tile(IDENTITY, (n_frames, 2, 1))
    for t in range(n_frames):
        sign = 1.0 if t % 2 == 0 else -1.0
        rot[t, 1] = quat_from_axis_angle(
            np.array([1.0, 0.0, 0.0]), sign * math.radians(degrees)
        )
    return _chain_clip(rot)


def test_smooth_window_one_is_identity():
    clip = _jitter_clip()
    out = smooth(clip, window=1)
    np.testing.assert_array_equal(out.rotations, clip.rotations)
    assert out.rotations is not clip.rotations


def test_smooth_constant_clip_is_fixed_point():
    rot = np.tile(quat_from_axis_angle(np.array([0.0, 1.0, 0.0]), 0.3), (6, 2, 1))
    clip = _chain_clip(rot)
    out = smooth(clip, window=5)
    np.testing.assert_allclose(out.rotations, clip.rotations, atol=1e-12)


def test_smooth_reduces_jitter():
    clip = _jitter_clip()
    out = smooth(clip, window=3)
    assert max_angular_step(out) < max_angular_step(clip)
    assert max_angular_step(clip) == pytest.approx(math.radians(10.0), abs=1e-9)


@pytest.mark.parametrize("window", [0, -3, 2, 4])
def test_smooth_rejects_bad_windows(window):
    with pytest.raises(ValueError):
        smooth(_jitter_clip(), window=window)


def test_smooth_keeps_unit_norm():
    clip = _jitter_clip()
    out = smooth(clip, window=5)
    np.testing.assert_allclose(np.linalg.norm(out.rotations, axis=-1), 1.0, atol=1e-12)


def test_max_angular_step_known_value():
    rot = np.tile(IDENTITY, (2, 2, 1))
    rot[1, 0] = quat_from_axis_angle(np.array([0.0, 1.0, 0.0]), math.radians(10.0))
    clip = _chain_clip(rot)
    assert max_angular_step(clip) == pytest.approx(math.radians(10.0), abs=1e-12)
    assert max_angular_step(_chain_clip(np.tile(IDENTITY, (1, 2, 1)))) == 0.0


# ---------------------------------------------------------------- interpolate


def test_interpolate_endpoints_are_exact_copies():
    rng = np.random.default_rng(8)
    a = rng.normal(size=(49, 3)).astype(np.float32)
    b = rng.normal(size=(49, 3)).astype(np.float32)
    for mode in ("within", "between"):
        at0 = interpolate(a, b, 0.0, mode)
        at1 = interpolate(a, b, 1.0, mode)
        np.testing.assert_array_equal(at0, a)
        np.testing.assert_array_equal(at1, b)
        assert at0 is not a and at1 is not b


def test_interpolate_midpoint_both_modes():
    a = np.zeros((4, 3), dtype=np.float32)
    b = np.full((4, 3), 2.0, dtype=np.float32)
    np.testing.assert_allclose(interpolate(a, b, 0.5, "within"), np.ones((4, 3)), atol=1e-7)
    # smoothstep(0.5) = 0.5, so the midpoints agree
    np.testing.assert_allclose(interpolate(a, b, 0.5, "between"), np.ones((4, 3)), atol=1e-7)


def test_interpolate_between_eases_at_the_ends():
    a = np.zeros((1, 3), dtype=np.float32)
    b = np.ones((1, 3), dtype=np.float32)
    t = 0.25
    eased = float(interpolate(a, b, t, "between")[0, 0])
    linear = float(interpolate(a, b, t, "within")[0, 0])
    assert eased == pytest.approx(t * t * (3 - 2 * t), abs=1e-7)
    assert eased < linear


@pytest.mark.parametrize("t", [-0.1, 1.0001, 2.0])
def test_interpolate_rejects_out_of_range_t(t):
    a = np.zeros((2, 3), dtype=np.float32)
    with pytest.raises(ValueError):
        interpolate(a, a, t)


def test_interpolate_rejects_unknown_mode_and_shape_mismatch():
    a = np.zeros((2, 3), dtype=np.float32)
    with pytest.raises(ValueError):
        interpolate(a, a, 0.5, mode="cubic")
    with pytest.raises(ShapeError):
        interpolate(a, np.zeros((3, 3), dtype=np.float32), 0.5)
