import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hoisynth.geometry import Rotation
from hoisynth.hand import skeleton as sk
from hoisynth.hand.model import (
    HAND_PARAM_DIM,
    THETA_DIM,
    AngleLimits,
    HandPose,
    HandShape,
    clamp_pose_angles,
    forward_kinematics,
    forward_kinematics_sequence,
    sample_hand_surface,
)

from conftest import random_rotation


def random_pose(rng, theta_scale: float = 0.5) -> HandPose:
    return HandPose(
        random_rotation(rng),
        rng.normal(size=3) * 0.1,
        rng.uniform(-theta_scale, theta_scale, size=THETA_DIM),
    )


class TestSkeleton:
    def test_tree_structure(self):
        assert sk.NUM_JOINTS == 21
        assert sk.NUM_BONES == 20
        assert len(sk.PARENTS) == 21
        assert sk.PARENTS[sk.WRIST] == -1
        for j in range(1, 21):
            assert 0 <= sk.PARENTS[j] < j  # topological order, rooted tree

    def test_five_fingers_of_four(self):
        children = {}
        for j in range(1, 21):
            children.setdefault(sk.PARENTS[j], []).append(j)
        assert len(children[sk.WRIST]) == 5  # five MCPs off the wrist

    def test_bone_lengths_positive(self):
        rest = sk.rest_positions()
        lens = sk.bone_lengths(rest)
        assert lens.shape == (20,)
        assert np.all(lens > 0)


class TestHandShape:
    def test_beta_validation(self):
        with pytest.raises(ValueError):
            HandShape(beta=np.full(10, 0.1))
        with pytest.raises(ValueError):
            HandShape(side="up")

    def test_global_scale_scales_all_bones(self):
        base = HandShape()
        scaled_beta = np.ones(10)
        scaled_beta[0] = 1.5
        scaled = HandShape(beta=scaled_beta)
        lens_base = sk.bone_lengths(base.template)
        lens_scaled = sk.bone_lengths(scaled.template)
        assert np.allclose(lens_scaled, 1.5 * lens_base)

    def test_left_is_x_mirror_of_right(self):
        right = HandShape(side="right")
        left = HandShape(side="left")
        mirrored = right.template.copy()
        mirrored[:, 0] = -mirrored[:, 0]
        assert np.allclose(left.template, mirrored)

    def test_finger_scale_touches_only_that_finger(self):
        beta = np.ones(10)
        beta[2] = 1.4  # thumb length scale
        mod = HandShape(beta=beta)
        base = HandShape()
        diff = np.abs(sk.bone_lengths(mod.template) - sk.bone_lengths(base.template))
        changed = np.nonzero(diff > 1e-12)[0]
        # exactly the three distal thumb bones move
        assert len(changed) == 3


class TestHandPose:
    def test_vector_round_trip(self):
        rng = np.random.default_rng(0)
        shape = HandShape()
        pose = random_pose(rng)
        vec = pose.to_vector(shape.beta)
        assert vec.shape == (HAND_PARAM_DIM,)
        back, beta = HandPose.from_vector(vec)
        assert np.allclose(back.global_trans, pose.global_trans)
        assert np.allclose(back.theta, pose.theta)
        assert back.global_rot.allclose(pose.global_rot, atol=1e-9)
        assert np.allclose(beta, shape.beta)

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            HandPose(Rotation.identity(), [np.nan, 0, 0], np.zeros(45))


class TestForwardKinematics:
    def test_zero_pose_is_template(self):
        shape = HandShape()
        joints = forward_kinematics(shape, HandPose())
        assert np.allclose(joints, shape.template, atol=1e-12)

    def test_global_transform_equivariance(self):
        rng = np.random.default_rng(1)
        shape = HandShape()
        for _ in range(20):
            theta = rng.uniform(-0.8, 0.8, size=THETA_DIM)
            r = random_rotation(rng)
            t = rng.normal(size=3) * 0.2
            local = forward_kinematics(shape, HandPose(theta=theta))
            world = forward_kinematics(shape, HandPose(r, t, theta))
            assert np.allclose(world, local @ r.matrix.T + t, atol=1e-10)

    @given(st.integers(0, 10_000))
    @settings(max_examples=40, deadline=None)
    def test_articulation_preserves_bone_lengths(self, seed):
        rng = np.random.default_rng(seed)
        shape = HandShape()
        pose = random_pose(rng, theta_scale=1.2)
        joints = forward_kinematics(shape, pose)
        assert np.allclose(
            sk.bone_lengths(joints), sk.bone_lengths(shape.template), atol=1e-9
        )

    def test_sequence_matches_per_frame(self):
        rng = np.random.default_rng(2)
        shape = HandShape(side="left")
        poses = [random_pose(rng) for _ in range(7)]
        batch = forward_kinematics_sequence(shape, poses)
        assert batch.shape == (7, 21, 3)
        for i, p in enumerate(poses):
            assert np.allclose(batch[i], forward_kinematics(shape, p), atol=1e-12)

    def test_wrist_at_translation(self):
        rng = np.random.default_rng(3)
        pose = random_pose(rng)
        joints = forward_kinematics(HandShape(), pose)
        assert np.allclose(joints[sk.WRIST], pose.global_trans, atol=1e-12)


class TestAngleLimits:
    def test_default_contains_zero(self):
        lim = AngleLimits.default()
        assert np.all(lim.flat_lo() <= 0.0)
        assert np.all(lim.flat_hi() >= 0.0)

    def test_clamp_in_bounds_and_idempotent(self):
        rng = np.random.default_rng(4)
        lim = AngleLimits.default()
        pose = HandPose(theta=rng.uniform(-4.0, 4.0, size=THETA_DIM))
        c = clamp_pose_angles(pose, lim)
        assert np.all(c.theta >= lim.flat_lo() - 1e-12)
        assert np.all(c.theta <= lim.flat_hi() + 1e-12)
        again = clamp_pose_angles(c, lim)
        assert np.array_equal(again.theta, c.theta)
        # global pose untouched
        assert c.global_rot.allclose(pose.global_rot)
        assert np.array_equal(c.global_trans, pose.global_trans)

    def test_clamp_noop_inside(self):
        pose = HandPose(theta=np.zeros(THETA_DIM))
        assert np.array_equal(clamp_pose_angles(pose).theta, pose.theta)


class TestSurfaceSampling:
    def test_deterministic_given_seed(self):
        shape = HandShape()
        pose = HandPose()
        a = sample_hand_surface(shape, pose, 256, seed=7)
        b = sample_hand_surface(shape, pose, 256, seed=7)
        c = sample_hand_surface(shape, pose, 256, seed=8)
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_points_on_capsule_walls(self):
        rng = np.random.default_rng(5)
        shape = HandShape()
        pose = random_pose(rng)
        joints = forward_kinematics(shape, pose)
        pts = sample_hand_surface(shape, pose, 256, seed=0)
        assert pts.shape == (256, 3)
        # every sample sits exactly capsule_radius from some bone segment
        a = joints[sk.BONE_PARENTS]
        b = joints[sk.BONE_CHILDREN]
        ab = b - a
        denom = np.maximum(np.einsum("kd,kd->k", ab, ab), 1e-30)
        for p in pts:
            t = np.clip(np.einsum("kd,kd->k", ab, p[None] - a), 0, denom) / denom
            closest = a + t[:, None] * ab
            d = np.linalg.norm(closest - p, axis=1)
            # exactly on the wall of its own capsule; possibly inside another
            # where capsules overlap near the palm
            assert np.min(np.abs(d - shape.capsule_radius)) < 1e-9
            assert d.min() <= shape.capsule_radius + 1e-9

    def test_joints_only_mode(self):
        shape = HandShape()
        pose = HandPose()
        pts = sample_hand_surface(shape, pose, 21, seed=0, joints_only=True)
        assert np.allclose(pts, forward_kinematics(shape, pose))
        with pytest.raises(ValueError):
            sample_hand_surface(shape, pose, 20, seed=0, joints_only=True)

    def test_count_validation(self):
        with pytest.raises(ValueError):
            sample_hand_surface(HandShape(), HandPose(), 5, seed=0)
