"""Inverse-kinematics fitting: pose recovery from joint positions."""

import numpy as np
import pytest
import torch

from hoisynth.geometry import Rotation
from hoisynth.hand import skeleton as sk
from hoisynth.hand.fitting import (
    FittingDivergence,
    FitResult,
    fit_pose_to_joints,
    fit_poses_to_joints,
)
from hoisynth.hand.model import (
    THETA_DIM,
    AngleLimits,
    HandPose,
    HandShape,
    clamp_pose_angles,
    forward_kinematics,
)

torch.set_num_threads(1)


def random_pose(rng, limits=None, rot_scale=1.0):
    limits = limits or AngleLimits.default()
    theta = rng.uniform(limits.flat_lo(), limits.flat_hi())
    rot = Rotation.from_axis_angle(rng.normal(size=3) * rot_scale)
    return HandPose(rot, rng.normal(size=3), theta)


class TestRoundTrip:
    def test_fk_roundtrip_within_2mm(self):
        # achievable targets from in-limit poses: default init must land
        # within 2 mm mean joint error inside the default iteration budget
        rng = np.random.default_rng(11)
        for side in ("left", "right"):
            shape = HandShape(side=side)
            for _ in range(3):
                pose = random_pose(rng)
                target = forward_kinematics(shape, pose)
                res = fit_pose_to_joints(target, shape)
                assert res.error <= 2e-3
                assert res.iterations <= 500

    def test_error_is_mean_joint_distance(self):
        rng = np.random.default_rng(12)
        shape = HandShape(side="right")
        pose = random_pose(rng)
        target = forward_kinematics(shape, pose)
        res = fit_pose_to_joints(target, shape)
        joints = forward_kinematics(shape, res.pose)
        mpjpe = np.linalg.norm(joints - target, axis=-1).mean()
        assert abs(res.error - mpjpe) < 1e-12

    def test_noisy_targets_within_3mm(self):
        rng = np.random.default_rng(13)
        shape = HandShape(side="left")
        pose = random_pose(rng)
        target = forward_kinematics(shape, pose)
        noisy = target + rng.uniform(-1e-3, 1e-3, size=target.shape)
        res = fit_pose_to_joints(noisy, shape)
        assert res.error <= 3e-3


class TestRigidOnly:
    def test_rigid_target_recovered_by_kabsch_alone(self):
        # rigidly moved rest joints: the MCP Kabsch fit is exact, so the
        # articulation stays at zero and the residual is numerical noise
        shape = HandShape(side="right")
        rest = forward_kinematics(
            shape, HandPose(Rotation.identity(), np.zeros(3), np.zeros(THETA_DIM))
        )
        rot = Rotation.from_axis_angle(np.array([0.3, -0.2, 0.5]))
        target = rest @ rot.matrix.T + np.array([0.1, 0.2, 0.3])
        res = fit_pose_to_joints(target, shape)
        assert res.error < 1e-9
        assert np.all(res.pose.theta == 0.0)
        assert np.allclose(res.pose.global_rot.matrix, rot.matrix, atol=1e-12)
        assert np.allclose(res.pose.global_trans, [0.1, 0.2, 0.3], atol=1e-12)

    def test_global_pose_comes_from_mcp_kabsch(self):
        # even for unreachable targets the returned global transform is the
        # Kabsch alignment of the template knuckles, independent of theta
        from hoisynth.geometry import kabsch_align

        rng = np.random.default_rng(21)
        shape = HandShape(side="left")
        target = rng.normal(size=(sk.NUM_JOINTS, 3)) * 0.05
        res = fit_pose_to_joints(target, shape, iters=3)
        tf = kabsch_align(shape.template[sk.MCP_JOINTS], target[sk.MCP_JOINTS])
        assert np.array_equal(res.pose.global_rot.matrix, tf.rotation.matrix)
        assert np.array_equal(res.pose.global_trans, tf.translation)


class TestLimits:
    def test_result_always_within_limits(self):
        # targets generated beyond the joint limits: the fit projects onto
        # the feasible box, never outside it
        lim = AngleLimits.default()
        shape = HandShape(side="right")
        pose_out = HandPose(Rotation.identity(), np.zeros(3), lim.flat_hi() + 0.8)
        target = forward_kinematics(shape, pose_out)
        res = fit_pose_to_joints(target, shape)
        assert np.all(res.pose.theta <= lim.flat_hi() + 1e-15)
        assert np.all(res.pose.theta >= lim.flat_lo() - 1e-15)

    def test_custom_limits_respected(self):
        rng = np.random.default_rng(31)
        tight = AngleLimits(
            lo=np.full((sk.NUM_ARTICULATED, 3), -0.01),
            hi=np.full((sk.NUM_ARTICULATED, 3), 0.01),
        )
        shape = HandShape(side="left")
        pose = random_pose(rng)
        target = forward_kinematics(shape, pose)
        res = fit_pose_to_joints(target, shape, limits=tight)
        assert np.all(np.abs(res.pose.theta) <= 0.01 + 1e-15)

    def test_clamp_index_mcp_abduction(self):
        # index MCP abduction (Y) saturates at 0.35 rad under default limits
        idx_mcp = sk.ARTICULATED_MCP[1]
        theta = np.zeros(THETA_DIM)
        theta[idx_mcp * 3 + 1] = 1.0
        pose = HandPose(Rotation.identity(), np.zeros(3), theta)
        clamped = clamp_pose_angles(pose)
        assert clamped.theta[idx_mcp * 3 + 1] == pytest.approx(0.35)


class TestBatchAndInit:
    def test_batch_matches_per_frame(self):
        # per-frame losses are independent and Adam state is elementwise,
        # so the batched fit reproduces single-frame fits exactly
        rng = np.random.default_rng(41)
        shape = HandShape(side="right")
        targets = np.stack(
            [forward_kinematics(shape, random_pose(rng, rot_scale=0.5)) for _ in range(3)]
        )
        batch = fit_poses_to_joints(targets, shape, iters=120)
        for i, res in enumerate(batch):
            single = fit_pose_to_joints(targets[i], shape, iters=120)
            assert np.array_equal(res.pose.theta, single.pose.theta)
            assert res.error == single.error

    def test_init_at_ground_truth_converges_immediately(self):
        rng = np.random.default_rng(42)
        shape = HandShape(side="left")
        pose = random_pose(rng)
        target = forward_kinematics(shape, pose)
        res = fit_pose_to_joints(target, shape, init=pose, iters=5)
        assert res.error < 1e-9

    def test_best_iterate_kept_not_last(self):
        # the result carries the lowest-residual parameters seen, so adding
        # iterations can never report a worse error
        rng = np.random.default_rng(43)
        shape = HandShape(side="right")
        pose = random_pose(rng)
        target = forward_kinematics(shape, pose)
        short = fit_pose_to_joints(target, shape, iters=50)
        long = fit_pose_to_joints(target, shape, iters=500)
        assert long.error <= short.error + 1e-12


class TestDivergence:
    def test_divergence_raises_with_results(self):
        rng = np.random.default_rng(51)
        shape = HandShape(side="left")
        pose = random_pose(rng)
        target = forward_kinematics(shape, pose)
        with pytest.raises(FittingDivergence) as exc:
            fit_poses_to_joints(
                target[None], shape, step=1.0, iters=100, divergence_patience=1
            )
        results = exc.value.results
        assert len(results) == 1
        assert isinstance(results[0], FitResult)
        # best-so-far pose is still returned and respects the limits
        lim = AngleLimits.default()
        assert np.all(results[0].pose.theta <= lim.flat_hi() + 1e-15)
        assert np.isfinite(results[0].error)
        assert results[0].iterations < 100


class TestValidation:
    def test_single_frame_shape(self):
        shape = HandShape(side="right")
        with pytest.raises(ValueError):
            fit_pose_to_joints(np.zeros((20, 3)), shape)

    def test_batch_shape(self):
        shape = HandShape(side="right")
        with pytest.raises(ValueError):
            fit_poses_to_joints(np.zeros((4, 21, 2)), shape)
