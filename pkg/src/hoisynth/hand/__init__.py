"""Parametric hand: skeleton asset, forward kinematics, pose fitting."""

from . import skeleton
from .fitting import FitResult, FittingDivergence, fit_pose_to_joints, fit_poses_to_joints
from .model import (
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

__all__ = [
    "skeleton",
    "AngleLimits",
    "FitResult",
    "FittingDivergence",
    "HandPose",
    "HandShape",
    "HAND_PARAM_DIM",
    "THETA_DIM",
    "clamp_pose_angles",
    "fit_pose_to_joints",
    "fit_poses_to_joints",
    "forward_kinematics",
    "forward_kinematics_sequence",
    "sample_hand_surface",
]
