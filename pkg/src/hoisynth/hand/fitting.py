"""Inverse kinematics: recover hand pose parameters from joint positions.

The MCP knuckles (and the wrist) move rigidly with the global transform, so
a Kabsch fit over the five MCPs recovers the global pose exactly whenever
the target is achievable.  Articulation angles are then refined by Adam on
the squared joint residual with the learning rate decayed exponentially to
1% of its initial value; plain fixed-step gradient descent stalls far above
the required accuracy because the distal angle directions are poorly
conditioned.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from ..geometry import Rotation, kabsch_align
from . import skeleton as sk
from .model import AngleLimits, HandPose, HandShape, fk_batch


@dataclass(frozen=True)
class FitResult:
    pose: HandPose
    error: float  # mean per-joint distance to target, meters
    iterations: int


class FittingDivergence(RuntimeError):
    """Raised when the loss rises for many consecutive iterations.

    ``results`` holds the best poses seen before the failure.
    """

    def __init__(self, message: str, results: list[FitResult]):
        super().__init__(message)
        self.results = results


def _mean_joint_error(joints: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    return (joints - target).norm(dim=-1).mean(dim=-1)


def fit_poses_to_joints(
    targets: np.ndarray,
    shape: HandShape,
    init: HandPose | None = None,
    iters: int = 500,
    step: float = 0.1,
    limits: AngleLimits | None = None,
    divergence_patience: int = 10,
) -> list[FitResult]:
    """Fit one pose per target frame; all frames share one optimizer.

    targets: (B, 21, 3).  ``init`` seeds the articulation angles (its global
    pose is ignored: the Kabsch step determines that).  Returns one FitResult
    per frame, each carrying the best (lowest-residual) parameters
    encountered, which is not necessarily the last iterate.
    """
    targets = np.asarray(targets, dtype=np.float64)
    if targets.ndim != 3 or targets.shape[1:] != (sk.NUM_JOINTS, 3):
        raise ValueError(f"targets must be (B, 21, 3), got {targets.shape}")
    limits = limits or AngleLimits.default()
    b = targets.shape[0]

    template_mcp = shape.template[sk.MCP_JOINTS]
    rots = np.empty((b, 3, 3))
    trans = np.empty((b, 3))
    for i in range(b):
        tf = kabsch_align(template_mcp, targets[i, sk.MCP_JOINTS])
        rots[i] = tf.rotation.matrix
        trans[i] = tf.translation

    offsets = torch.from_numpy(shape.offsets.copy())
    target_t = torch.from_numpy(targets)
    rot_t = torch.from_numpy(rots)
    trans_t = torch.from_numpy(trans)
    lo = torch.from_numpy(limits.flat_lo().copy()).expand(b, -1)
    hi = torch.from_numpy(limits.flat_hi().copy()).expand(b, -1)

    theta0 = np.zeros((b, 45)) if init is None else np.tile(init.theta, (b, 1))
    theta = torch.tensor(theta0, dtype=torch.float64, requires_grad=True)
    opt = torch.optim.Adam([theta], lr=step)

    best_loss = torch.full((b,), np.inf, dtype=torch.float64)
    best_theta = torch.zeros((b, 45), dtype=torch.float64)
    prev_total = np.inf
    bad_streak = 0
    stopped_at = iters

    def evaluate() -> tuple[torch.Tensor, torch.Tensor]:
        joints = fk_batch(offsets, rot_t, trans_t, theta)
        resid = joints - target_t
        return 0.5 * (resid * resid).sum(dim=(1, 2)), joints

    for i in range(iters):
        for group in opt.param_groups:
            group["lr"] = step * 0.01 ** (i / iters)
        opt.zero_grad()
        per, _ = evaluate()
        with torch.no_grad():
            better = per < best_loss
            best_theta[better] = theta.detach()[better]
            best_loss = torch.minimum(best_loss, per.detach())
        total = float(per.detach().sum())
        if total > prev_total:
            bad_streak += 1
        else:
            bad_streak = 0
        prev_total = total
        if bad_streak >= divergence_patience:
            stopped_at = i
            break
        per.sum().backward()
        opt.step()
        with torch.no_grad():
            theta.clamp_(min=lo, max=hi)

    with torch.no_grad():
        per, _ = evaluate()
        better = per < best_loss
        best_theta[better] = theta.detach()[better]
        best_loss = torch.minimum(best_loss, per)
        joints = fk_batch(offsets, rot_t, trans_t, best_theta)
        errors = _mean_joint_error(joints, target_t)

    results = [
        FitResult(
            pose=HandPose(Rotation(rots[i]), trans[i], best_theta[i].numpy()),
            error=float(errors[i]),
            iterations=stopped_at,
        )
        for i in range(b)
    ]
    if bad_streak >= divergence_patience:
        raise FittingDivergence(
            f"loss increased for {divergence_patience} consecutive iterations "
            f"(stopped at iteration {stopped_at})",
            results,
        )
    return results


def fit_pose_to_joints(
    target: np.ndarray,
    shape: HandShape,
    init: HandPose | None = None,
    iters: int = 500,
    step: float = 0.1,
    limits: AngleLimits | None = None,
) -> FitResult:
    """Recover (global pose, articulation) for one frame of joint positions."""
    target = np.asarray(target, dtype=np.float64)
    if target.shape != (sk.NUM_JOINTS, 3):
        raise ValueError(f"target must be (21, 3), got {target.shape}")
    return fit_poses_to_joints(
        target[None], shape, init=init, iters=iters, step=step, limits=limits
    )[0]
