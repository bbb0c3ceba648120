"""Simplified parametric hand with a MANO-compatible 61-parameter layout.

A hand is ``(shape, pose)``: 10 shape coefficients plus a per-frame pose of
global rotation, global translation and 45 articulation angles.  The flat
61-vector serialization is ``[axis_angle(3), translation(3), theta(45),
beta(10)]``.

Forward kinematics runs in torch (float64) so downstream fitting and
guidance can differentiate through it; numpy facades cover the plain
data-path callers.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import torch

from ..geometry import Rotation, Vec3
from . import skeleton as sk

DT = torch.float64

# beta layout: [global scale, palm width, 5 per-finger length scales, 3 reserved]
BETA_GLOBAL = 0
BETA_PALM = 1
BETA_FINGERS = slice(2, 7)
BETA_RESERVED = slice(7, 10)

HAND_PARAM_DIM = 61  # 3 rot + 3 trans + 45 theta + 10 beta
THETA_DIM = 45


@dataclass(frozen=True)
class HandShape:
    """Shape coefficients and the scaled rest skeleton they induce."""

    beta: np.ndarray = field(default_factory=lambda: np.ones(10))
    side: str = "right"

    def __post_init__(self) -> None:
        beta = np.asarray(self.beta, dtype=np.float64).reshape(10)
        if np.any(beta[:7] < 0.5) or np.any(beta[:7] > 2.0):
            raise ValueError("shape scales must lie in [0.5, 2.0]")
        if self.side not in ("left", "right"):
            raise ValueError(f"side must be 'left' or 'right', got {self.side!r}")
        beta.setflags(write=False)
        object.__setattr__(self, "beta", beta)

    @property
    def offsets(self) -> np.ndarray:
        """Parent-relative rest offsets (21, 3) with shape scaling applied.

        Global scale multiplies everything; palm width scales the x component
        of the wrist->MCP offsets; per-finger length scales the three distal
        segments.  The left hand mirrors x.
        """
        g = self.beta[BETA_GLOBAL]
        off = sk.REST_OFFSETS.copy()
        for f in range(5):
            mcp = 1 + 4 * f
            off[mcp, 0] *= self.beta[BETA_PALM]
            off[mcp + 1 : mcp + 4] *= self.beta[2 + f]
        off *= g
        if self.side == "left":
            off[:, 0] = -off[:, 0]
        return off

    @property
    def template(self) -> np.ndarray:
        """Rest joint positions (21, 3) at zero pose, identity global."""
        return sk.rest_positions(self.offsets)

    @property
    def capsule_radius(self) -> float:
        return 0.008 * float(self.beta[BETA_GLOBAL])


@dataclass(frozen=True)
class HandPose:
    global_rot: Rotation = field(default_factory=Rotation.identity)
    global_trans: np.ndarray = field(default_factory=lambda: np.zeros(3))
    theta: np.ndarray = field(default_factory=lambda: np.zeros(THETA_DIM))

    def __post_init__(self) -> None:
        trans = np.asarray(self.global_trans, dtype=np.float64).reshape(3)
        theta = np.asarray(self.theta, dtype=np.float64).reshape(THETA_DIM)
        if not (np.all(np.isfinite(trans)) and np.all(np.isfinite(theta))):
            raise ValueError("pose parameters must be finite")
        trans.setflags(write=False)
        theta.setflags(write=False)
        object.__setattr__(self, "global_trans", trans)
        object.__setattr__(self, "theta", theta)

    def to_vector(self, beta: np.ndarray) -> np.ndarray:
        """Flat 61-vector [axis_angle, trans, theta, beta]."""
        return np.concatenate(
            [self.global_rot.to_axis_angle(), self.global_trans, self.theta, np.asarray(beta)]
        )

    @staticmethod
    def from_vector(vec) -> tuple["HandPose", np.ndarray]:
        """Inverse of :meth:`to_vector`; returns (pose, beta)."""
        v = np.asarray(vec, dtype=np.float64).reshape(HAND_PARAM_DIM)
        pose = HandPose(Rotation.from_axis_angle(v[:3]), v[3:6], v[6:51])
        return pose, v[51:]


@dataclass(frozen=True)
class AngleLimits:
    """Per-axis (lo, hi) bounds, radians, for the 15 articulated joints.

    Defaults: flexion (local X) in [-0.2, 1.8] everywhere; abduction
    (local Y) in [-0.35, 0.35] at the MCPs and [-0.05, 0.05] elsewhere;
    twist (local Z) in [-0.05, 0.05] everywhere.
    """

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self) -> None:
        lo = np.asarray(self.lo, dtype=np.float64).reshape(sk.NUM_ARTICULATED, 3)
        hi = np.asarray(self.hi, dtype=np.float64).reshape(sk.NUM_ARTICULATED, 3)
        if np.any(lo > hi):
            raise ValueError("angle limits require lo <= hi")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @staticmethod
    def default() -> "AngleLimits":
        lo = np.empty((sk.NUM_ARTICULATED, 3))
        hi = np.empty((sk.NUM_ARTICULATED, 3))
        lo[:, 0], hi[:, 0] = -0.2, 1.8
        lo[:, 1], hi[:, 1] = -0.05, 0.05
        lo[sk.ARTICULATED_MCP, 1], hi[sk.ARTICULATED_MCP, 1] = -0.35, 0.35
        lo[:, 2], hi[:, 2] = -0.05, 0.05
        return AngleLimits(lo, hi)

    def flat_lo(self) -> np.ndarray:
        return self.lo.reshape(THETA_DIM)

    def flat_hi(self) -> np.ndarray:
        return self.hi.reshape(THETA_DIM)


def clamp_pose_angles(pose: HandPose, limits: AngleLimits | None = None) -> HandPose:
    """Clip articulation angles into their limits; global pose untouched."""
    limits = limits or AngleLimits.default()
    clipped = np.clip(pose.theta, limits.flat_lo(), limits.flat_hi())
    return replace(pose, theta=clipped)


# ---------------------------------------------------------------------------
# forward kinematics (torch core)


def euler_xyz_to_matrix(angles: torch.Tensor) -> torch.Tensor:
    """Intrinsic X-Y-Z Euler angles (..., 3) to rotation matrices (..., 3, 3).

    R = Rx(a) @ Ry(b) @ Rz(c); local X is the flexion axis.
    """
    a, b, c = angles[..., 0], angles[..., 1], angles[..., 2]
    ca, sa = torch.cos(a), torch.sin(a)
    cb, sb = torch.cos(b), torch.sin(b)
    cc, sc = torch.cos(c), torch.sin(c)
    row0 = torch.stack([cb * cc, -cb * sc, sb], dim=-1)
    row1 = torch.stack([ca * sc + sa * sb * cc, ca * cc - sa * sb * sc, -sa * cb], dim=-1)
    row2 = torch.stack([sa * sc - ca * sb * cc, sa * cc + ca * sb * sc, ca * cb], dim=-1)
    return torch.stack([row0, row1, row2], dim=-2)


def axis_angle_to_matrix(aa: torch.Tensor) -> torch.Tensor:
    """Rodrigues formula on (..., 3) axis-angle vectors, smooth through zero."""
    theta2 = (aa * aa).sum(-1)
    theta = torch.sqrt(theta2.clamp_min(1e-30))
    sin_term = torch.sinc(theta / torch.pi)  # sin(theta)/theta, exact at 0
    cos_term = torch.where(
        theta < 1e-4,
        0.5 - theta2 / 24.0,
        (1.0 - torch.cos(theta)) / theta2.clamp_min(1e-30),
    )
    zeros = torch.zeros_like(theta)
    x, y, z = aa[..., 0], aa[..., 1], aa[..., 2]
    k = torch.stack(
        [
            torch.stack([zeros, -z, y], dim=-1),
            torch.stack([z, zeros, -x], dim=-1),
            torch.stack([-y, x, zeros], dim=-1),
        ],
        dim=-2,
    )
    eye = torch.eye(3, dtype=aa.dtype, device=aa.device).expand(k.shape)
    return eye + sin_term[..., None, None] * k + cos_term[..., None, None] * (k @ k)


def fk_batch(
    offsets: torch.Tensor,
    global_rot: torch.Tensor,
    global_trans: torch.Tensor,
    theta: torch.Tensor,
) -> torch.Tensor:
    """Batched forward kinematics.

    offsets: (21, 3) shaped rest offsets; global_rot: (B, 3, 3);
    global_trans: (B, 3); theta: (B, 45).  Returns joints (B, 21, 3).
    Wrist -> tips chain order; the global transform frames the whole chain.
    """
    b = theta.shape[0]
    locals_ = euler_xyz_to_matrix(theta.reshape(b, sk.NUM_ARTICULATED, 3))
    off = offsets.to(theta.dtype)
    out: list = [None] * sk.NUM_JOINTS
    out[0] = global_trans
    for f in range(5):
        mcp = 1 + 4 * f
        art = 3 * f
        frame = global_rot
        pos = global_trans + torch.einsum("bij,j->bi", frame, off[mcp])
        out[mcp] = pos
        for s in range(3):
            frame = frame @ locals_[:, art + s]
            pos = pos + torch.einsum("bij,j->bi", frame, off[mcp + 1 + s])
            out[mcp + 1 + s] = pos
    return torch.stack(out, dim=1)


def fk_params(offsets: torch.Tensor, params: torch.Tensor) -> torch.Tensor:
    """FK from flat (B, 51) pose parameters [axis_angle, trans, theta]."""
    rot = axis_angle_to_matrix(params[:, :3])
    return fk_batch(offsets, rot, params[:, 3:6], params[:, 6:51])


def forward_kinematics(shape: HandShape, pose: HandPose) -> np.ndarray:
    """World joint positions (21, 3) for a single pose."""
    with torch.no_grad():
        joints = fk_batch(
            torch.from_numpy(shape.offsets),
            torch.from_numpy(pose.global_rot.matrix.copy()).unsqueeze(0),
            torch.from_numpy(pose.global_trans.copy()).unsqueeze(0),
            torch.from_numpy(pose.theta.copy()).unsqueeze(0),
        )
    return joints[0].numpy()


def forward_kinematics_sequence(shape: HandShape, poses) -> np.ndarray:
    """World joints (l, 21, 3) for a pose sequence, evaluated in one batch."""
    rot = torch.from_numpy(np.stack([p.global_rot.matrix for p in poses]))
    trans = torch.from_numpy(np.stack([p.global_trans for p in poses]))
    theta = torch.from_numpy(np.stack([p.theta for p in poses]))
    with torch.no_grad():
        joints = fk_batch(torch.from_numpy(shape.offsets), rot, trans, theta)
    return joints.numpy()


# ---------------------------------------------------------------------------
# surface sampling


def sample_hand_surface(
    shape: HandShape,
    pose: HandPose,
    m: int,
    seed: int,
    joints_only: bool = False,
) -> np.ndarray:
    """m points on capsules swept along the posed bones.

    Each sample sits exactly on the capsule wall (distance = capsule radius
    from its bone segment).  ``joints_only`` is the degenerate mode used by
    coarse scoring: it returns the 21 joint positions themselves.
    """
    joints = forward_kinematics(shape, pose)
    if joints_only:
        if m != sk.NUM_JOINTS:
            raise ValueError("joints_only mode requires m == 21")
        return joints
    if m < sk.NUM_JOINTS:
        raise ValueError(f"need m >= 21, got {m}")
    rng = np.random.default_rng(seed)
    bones = rng.integers(0, sk.NUM_BONES, size=m)
    ts = rng.uniform(0.0, 1.0, size=m)
    dirs = rng.normal(size=(m, 3))
    a = joints[sk.BONE_PARENTS[bones]]
    bpts = joints[sk.BONE_CHILDREN[bones]]
    axis = bpts - a
    axis_len = np.linalg.norm(axis, axis=1, keepdims=True)
    axis_unit = axis / np.maximum(axis_len, 1e-12)
    # reject the along-bone component so the offset is radial
    perp = dirs - np.sum(dirs * axis_unit, axis=1, keepdims=True) * axis_unit
    norms = np.linalg.norm(perp, axis=1, keepdims=True)
    fallback = np.cross(axis_unit, np.array([0.57735027, 0.57735027, 0.57735027]))
    bad = norms[:, 0] < 1e-9
    perp[bad] = fallback[bad]
    perp /= np.maximum(np.linalg.norm(perp, axis=1, keepdims=True), 1e-12)
    return a + ts[:, None] * axis + shape.capsule_radius * perp
