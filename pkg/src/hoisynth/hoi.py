"""Sequence data model and the canonical per-frame interaction vector.

Frame layout, d = 333, left hand always before right:

    J  [0:126)    2 x 21 joint positions, world meters
    C  [126:168)  42 contact flags, 1.0 iff nearest-surface distance < tau
    F  [168:297)  42 joint->nearest-surface offsets + (right wrist - left wrist)
    v  [297:315)  [left lin, left ang, right lin, right ang, rel lin, rel ang]
    a  [315:333)  same layout, one more finite difference

Angular velocity is the world-frame relative rotation between consecutive
frames, axis_angle(R^i R^{i-1,T}) * fps.  The body-frame variant cannot be
recovered from joint positions alone (any re-anchoring conjugates it by an
unknown constant rotation), and recanonicalize must reproduce stored values
from joints only, so the world-frame form is used on both paths.  First
frame of v and a is zero by convention.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np
import torch

from .geometry import PointCloud, RigidTransform, Rotation, kabsch_align
from .hand import HandPose, HandShape, forward_kinematics_sequence
from .hand import skeleton as sk
from .hand.model import HAND_PARAM_DIM

DEFAULT_FPS = 30
CONTACT_TAU = 0.01
SEQUENCE_FORMAT_VERSION = 1

J_DIM, C_DIM, F_DIM, V_DIM, A_DIM = 126, 42, 129, 18, 18
FRAME_DIM = J_DIM + C_DIM + F_DIM + V_DIM + A_DIM  # 333
J_SLICE = slice(0, 126)
C_SLICE = slice(126, 168)
F_SLICE = slice(168, 297)
V_SLICE = slice(297, 315)
A_SLICE = slice(315, 333)

LEFT_WRIST, RIGHT_WRIST = 0, 21  # indices into the 42-joint stack


@dataclass(frozen=True)
class GazeSequence:
    points: np.ndarray  # (l, 3)

    def __post_init__(self) -> None:
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] < 2:
            raise ValueError(f"gaze must be (l>=2, 3), got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("gaze contains non-finite values")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class ObjectMotion:
    rotations: np.ndarray  # (l, 3, 3)
    translations: np.ndarray  # (l, 3)

    def __post_init__(self) -> None:
        rot = np.asarray(self.rotations, dtype=np.float64)
        tr = np.asarray(self.translations, dtype=np.float64)
        if rot.ndim != 3 or rot.shape[1:] != (3, 3) or tr.shape != (rot.shape[0], 3):
            raise ValueError(f"bad object motion shapes {rot.shape}, {tr.shape}")
        for i in range(rot.shape[0]):
            Rotation(rot[i])  # validates orthonormality and det +1
        rot.setflags(write=False)
        tr.setflags(write=False)
        object.__setattr__(self, "rotations", rot)
        object.__setattr__(self, "translations", tr)

    def __len__(self) -> int:
        return self.rotations.shape[0]

    def transform(self, i: int) -> RigidTransform:
        return RigidTransform(Rotation(self.rotations[i]), self.translations[i])

    def rot6d(self) -> np.ndarray:
        return np.stack([Rotation(r).to_rot6d() for r in self.rotations])

    @staticmethod
    def from_rot6d(rot6d: np.ndarray, translations: np.ndarray) -> "ObjectMotion":
        rots = np.stack([Rotation.from_rot6d(r).matrix for r in np.asarray(rot6d)])
        return ObjectMotion(rots, translations)


@dataclass(frozen=True)
class HandMotion:
    left_shape: HandShape
    right_shape: HandShape
    left: tuple
    right: tuple

    def __post_init__(self) -> None:
        object.__setattr__(self, "left", tuple(self.left))
        object.__setattr__(self, "right", tuple(self.right))
        if self.left_shape.side != "left" or self.right_shape.side != "right":
            raise ValueError("hand shapes must carry their matching side")
        if len(self.left) != len(self.right) or not self.left:
            raise ValueError("left/right pose tracks must share a nonzero length")
        for p in (*self.left, *self.right):
            if not isinstance(p, HandPose):
                raise TypeError("pose tracks must contain HandPose values")

    def __len__(self) -> int:
        return len(self.left)


@dataclass(frozen=True)
class InteractionSequence:
    gaze: GazeSequence
    hands: HandMotion
    object_motion: ObjectMotion
    geometry: PointCloud
    fps: int = DEFAULT_FPS

    def __post_init__(self) -> None:
        l = len(self.gaze)
        if not (len(self.hands) == len(self.object_motion) == l):
            raise ValueError(
                f"length mismatch: gaze {l}, hands {len(self.hands)}, "
                f"object {len(self.object_motion)}"
            )
        if self.fps <= 0:
            raise ValueError("fps must be positive")

    @property
    def length(self) -> int:
        return len(self.gaze)


@dataclass(frozen=True)
class CanonicalHOI:
    frames: np.ndarray  # (l, 333)

    def __post_init__(self) -> None:
        fr = np.asarray(self.frames, dtype=np.float64)
        if fr.ndim != 2 or fr.shape[1] != FRAME_DIM:
            raise ValueError(f"frames must be (l, {FRAME_DIM}), got {fr.shape}")
        c = fr[:, C_SLICE]
        if not np.all((c == 0.0) | (c == 1.0)):
            raise ValueError("contact flags must be binary")
        fr.setflags(write=False)
        object.__setattr__(self, "frames", fr)

    def __len__(self) -> int:
        return self.frames.shape[0]

    @property
    def joints(self) -> np.ndarray:
        return self.frames[:, J_SLICE].reshape(-1, 2, sk.NUM_JOINTS, 3)

    @property
    def contacts(self) -> np.ndarray:
        return self.frames[:, C_SLICE]

    @property
    def offsets(self) -> np.ndarray:
        return self.frames[:, F_SLICE]

    @property
    def velocities(self) -> np.ndarray:
        return self.frames[:, V_SLICE]

    @property
    def accelerations(self) -> np.ndarray:
        return self.frames[:, A_SLICE]


# ---------------------------------------------------------------------------
# geometry posing


def posed_points(motion: ObjectMotion, cloud: PointCloud) -> np.ndarray:
    """Object surface points in world frame per frame, (l, N, 3)."""
    return (
        np.einsum("lij,nj->lni", motion.rotations, cloud.points)
        + motion.translations[:, None, :]
    )


def posed_normals(motion: ObjectMotion, cloud: PointCloud) -> np.ndarray:
    return np.einsum("lij,nj->lni", motion.rotations, cloud.normals)


def _nearest_batch(joints: np.ndarray, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Nearest surface point per joint. joints (l, k, 3), points (l, N, 3).

    Returns (indices (l, k), distances (l, k)); ties go to the lowest index
    (argmin picks the first minimum).
    """
    d2 = (
        np.einsum("lkd,lkd->lk", joints, joints)[:, :, None]
        - 2.0 * np.einsum("lkd,lnd->lkn", joints, points)
        + np.einsum("lnd,lnd->ln", points, points)[:, None, :]
    )
    idx = np.argmin(d2, axis=2)
    l = np.arange(joints.shape[0])[:, None]
    diff = points[l, idx] - joints
    return idx, np.linalg.norm(diff, axis=-1)


# ---------------------------------------------------------------------------
# canonical representation ops


def contact_flags(joints: np.ndarray, world_points: np.ndarray, tau: float = CONTACT_TAU) -> np.ndarray:
    """42 binary flags for one frame; joints (2, 21, 3), points (N, 3)."""
    j = np.asarray(joints, dtype=np.float64).reshape(1, 2 * sk.NUM_JOINTS, 3)
    _, dist = _nearest_batch(j, np.asarray(world_points, dtype=np.float64)[None])
    return (dist[0] < tau).astype(np.float64)


def offsets(joints: np.ndarray, world_points: np.ndarray) -> np.ndarray:
    """129 reals for one frame: 42 joint->nearest offsets, then wrist gap."""
    j = np.asarray(joints, dtype=np.float64).reshape(2 * sk.NUM_JOINTS, 3)
    pts = np.asarray(world_points, dtype=np.float64)
    idx, _ = _nearest_batch(j[None], pts[None])
    off = pts[idx[0]] - j
    inter = j[RIGHT_WRIST] - j[LEFT_WRIST]
    return np.concatenate([off.reshape(-1), inter])


def _relative_rotation_velocity(rots: np.ndarray, fps: float) -> np.ndarray:
    """axis_angle(R^i R^{i-1,T}) * fps for i >= 1; shape (l-1, 3)."""
    out = np.empty((rots.shape[0] - 1, 3))
    for i in range(1, rots.shape[0]):
        out[i - 1] = Rotation(rots[i] @ rots[i - 1].T).to_axis_angle() * fps
    return out


def velocities_accelerations(
    roots_left: np.ndarray,
    roots_right: np.ndarray,
    rots_left: np.ndarray,
    rots_right: np.ndarray,
    fps: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Root velocity and acceleration blocks, each (l, 18), first frame zero."""
    roots_left = np.asarray(roots_left, dtype=np.float64)
    roots_right = np.asarray(roots_right, dtype=np.float64)
    l = roots_left.shape[0]
    if l < 2:
        raise ValueError("need at least 2 frames")
    v = np.zeros((l, V_DIM))
    v[1:, 0:3] = (roots_left[1:] - roots_left[:-1]) * fps
    v[1:, 3:6] = _relative_rotation_velocity(np.asarray(rots_left), fps)
    v[1:, 6:9] = (roots_right[1:] - roots_right[:-1]) * fps
    v[1:, 9:12] = _relative_rotation_velocity(np.asarray(rots_right), fps)
    v[:, 12:15] = v[:, 6:9] - v[:, 0:3]
    v[:, 15:18] = v[:, 9:12] - v[:, 3:6]
    a = np.zeros((l, A_DIM))
    a[1:] = (v[1:] - v[:-1]) * fps
    return v, a


def canonicalize(seq: InteractionSequence, tau: float = CONTACT_TAU) -> CanonicalHOI:
    """Full per-frame canonical vectors for a ground-truth sequence."""
    l = seq.length
    jl = forward_kinematics_sequence(seq.hands.left_shape, seq.hands.left)
    jr = forward_kinematics_sequence(seq.hands.right_shape, seq.hands.right)
    joints = np.concatenate([jl, jr], axis=1)  # (l, 42, 3)

    pts = posed_points(seq.object_motion, seq.geometry)
    idx, dist = _nearest_batch(joints, pts)
    c = (dist < tau).astype(np.float64)
    li = np.arange(l)[:, None]
    off = pts[li, idx] - joints
    inter = joints[:, RIGHT_WRIST] - joints[:, LEFT_WRIST]

    rots_l = np.stack([p.global_rot.matrix for p in seq.hands.left])
    rots_r = np.stack([p.global_rot.matrix for p in seq.hands.right])
    v, a = velocities_accelerations(jl[:, 0], jr[:, 0], rots_l, rots_r, seq.fps)

    frames = np.concatenate(
        [joints.reshape(l, J_DIM), c, off.reshape(l, 126), inter, v, a], axis=1
    )
    return CanonicalHOI(frames)


def recanonicalize_torch(
    joints: torch.Tensor,
    surface: torch.Tensor,
    fps: float,
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Recompute (F, v, a) from joints alone; differentiable w.r.t. joints.

    joints: (l, 126); surface: (l, N, 3) posed object points (constant).
    Nearest-point indices and the per-pair Kabsch rotations are evaluated on
    detached joints and held fixed, so gradients flow only through the
    offset vectors, the wrist gap and the linear velocity chains.
    """
    l = joints.shape[0]
    j = joints.reshape(l, 2 * sk.NUM_JOINTS, 3)
    d2 = (
        (j * j).sum(-1)[:, :, None]
        - 2.0 * torch.einsum("lkd,lnd->lkn", j, surface)
        + (surface * surface).sum(-1)[:, None, :]
    )
    idx = d2.detach().argmin(dim=2)  # (l, 42)
    gathered = surface.gather(1, idx[:, :, None].expand(-1, -1, 3))
    off = gathered - j
    inter = j[:, RIGHT_WRIST] - j[:, LEFT_WRIST]
    f = torch.cat([off.reshape(l, 126), inter], dim=1)

    fps_t = float(fps)
    zero3 = torch.zeros((1, 3), dtype=joints.dtype)
    lin_l = torch.cat([zero3, (j[1:, LEFT_WRIST] - j[:-1, LEFT_WRIST]) * fps_t])
    lin_r = torch.cat([zero3, (j[1:, RIGHT_WRIST] - j[:-1, RIGHT_WRIST]) * fps_t])

    jn = j.detach().numpy()
    ang_l = np.zeros((l, 3))
    ang_r = np.zeros((l, 3))
    mcp = np.asarray(sk.MCP_JOINTS)
    for i in range(1, l):
        ang_l[i] = (
            kabsch_align(jn[i - 1, mcp], jn[i, mcp]).rotation.to_axis_angle() * fps_t
        )
        ang_r[i] = (
            kabsch_align(jn[i - 1, mcp + 21], jn[i, mcp + 21]).rotation.to_axis_angle()
            * fps_t
        )
    ang_l_t = torch.from_numpy(ang_l)
    ang_r_t = torch.from_numpy(ang_r)

    v = torch.cat([lin_l, ang_l_t, lin_r, ang_r_t, lin_r - lin_l, ang_r_t - ang_l_t], dim=1)
    a = torch.cat([torch.zeros((1, A_DIM), dtype=joints.dtype), (v[1:] - v[:-1]) * fps_t])
    return f, v, a


def recanonicalize(
    joints: np.ndarray,
    motion: ObjectMotion,
    cloud: PointCloud,
    fps: float,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Numpy facade over :func:`recanonicalize_torch`."""
    surface = torch.from_numpy(posed_points(motion, cloud))
    with torch.no_grad():
        f, v, a = recanonicalize_torch(
            torch.from_numpy(np.array(joints, dtype=np.float64)), surface, fps
        )
    return f.numpy(), v.numpy(), a.numpy()


# ---------------------------------------------------------------------------
# sequence JSON format v1


def _stable_pose_row(pose, beta: np.ndarray) -> list:
    """61-vector whose rotation entries survive load/save cycles bitwise.

    to_axis_angle(from_axis_angle(aa)) can drift by an ulp per round trip,
    so poses parsed from a file keep their source axis-angle (attached by
    _parse_hand_track) and re-emit it verbatim as long as it still decodes
    to the pose's exact rotation matrix. Freshly built poses fall back to
    the plain conversion.
    """
    row = pose.to_vector(beta)
    src = getattr(pose, "_src_axis_angle", None)
    if src is not None and np.array_equal(Rotation.from_axis_angle(src).matrix, pose.global_rot.matrix):
        row[:3] = src
    return row.tolist()


def _stable_rot6d_rows(motion: ObjectMotion) -> list:
    src = getattr(motion, "_src_rot6d", None)
    if src is not None:
        decoded = np.stack([Rotation.from_rot6d(r).matrix for r in src])
        if np.array_equal(decoded, motion.rotations):
            return src.tolist()
    return motion.rot6d().tolist()


def sequence_to_dict(seq: InteractionSequence) -> dict:
    hands = seq.hands
    return {
        "version": SEQUENCE_FORMAT_VERSION,
        "fps": seq.fps,
        "length": seq.length,
        "gaze": seq.gaze.points.tolist(),
        "left": [_stable_pose_row(p, hands.left_shape.beta) for p in hands.left],
        "right": [_stable_pose_row(p, hands.right_shape.beta) for p in hands.right],
        "object": {
            "rot6d": _stable_rot6d_rows(seq.object_motion),
            "trans": seq.object_motion.translations.tolist(),
        },
        "geometry": {
            "points": seq.geometry.points.tolist(),
            "normals": seq.geometry.normals.tolist(),
        },
    }


def _parse_hand_track(rows, side: str) -> tuple[HandShape, list[HandPose]]:
    vecs = np.asarray(rows, dtype=np.float64)
    if vecs.ndim != 2 or vecs.shape[1] != HAND_PARAM_DIM:
        raise ValueError(f"{side} track must be (l, {HAND_PARAM_DIM}), got {vecs.shape}")
    betas = vecs[:, 51:]
    if not np.array_equal(betas, np.tile(betas[0], (len(vecs), 1))):
        raise ValueError(f"{side} hand beta varies across frames")
    shape = HandShape(betas[0], side=side)
    poses = []
    for v in vecs:
        pose = HandPose.from_vector(v)[0]
        # remember the exact stored encoding so re-serializing is bitwise stable
        object.__setattr__(pose, "_src_axis_angle", v[:3].copy())
        poses.append(pose)
    return shape, poses


def sequence_from_dict(data: dict) -> InteractionSequence:
    if data.get("version") != SEQUENCE_FORMAT_VERSION:
        raise ValueError(f"unsupported sequence format version {data.get('version')!r}")
    l = int(data["length"])
    gaze = GazeSequence(np.asarray(data["gaze"], dtype=np.float64))
    if len(gaze) != l:
        raise ValueError(f"declared length {l} but gaze has {len(gaze)} frames")
    left_shape, left = _parse_hand_track(data["left"], "left")
    right_shape, right = _parse_hand_track(data["right"], "right")
    obj = data["object"]
    rot6d_rows = np.asarray(obj["rot6d"], dtype=np.float64)
    motion = ObjectMotion.from_rot6d(rot6d_rows, np.asarray(obj["trans"], dtype=np.float64))
    object.__setattr__(motion, "_src_rot6d", rot6d_rows)
    geom = data["geometry"]
    cloud = PointCloud(
        np.asarray(geom["points"], dtype=np.float64),
        np.asarray(geom["normals"], dtype=np.float64),
    )
    return InteractionSequence(
        gaze=gaze,
        hands=HandMotion(left_shape, right_shape, left, right),
        object_motion=motion,
        geometry=cloud,
        fps=int(data["fps"]),
    )


def dump_json(obj, path: str) -> None:
    """Serialize to compact JSON, atomically (write temp file, then rename)."""
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        json.dump(obj, fh, separators=(",", ":"))
        fh.write("\n")
    os.replace(tmp, path)


def save_sequence(seq: InteractionSequence, path: str) -> None:
    dump_json(sequence_to_dict(seq), path)


def load_sequence(path: str) -> InteractionSequence:
    with open(path) as fh:
        return sequence_from_dict(json.load(fh))
