"""Procedural desk-scale interaction scenes.

Each scene is a pick-and-place episode on a virtual desktop: an object rests
on the plane, the right hand approaches from a standoff pose while the
fingers curl, holds the grasp, carries the object along a smooth lifted arc,
then releases and retreats. The fingertip of the index finger is pinned to a
sampled surface point through the grasp and move phases, so ground-truth
contact is exact by construction. The left hand idles off to the side.

Gaze anticipates the interaction: each frame fixates where the grasp point
will be `lead` seconds later, with isotropic jitter, plus short 3-frame
saccades away from the target on roughly 10% of frames. All randomness flows
through one seeded generator, so a (config, seed) pair fully determines the
scene.

Object geometry comes from analytic primitives (box, sphere, cylinder) with
exact outward normals, which keeps penetration oracles trustworthy.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .geometry import PointCloud, RigidTransform, Rotation
from .hand import (
    HandPose,
    HandShape,
    THETA_DIM,
    clamp_pose_angles,
    forward_kinematics,
)
from .hoi import (
    DEFAULT_FPS,
    GazeSequence,
    HandMotion,
    InteractionSequence,
    ObjectMotion,
)

PRIMITIVES = ("box", "sphere", "cylinder")
INDEX_TIP = 8  # joint index of the pinned fingertip

# per-finger curl pattern at full grasp, X angle per [MCP, PIP, DIP]
_CURL = {
    "thumb": (0.35, 0.55, 0.30),
    "index": (0.70, 0.95, 0.60),
    "middle": (0.75, 1.00, 0.65),
    "ring": (0.70, 0.95, 0.60),
    "pinky": (0.60, 0.85, 0.55),
}
_FINGER_ORDER = ("thumb", "index", "middle", "ring", "pinky")


@dataclass(frozen=True)
class SceneConfig:
    primitives: tuple = PRIMITIVES
    n_points: int = 500
    length_range: tuple = (30, 90)
    fps: int = DEFAULT_FPS
    gaze_lead_s: float = 0.4
    gaze_jitter_m: float = 0.005
    saccade_rate: float = 0.10
    saccade_frames: int = 3
    grasp_flexion: float = 1.0
    phase_fractions: tuple = (0.30, 0.15, 0.40, 0.15)  # approach/grasp/move/place

    def __post_init__(self) -> None:
        object.__setattr__(self, "primitives", tuple(self.primitives))
        object.__setattr__(self, "length_range", tuple(int(v) for v in self.length_range))
        object.__setattr__(self, "phase_fractions", tuple(float(v) for v in self.phase_fractions))
        if not self.primitives or any(p not in PRIMITIVES for p in self.primitives):
            raise ValueError(f"primitives must be drawn from {PRIMITIVES}")
        if self.n_points < 4:
            raise ValueError("need at least 4 surface samples")
        lo, hi = self.length_range
        if lo < 8 or hi < lo:
            raise ValueError("length range must satisfy 8 <= lo <= hi")
        if self.fps <= 0:
            raise ValueError("fps must be positive")
        if self.gaze_lead_s < 0 or self.gaze_jitter_m < 0:
            raise ValueError("gaze parameters must be nonnegative")
        if not 0.0 <= self.saccade_rate <= 1.0:
            raise ValueError("saccade rate must lie in [0, 1]")
        if len(self.phase_fractions) != 4 or any(f <= 0 for f in self.phase_fractions):
            raise ValueError("need 4 positive phase fractions")
        if abs(sum(self.phase_fractions) - 1.0) > 1e-9:
            raise ValueError("phase fractions must sum to 1")
        if not 0.0 <= self.grasp_flexion <= 1.5:
            raise ValueError("grasp_flexion must lie in [0, 1.5]")

    def to_dict(self) -> dict:
        return asdict(self)


def config_from_dict(d: dict) -> SceneConfig:
    return SceneConfig(**d)


# ---------------------------------------------------------------------------
# primitives


def sample_primitive(kind: str, n: int, rng: np.random.Generator):
    """n surface samples with exact outward normals; returns (cloud, dims).

    Clouds live in the body frame with the centroid of the solid at the
    origin; `rest_z` in dims is the height of the centroid when the solid
    sits on the z=0 desk plane.
    """
    if kind == "box":
        half = rng.uniform([0.03, 0.03, 0.03], [0.06, 0.06, 0.06])
        hx, hy, hz = half
        areas = np.array([hy * hz, hy * hz, hx * hz, hx * hz, hx * hy, hx * hy])
        face = rng.choice(6, size=n, p=areas / areas.sum())
        u = rng.uniform(-1.0, 1.0, size=(n, 2))
        pts = np.zeros((n, 3))
        nrm = np.zeros((n, 3))
        for f in range(6):
            m = face == f
            axis, sign = divmod(f, 2)
            sign = 1.0 if sign == 0 else -1.0
            others = [a for a in range(3) if a != axis]
            pts[m, axis] = sign * half[axis]
            pts[m, others[0]] = u[m, 0] * half[others[0]]
            pts[m, others[1]] = u[m, 1] * half[others[1]]
            nrm[m, axis] = sign
        dims = {"half_extents": half.tolist(), "rest_z": float(hz)}
    elif kind == "sphere":
        r = float(rng.uniform(0.03, 0.055))
        dirs = rng.normal(size=(n, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        pts, nrm = r * dirs, dirs
        dims = {"radius": r, "rest_z": r}
    elif kind == "cylinder":
        r = float(rng.uniform(0.02, 0.045))
        h = float(rng.uniform(0.03, 0.07))  # half height
        lateral = 2 * math.pi * r * 2 * h
        cap = math.pi * r * r
        region = rng.choice(3, size=n, p=np.array([lateral, cap, cap]) / (lateral + 2 * cap))
        phi = rng.uniform(0.0, 2 * math.pi, size=n)
        rad = r * np.sqrt(rng.uniform(0.0, 1.0, size=n))
        z = rng.uniform(-h, h, size=n)
        pts = np.zeros((n, 3))
        nrm = np.zeros((n, 3))
        side = region == 0
        pts[side] = np.stack([r * np.cos(phi[side]), r * np.sin(phi[side]), z[side]], 1)
        nrm[side] = np.stack([np.cos(phi[side]), np.sin(phi[side]), np.zeros(side.sum())], 1)
        for which, sign in ((1, 1.0), (2, -1.0)):
            m = region == which
            pts[m] = np.stack([rad[m] * np.cos(phi[m]), rad[m] * np.sin(phi[m]),
                               np.full(m.sum(), sign * h)], 1)
            nrm[m] = np.array([0.0, 0.0, sign])
        dims = {"radius": r, "half_height": h, "rest_z": h}
    else:
        raise ValueError(f"unknown primitive {kind!r}")
    return PointCloud(pts, nrm), dims


def _smoothstep(u: np.ndarray) -> np.ndarray:
    """Quintic ease with zero velocity and acceleration at both ends."""
    u = np.clip(u, 0.0, 1.0)
    return u * u * u * (u * (6.0 * u - 15.0) + 10.0)


def _grasp_theta(ramp: float, flexion: float) -> np.ndarray:
    theta = np.zeros((5, 3, 3))
    for f, name in enumerate(_FINGER_ORDER):
        theta[f, :, 0] = np.array(_CURL[name]) * ramp * flexion
    theta[0, 0, 1] = 0.25 * ramp * flexion  # thumb opposition yaw
    return theta.reshape(THETA_DIM)


def _phase_bounds(l: int, fractions) -> dict:
    a = max(2, int(round(fractions[0] * l)))
    g = max(2, int(round(fractions[1] * l)))
    m = max(2, int(round(fractions[2] * l)))
    p = l - a - g - m
    if p < 2:
        raise ValueError(f"length {l} too short for the phase schedule")
    return {"approach": (0, a), "grasp": (a, a + g), "move": (a + g, a + g + m),
            "place": (a + g + m, l)}


def generate_scene(config: SceneConfig, seed: int):
    """One deterministic pick-and-place episode; returns (sequence, metadata)."""
    rng = np.random.default_rng(seed)
    kind = str(rng.choice(np.array(config.primitives)))
    cloud, dims = sample_primitive(kind, config.n_points, rng)
    l = int(rng.integers(config.length_range[0], config.length_range[1] + 1))
    phases = _phase_bounds(l, config.phase_fractions)

    rest_z = dims["rest_z"]
    p0 = np.array([rng.uniform(-0.06, 0.06), rng.uniform(-0.06, 0.06), rest_z])
    heading = rng.uniform(0.0, 2 * math.pi)
    dist = rng.uniform(0.12, 0.25)
    p1 = p0 + dist * np.array([math.cos(heading), math.sin(heading), 0.0])
    lift = rng.uniform(0.02, 0.06)
    yaw0 = rng.uniform(-math.pi, math.pi)
    spin = rng.uniform(-0.6, 0.6)
    r0 = Rotation.from_axis_angle(np.array([0.0, 0.0, yaw0]))

    mv0, mv1 = phases["move"]
    rots = np.empty((l, 3, 3))
    trans = np.empty((l, 3))
    for i in range(l):
        u = (i - mv0) / max(mv1 - 1 - mv0, 1)
        s = float(_smoothstep(np.array(u))) if mv0 <= i < mv1 else (0.0 if i < mv0 else 1.0)
        trans[i] = p0 + s * (p1 - p0)
        trans[i, 2] += lift * math.sin(math.pi * s)
        rots[i] = Rotation.from_axis_angle(np.array([0.0, 0.0, spin * s])).compose(r0).matrix
    object_motion = ObjectMotion(rots, trans)

    # grasp point: a sampled surface point from the upward-facing decile
    up = cloud.normals[:, 2]
    order = np.argsort(-up)
    k = int(order[rng.integers(0, max(config.n_points // 10, 1))])
    g_obj = cloud.points[k]

    beta_r = np.concatenate([np.clip(rng.normal(1.0, 0.08, size=7), 0.8, 1.3), np.ones(3)])
    beta_l = np.concatenate([np.clip(rng.normal(1.0, 0.08, size=7), 0.8, 1.3), np.ones(3)])
    right_shape = HandShape(beta_r, "right")
    left_shape = HandShape(beta_l, "left")

    # hand orientation: fingers down, seeded yaw about z
    grip_yaw = rng.uniform(-math.pi, math.pi)
    r_hand0 = Rotation.from_axis_angle(np.array([0.0, 0.0, grip_yaw])).compose(
        Rotation.from_axis_angle(np.array([math.pi, 0.0, 0.0]))
    )
    theta_full = _grasp_theta(1.0, config.grasp_flexion)
    tip_off = forward_kinematics(
        right_shape, HandPose(Rotation.identity(), np.zeros(3), theta_full)
    )[INDEX_TIP]

    # wrist pose that pins the fingertip to the grasp point, per object pose
    def wrist_for(i: int) -> tuple:
        t = object_motion.transform(i)
        r_h = t.rotation.compose(r0.inverse()).compose(r_hand0)
        return r_h, t.apply(g_obj[None, :])[0] - r_h.apply(tip_off[None, :])[0]

    ap0, ap1 = phases["approach"]
    pl0, _ = phases["place"]
    r_g0, w_g0 = wrist_for(0)
    standoff_dir = np.array([rng.normal(0, 0.4), rng.normal(0, 0.4), 1.0])
    standoff_dir /= np.linalg.norm(standoff_dir)
    standoff = rng.uniform(0.10, 0.16) * standoff_dir
    retreat = rng.uniform(0.08, 0.14) * standoff_dir

    left_base = np.array([-0.32, -0.22, 0.05]) + rng.uniform(-0.02, 0.02, size=3)
    left_rot = Rotation.from_axis_angle(np.array([0.0, 0.0, rng.uniform(-0.4, 0.4)]))
    sway_phase = rng.uniform(0.0, 2 * math.pi)

    right_poses = []
    left_poses = []
    r_gl, w_gl = wrist_for(l - 1)
    for i in range(l):
        if i < ap1:
            u = i / max(ap1 - 1, 1)
            s = float(_smoothstep(np.array(u)))
            wrist = w_g0 + (1.0 - s) * standoff
            ramp, r_h = s, r_g0
        elif i < pl0:
            r_h, wrist = wrist_for(i)
            ramp = 1.0
        else:
            u = (i - pl0) / max(l - 1 - pl0, 1)
            s = float(_smoothstep(np.array(u)))
            wrist = w_gl + s * retreat
            ramp, r_h = 1.0 - s, r_gl
        pose = HandPose(r_h, wrist, _grasp_theta(ramp, config.grasp_flexion))
        right_poses.append(clamp_pose_angles(pose))
        sway = 0.003 * math.sin(2 * math.pi * i / max(l - 1, 1) + sway_phase)
        left_poses.append(HandPose(left_rot, left_base + np.array([0.0, sway, 0.0]), np.zeros(THETA_DIM)))
    hands = HandMotion(left_shape, right_shape, left_poses, right_poses)

    # gaze: lead the grasp point, jitter, sparse saccades
    lead = int(round(config.gaze_lead_s * config.fps))
    anchor = np.array([
        object_motion.transform(min(i + lead, l - 1)).apply(g_obj[None, :])[0] for i in range(l)
    ])
    gaze_pts = anchor + config.gaze_jitter_m * rng.normal(size=(l, 3))
    n_sacc = int(round(config.saccade_rate * l / max(config.saccade_frames, 1)))
    sacc_starts = []
    if n_sacc > 0 and l > config.saccade_frames:
        sacc_starts = sorted(
            int(v) for v in rng.choice(l - config.saccade_frames, size=n_sacc, replace=False)
        )
        for s0 in sacc_starts:
            off = rng.normal(size=3)
            off *= rng.uniform(0.05, 0.15) / np.linalg.norm(off)
            gaze_pts[s0 : s0 + config.saccade_frames] += off
    gaze = GazeSequence(gaze_pts)

    seq = InteractionSequence(gaze, hands, object_motion, cloud, config.fps)
    meta = {
        "seed": int(seed),
        "primitive": kind,
        "dims": dims,
        "length": l,
        "phases": {k: list(v) for k, v in phases.items()},
        "grasp_index": k,
        "saccade_starts": sacc_starts,
        "fps": config.fps,
    }
    return seq, meta


# ---------------------------------------------------------------------------
# dataset assembly


@dataclass(frozen=True)
class DatasetSplit:
    train: tuple
    val: tuple
    manifest: dict


def generate_dataset(config: SceneConfig, count: int, seed: int) -> DatasetSplit:
    """count scenes under derived per-scene seeds, split 80/20 by a seeded shuffle."""
    if count < 2:
        raise ValueError("need count >= 2 to populate both splits")
    scene_seeds = [int(s) for s in np.random.SeedSequence(seed).generate_state(count)]
    scenes = [generate_scene(config, s) for s in scene_seeds]
    n_val = max(1, int(round(0.2 * count)))
    order = np.random.default_rng(seed ^ 0x5F5E1).permutation(count)
    val_idx = sorted(int(i) for i in order[:n_val])
    train_idx = sorted(int(i) for i in order[n_val:])
    entries = []
    for rank, idx in enumerate(train_idx + val_idx):
        split = "train" if rank < len(train_idx) else "val"
        seq, meta = scenes[idx]
        entries.append({
            "name": f"seq_{idx:04d}",
            "seed": scene_seeds[idx],
            "split": split,
            "primitive": meta["primitive"],
            "length": meta["length"],
            "phases": meta["phases"],
            "grasp_index": meta["grasp_index"],
        })
    manifest = {
        "version": 1,
        "master_seed": int(seed),
        "count": int(count),
        "config": config.to_dict(),
        "entries": entries,
    }
    train = tuple(scenes[i] for i in train_idx)
    val = tuple(scenes[i] for i in val_idx)
    return DatasetSplit(train, val, manifest)
