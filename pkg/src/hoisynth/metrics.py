"""Evaluation metrics: pose accuracy, grasp quality, distribution statistics.

Length metrics are reported in millimeters. Feature-space statistics (fid,
diversity) run on per-sequence descriptors: the temporal mean and std of the
canonical 333-dim frames concatenated to 666 dims, standardized by the
reference set's statistics. No learned feature extractor is involved, so the
numbers are deterministic functions of the motions themselves.

Sign conventions match the guidance losses: a joint's signed offset from the
object surface is (joint - nearest point) . normal, negative inside, and the
reported penetration depth is the positive magnitude of that violation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import PointCloud
from .hand import forward_kinematics_sequence
from .hoi import CONTACT_TAU, InteractionSequence, ObjectMotion

MM = 1000.0
FID_SHRINKAGE = 1e-6
DIVERSITY_PAIRS = 20


def mpjpe(pred_joints: np.ndarray, gt_joints: np.ndarray) -> float:
    """Mean joint position error in mm over every frame and joint."""
    p = np.asarray(pred_joints, dtype=np.float64)
    g = np.asarray(gt_joints, dtype=np.float64)
    if p.shape != g.shape or p.shape[-1] != 3:
        raise ValueError(f"joint arrays must match and end in 3, got {p.shape} vs {g.shape}")
    return float(np.linalg.norm(p - g, axis=-1).mean() * MM)


def mpvpe(pred: ObjectMotion, gt: ObjectMotion, cloud: PointCloud) -> float:
    """Mean posed-vertex error in mm over frames and vertices."""
    if len(pred) != len(gt):
        raise ValueError("object motions must have equal length")
    pv = np.einsum("lij,nj->lni", pred.rotations, cloud.points) + pred.translations[:, None, :]
    gv = np.einsum("lij,nj->lni", gt.rotations, cloud.points) + gt.translations[:, None, :]
    return float(np.linalg.norm(pv - gv, axis=-1).mean() * MM)


def fol(pred: ObjectMotion, gt: ObjectMotion) -> float:
    """Final object location error in mm (last frame translation only)."""
    return float(np.linalg.norm(pred.translations[-1] - gt.translations[-1]) * MM)


def _sequence_joints(seq: InteractionSequence) -> np.ndarray:
    """(l, 42, 3) fingertip-to-wrist joints, left hand then right."""
    left = forward_kinematics_sequence(seq.hands.left_shape, seq.hands.left)
    right = forward_kinematics_sequence(seq.hands.right_shape, seq.hands.right)
    return np.concatenate([left, right], axis=1)


def _nearest_offsets(joints: np.ndarray, seq: InteractionSequence):
    """Per frame: joint offsets from the nearest posed surface point + its normal."""
    l = joints.shape[0]
    offs = np.empty_like(joints)
    nrms = np.empty_like(joints)
    for i in range(l):
        t = seq.object_motion.transform(i)
        pts = t.apply(seq.geometry.points)
        nn = seq.geometry.normals @ t.rotation.matrix.T
        d2 = (
            np.sum(joints[i] ** 2, axis=1)[:, None]
            - 2.0 * joints[i] @ pts.T
            + np.sum(pts * pts, axis=1)[None, :]
        )
        idx = d2.argmin(axis=1)
        offs[i] = joints[i] - pts[idx]
        nrms[i] = nn[idx]
    return offs, nrms


def contact_frame_ratio(seq: InteractionSequence, tau: float = CONTACT_TAU) -> float:
    """Percent of frames where at least one joint is within tau of the surface."""
    joints = _sequence_joints(seq)
    offs, _ = _nearest_offsets(joints, seq)
    dists = np.linalg.norm(offs, axis=-1)
    return float(100.0 * (dists < tau).any(axis=1).mean())


def penetration_depth(seq: InteractionSequence) -> float:
    """Frame-mean in mm of the worst per-frame surface violation (0 if none)."""
    joints = _sequence_joints(seq)
    offs, nrms = _nearest_offsets(joints, seq)
    signed = np.sum(offs * nrms, axis=-1)
    depth = np.maximum(0.0, -signed).max(axis=1)
    return float(depth.mean() * MM)


def canonical_features(frames: np.ndarray) -> np.ndarray:
    """Temporal mean and std of canonical frames, concatenated."""
    f = np.asarray(frames, dtype=np.float64)
    if f.ndim != 2:
        raise ValueError(f"expected (l, d) frames, got {f.shape}")
    return np.concatenate([f.mean(axis=0), f.std(axis=0)])


def standardize_features(features: np.ndarray, reference: np.ndarray):
    """Scale both sets by the reference set's mean/std (std floored at 1e-8)."""
    mu = reference.mean(axis=0)
    sd = np.maximum(reference.std(axis=0), 1e-8)
    return (features - mu) / sd, (reference - mu) / sd


def _psd_sqrt(m: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    vals, vecs = np.linalg.eigh(m)
    if vals.min() < -tol * max(1.0, abs(vals.max())):
        raise ValueError(f"matrix is not PSD after regularization (min eig {vals.min():.3e})")
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def fid(real_features: np.ndarray, gen_features: np.ndarray) -> float:
    """Frechet distance between Gaussian fits of the two feature sets.

    Covariances get +1e-6 I shrinkage so small sets stay full rank. The
    cross term Tr((S1 S2)^(1/2)) is evaluated through the symmetric product
    sqrt(S1) S2 sqrt(S1), which shares its spectrum and stays PSD.
    """
    a = np.asarray(real_features, dtype=np.float64)
    b = np.asarray(gen_features, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ValueError("feature sets must be (n, d) with matching d")
    if a.shape[0] < 2 or b.shape[0] < 2:
        raise ValueError("need at least 2 samples per set")
    mu1, mu2 = a.mean(axis=0), b.mean(axis=0)
    d = a.shape[1]
    s1 = np.cov(a, rowvar=False) + FID_SHRINKAGE * np.eye(d)
    s2 = np.cov(b, rowvar=False) + FID_SHRINKAGE * np.eye(d)
    r1 = _psd_sqrt(s1)
    cross = _psd_sqrt(r1 @ s2 @ r1)
    val = float(np.sum((mu1 - mu2) ** 2) + np.trace(s1) + np.trace(s2) - 2.0 * np.trace(cross))
    return max(val, 0.0)


def diversity(gen_features: np.ndarray, pairs: int = DIVERSITY_PAIRS, seed: int = 0) -> float:
    """Mean distance over seeded disjoint sample pairs."""
    f = np.asarray(gen_features, dtype=np.float64)
    if f.ndim != 2 or f.shape[0] < 2:
        raise ValueError("need at least 2 feature vectors")
    n = f.shape[0]
    take = min(pairs, n // 2)
    perm = np.random.default_rng(seed).permutation(n)
    left = f[perm[0 : 2 * take : 2]]
    right = f[perm[1 : 2 * take : 2]]
    return float(np.linalg.norm(left - right, axis=1).mean())


@dataclass(frozen=True)
class MetricsReport:
    mpjpe_mm: float
    mpvpe_mm: float
    fol_mm: float
    cf_percent: float
    pd_mm: float
    fid: float
    diversity: float

    def __post_init__(self) -> None:
        for name in ("mpjpe_mm", "mpvpe_mm", "fol_mm", "pd_mm", "fid", "diversity"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if not 0.0 <= self.cf_percent <= 100.0:
            raise ValueError("cf_percent must lie in [0, 100]")

    def to_dict(self) -> dict:
        return {
            "mpjpe_mm": self.mpjpe_mm,
            "mpvpe_mm": self.mpvpe_mm,
            "fol_mm": self.fol_mm,
            "cf_percent": self.cf_percent,
            "pd_mm": self.pd_mm,
            "fid": self.fid,
            "diversity": self.diversity,
        }

    def table(self) -> str:
        rows = [
            ("MPJPE (mm)", self.mpjpe_mm),
            ("MPVPE (mm)", self.mpvpe_mm),
            ("FOL (mm)", self.fol_mm),
            ("CF (%)", self.cf_percent),
            ("PD (mm)", self.pd_mm),
            ("FID", self.fid),
            ("Diversity", self.diversity),
        ]
        width = max(len(r[0]) for r in rows)
        return "\n".join(f"{name.ljust(width)}  {value:12.6f}" for name, value in rows)
