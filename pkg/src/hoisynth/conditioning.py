"""Gaze and geometry conditioning for the two diffusion stages.

Per-point object features are 16-dim: a fixed 10-dim geometric descriptor
computed in the OBJECT frame (pose-invariant) plus a trainable 6-dim linear
embedding of it.  The gaze feature for frame i picks the world-space nearest
object point to the gaze and scales that point's feature by the inverse
distance (floored at 1 mm); a single-head self-attention pass over the frame
rows then yields the stage-1 condition block c_g.

Condition rows, concatenated per frame:
    stage 1: [c_g 16 | initial object rot6d+trans 9 | pooled geometry 20] = 45
    stage 2: [object rot6d+trans 9 | pooled geometry 20 | initial left 61 |
              initial right 61] = 151
"""

from __future__ import annotations

import math

import numpy as np
import torch
from torch import nn

from .geometry import PointCloud, Rotation
from .hoi import GazeSequence, ObjectMotion, posed_points

FIXED_FEATURE_DIM = 10
EMBED_DIM = 6
FEATURE_DIM = FIXED_FEATURE_DIM + EMBED_DIM  # d_f
POOLED_DIM = 2 * FIXED_FEATURE_DIM
GAZE_DIST_FLOOR = 0.001

STAGE1_COND_DIM = FEATURE_DIM + 9 + POOLED_DIM  # 45
STAGE2_COND_DIM = 9 + POOLED_DIM + 2 * 61  # 151

DT = torch.float64


def seeded_uniform_(param: torch.Tensor, fan_in: int, generator: torch.Generator) -> None:
    """nn.Linear-style U(-1/sqrt(fan_in), ..) init drawn from an explicit RNG."""
    bound = 1.0 / math.sqrt(fan_in)
    with torch.no_grad():
        param.copy_((torch.rand(param.shape, generator=generator, dtype=DT) * 2 - 1) * bound)


def fixed_point_features(cloud: PointCloud) -> np.ndarray:
    """(N, 10): [object-frame coord, normal, dist to centroid, radial dir].

    The radial direction of a point sitting exactly on the centroid is zero.
    """
    pts = cloud.points
    centroid = cloud.centroid
    rel = pts - centroid
    dist = np.linalg.norm(rel, axis=1, keepdims=True)
    radial = np.where(dist > 1e-12, rel / np.maximum(dist, 1e-12), 0.0)
    return np.concatenate([pts, cloud.normals, dist, radial], axis=1)


def pooled_descriptor(cloud: PointCloud) -> np.ndarray:
    """(20,): mean and max over points of the fixed 10-dim features."""
    f = fixed_point_features(cloud)
    return np.concatenate([f.mean(axis=0), f.max(axis=0)])


class PointEmbedding(nn.Module):
    """Trainable linear map of the fixed descriptor: 10 -> 6, no bias."""

    def __init__(self, generator: torch.Generator):
        super().__init__()
        self.weight = nn.Parameter(torch.empty((EMBED_DIM, FIXED_FEATURE_DIM), dtype=DT))
        seeded_uniform_(self.weight, FIXED_FEATURE_DIM, generator)

    def forward(self, fixed: torch.Tensor) -> torch.Tensor:
        return fixed @ self.weight.T


def point_features(cloud: PointCloud, embedding: PointEmbedding) -> torch.Tensor:
    """(N, 16) per-point features, differentiable w.r.t. the embedding."""
    fixed = torch.from_numpy(fixed_point_features(cloud))
    return torch.cat([fixed, embedding(fixed)], dim=1)


def gaze_spatial_feature(
    gaze: GazeSequence,
    motion: ObjectMotion,
    cloud: PointCloud,
    features: torch.Tensor,
    d_min: float = GAZE_DIST_FLOOR,
) -> torch.Tensor:
    """(l, d_f) rows f_g = feature of nearest posed point / max(dist, d_min).

    Nearest search runs in world space against the object posed per frame;
    argmin ties resolve to the lowest point index.
    """
    world = posed_points(motion, cloud)  # (l, N, 3)
    diff = world - gaze.points[:, None, :]
    d = np.linalg.norm(diff, axis=2)
    idx = np.argmin(d, axis=1)
    dist = d[np.arange(len(idx)), idx]
    scale = 1.0 / np.maximum(dist, d_min)
    return features[torch.from_numpy(idx)] * torch.from_numpy(scale)[:, None]


def self_attention(
    f: torch.Tensor, w_q: torch.Tensor, w_k: torch.Tensor, w_v: torch.Tensor
) -> torch.Tensor:
    """softmax(f W_Q (f W_K)^T / sqrt(d)) f W_V, single head over frames."""
    d = f.shape[1]
    logits = (f @ w_q) @ (f @ w_k).T / math.sqrt(d)
    return torch.softmax(logits, dim=1) @ (f @ w_v)


class ConditionEncoder(nn.Module):
    """The trainable W_Q/W_K/W_V triple of the gaze attention pass."""

    def __init__(self, generator: torch.Generator, d: int = FEATURE_DIM):
        super().__init__()
        self.w_q = nn.Parameter(torch.empty((d, d), dtype=DT))
        self.w_k = nn.Parameter(torch.empty((d, d), dtype=DT))
        self.w_v = nn.Parameter(torch.empty((d, d), dtype=DT))
        for w in (self.w_q, self.w_k, self.w_v):
            seeded_uniform_(w, d, generator)

    def forward(self, f: torch.Tensor) -> torch.Tensor:
        return self_attention(f, self.w_q, self.w_k, self.w_v)


class GazeConditioner(nn.Module):
    """Point embedding + attention encoder; trained jointly with stage 1."""

    def __init__(self, generator: torch.Generator):
        super().__init__()
        self.embedding = PointEmbedding(generator)
        self.encoder = ConditionEncoder(generator)

    def forward(
        self, gaze: GazeSequence, motion: ObjectMotion, cloud: PointCloud
    ) -> torch.Tensor:
        feats = point_features(cloud, self.embedding)
        f_g = gaze_spatial_feature(gaze, motion, cloud, feats)
        return self.encoder(f_g)


def static_motion(pose_rot: np.ndarray, pose_trans: np.ndarray, length: int) -> ObjectMotion:
    """The initial object pose broadcast over l frames.

    Stage-1 conditioning poses the object this way at BOTH training and
    inference time: the generated motion does not exist yet when c_g is
    computed, and train/test condition distributions must match.
    """
    return ObjectMotion(
        np.tile(pose_rot, (length, 1, 1)), np.tile(pose_trans, (length, 1))
    )


def object_pose_rows(motion: ObjectMotion) -> np.ndarray:
    """(l, 9) per-frame [rot6d | trans] rows."""
    return np.concatenate([motion.rot6d(), motion.translations], axis=1)


def stage1_condition(
    c_g: torch.Tensor, init_pose_row: np.ndarray, pooled: np.ndarray
) -> torch.Tensor:
    """(l, 45) stage-1 condition; broadcasts the static blocks over frames."""
    l = c_g.shape[0]
    static = torch.from_numpy(
        np.concatenate([init_pose_row, pooled])[None].repeat(l, axis=0)
    )
    return torch.cat([c_g, static], dim=1)


def stage2_condition(
    motion: ObjectMotion,
    pooled: np.ndarray,
    left0: np.ndarray,
    right0: np.ndarray,
) -> torch.Tensor:
    """(l, 151) stage-2 condition from (generated or teacher) object motion."""
    l = len(motion)
    rows = np.concatenate(
        [
            object_pose_rows(motion),
            np.tile(pooled, (l, 1)),
            np.tile(np.asarray(left0, dtype=np.float64), (l, 1)),
            np.tile(np.asarray(right0, dtype=np.float64), (l, 1)),
        ],
        axis=1,
    )
    return torch.from_numpy(rows)
