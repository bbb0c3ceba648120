"""Candidate scoring and top-k selection.

Two complementary signals decide which generated interaction best matches
the gaze track.  Locally, per-frame surface maps measure whether the object
region the gaze lands on is actually being touched: M_c[i] = exp(-alpha *
d(hand surface, o_i)) and M_g[i] = exp(-alpha * d(gaze, o_i)) over object
points o_i, and s_c averages M_c over the gaze-near index set G_delta =
{i : d(gaze, o_i) < delta}.  Frames where the gaze is nowhere near the
object contribute 0 but still count in the frame mean, so drifting gaze
lowers the score instead of being ignored.  Globally, s_t sums DTW costs
between the gaze track and the left-wrist / right-wrist / object-center
trajectories; lower is better.

rank_candidates min-max normalizes each column across candidates (a
constant column maps to 0.5 so it neither helps nor hurts anyone) and
sorts by norm(s_c) + (1 - norm(s_t)), ties broken by candidate index.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .hand import sample_hand_surface
from .hoi import InteractionSequence

DEFAULT_ALPHA = 100.0  # 1/m; exp map ~0.37 at 1 cm
DEFAULT_DELTA = 0.03  # m; gaze-near cutoff on the object surface
SURFACE_SAMPLES = 256  # capsule samples per hand per frame


def _min_dists(sources: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Per-target Euclidean distance to the nearest source point."""
    s = np.asarray(sources, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    if s.ndim != 2 or s.shape[1] != 3 or s.size == 0:
        raise ValueError("sources must be a nonempty (m, 3) array")
    if t.ndim != 2 or t.shape[1] != 3 or t.size == 0:
        raise ValueError("targets must be a nonempty (n, 3) array")
    d2 = (
        np.sum(t * t, axis=1)[:, None]
        - 2.0 * t @ s.T
        + np.sum(s * s, axis=1)[None, :]
    )
    return np.sqrt(np.maximum(d2.min(axis=1), 0.0))


def contact_map(hand_surface: np.ndarray, object_points: np.ndarray, alpha: float = DEFAULT_ALPHA) -> np.ndarray:
    """exp(-alpha * distance to nearest hand-surface point), per object point."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    return np.exp(-alpha * _min_dists(hand_surface, object_points))


def gaze_map(gaze_points: np.ndarray, object_points: np.ndarray, alpha: float = DEFAULT_ALPHA) -> np.ndarray:
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    g = np.asarray(gaze_points, dtype=np.float64)
    if g.ndim == 1:
        g = g[None, :]
    return np.exp(-alpha * _min_dists(g, object_points))


@dataclass(frozen=True)
class ScoringParams:
    alpha: float = DEFAULT_ALPHA
    delta: float = DEFAULT_DELTA
    surface_samples: int = SURFACE_SAMPLES
    surface_seed: int = 0

    def __post_init__(self) -> None:
        if self.alpha <= 0 or self.delta <= 0:
            raise ValueError("alpha and delta must be positive")
        if self.surface_samples < 21:
            raise ValueError("need at least 21 surface samples per hand")


def _frame_hand_surface(seq: InteractionSequence, i: int, params: ScoringParams) -> np.ndarray:
    h = seq.hands
    left = sample_hand_surface(
        h.left_shape, h.left[i], params.surface_samples, params.surface_seed + 2 * i
    )
    right = sample_hand_surface(
        h.right_shape, h.right[i], params.surface_samples, params.surface_seed + 2 * i + 1
    )
    return np.concatenate([left, right], axis=0)


def score_contact_consistency(
    seq: InteractionSequence,
    params: ScoringParams = ScoringParams(),
) -> float:
    """Frame-mean of the contact map restricted to gaze-near object points.

    A frame whose gaze point is farther than delta from every object point
    has an empty near set; it contributes 0 and stays in the denominator.
    """
    l = seq.length
    total = 0.0
    for i in range(l):
        pose = seq.object_motion.transform(i)
        obj = pose.apply(seq.geometry.points)
        gdist = _min_dists(seq.gaze.points[i][None, :], obj)
        near = gdist < params.delta
        if not near.any():
            continue
        mc = contact_map(_frame_hand_surface(seq, i, params), obj[near], params.alpha)
        total += float(mc.mean())
    return total / l


def dtw(x: np.ndarray, y: np.ndarray) -> float:
    """Classic dynamic time warping cost with Euclidean local distance.

    Steps {(i-1,j), (i,j-1), (i-1,j-1)}, path anchored at both ends.
    """
    a = np.asarray(x, dtype=np.float64)
    b = np.asarray(y, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ValueError("inputs must be (n, d) and (m, d) with matching d")
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise ValueError("inputs must be nonempty")
    cost = np.linalg.norm(a[:, None, :] - b[None, :, :], axis=2)
    n, m = cost.shape
    acc = np.full((n + 1, m + 1), np.inf)
    acc[0, 0] = 0.0
    for i in range(1, n + 1):
        row = acc[i]
        prev = acc[i - 1]
        for j in range(1, m + 1):
            row[j] = cost[i - 1, j - 1] + min(prev[j], row[j - 1], prev[j - 1])
    return float(acc[n, m])


def score_trajectory(
    gaze: np.ndarray,
    left_wrist: np.ndarray,
    right_wrist: np.ndarray,
    object_centers: np.ndarray,
) -> float:
    """Sum of gaze-to-trajectory DTW costs for both wrists and the object."""
    return dtw(gaze, left_wrist) + dtw(gaze, right_wrist) + dtw(gaze, object_centers)


def sequence_trajectories(seq: InteractionSequence):
    """(left wrist, right wrist, object translation) tracks, each (l, 3)."""
    lw = np.stack([p.global_trans for p in seq.hands.left])
    rw = np.stack([p.global_trans for p in seq.hands.right])
    return lw, rw, seq.object_motion.translations.copy()


def score_sequence_trajectory(seq: InteractionSequence) -> float:
    lw, rw, oc = sequence_trajectories(seq)
    return score_trajectory(seq.gaze.points, lw, rw, oc)


def _minmax(col: np.ndarray) -> np.ndarray:
    lo, hi = col.min(), col.max()
    if hi - lo < 1e-12:
        return np.full_like(col, 0.5)
    return (col - lo) / (hi - lo)


@dataclass(frozen=True)
class CandidateScore:
    index: int
    s_c: float
    s_t: float
    combined: float
    rank: int

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "s_c": self.s_c,
            "s_t": self.s_t,
            "combined": self.combined,
            "rank": self.rank,
        }


def rank_candidates(
    candidates,
    k: int,
    params: ScoringParams = ScoringParams(),
):
    """Score every candidate and return (top-k indices, all scores).

    Scores are combined after per-column min-max normalization so the two
    signals weigh equally regardless of their raw scales; the ordering is
    therefore invariant to monotone rescaling of either column.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    cands = list(candidates)
    if not cands:
        raise ValueError("need at least one candidate")
    sc = np.array([score_contact_consistency(c, params) for c in cands])
    st = np.array([score_sequence_trajectory(c) for c in cands])
    combined = _minmax(sc) + (1.0 - _minmax(st))
    order = sorted(range(len(cands)), key=lambda i: (-combined[i], i))
    scores = [None] * len(cands)
    for rank, idx in enumerate(order):
        scores[idx] = CandidateScore(idx, float(sc[idx]), float(st[idx]), float(combined[idx]), rank)
    return order[: min(k, len(cands))], scores
