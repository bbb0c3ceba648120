"""Canonical hand skeleton: the versioned JSON asset plus derived constants.

Joint order is ``[wrist, 5 x (MCP, PIP, DIP, TIP)]`` with fingers in
``[thumb, index, middle, ring, pinky]`` order.  Bone b (b = 0..19) is the
edge from ``PARENTS[b+1]`` to joint ``b+1``, i.e. per finger
``wrist->MCP, MCP->PIP, PIP->DIP, DIP->TIP``.
"""

from __future__ import annotations

import json
from importlib import resources

import numpy as np

NUM_JOINTS = 21
NUM_BONES = 20
NUM_ARTICULATED = 15  # 5 fingers x (MCP, PIP, DIP)

FINGERS = ("thumb", "index", "middle", "ring", "pinky")


def _load_asset() -> dict:
    with resources.files("hoisynth.hand").joinpath("skeleton.json").open("r") as fh:
        return json.load(fh)


_ASSET = _load_asset()

SKELETON_VERSION: int = _ASSET["version"]
JOINT_NAMES: tuple[str, ...] = tuple(j["name"] for j in _ASSET["joints"])
PARENTS: np.ndarray = np.array([j["parent"] for j in _ASSET["joints"]], dtype=np.int64)
# Parent-relative rest offsets of the canonical right hand, meters.
REST_OFFSETS: np.ndarray = np.array([j["offset"] for j in _ASSET["joints"]], dtype=np.float64)

# Joint index of each finger's MCP; MCP positions depend only on the global
# pose (articulation rotates their children), which makes them the anchor
# for recovering global hand orientation.
MCP_JOINTS: np.ndarray = np.array([1 + 4 * f for f in range(5)], dtype=np.int64)
TIP_JOINTS: np.ndarray = np.array([4 + 4 * f for f in range(5)], dtype=np.int64)
WRIST = 0

# Articulated-joint index (0..14) in [thumb,index,middle,ring,pinky] x
# [MCP,PIP,DIP] order; MCPs are 0, 3, 6, 9, 12.
ARTICULATED_MCP = np.array([3 * f for f in range(5)], dtype=np.int64)

BONE_CHILDREN: np.ndarray = np.arange(1, NUM_JOINTS, dtype=np.int64)
BONE_PARENTS: np.ndarray = PARENTS[1:].copy()
BONE_NAMES: tuple[str, ...] = tuple(
    f"{JOINT_NAMES[p]}->{JOINT_NAMES[c]}" for p, c in zip(BONE_PARENTS, BONE_CHILDREN)
)


def rest_positions(offsets: np.ndarray | None = None) -> np.ndarray:
    """Absolute rest joint positions from parent-relative offsets."""
    off = REST_OFFSETS if offsets is None else offsets
    pos = np.zeros((NUM_JOINTS, 3), dtype=np.float64)
    for j in range(1, NUM_JOINTS):
        pos[j] = pos[PARENTS[j]] + off[j]
    return pos


def bone_lengths(joints) -> np.ndarray:
    """One length per skeleton edge, in the documented bone order.

    Accepts ``(..., 21, 3)`` arrays and returns ``(..., 20)``.
    """
    joints = np.asarray(joints, dtype=np.float64)
    deltas = joints[..., BONE_CHILDREN, :] - joints[..., BONE_PARENTS, :]
    return np.linalg.norm(deltas, axis=-1)


def bone_lengths_torch(joints):
    """Torch version of :func:`bone_lengths` for differentiable losses."""
    deltas = joints[..., BONE_CHILDREN, :] - joints[..., BONE_PARENTS, :]
    return deltas.norm(dim=-1)
