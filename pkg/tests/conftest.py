import numpy as np
import pytest

from hoisynth.geometry import PointCloud, Rotation
from hoisynth.synth import SceneConfig, generate_scene


def random_rotation(rng) -> Rotation:
    return Rotation.from_axis_angle(rng.normal(size=3))


def box_cloud(n: int = 200, half=(0.05, 0.04, 0.03), seed: int = 0) -> PointCloud:
    """Points on the surface of an axis-aligned box, outward normals."""
    rng = np.random.default_rng(seed)
    half = np.asarray(half, dtype=np.float64)
    pts = np.empty((n, 3))
    nrm = np.zeros((n, 3))
    face = rng.integers(0, 6, size=n)
    uv = rng.uniform(-1.0, 1.0, size=(n, 2))
    for i in range(n):
        axis, sign = divmod(int(face[i]), 2)
        sign = 1.0 if sign == 0 else -1.0
        p = np.empty(3)
        p[axis] = sign * half[axis]
        others = [a for a in range(3) if a != axis]
        p[others[0]] = uv[i, 0] * half[others[0]]
        p[others[1]] = uv[i, 1] * half[others[1]]
        pts[i] = p
        nrm[i, axis] = sign
    return PointCloud(pts, nrm)


@pytest.fixture(scope="session")
def scene_config():
    return SceneConfig()


@pytest.fixture(scope="session")
def scenes(scene_config):
    """A dozen synthetic scenes shared by the slower structural tests."""
    return [generate_scene(scene_config, 100 + i) for i in range(12)]


@pytest.fixture(scope="session")
def one_scene(scenes):
    return scenes[0][0]
