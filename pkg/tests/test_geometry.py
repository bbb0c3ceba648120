import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hoisynth.geometry import (
    GeometryError,
    PointCloud,
    RigidTransform,
    Rotation,
    UniformGridIndex,
    as_points,
    estimate_normals,
    kabsch_align,
    nearest_point,
    nearest_points,
    skew,
)

from conftest import box_cloud, random_rotation


def unit_normals(n: int, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    v = rng.normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)

finite3 = st.lists(
    st.floats(-3.0, 3.0, allow_nan=False, allow_infinity=False), min_size=3, max_size=3
)


class TestRotation:
    def test_identity(self):
        r = Rotation.identity()
        assert np.allclose(r.matrix, np.eye(3))

    def test_rejects_non_orthonormal(self):
        with pytest.raises(GeometryError):
            Rotation(np.ones((3, 3)))

    def test_rejects_reflection(self):
        m = np.diag([1.0, 1.0, -1.0])
        with pytest.raises(GeometryError):
            Rotation(m)

    def test_rejects_bad_shape(self):
        with pytest.raises(GeometryError):
            Rotation(np.eye(4))

    def test_rejects_non_finite(self):
        m = np.eye(3)
        m = m.copy()
        m[0, 0] = np.nan
        with pytest.raises(GeometryError):
            Rotation(m)

    @given(finite3)
    @settings(max_examples=50, deadline=None)
    def test_axis_angle_round_trip(self, aa):
        aa = np.asarray(aa)
        angle = np.linalg.norm(aa)
        r = Rotation.from_axis_angle(aa)
        assert np.allclose(r.matrix.T @ r.matrix, np.eye(3), atol=1e-12)
        assert abs(np.linalg.det(r.matrix) - 1.0) < 1e-12
        back = r.to_axis_angle()
        if angle < np.pi - 1e-6:
            assert np.allclose(back, aa, atol=1e-9)
        else:
            # above pi the canonical form wraps; the rotation itself must agree
            assert Rotation.from_axis_angle(back).allclose(r, atol=1e-9)

    def test_known_quarter_turn(self):
        r = Rotation.from_axis_angle([0.0, 0.0, np.pi / 2])
        assert np.allclose(r.apply([1.0, 0.0, 0.0]), [0.0, 1.0, 0.0], atol=1e-12)

    def test_quaternion_round_trip(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            r = random_rotation(rng)
            q = r.to_quaternion()
            assert q[0] >= 0.0
            assert abs(np.linalg.norm(q) - 1.0) < 1e-12
            assert Rotation.from_quaternion(q).allclose(r, atol=1e-9)

    def test_rot6d_round_trip(self):
        rng = np.random.default_rng(4)
        for _ in range(100):
            r = random_rotation(rng)
            assert Rotation.from_rot6d(r.to_rot6d()).allclose(r, atol=1e-9)

    def test_rot6d_gram_schmidt_normalizes(self):
        r6 = np.array([2.0, 0.0, 0.0, 1.0, 3.0, 0.0])
        r = Rotation.from_rot6d(r6)
        assert np.allclose(r.matrix[:, 0], [1.0, 0.0, 0.0])
        assert np.allclose(r.matrix[:, 1], [0.0, 1.0, 0.0])
        assert np.allclose(r.matrix[:, 2], [0.0, 0.0, 1.0])

    def test_compose_inverse(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            a, b = random_rotation(rng), random_rotation(rng)
            assert (a @ b).allclose(Rotation(a.matrix @ b.matrix))
            assert (a @ a.inverse()).allclose(Rotation.identity(), atol=1e-12)

    def test_apply_matches_matrix_product(self):
        rng = np.random.default_rng(6)
        r = random_rotation(rng)
        pts = rng.normal(size=(17, 3))
        assert np.allclose(r.apply(pts), (r.matrix @ pts.T).T)

    def test_small_angle_smooth_through_zero(self):
        r = Rotation.from_axis_angle([1e-14, 0.0, 0.0])
        assert np.allclose(r.matrix, np.eye(3), atol=1e-12)


class TestRigidTransform:
    def test_apply_and_inverse(self):
        rng = np.random.default_rng(7)
        r = random_rotation(rng)
        t = rng.normal(size=3)
        tf = RigidTransform(r, t)
        pts = rng.normal(size=(9, 3))
        out = tf.apply(pts)
        assert np.allclose(out, pts @ r.matrix.T + t)
        assert np.allclose(tf.inverse().apply(out), pts, atol=1e-12)

    def test_compose(self):
        rng = np.random.default_rng(8)
        a = RigidTransform(random_rotation(rng), rng.normal(size=3))
        b = RigidTransform(random_rotation(rng), rng.normal(size=3))
        pts = rng.normal(size=(5, 3))
        assert np.allclose(a.compose(b).apply(pts), a.apply(b.apply(pts)), atol=1e-12)


class TestPointCloud:
    def test_validation(self):
        with pytest.raises(GeometryError):
            PointCloud(np.zeros((0, 3)), np.zeros((0, 3)))
        with pytest.raises(GeometryError):
            PointCloud(np.zeros((4, 2)), unit_normals(4))
        pts = np.zeros((4, 3))
        with pytest.raises(GeometryError):
            PointCloud(pts, unit_normals(3))
        with pytest.raises(GeometryError):
            PointCloud(pts, np.full((4, 3), 0.5))  # not unit length

    def test_as_points_validation(self):
        with pytest.raises(GeometryError):
            as_points([[1.0, 2.0]])
        # 1-D input is promoted to a single row
        assert as_points([1.0, 2.0, 3.0]).shape == (1, 3)


class TestNearest:
    def test_matches_linear_scan(self):
        rng = np.random.default_rng(9)
        pts = rng.normal(size=(500, 3))
        cloud = PointCloud(pts, unit_normals(len(pts)))
        for _ in range(200):
            q = rng.normal(size=3) * 2.0
            idx, dist, p = nearest_point(q, cloud)
            d_all = np.linalg.norm(pts - q, axis=1)
            ref = int(np.argmin(d_all))
            assert idx == ref
            assert dist == pytest.approx(d_all[ref], abs=1e-12)
            assert np.allclose(p, pts[ref] - q)

    def test_batch_matches_single(self):
        rng = np.random.default_rng(10)
        pts = rng.normal(size=(300, 3))
        cloud = PointCloud(pts, unit_normals(len(pts)))
        qs = rng.normal(size=(50, 3))
        idx, dist, near = nearest_points(qs, cloud)
        for i, q in enumerate(qs):
            i1, d1, p1 = nearest_point(q, cloud)
            assert idx[i] == i1
            assert dist[i] == pytest.approx(d1, abs=1e-12)
            assert np.allclose(near[i], p1)

    def test_grid_index_agrees_with_scan(self):
        # enough points to engage the accelerated path
        rng = np.random.default_rng(11)
        pts = rng.uniform(-0.2, 0.2, size=(3000, 3))
        grid = UniformGridIndex(pts)
        for _ in range(300):
            q = rng.uniform(-0.3, 0.3, size=3)
            gi, gd, gp = grid.query(q)
            ref = int(np.argmin(np.linalg.norm(pts - q, axis=1)))
            assert gi == ref
            assert gd == pytest.approx(np.linalg.norm(pts[ref] - q), abs=1e-12)
            assert np.allclose(gp, pts[ref] - q)

    def test_exact_hit(self):
        pts = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]])
        idx, dist, _ = nearest_point([1.0, 0.0, 0.0], PointCloud(pts, unit_normals(2)))
        assert idx == 1 and dist == 0.0


class TestKabsch:
    def test_recovers_known_transform(self):
        rng = np.random.default_rng(12)
        for _ in range(100):
            src = rng.normal(size=(10, 3))
            r = random_rotation(rng)
            t = rng.normal(size=3)
            tf = kabsch_align(src, src @ r.matrix.T + t)
            assert np.allclose(tf.rotation.matrix, r.matrix, atol=1e-9)
            assert np.allclose(tf.translation, t, atol=1e-9)

    def test_proper_rotation_on_mirrored_target(self):
        # mirroring is not rigid; the solution must stay a proper rotation
        rng = np.random.default_rng(13)
        src = rng.normal(size=(20, 3))
        dst = src.copy()
        dst[:, 0] = -dst[:, 0]
        tf = kabsch_align(src, dst)
        assert np.linalg.det(tf.rotation.matrix) == pytest.approx(1.0, abs=1e-9)

    def test_coplanar_points(self):
        rng = np.random.default_rng(14)
        src = rng.normal(size=(8, 3))
        src[:, 2] = 0.0
        r = random_rotation(rng)
        t = rng.normal(size=3)
        tf = kabsch_align(src, src @ r.matrix.T + t)
        assert np.allclose(tf.apply(src), src @ r.matrix.T + t, atol=1e-9)

    def test_rejects_size_mismatch(self):
        with pytest.raises(GeometryError):
            kabsch_align(np.zeros((4, 3)), np.zeros((5, 3)))

    @given(st.integers(0, 10_000))
    @settings(max_examples=30, deadline=None)
    def test_residual_zero_for_rigid_pairs(self, seed):
        rng = np.random.default_rng(seed)
        src = rng.normal(size=(6, 3))
        r = random_rotation(rng)
        t = rng.normal(size=3)
        dst = src @ r.matrix.T + t
        tf = kabsch_align(src, dst)
        assert np.abs(tf.apply(src) - dst).max() < 1e-9


class TestNormals:
    def test_sphere_normals_radial(self):
        rng = np.random.default_rng(15)
        dirs = rng.normal(size=(600, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        pts = 0.05 * dirs
        normals = estimate_normals(pts, k=8)
        align = np.abs(np.einsum("ij,ij->i", normals, dirs))
        assert np.all(np.linalg.norm(normals, axis=1) == pytest.approx(1.0, abs=1e-9))
        assert np.median(align) > 0.99

    def test_skew_cross_product(self):
        rng = np.random.default_rng(16)
        a, b = rng.normal(size=3), rng.normal(size=3)
        assert np.allclose(skew(a) @ b, np.cross(a, b))
