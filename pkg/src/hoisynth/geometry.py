"""Elementary 3D types and queries shared by the whole pipeline.

Conventions used everywhere downstream:

* positions and offsets are float64 numpy arrays in meters,
* rotations are proper orthonormal 3x3 matrices,
* the 6D rotation encoding stores the first two matrix columns,
  flattened column-first: ``(r00, r10, r20, r01, r11, r21)``,
* nearest-point ties break toward the lowest point index.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

Vec3 = np.ndarray  # shape (3,), float64

# Brute force beats index construction below this cloud size; clouds in this
# pipeline are 500 points, so the grid is opt-in for larger inputs.
GRID_INDEX_THRESHOLD = 2048


class GeometryError(ValueError):
    """Raised for degenerate geometric inputs (empty clouds, collinear sets)."""


def vec3(x: float, y: float, z: float) -> Vec3:
    return np.array([x, y, z], dtype=np.float64)


def as_points(points) -> np.ndarray:
    """Coerce to an (N, 3) float64 array without copying when possible."""
    arr = np.asarray(points, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(1, 3)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise GeometryError(f"expected (N, 3) points, got shape {arr.shape}")
    return arr


def _normalize(v: np.ndarray, eps: float = 1e-12) -> np.ndarray:
    n = np.linalg.norm(v)
    if n < eps:
        raise GeometryError("cannot normalize near-zero vector")
    return v / n


class Rotation:
    """Proper orthonormal rotation, canonical form a 3x3 matrix.

    Constructors validate orthonormality (R^T R = I and det = +1, both within
    1e-6) and the quaternion / 6D converters round-trip within 1e-9.
    """

    __slots__ = ("matrix",)

    def __init__(self, matrix) -> None:
        m = np.asarray(matrix, dtype=np.float64)
        if m.shape != (3, 3):
            raise GeometryError(f"rotation matrix must be 3x3, got {m.shape}")
        if not np.all(np.isfinite(m)):
            raise GeometryError("rotation matrix has non-finite entries")
        if np.max(np.abs(m.T @ m - np.eye(3))) > 1e-6:
            raise GeometryError("matrix is not orthonormal within 1e-6")
        if abs(np.linalg.det(m) - 1.0) > 1e-6:
            raise GeometryError("matrix determinant is not +1 within 1e-6")
        self.matrix = m
        self.matrix.setflags(write=False)

    # -- constructors -------------------------------------------------------

    @staticmethod
    def identity() -> "Rotation":
        return Rotation(np.eye(3))

    @staticmethod
    def from_axis_angle(axis_angle) -> "Rotation":
        """Rodrigues formula; the vector's norm is the angle in radians."""
        v = np.asarray(axis_angle, dtype=np.float64).reshape(3)
        angle = np.linalg.norm(v)
        if angle < 1e-12:
            # First-order expansion keeps the map smooth through zero.
            k = skew(v)
            return Rotation(_project_to_rotation(np.eye(3) + k))
        axis = v / angle
        k = skew(axis)
        m = np.eye(3) + np.sin(angle) * k + (1.0 - np.cos(angle)) * (k @ k)
        return Rotation(_project_to_rotation(m))

    @staticmethod
    def from_quaternion(q) -> "Rotation":
        """Unit quaternion (w, x, y, z); normalized before conversion."""
        q = _normalize(np.asarray(q, dtype=np.float64).reshape(4))
        w, x, y, z = q
        m = np.array(
            [
                [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
                [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
                [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
            ]
        )
        return Rotation(_project_to_rotation(m))

    @staticmethod
    def from_rot6d(r6) -> "Rotation":
        """Gram-Schmidt of the two stored columns; third column by cross product."""
        r6 = np.asarray(r6, dtype=np.float64).reshape(6)
        a1, a2 = r6[:3], r6[3:]
        b1 = _normalize(a1)
        b2 = _normalize(a2 - np.dot(b1, a2) * b1)
        b3 = np.cross(b1, b2)
        return Rotation(np.stack([b1, b2, b3], axis=1))

    # -- converters ---------------------------------------------------------

    def to_quaternion(self) -> np.ndarray:
        """Unit quaternion (w, x, y, z) with non-negative w."""
        m = self.matrix
        t = np.trace(m)
        if t > 0:
            s = np.sqrt(t + 1.0) * 2
            q = np.array(
                [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
            )
        else:
            i = int(np.argmax(np.diag(m)))
            j, k = (i + 1) % 3, (i + 2) % 3
            s = np.sqrt(max(m[i, i] - m[j, j] - m[k, k] + 1.0, 0.0)) * 2
            q = np.empty(4)
            q[0] = (m[k, j] - m[j, k]) / s
            q[1 + i] = 0.25 * s
            q[1 + j] = (m[j, i] + m[i, j]) / s
            q[1 + k] = (m[k, i] + m[i, k]) / s
        if q[0] < 0:
            q = -q
        return q / np.linalg.norm(q)

    def to_rot6d(self) -> np.ndarray:
        return self.matrix[:, :2].T.reshape(6).copy()

    def to_axis_angle(self) -> np.ndarray:
        """Axis-angle vector (axis scaled by angle in [0, pi])."""
        q = self.to_quaternion()
        w = min(max(q[0], -1.0), 1.0)
        angle = 2.0 * np.arccos(w)
        s = np.sqrt(max(1.0 - w * w, 0.0))
        if s < 1e-12:
            return 2.0 * q[1:]  # small-angle: q ~ (1, v/2)
        return q[1:] / s * angle

    # -- algebra ------------------------------------------------------------

    def apply(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.matrix.T

    def compose(self, other: "Rotation") -> "Rotation":
        return Rotation(self.matrix @ other.matrix)

    def inverse(self) -> "Rotation":
        return Rotation(self.matrix.T)

    def __matmul__(self, other: "Rotation") -> "Rotation":
        return self.compose(other)

    def allclose(self, other: "Rotation", atol: float = 1e-9) -> bool:
        return bool(np.allclose(self.matrix, other.matrix, atol=atol))

    def __repr__(self) -> str:
        return f"Rotation({self.matrix.tolist()})"


def skew(v: np.ndarray) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def _project_to_rotation(m: np.ndarray) -> np.ndarray:
    """Nearest proper rotation by SVD; absorbs accumulated round-off."""
    u, _, vt = np.linalg.svd(m)
    d = np.sign(np.linalg.det(u @ vt))
    return u @ np.diag([1.0, 1.0, d]) @ vt


@dataclass(frozen=True)
class RigidTransform:
    """SE(3) element: x -> R x + t."""

    rotation: Rotation
    translation: Vec3

    def __post_init__(self) -> None:
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not np.all(np.isfinite(t)):
            raise GeometryError("translation has non-finite entries")
        t.setflags(write=False)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform(Rotation.identity(), np.zeros(3))

    def apply(self, points) -> np.ndarray:
        return self.rotation.apply(points) + self.translation

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """self after other: (self @ other)(x) = self(other(x))."""
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation.apply(other.translation) + self.translation,
        )

    def inverse(self) -> "RigidTransform":
        rinv = self.rotation.inverse()
        return RigidTransform(rinv, -rinv.apply(self.translation))

    def __matmul__(self, other: "RigidTransform") -> "RigidTransform":
        return self.compose(other)


@dataclass(frozen=True)
class PointCloud:
    """Object surface samples with outward unit normals (object frame)."""

    points: np.ndarray
    normals: np.ndarray

    def __post_init__(self) -> None:
        pts = as_points(self.points)
        nrm = as_points(self.normals)
        if len(pts) == 0:
            raise GeometryError("empty geometry")
        if pts.shape != nrm.shape:
            raise GeometryError("points and normals must have the same shape")
        lengths = np.linalg.norm(nrm, axis=1)
        if np.max(np.abs(lengths - 1.0)) > 1e-6:
            raise GeometryError("normals must have unit length within 1e-6")
        pts.setflags(write=False)
        nrm.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "normals", nrm)

    def __len__(self) -> int:
        return len(self.points)

    def transformed(self, pose: RigidTransform) -> "PointCloud":
        return PointCloud(pose.apply(self.points), pose.rotation.apply(self.normals))

    @property
    def centroid(self) -> Vec3:
        return self.points.mean(axis=0)


# ---------------------------------------------------------------------------
# nearest-point queries


def nearest_point(query: Vec3, cloud) -> tuple[int, float, Vec3]:
    """Globally nearest cloud point to ``query``.

    Returns ``(index, distance, offset)`` where ``offset = point - query``.
    Ties break toward the lowest index.  Accepts a PointCloud or an (N, 3)
    array; the cloud is interpreted in whatever frame ``query`` lives in.
    """
    pts = cloud.points if isinstance(cloud, PointCloud) else as_points(cloud)
    if len(pts) == 0:
        raise GeometryError("empty geometry")
    q = np.asarray(query, dtype=np.float64).reshape(3)
    d2 = np.einsum("ij,ij->i", pts - q, pts - q)
    idx = int(np.argmin(d2))  # argmin returns the first minimum: lowest index
    return idx, float(np.sqrt(d2[idx])), pts[idx] - q


def nearest_points(queries, cloud) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized nearest_point for (M, 3) queries; same tie-break."""
    pts = cloud.points if isinstance(cloud, PointCloud) else as_points(cloud)
    if len(pts) == 0:
        raise GeometryError("empty geometry")
    q = as_points(queries)
    d2 = (
        np.sum(q * q, axis=1)[:, None]
        - 2.0 * q @ pts.T
        + np.sum(pts * pts, axis=1)[None, :]
    )
    idx = np.argmin(d2, axis=1)
    offsets = pts[idx] - q
    dists = np.linalg.norm(offsets, axis=1)
    return idx, dists, offsets


class UniformGridIndex:
    """Uniform-grid accelerator for nearest-point queries on static clouds.

    Matches the brute-force scan exactly, including the lowest-index
    tie-break.  Useful above ~2048 points; below that the vectorized scan
    wins.
    """

    def __init__(self, points, cell_size: float | None = None) -> None:
        self.points = as_points(points)
        if len(self.points) == 0:
            raise GeometryError("empty geometry")
        lo = self.points.min(axis=0)
        hi = self.points.max(axis=0)
        extent = float(np.max(hi - lo))
        if cell_size is None:
            # ~4 points per cell on average for a roughly uniform cloud
            cell_size = max(extent / max(1.0, (len(self.points) / 4.0) ** (1.0 / 3.0)), 1e-9)
        self.cell = float(cell_size)
        self.origin = lo
        self.dims = np.maximum(((hi - lo) / self.cell).astype(int) + 1, 1)
        self.cells: dict[tuple[int, int, int], list[int]] = {}
        keys = np.floor((self.points - self.origin) / self.cell).astype(int)
        keys = np.clip(keys, 0, self.dims - 1)
        for i, key in enumerate(map(tuple, keys)):
            self.cells.setdefault(key, []).append(i)

    def _cell_of(self, q: np.ndarray) -> np.ndarray:
        return np.clip(np.floor((q - self.origin) / self.cell).astype(int), 0, self.dims - 1)

    def query(self, query) -> tuple[int, float, Vec3]:
        q = np.asarray(query, dtype=np.float64).reshape(3)
        center = self._cell_of(q)
        best_idx, best_d2 = -1, np.inf
        radius = 0
        max_radius = int(np.max(self.dims))
        while True:
            for key, members in self._shell(center, radius):
                for i in members:
                    diff = self.points[i] - q
                    d2 = float(diff @ diff)
                    # strict < keeps the lowest index among exact ties because
                    # members are stored in ascending index order per cell and
                    # shells are visited in ascending cell order
                    if d2 < best_d2 or (d2 == best_d2 and i < best_idx):
                        best_idx, best_d2 = i, d2
            if best_idx >= 0:
                # Cells at shell distance r start at (r-1)*cell from the query
                # in the worst case; once that bound exceeds best, stop.
                bound = (radius - 1) * self.cell
                if bound > 0 and bound * bound > best_d2:
                    break
            if radius > max_radius + 2:
                break
            radius += 1
        return best_idx, float(np.sqrt(best_d2)), self.points[best_idx] - q

    def _shell(self, center: np.ndarray, r: int):
        lo = center - r
        hi = center + r
        for ix in range(max(lo[0], 0), min(hi[0], self.dims[0] - 1) + 1):
            for iy in range(max(lo[1], 0), min(hi[1], self.dims[1] - 1) + 1):
                for iz in range(max(lo[2], 0), min(hi[2], self.dims[2] - 1) + 1):
                    if max(abs(ix - center[0]), abs(iy - center[1]), abs(iz - center[2])) != r:
                        continue
                    key = (ix, iy, iz)
                    if key in self.cells:
                        yield key, self.cells[key]


# ---------------------------------------------------------------------------
# rigid alignment


def kabsch_align(src, dst) -> RigidTransform:
    """Least-squares rigid alignment: argmin_T sum ||T(src_i) - dst_i||^2.

    The returned rotation is always proper (reflections are corrected by
    flipping the smallest singular direction).  Raises GeometryError for
    fewer than 3 points or (near-)collinear sets.
    """
    s = as_points(src)
    d = as_points(dst)
    if len(s) != len(d):
        raise GeometryError("source and destination counts differ")
    if len(s) < 3:
        raise GeometryError("degenerate alignment: need at least 3 points")
    cs = s.mean(axis=0)
    cd = d.mean(axis=0)
    h = (s - cs).T @ (d - cd)
    u, sig, vt = np.linalg.svd(h)
    scale = max(float(sig[0]), np.max(np.abs(s - cs)) ** 2, 1e-30)
    if sig[1] < 1e-9 * scale:
        raise GeometryError("degenerate alignment: rank-deficient covariance")
    flip = np.sign(np.linalg.det(vt.T @ u.T))
    rot = vt.T @ np.diag([1.0, 1.0, flip]) @ u.T
    rotation = Rotation(_project_to_rotation(rot))
    translation = cd - rotation.apply(cs)
    return RigidTransform(rotation, translation)


# ---------------------------------------------------------------------------
# normal estimation


def estimate_normals(points, k: int = 8) -> np.ndarray:
    """Per-point unit normals from a local plane fit over k nearest neighbors.

    Normals are oriented away from the cloud centroid (objects here are
    star-shaped primitives, so that convention is globally consistent).
    Degenerate neighborhoods fall back to the centroid-to-point direction.
    """
    pts = as_points(points)
    n = len(pts)
    if not (n > k >= 3):
        raise GeometryError(f"need |points| > k >= 3, got n={n}, k={k}")
    centroid = pts.mean(axis=0)
    d2 = (
        np.sum(pts * pts, axis=1)[:, None]
        - 2.0 * pts @ pts.T
        + np.sum(pts * pts, axis=1)[None, :]
    )
    # k nearest including the point itself (self-distance 0 sorts first)
    neighbor_idx = np.argsort(d2, axis=1, kind="stable")[:, :k]
    normals = np.empty_like(pts)
    for i in range(n):
        nb = pts[neighbor_idx[i]]
        local = nb - nb.mean(axis=0)
        cov = local.T @ local
        w, v = np.linalg.eigh(cov)
        outward = pts[i] - centroid
        if w[1] < 1e-12 * max(w[2], 1e-30) or w[2] < 1e-24:
            # zero-area neighborhood: no plane to fit
            normal = outward if np.linalg.norm(outward) > 1e-12 else np.array([0.0, 0.0, 1.0])
            normals[i] = normal / np.linalg.norm(normal)
            continue
        normal = v[:, 0]  # smallest-eigenvalue direction
        if np.dot(normal, outward) < 0:
            normal = -normal
        normals[i] = normal
    return normals
