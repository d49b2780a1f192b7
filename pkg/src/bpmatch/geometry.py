"""Point containers, rigid transforms and exact nearest-neighbor ranking.

Distance ranks are the primitive the correspondence graph is built on, so
neighbor queries here are *exact*: results always agree with an exhaustive
sort of Euclidean distances, with ties broken by ascending point index.
A k-d tree accelerates queries; a verification step falls back to the
exhaustive scan whenever a tie straddles the fetch horizon.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray
from scipy.spatial import cKDTree

Float = np.float64
Points = NDArray[Float]  # (N, 3)
Mat3 = NDArray[Float]    # (3, 3)
Vec3 = NDArray[Float]    # (3,)

_ORTHO_TOL = 1e-9
# Extra neighbors fetched per query so boundary ties can be detected.
_QUERY_PAD = 4


def _as_points(x) -> Points:
    pts = np.asarray(x, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"expected (N, 3) point array, got shape {pts.shape}")
    return pts


def _workers() -> int:
    """Thread count for k-d tree queries, from BPMATCH_THREADS (default 1)."""
    try:
        return max(1, int(os.environ.get("BPMATCH_THREADS", "1")))
    except ValueError:
        return 1


@dataclass(frozen=True)
class PointCloud:
    """Ordered, immutable set of 3D points. Point i keeps index i for life."""

    points: Points
    id: str = ""

    def __post_init__(self):
        pts = _as_points(self.points).copy()
        if not np.all(np.isfinite(pts)):
            raise ValueError("point cloud contains non-finite coordinates")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class RigidTransform:
    """Proper rigid motion p -> rotation @ p + translation."""

    rotation: Mat3
    translation: Vec3

    def __post_init__(self):
        rot = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3).copy()
        tr = np.asarray(self.translation, dtype=np.float64).reshape(3).copy()
        if not (np.all(np.isfinite(rot)) and np.all(np.isfinite(tr))):
            raise ValueError("transform contains non-finite entries")
        if np.max(np.abs(rot.T @ rot - np.eye(3))) > _ORTHO_TOL:
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(rot) - 1.0) > _ORTHO_TOL:
            raise ValueError("rotation determinant is not +1 (improper rotation)")
        rot.setflags(write=False)
        tr.setflags(write=False)
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", tr)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    def apply(self, points) -> Points:
        """Map an (N, 3) array (or single point) through the transform."""
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.rotation.T + self.translation

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """Transform equivalent to applying `other` first, then `self`."""
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def inverse(self) -> "RigidTransform":
        rot_inv = self.rotation.T
        return RigidTransform(rot_inv, -rot_inv @ self.translation)


def apply_transform(t: RigidTransform, cloud: PointCloud) -> PointCloud:
    """Transform every point of a cloud; ordering and id are preserved."""
    return PointCloud(t.apply(cloud.points), id=cloud.id)


def rotation_from_axis_angle(axis, angle: float) -> Mat3:
    """Rodrigues formula; `axis` need not be normalized."""
    axis = np.asarray(axis, dtype=np.float64).reshape(3)
    norm = np.linalg.norm(axis)
    if norm == 0.0:
        raise ValueError("zero rotation axis")
    x, y, z = axis / norm
    k = np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])
    return np.eye(3) + np.sin(angle) * k + (1.0 - np.cos(angle)) * (k @ k)


def rotation_angle(rotation: Mat3) -> float:
    """Angle in radians of a rotation matrix (0 for identity)."""
    c = (float(np.trace(rotation)) - 1.0) / 2.0
    return float(np.arccos(np.clip(c, -1.0, 1.0)))


def random_transform(rng: np.random.Generator,
                     max_angle: float = np.pi,
                     max_translation: float = 1.0) -> RigidTransform:
    """Uniform random axis, angle in [0, max_angle], translation in a cube."""
    axis = rng.normal(size=3)
    while np.linalg.norm(axis) < 1e-12:
        axis = rng.normal(size=3)
    angle = rng.uniform(0.0, max_angle)
    translation = rng.uniform(-max_translation, max_translation, size=3)
    return RigidTransform(rotation_from_axis_angle(axis, angle), translation)


class NeighborIndex:
    """Immutable spatial index over one cloud; safe for concurrent reads.

    All queries exclude the query point itself and order neighbors by
    (Euclidean distance, point index) ascending, exactly as an exhaustive
    sort would.
    """

    def __init__(self, cloud: PointCloud):
        if len(cloud) == 0:
            raise ValueError("empty cloud")
        self.cloud = cloud
        self._pts = cloud.points
        self._tree = cKDTree(self._pts)

    def __len__(self) -> int:
        return len(self.cloud)

    def _exhaustive_row(self, x: int) -> NDArray[np.int64]:
        d = np.linalg.norm(self._pts - self._pts[x], axis=1)
        order = np.lexsort((np.arange(len(d)), d))
        return order[order != x]

    def k_nearest(self, x: int, k: int) -> NDArray[np.int64]:
        """Indices of the k nearest distinct points to point x."""
        return self.k_nearest_batch(np.array([x]), k)[0]

    def k_nearest_batch(self, xs, k: int) -> NDArray[np.int64]:
        """k nearest distinct points for each query index; shape (len(xs), k)."""
        xs = np.asarray(xs, dtype=np.int64)
        n = len(self)
        if np.any((xs < 0) | (xs >= n)):
            raise IndexError("point index out of range")
        if k < 1:
            raise ValueError("k must be >= 1")
        if k > n - 1:
            raise ValueError(f"cloud of {n} points cannot answer {k}-nearest queries")

        kq = min(n, k + 1 + _QUERY_PAD)
        _, cand = self._tree.query(self._pts[xs], k=kq, workers=_workers())
        cand = np.atleast_2d(cand)

        # Recompute distances so ordering matches the exhaustive oracle bitwise.
        diffs = self._pts[cand] - self._pts[xs][:, None, :]
        dist = np.linalg.norm(diffs, axis=2)
        dist[cand == xs[:, None]] = -1.0  # self sorts first, dropped below
        order = np.lexsort((cand, dist), axis=1)
        cand = np.take_along_axis(cand, order, axis=1)
        dist = np.take_along_axis(dist, order, axis=1)

        has_self = dist[:, 0] == -1.0
        out = np.empty((len(xs), k), dtype=np.int64)
        kth = np.where(has_self, k, k - 1)  # row position of the k-th neighbor

        # A row is trustworthy only if its k-th distance sits clearly inside
        # the fetch horizon; otherwise equal-distance points may be missing.
        if kq == n:
            safe = np.ones(len(xs), dtype=bool)
        else:
            horizon = dist[:, -1]
            safe = dist[np.arange(len(xs)), kth] < horizon * (1.0 - 1e-12)

        for i in range(len(xs)):
            if safe[i]:
                start = 1 if has_self[i] else 0
                out[i] = cand[i, start:start + k]
            else:
                out[i] = self._exhaustive_row(int(xs[i]))[:k]
        return out

    def within_radius(self, x: int, radius: float) -> NDArray[np.int64]:
        """Indices of distinct points with distance <= radius from point x."""
        n = len(self)
        if not (0 <= x < n):
            raise IndexError("point index out of range")
        if radius < 0:
            raise ValueError("radius must be nonnegative")
        members = np.asarray(
            self._tree.query_ball_point(self._pts[x], radius * (1.0 + 1e-12)),
            dtype=np.int64)
        members = members[members != x]
        if members.size:
            d = np.linalg.norm(self._pts[members] - self._pts[x], axis=1)
            members = members[d <= radius]
        return np.sort(members)

    def rank(self, x: int, y: int) -> int:
        """1-based rank of point y in the distance ordering around point x.

        rank == 1 means y is the nearest distinct point to x. Ties in
        distance are broken by ascending point index.
        """
        n = len(self)
        if not (0 <= x < n and 0 <= y < n):
            raise IndexError("point index out of range")
        if x == y:
            raise ValueError("self-rank undefined")
        d = float(np.linalg.norm(self._pts[y] - self._pts[x]))
        members = self._tree.query_ball_point(self._pts[x], d * (1.0 + 1e-9))
        members = np.asarray(members, dtype=np.int64)
        dz = np.linalg.norm(self._pts[members] - self._pts[x], axis=1)
        before = (dz < d) | ((dz == d) & (members < y))
        before &= (members != x) & (members != y)
        return int(np.count_nonzero(before)) + 1


def build_index(cloud: PointCloud) -> NeighborIndex:
    """Build the spatial index used by rank and k-nearest queries."""
    return NeighborIndex(cloud)
