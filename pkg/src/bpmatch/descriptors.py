"""Opaque descriptor vectors and a deterministic local geometric descriptor.

The stand-in descriptor summarizes the radius-ball neighborhood of a point
by covariance shape ratios, centroid offset and a radial density histogram.
It is invariant to rigid motion by construction, which is all the
end-to-end tests need; externally produced descriptors of any dimension
are carried through untouched.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.typing import NDArray

from .geometry import NeighborIndex, PointCloud, build_index

STAND_IN_DIM = 13
_HIST_BINS = 8
_NORM_TOL = 1e-6


@dataclass(frozen=True)
class Descriptor:
    """Fixed-length feature vector; `normalized` marks unit L2 norm."""

    values: NDArray[np.float64]
    normalized: bool = False

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64).reshape(-1).copy()
        if not np.all(np.isfinite(v)):
            raise ValueError("descriptor contains non-finite values")
        if self.normalized and abs(np.linalg.norm(v) - 1.0) > _NORM_TOL:
            raise ValueError("descriptor flagged normalized but L2 norm != 1")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class DescriptorSet:
    """One descriptor per keypoint index, uniform dimension, as (n, D) rows."""

    vectors: NDArray[np.float64]

    def __post_init__(self):
        v = np.asarray(self.vectors, dtype=np.float64).copy()
        if v.ndim != 2:
            raise ValueError(f"expected (n, D) array, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("descriptor set contains non-finite values")
        v.setflags(write=False)
        object.__setattr__(self, "vectors", v)

    def __len__(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


def stand_in_descriptor(cloud: PointCloud, index: NeighborIndex,
                        point: int, radius: float) -> Descriptor:
    """Deterministic descriptor of the radius-ball neighborhood of one point.

    Layout (13 values): eigenvalue ratios l2/l1 and l3/l1 of the
    neighborhood covariance (descending eigenvalues), centroid offset
    magnitude over radius, 8 radial density bins over [0, radius], and two
    reserved zeros. The vector is L2-normalized. An empty neighborhood
    yields a zero vector with `normalized=False` as the warning flag.
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    pts = cloud.points
    if not (0 <= point < len(cloud)):
        raise IndexError("point index out of range")
    center = pts[point]

    members = index.within_radius(point, radius)
    if members.size == 0:
        return Descriptor(np.zeros(STAND_IN_DIM), normalized=False)
    dist = np.linalg.norm(pts[members] - center, axis=1)

    neigh = pts[members]
    centroid = neigh.mean(axis=0)
    centered = neigh - centroid
    cov = centered.T @ centered / len(neigh)
    eigvals = np.linalg.eigvalsh(cov)[::-1]  # descending
    if eigvals[0] > 1e-12 * max(1.0, float(np.trace(cov))):
        ratios = eigvals[1:] / eigvals[0]
    else:
        ratios = np.zeros(2)

    offset = float(np.linalg.norm(centroid - center)) / radius
    hist, _ = np.histogram(dist, bins=_HIST_BINS, range=(0.0, radius))
    hist = hist / len(neigh)

    vec = np.concatenate([ratios, [offset], hist, [0.0, 0.0]])
    vec /= np.linalg.norm(vec)
    return Descriptor(vec, normalized=True)


def describe_cloud(cloud: PointCloud, radius: float,
                   index: NeighborIndex | None = None) -> DescriptorSet:
    """Stand-in descriptor for every point of a cloud."""
    if index is None:
        index = build_index(cloud)
    rows = [stand_in_descriptor(cloud, index, i, radius).values
            for i in range(len(cloud))]
    return DescriptorSet(np.asarray(rows).reshape(len(cloud), STAND_IN_DIM))


def _open_text(source):
    if isinstance(source, (str, Path)):
        return open(source, "r", encoding="ascii"), True
    if isinstance(source, (bytes, bytearray)):
        return io.StringIO(source.decode("ascii")), True
    return source, False


def load_descriptors(source) -> DescriptorSet:
    """Parse the text descriptor format: one row `index v1 ... vD` per keypoint.

    Rows may appear in any order but must cover indices 0..n-1 exactly and
    share one dimension D.
    """
    from .fileio import ParseError

    stream, owned = _open_text(source)
    try:
        rows: dict[int, np.ndarray] = {}
        dim: int | None = None
        for lineno, line in enumerate(stream, start=1):
            parts = line.split()
            if not parts:
                continue
            try:
                idx = int(parts[0])
                values = np.array([float(p) for p in parts[1:]])
            except ValueError as exc:
                raise ParseError(f"row {lineno}: malformed descriptor line") from exc
            if idx < 0:
                raise ParseError(f"row {lineno}: negative keypoint index {idx}")
            if values.size == 0:
                raise ParseError(f"row {lineno}: no descriptor values")
            if dim is None:
                dim = values.size
            elif values.size != dim:
                raise ParseError(
                    f"row {lineno}: dimension {values.size} != expected {dim}")
            if idx in rows:
                raise ParseError(f"row {lineno}: duplicate keypoint index {idx}")
            rows[idx] = values
    finally:
        if owned:
            stream.close()

    if not rows:
        return DescriptorSet(np.empty((0, 0)))
    n = len(rows)
    if sorted(rows) != list(range(n)):
        missing = min(set(range(n)) - set(rows))
        raise ParseError(f"keypoint index {missing} missing from descriptor file")
    return DescriptorSet(np.stack([rows[i] for i in range(n)]))


def save_descriptors(descs: DescriptorSet, destination) -> None:
    """Write the text descriptor format read by load_descriptors."""
    stream, owned = (open(destination, "w", encoding="ascii"), True) \
        if isinstance(destination, (str, Path)) else (destination, False)
    try:
        for i, row in enumerate(descs.vectors):
            stream.write(f"{i} " + " ".join(f"{v:.17g}" for v in row) + "\n")
    finally:
        if owned:
            stream.close()
