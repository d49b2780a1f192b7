"""Rigid transform estimation from correspondences and filter metrics.

kabsch is the closed-form least-squares fit; ransac_register wraps it in
vanilla consensus sampling (minimal samples of 3, no local optimization).
match_metrics computes the four rejection/selection ratios on counts, with
zero-denominator cases reported as explicit None, never coerced to 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .geometry import PointCloud, RigidTransform, rotation_angle
from .matching import Correspondence

_DEGENERACY_RTOL = 1e-12


def kabsch(source, target) -> RigidTransform:
    """Least-squares rigid fit mapping source[i] onto target[i].

    Needs at least 3 non-collinear pairs; the reflection case is corrected
    by flipping the smallest singular direction so the rotation is proper.
    """
    src = np.asarray(source, dtype=np.float64)
    dst = np.asarray(target, dtype=np.float64)
    if src.shape != dst.shape or src.ndim != 2 or src.shape[1] != 3:
        raise ValueError("source and target must both have shape (N, 3)")
    if src.shape[0] < 3:
        raise ValueError("degenerate configuration: need at least 3 pairs")

    centroid_src = src.mean(axis=0)
    centroid_dst = dst.mean(axis=0)
    cov = (src - centroid_src).T @ (dst - centroid_dst)
    u, s, vt = np.linalg.svd(cov)
    if s[1] <= max(s[0] * _DEGENERACY_RTOL, 1e-300):
        raise ValueError("degenerate configuration: collinear or coincident points")
    d = np.sign(np.linalg.det(vt.T @ u.T))
    rotation = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    translation = centroid_dst - rotation @ centroid_src
    return RigidTransform(rotation, translation)


@dataclass(frozen=True)
class RansacConfig:
    """Vanilla RANSAC parameters; sample_size is fixed at the rigid minimum."""

    iterations: int = 1024
    inlier_threshold: float = 0.05
    seed: int = 0
    sample_size: int = 3

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.inlier_threshold <= 0:
            raise ValueError("inlier_threshold must be positive")
        if self.sample_size != 3:
            raise ValueError("sample_size is fixed at 3 (minimal rigid sample)")


@dataclass(frozen=True)
class RansacResult:
    transform: RigidTransform
    consensus: NDArray[np.int64]
    ok: bool
    best_iteration: int


def ransac_register(matches: list[Correspondence], cloud_p: PointCloud,
                    cloud_q: PointCloud, config: RansacConfig) -> RansacResult:
    """Best-consensus rigid transform over seeded minimal samples.

    The winning minimal model defines the consensus (residual strictly
    below the threshold); the returned transform is refit on that
    consensus. Ties in consensus size keep the earlier iteration, and the
    whole procedure is deterministic given config.seed. An empty consensus
    is reported with the identity transform and ok=False.
    """
    m = len(matches)
    if m < 3:
        raise ValueError("RANSAC needs at least 3 matches")
    src = cloud_p.points[[c.p for c in matches]]
    dst = cloud_q.points[[c.q for c in matches]]

    rng = np.random.default_rng(config.seed)
    best_size = 0
    best_transform: RigidTransform | None = None
    best_iteration = -1
    for it in range(config.iterations):
        sample = rng.choice(m, size=config.sample_size, replace=False)
        try:
            model = kabsch(src[sample], dst[sample])
        except ValueError:
            continue  # degenerate sample, iteration still consumed
        residuals = np.linalg.norm(src @ model.rotation.T
                                   + model.translation - dst, axis=1)
        size = int(np.count_nonzero(residuals < config.inlier_threshold))
        if size > best_size:
            best_size = size
            best_transform = model
            best_iteration = it

    if best_transform is None or best_size == 0:
        return RansacResult(RigidTransform.identity(),
                            np.empty(0, dtype=np.int64), False, -1)

    residuals = np.linalg.norm(src @ best_transform.rotation.T
                               + best_transform.translation - dst, axis=1)
    consensus = np.flatnonzero(residuals < config.inlier_threshold)
    transform = best_transform
    if consensus.size >= 3:
        try:
            transform = kabsch(src[consensus], dst[consensus])
        except ValueError:
            pass  # collinear consensus: keep the minimal-sample model
    return RansacResult(transform, consensus, True, best_iteration)


@dataclass(frozen=True)
class MatchMetrics:
    """Outlier-rejection and inlier-selection precision/recall.

    Stored as raw counts; the ratio properties return None whenever the
    denominator is zero (undefined is explicit, never 0).
    """

    n_matches: int
    n_inliers: int
    n_kept: int
    n_kept_inliers: int

    def __post_init__(self):
        ok = (0 <= self.n_inliers <= self.n_matches
              and 0 <= self.n_kept <= self.n_matches
              and 0 <= self.n_kept_inliers <= min(self.n_kept, self.n_inliers))
        if not ok:
            raise ValueError("inconsistent metric counts")

    @property
    def n_outliers(self) -> int:
        return self.n_matches - self.n_inliers

    @property
    def n_rejected(self) -> int:
        return self.n_matches - self.n_kept

    @property
    def n_true_rejections(self) -> int:
        kept_outliers = self.n_kept - self.n_kept_inliers
        return self.n_outliers - kept_outliers

    @property
    def outlier_precision(self):
        return self.n_true_rejections / self.n_rejected if self.n_rejected else None

    @property
    def outlier_recall(self):
        return self.n_true_rejections / self.n_outliers if self.n_outliers else None

    @property
    def inlier_precision(self):
        return self.n_kept_inliers / self.n_kept if self.n_kept else None

    @property
    def inlier_recall(self):
        return self.n_kept_inliers / self.n_inliers if self.n_inliers else None


def match_metrics(kept, labels) -> MatchMetrics:
    """Score a kept-set against ground-truth inlier labels.

    kept is an iterable of node indices (subset of range(len(labels)));
    labels is one boolean per match.
    """
    labels = np.asarray(labels, dtype=bool)
    n = labels.shape[0]
    kept_idx = np.asarray(sorted(set(int(i) for i in kept)), dtype=np.int64)
    if kept_idx.size and (kept_idx[0] < 0 or kept_idx[-1] >= n):
        raise ValueError("kept contains indices outside the match set")
    return MatchMetrics(
        n_matches=int(n),
        n_inliers=int(np.count_nonzero(labels)),
        n_kept=int(kept_idx.size),
        n_kept_inliers=int(np.count_nonzero(labels[kept_idx])),
    )


def median_point_distance(t_est: RigidTransform, t_gt: RigidTransform,
                          cloud: PointCloud) -> float:
    """Median over cloud points of the estimated-vs-true displacement."""
    if len(cloud) == 0:
        raise ValueError("cloud must be nonempty")
    diff = t_est.apply(cloud.points) - t_gt.apply(cloud.points)
    return float(np.median(np.linalg.norm(diff, axis=1)))


def transform_difference(a: RigidTransform, b: RigidTransform):
    """(rotation angle in radians, translation distance) between transforms."""
    angle = rotation_angle(a.rotation.T @ b.rotation)
    return angle, float(np.linalg.norm(a.translation - b.translation))
