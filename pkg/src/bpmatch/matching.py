"""Putative matching of descriptor sets and per-match observation likelihoods.

Matching is plain Euclidean nearest neighbor over descriptor vectors, kept
either when it is mutual (each side is the other's nearest) or when it
passes the ratio test. Observation likelihoods map descriptor distance to
an (outlier, inlier) pair; the default pipeline uses the uniform prior and
the distance-based prior is opt-in.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .descriptors import DescriptorSet

# Half-width of the likelihood band around 0.5 for the distance prior.
_PRIOR_BETA = 0.25
_CHUNK = 1024


@dataclass(frozen=True, order=True)
class Correspondence:
    """A putative match: point p in cloud P paired with point q in cloud Q."""

    p: int
    q: int
    descriptor_distance: float = 0.0

    def __post_init__(self):
        if self.p < 0 or self.q < 0:
            raise ValueError("correspondence indices must be nonnegative")
        if not (self.descriptor_distance >= 0.0):
            raise ValueError("descriptor distance must be nonnegative")


@dataclass(frozen=True)
class ObservationMessage:
    """Per-match likelihood pair, outlier component first."""

    outlier: float
    inlier: float

    def __post_init__(self):
        if not (0.0 <= self.outlier <= 1.0 and 0.0 <= self.inlier <= 1.0):
            raise ValueError("likelihoods must lie in [0, 1]")
        if abs(self.outlier + self.inlier - 1.0) > 1e-12:
            raise ValueError("likelihoods must sum to 1")

    def as_array(self) -> np.ndarray:
        return np.array([self.outlier, self.inlier])


def _check_sets(a: DescriptorSet, b: DescriptorSet) -> None:
    if len(a) == 0 or len(b) == 0:
        raise ValueError("descriptor sets must be nonempty")
    if a.dim != b.dim:
        raise ValueError(f"descriptor dimension mismatch: {a.dim} != {b.dim}")


def _nearest_two(queries: np.ndarray, targets: np.ndarray):
    """Per query row: indices and distances of the two nearest target rows.

    Distances are computed from explicit differences (not the expanded
    quadratic form) so results agree with a brute-force oracle bitwise.
    Ties resolve to the lowest target index. With a single target the
    second column is (-1, inf).
    """
    nq, nt = queries.shape[0], targets.shape[0]
    idx = np.empty((nq, 2), dtype=np.int64)
    dist = np.empty((nq, 2))
    for start in range(0, nq, _CHUNK):
        stop = min(start + _CHUNK, nq)
        d = np.linalg.norm(queries[start:stop, None, :] - targets[None, :, :],
                           axis=2)
        first = np.argmin(d, axis=1)
        rows = np.arange(stop - start)
        dist[start:stop, 0] = d[rows, first]
        idx[start:stop, 0] = first
        if nt >= 2:
            d[rows, first] = np.inf
            second = np.argmin(d, axis=1)
            dist[start:stop, 1] = d[rows, second]
            idx[start:stop, 1] = second
        else:
            dist[start:stop, 1] = np.inf
            idx[start:stop, 1] = -1
    return idx, dist


def mutual_best_match(a: DescriptorSet, b: DescriptorSet) -> list[Correspondence]:
    """Pairs (i, j) where j is i's nearest descriptor in B and vice versa.

    Output is sorted by (p, q); no index repeats on either side.
    """
    _check_sets(a, b)
    fwd_idx, fwd_dist = _nearest_two(a.vectors, b.vectors)
    bwd_idx, _ = _nearest_two(b.vectors, a.vectors)
    nn_ab = fwd_idx[:, 0]
    nn_ba = bwd_idx[:, 0]
    ia = np.arange(len(a))
    mutual = nn_ba[nn_ab] == ia
    return [Correspondence(int(i), int(nn_ab[i]), float(fwd_dist[i, 0]))
            for i in ia[mutual]]


def ratio_test_match(a: DescriptorSet, b: DescriptorSet,
                     ratio: float) -> list[Correspondence]:
    """Keep i -> nearest(j) only when d1 < ratio * d2 (strict).

    d1 and d2 are the distances to the first and second nearest descriptors
    in B. Requires at least two descriptors in B.
    """
    _check_sets(a, b)
    if not (0.0 < ratio < 1.0):
        raise ValueError("ratio must lie in (0, 1)")
    if len(b) < 2:
        raise ValueError("ratio test needs at least 2 descriptors in B")
    idx, dist = _nearest_two(a.vectors, b.vectors)
    keep = dist[:, 0] < ratio * dist[:, 1]
    return [Correspondence(int(i), int(idx[i, 0]), float(dist[i, 0]))
            for i in np.flatnonzero(keep)]


def observation_from_distance(c: Correspondence, scale: float) -> ObservationMessage:
    """Distance-based likelihood: a Gaussian falloff squeezed into
    [0.5 - beta, 0.5 + beta] with beta = 0.25, so the prior can at most
    double the odds. Monotone decreasing in descriptor distance."""
    if scale <= 0:
        raise ValueError("scale must be positive")
    g = np.exp(-c.descriptor_distance ** 2 / (2.0 * scale ** 2))
    inlier = 0.5 - _PRIOR_BETA + 2.0 * _PRIOR_BETA * g
    return ObservationMessage(outlier=1.0 - inlier, inlier=inlier)


def uniform_observation() -> ObservationMessage:
    """The no-prior observation (0.5, 0.5)."""
    return ObservationMessage(0.5, 0.5)
