"""Pairwise graphical model over putative correspondences.

Two matches are *compatible* neighbors when their points are mutually
k-nearest in both clouds: strong evidence they can co-exist as inliers.
They are *incompatible* when one cloud says mutually-near but the other
cloud puts the points far apart (both distance ranks above l): they cannot
both be inliers. Everything else is unrelated and contributes no edge.

Edges therefore require a mutual-kNN hit on at least one side, which bounds
node degree by 2(k-1) whenever each point index appears in at most one
match per side (true for mutual-best matching and the synthetic scenes);
that bound is what keeps inference linear in the number of matches.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from .geometry import NeighborIndex
from .matching import Correspondence, ObservationMessage

DEFAULT_K = 10
DEFAULT_L = 50
DEFAULT_SAFETY = 0.95


class NeighborKind(enum.IntEnum):
    UNRELATED = 0
    COMPATIBLE = 1
    INCOMPATIBLE = 2


def select_lambda(max_degree: int, safety: float = DEFAULT_SAFETY) -> float:
    """Pairwise bias strength set adaptively from the convergence bound.

    Returns exp(2 * safety / max(max_degree, 1)), which keeps
    max_degree * ln(lambda) = 2 * safety strictly below the critical
    value 2, guaranteeing message-passing convergence.
    """
    if max_degree < 0:
        raise ValueError("max_degree must be nonnegative")
    if not (0.0 < safety < 1.0 or safety == 1.0):
        raise ValueError("safety must lie in (0, 1]")
    return float(np.exp(2.0 * safety / max(max_degree, 1)))


def _validate_thresholds(k: int, l: int) -> None:
    if k < 2:
        raise ValueError("k must be >= 2")
    if l <= k:
        raise ValueError("l must be greater than k")


@dataclass(frozen=True)
class MatchGraph:
    """Nodes (matches with observation likelihoods) plus typed edges.

    edges is an (E, 2) int array with i < j, sorted and duplicate-free;
    kinds holds the matching NeighborKind (never UNRELATED). lam is the
    pairwise bias, constrained by max_degree * ln(lam) < 2.
    """

    matches: tuple[Correspondence, ...]
    observations: NDArray[np.float64]  # (N, 2), columns (outlier, inlier)
    edges: NDArray[np.int64]           # (E, 2), canonical i < j
    kinds: NDArray[np.int8]            # (E,)
    lam: float
    k: int = DEFAULT_K
    l: int = DEFAULT_L

    def __post_init__(self):
        matches = tuple(self.matches)
        n = len(matches)
        if n == 0:
            raise ValueError("graph needs at least one node")
        obs = np.asarray(self.observations, dtype=np.float64).reshape(n, 2).copy()
        if np.any(obs < 0) or np.any(np.abs(obs.sum(axis=1) - 1.0) > 1e-12):
            raise ValueError("observation rows must be nonnegative and sum to 1")
        edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2).copy()
        kinds = np.asarray(self.kinds, dtype=np.int8).reshape(-1).copy()
        if edges.shape[0] != kinds.shape[0]:
            raise ValueError("edges and kinds length mismatch")
        if edges.size:
            if np.any(edges[:, 0] >= edges[:, 1]):
                raise ValueError("edges must satisfy i < j")
            if np.any(edges < 0) or np.any(edges >= n):
                raise ValueError("edge endpoint out of range")
            enc = edges[:, 0] * n + edges[:, 1]
            if np.any(np.diff(enc) <= 0):
                raise ValueError("edges must be sorted by (i, j) and unique")
            if not np.all(np.isin(kinds, (int(NeighborKind.COMPATIBLE),
                                          int(NeighborKind.INCOMPATIBLE)))):
                raise ValueError("edge kinds must be COMPATIBLE or INCOMPATIBLE")
        _validate_thresholds(self.k, self.l)
        # lam == 1.0 is the degenerate no-bias case (uniform potentials);
        # meaningful graphs use lam > 1 as produced by select_lambda.
        if not self.lam >= 1.0:
            raise ValueError("lam must be >= 1")
        if self.max_degree * np.log(self.lam) >= 2.0:
            raise ValueError("lam violates the convergence bound "
                             "max_degree * ln(lam) < 2")
        obs.setflags(write=False)
        edges.setflags(write=False)
        kinds.setflags(write=False)
        object.__setattr__(self, "matches", matches)
        object.__setattr__(self, "observations", obs)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "kinds", kinds)

    def __len__(self) -> int:
        return len(self.matches)

    @property
    def degrees(self) -> NDArray[np.int64]:
        return np.bincount(self.edges.reshape(-1), minlength=len(self))

    @property
    def max_degree(self) -> int:
        return int(self.degrees.max()) if self.edges.size else 0

    @property
    def num_edges(self) -> int:
        return self.edges.shape[0]


def _near_and_far(rank_ab: int | None, rank_ba: int | None,
                  k: int, l: int) -> tuple[bool, bool]:
    """(mutually-near, far) flags for one cloud; None ranks mean shared point."""
    if rank_ab is None:  # identical point index: distance zero, trivially near
        return True, False
    near = max(rank_ab, rank_ba) < k
    far = min(rank_ab, rank_ba) > l
    return near, far


def classify_pair(ci: Correspondence, cj: Correspondence,
                  idx_p: NeighborIndex, idx_q: NeighborIndex,
                  k: int, l: int) -> NeighborKind:
    """Classify one ordered pair of matches; symmetric in (ci, cj)."""
    _validate_thresholds(k, l)
    if ci.p == cj.p and ci.q == cj.q:
        raise ValueError("cannot classify a match against itself")

    if ci.p == cj.p:
        rp = rpb = None
    else:
        rp, rpb = idx_p.rank(ci.p, cj.p), idx_p.rank(cj.p, ci.p)
    if ci.q == cj.q:
        rq = rqb = None
    else:
        rq, rqb = idx_q.rank(ci.q, cj.q), idx_q.rank(cj.q, ci.q)

    near_p, far_p = _near_and_far(rp, rpb, k, l)
    near_q, far_q = _near_and_far(rq, rqb, k, l)

    if near_p and near_q:
        return NeighborKind.COMPATIBLE
    if (near_p and far_q) or (near_q and far_p):
        return NeighborKind.INCOMPATIBLE
    return NeighborKind.UNRELATED


def _expand_ranges(left: np.ndarray, right: np.ndarray):
    """Flatten [left[i], right[i]) ranges: returns (which range, position)."""
    counts = right - left
    total = int(counts.sum())
    owner = np.repeat(np.arange(len(left)), counts)
    offsets = np.arange(total) - np.repeat(np.cumsum(counts) - counts, counts)
    return owner, left[owner] + offsets


class _SideTables:
    """Per-cloud lookup tables for one side (P or Q) of the match list."""

    def __init__(self, pts_of_match: np.ndarray, index: NeighborIndex,
                 k: int, l: int):
        n_cloud = len(index)
        self.pts = pts_of_match
        if np.any((pts_of_match < 0) | (pts_of_match >= n_cloud)):
            raise IndexError("match point index out of range")
        self.unique, self.rows = np.unique(pts_of_match, return_inverse=True)
        ll = min(l, n_cloud - 1)
        kk = min(k - 1, n_cloud - 1)
        if ll >= 1:
            lists = index.k_nearest_batch(self.unique, ll)
        else:
            lists = np.empty((len(self.unique), 0), dtype=np.int64)
        self.knn = np.sort(lists[:, :kk], axis=1)
        self.lnn = np.sort(lists, axis=1)
        self.order = np.argsort(pts_of_match, kind="stable")
        self.sorted_pts = pts_of_match[self.order]

    def candidate_pairs(self) -> np.ndarray:
        """(m, j) match pairs whose points on this side may be mutually near."""
        n_matches = len(self.pts)
        cand_pts = np.hstack([self.pts[:, None], self.knn[self.rows]])
        flat = cand_pts.reshape(-1)
        left = np.searchsorted(self.sorted_pts, flat, side="left")
        right = np.searchsorted(self.sorted_pts, flat, side="right")
        slot_owner, positions = _expand_ranges(left, right)
        m = slot_owner // cand_pts.shape[1]
        j = self.order[positions]
        keep = m != j
        return np.stack([m[keep], j[keep]], axis=1)

    def _member(self, table: np.ndarray, row_ids: np.ndarray,
                targets: np.ndarray) -> np.ndarray:
        rows = table[row_ids]
        if rows.shape[1] == 0:
            return np.zeros(len(row_ids), dtype=bool)
        pos = np.sum(rows < targets[:, None], axis=1)
        pos_clip = np.minimum(pos, rows.shape[1] - 1)
        return (pos < rows.shape[1]) & (rows[np.arange(len(rows)), pos_clip]
                                        == targets)

    def near_far(self, mi: np.ndarray, mj: np.ndarray):
        """Vectorized (near, far) flags for match-index pairs (mi, mj)."""
        pi, pj = self.pts[mi], self.pts[mj]
        shared = pi == pj
        ri, rj = self.rows[mi], self.rows[mj]
        mutual = self._member(self.knn, ri, pj) & self._member(self.knn, rj, pi)
        near = shared | mutual
        within_l = self._member(self.lnn, ri, pj) | self._member(self.lnn, rj, pi)
        far = ~shared & ~within_l
        return near, far


def build_graph(matches: list[Correspondence],
                idx_p: NeighborIndex, idx_q: NeighborIndex,
                k: int = DEFAULT_K, l: int = DEFAULT_L,
                observations: list[ObservationMessage] | None = None,
                lambda_safety: float = DEFAULT_SAFETY) -> MatchGraph:
    """Build the correspondence graph: one node per match, typed edges.

    Candidate pairs are enumerated through the k-nearest lists of the
    matched points (an edge requires a mutual-kNN hit on some side, so
    nothing is missed), then classified exactly as classify_pair would.
    """
    _validate_thresholds(k, l)
    if not matches:
        raise ValueError("matches must be nonempty")
    n = len(matches)
    keys = {(c.p, c.q) for c in matches}
    if len(keys) != n:
        raise ValueError("duplicate (p, q) correspondence in match set")

    p_arr = np.fromiter((c.p for c in matches), dtype=np.int64, count=n)
    q_arr = np.fromiter((c.q for c in matches), dtype=np.int64, count=n)
    side_p = _SideTables(p_arr, idx_p, k, l)
    side_q = _SideTables(q_arr, idx_q, k, l)

    cand = np.vstack([side_p.candidate_pairs(), side_q.candidate_pairs()])
    if cand.size:
        lo = np.minimum(cand[:, 0], cand[:, 1])
        hi = np.maximum(cand[:, 0], cand[:, 1])
        enc = np.unique(lo.astype(np.int64) * n + hi)
        mi, mj = enc // n, enc % n
    else:
        mi = mj = np.empty(0, dtype=np.int64)

    near_p, far_p = side_p.near_far(mi, mj)
    near_q, far_q = side_q.near_far(mi, mj)
    compat = near_p & near_q
    incompat = (near_p & far_q) | (near_q & far_p)
    if np.any(compat & incompat):  # impossible while k < l; fail loudly
        raise AssertionError("pair classified both compatible and incompatible")

    is_edge = compat | incompat
    edges = np.stack([mi[is_edge], mj[is_edge]], axis=1)
    kinds = np.where(compat[is_edge], np.int8(NeighborKind.COMPATIBLE),
                     np.int8(NeighborKind.INCOMPATIBLE))

    if observations is None:
        obs = np.full((n, 2), 0.5)
    else:
        if len(observations) != n:
            raise ValueError("one observation message per match required")
        obs = np.array([[o.outlier, o.inlier] for o in observations])

    max_degree = int(np.bincount(edges.reshape(-1), minlength=n).max()) \
        if edges.size else 0
    lam = select_lambda(max_degree, lambda_safety)
    return MatchGraph(matches=tuple(matches), observations=obs, edges=edges,
                      kinds=kinds, lam=lam, k=k, l=l)


def dump_graph(graph: MatchGraph) -> str:
    """Line-oriented debug dump: header, one node line and one edge line each."""
    out = [f"lambda {graph.lam:.12g} k {graph.k} l {graph.l}"]
    for i, c in enumerate(graph.matches):
        o = graph.observations[i]
        out.append(f"node {i} {c.p} {c.q} {o[0]:.12g} {o[1]:.12g}")
    kind_char = {int(NeighborKind.COMPATIBLE): "C",
                 int(NeighborKind.INCOMPATIBLE): "I"}
    for (i, j), kind in zip(graph.edges, graph.kinds):
        out.append(f"edge {i} {j} {kind_char[int(kind)]}")
    return "\n".join(out) + "\n"
