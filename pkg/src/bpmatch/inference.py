"""Loopy belief propagation on the correspondence graph.

Messages are two-component (outlier, inlier) vectors updated synchronously
with double buffering: every directed edge is recomputed from the previous
round, which makes results deterministic and order-independent. Because
the graph's lam respects max_degree * ln(lam) < 2, the updates contract
and the loop converges; on trees the fixed point is exact.

exact_marginals enumerates all 2^N assignments and is the independent
oracle the propagation is tested against.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from .matching import Correspondence
from .matchgraph import MatchGraph, NeighborKind

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITERS = 200
DEFAULT_THRESHOLD = 0.5
# Above this degree, per-node products switch to log-space accumulation.
_LOGSPACE_DEGREE = 30


@dataclass(frozen=True)
class Message:
    """Directed belief about one node's state, outlier component first."""

    outlier: float
    inlier: float

    def __post_init__(self):
        if self.outlier < 0 or self.inlier < 0:
            raise ValueError("message components must be nonnegative")
        if abs(self.outlier + self.inlier - 1.0) > 1e-12:
            raise ValueError("message must have unit L1 norm")


@dataclass(frozen=True)
class ConvergenceReport:
    iterations: int
    converged: bool
    max_delta: float
    underflow_events: int = 0


@dataclass
class BeliefState:
    """All directed messages plus the per-node observation messages.

    Directed edges are laid out in pairs: slot 2e holds i->j and slot
    2e+1 holds j->i for undirected edge e, so the reverse of slot d is
    d ^ 1. Single-writer between rounds.
    """

    src: NDArray[np.int64]
    dst: NDArray[np.int64]
    compat: NDArray[np.bool_]
    messages: NDArray[np.float64]      # (2E, 2)
    observations: NDArray[np.float64]  # (N, 2)
    iteration: int = 0
    underflow_events: int = 0
    _lookup: dict | None = field(default=None, repr=False)

    def directed_count(self) -> int:
        return self.messages.shape[0]

    def _slot(self, frm: int, to: int) -> int:
        if self._lookup is None:
            self._lookup = {(int(a), int(b)): d
                            for d, (a, b) in enumerate(zip(self.src, self.dst))}
        try:
            return self._lookup[(frm, to)]
        except KeyError:
            raise ValueError(f"({frm}, {to}) is not an edge") from None

    def message(self, frm: int, to: int) -> Message:
        m = self.messages[self._slot(frm, to)]
        return Message(float(m[0]), float(m[1]))


def compatibility_matrix(kind: NeighborKind, lam: float) -> NDArray[np.float64]:
    """Pairwise potential: biases joint inlier states on compatible edges,
    penalizes them on incompatible edges."""
    if kind == NeighborKind.COMPATIBLE:
        return np.array([[1.0, 1.0], [1.0, lam]])
    if kind == NeighborKind.INCOMPATIBLE:
        return np.array([[lam, lam], [lam, 1.0]])
    raise ValueError("unrelated pairs have no compatibility matrix")


def init_state(graph: MatchGraph) -> BeliefState:
    """All directed messages start uniform at (0.5, 0.5); no prior imposed."""
    e = graph.num_edges
    src = np.empty(2 * e, dtype=np.int64)
    dst = np.empty(2 * e, dtype=np.int64)
    compat = np.empty(2 * e, dtype=bool)
    if e:
        src[0::2], dst[0::2] = graph.edges[:, 0], graph.edges[:, 1]
        src[1::2], dst[1::2] = graph.edges[:, 1], graph.edges[:, 0]
        is_compat = graph.kinds == np.int8(NeighborKind.COMPATIBLE)
        compat[0::2] = is_compat
        compat[1::2] = is_compat
    return BeliefState(
        src=src, dst=dst, compat=compat,
        messages=np.full((2 * e, 2), 0.5),
        observations=graph.observations.copy(),
    )


def _node_products(state: BeliefState, order, starts, seg_nodes,
                   logspace: bool) -> NDArray[np.float64]:
    """obs_i times the product of all incoming messages, for every node."""
    prod = state.observations.copy()
    if state.directed_count() == 0:
        return prod
    incoming = state.messages[order]
    if logspace:
        with np.errstate(divide="ignore"):
            logs = np.log(incoming)
        seg = np.add.reduceat(logs, starts, axis=0)
        prod[seg_nodes] *= np.exp(seg)
    else:
        prod[seg_nodes] *= np.multiply.reduceat(incoming, starts, axis=0)
    return prod


def _apply_potentials(excl: NDArray[np.float64], compat: NDArray[np.bool_],
                      lam: float) -> NDArray[np.float64]:
    """Multiply excluded products by the edge's compatibility matrix."""
    e0, e1 = excl[:, 0], excl[:, 1]
    s = e0 + e1
    out = np.empty_like(excl)
    out[:, 0] = np.where(compat, s, lam * s)
    out[:, 1] = np.where(compat, e0 + lam * e1, lam * e0 + e1)
    return out


def update_message(graph: MatchGraph, state: BeliefState,
                   frm: int, to: int) -> Message:
    """One directed message recomputed from the current state.

    Normalized product of the observation at `frm`, every incoming message
    except the one from `to`, and the edge's compatibility matrix. A zero
    normalizer substitutes the uniform message and counts as an underflow.
    """
    slot = state._slot(frm, to)
    acc = state.observations[frm].copy()
    for d in np.flatnonzero(state.dst == frm):
        if state.src[d] != to:
            acc *= state.messages[d]
    fmat = compatibility_matrix(
        NeighborKind.COMPATIBLE if state.compat[slot]
        else NeighborKind.INCOMPATIBLE, graph.lam)
    out = fmat.T @ acc  # out[s_to] = sum_s_frm F[s_frm, s_to] * acc[s_frm]
    z = float(out.sum())
    if z == 0.0:
        state.underflow_events += 1
        return Message(0.5, 0.5)
    return Message(float(out[0] / z), float(out[1] / z))


def run_lbp(graph: MatchGraph, max_iters: int = DEFAULT_MAX_ITERS,
            tol: float = DEFAULT_TOL, damping: float = 0.0):
    """Synchronous message passing until the largest per-component change
    drops below tol or max_iters is reached.

    Returns (marginals, ConvergenceReport); non-convergence is reported,
    never raised. `damping` blends in the previous message (0 = none) and
    exists for experiments with deliberately large lam.
    """
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    if tol <= 0:
        raise ValueError("tol must be positive")
    if not (0.0 <= damping < 1.0):
        raise ValueError("damping must lie in [0, 1)")

    state = init_state(graph)
    lam = graph.lam
    logspace = graph.max_degree > _LOGSPACE_DEGREE

    if state.directed_count():
        order = np.argsort(state.dst, kind="stable")
        dst_sorted = state.dst[order]
        starts = np.flatnonzero(
            np.r_[True, dst_sorted[1:] != dst_sorted[:-1]])
        seg_nodes = dst_sorted[starts]
        rev = np.arange(state.directed_count()) ^ 1
    else:
        order = starts = seg_nodes = rev = None

    underflows = 0
    delta = 0.0
    iterations = 0
    converged = False
    for iterations in range(1, max_iters + 1):
        if state.directed_count() == 0:
            delta = 0.0
            converged = True
            state.iteration = iterations
            break
        prod = _node_products(state, order, starts, seg_nodes, logspace)
        excl = prod[state.src] / state.messages[rev]
        out = _apply_potentials(excl, state.compat, lam)
        z = out.sum(axis=1)
        dead = z == 0.0
        if np.any(dead):
            underflows += int(np.count_nonzero(dead))
            out[dead] = 0.5
            z[dead] = 1.0
        new = out / z[:, None]
        if damping:
            new = (1.0 - damping) * new + damping * state.messages
        delta = float(np.max(np.abs(new - state.messages)))
        state.messages = new
        state.iteration = iterations
        if delta < tol:
            converged = True
            break

    state.underflow_events += underflows
    marginals = compute_marginals(graph, state)
    report = ConvergenceReport(iterations=iterations, converged=converged,
                               max_delta=delta,
                               underflow_events=state.underflow_events)
    return marginals, report


def compute_marginals(graph: MatchGraph, state: BeliefState) -> NDArray[np.float64]:
    """Per-node (outlier, inlier) beliefs: observation times all incoming
    messages, L1-normalized. Zero products fall back to uniform."""
    if state.directed_count():
        order = np.argsort(state.dst, kind="stable")
        dst_sorted = state.dst[order]
        starts = np.flatnonzero(np.r_[True, dst_sorted[1:] != dst_sorted[:-1]])
        seg_nodes = dst_sorted[starts]
        logspace = graph.max_degree > _LOGSPACE_DEGREE
        prod = _node_products(state, order, starts, seg_nodes, logspace)
    else:
        prod = state.observations.copy()
    z = prod.sum(axis=1)
    dead = z == 0.0
    if np.any(dead):
        state.underflow_events += int(np.count_nonzero(dead))
        prod[dead] = 0.5
        z[dead] = 1.0
    return prod / z[:, None]


def filter_matches(matches: list[Correspondence],
                   marginals: NDArray[np.float64],
                   threshold: float = DEFAULT_THRESHOLD):
    """Partition match indices into (kept, rejected) by inlier belief.

    A match is kept when its inlier probability is >= threshold, so
    isolated nodes with exactly uniform beliefs survive the default 0.5.
    """
    if not (0.0 < threshold < 1.0):
        raise ValueError("threshold must lie in (0, 1)")
    marginals = np.asarray(marginals)
    if marginals.shape != (len(matches), 2):
        raise ValueError("one marginal row per match required")
    kept = np.flatnonzero(marginals[:, 1] >= threshold)
    rejected = np.flatnonzero(marginals[:, 1] < threshold)
    return kept, rejected


def exact_marginals(graph: MatchGraph) -> NDArray[np.float64]:
    """Brute-force marginals by enumerating every joint assignment.

    The joint weight of an assignment is the product of per-node
    observations and per-edge compatibility entries. Exponential in the
    node count, hence guarded; exists as the test oracle.
    """
    n = len(graph)
    if n > 20:
        raise ValueError("oracle limit: exact enumeration capped at 20 nodes")
    states = (np.arange(2 ** n, dtype=np.int64)[:, None]
              >> np.arange(n, dtype=np.int64)) & 1
    weights = np.ones(2 ** n)
    for i in range(n):
        weights *= graph.observations[i, states[:, i]]
    fplus = compatibility_matrix(NeighborKind.COMPATIBLE, graph.lam)
    fminus = compatibility_matrix(NeighborKind.INCOMPATIBLE, graph.lam)
    for (i, j), kind in zip(graph.edges, graph.kinds):
        fmat = fplus if kind == np.int8(NeighborKind.COMPATIBLE) else fminus
        weights *= fmat[states[:, i], states[:, j]]
    total = weights.sum()
    if total == 0.0:
        raise ValueError("joint distribution has zero total weight")
    inlier = (weights[:, None] * states).sum(axis=0) / total
    return np.stack([1.0 - inlier, inlier], axis=1)


def format_marginals(marginals: NDArray[np.float64]) -> str:
    """Debug dump: one `marginal <node> <outlier_p> <inlier_p>` line per node."""
    lines = [f"marginal {i} {row[0]:.12g} {row[1]:.12g}"
             for i, row in enumerate(np.asarray(marginals))]
    return "\n".join(lines) + "\n"
