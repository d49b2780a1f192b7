"""Synthetic correspondence scenes and the outlier-ratio sweep harness.

A scene keeps a fixed number of inlier correspondences and adds outlier
correspondences for distraction. Inliers pair corresponding indices inside
one compact region (mimicking the overlap patch real scans share), and
outliers pair the remaining indices at random, each point used by at most
one match so that the graph degree bound holds. Every generated point
participates in a match; the cloud size therefore scales with the ratio
and num_points acts as the per-cloud budget.

The sweep applies each method (identity filter, belief-propagation filter,
RANSAC, or filter then RANSAC) to shared scenes, scores the kept sets
against ground-truth labels, registers with the remaining matches and
collects the median point distance.
"""

from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from numpy.typing import NDArray

from .config import PipelineConfig
from .geometry import PointCloud, RigidTransform, build_index, random_transform
from .inference import filter_matches, run_lbp
from .matchgraph import build_graph
from .matching import Correspondence, observation_from_distance
from .registration import (MatchMetrics, RansacConfig, kabsch, match_metrics,
                           median_point_distance, ransac_register)

METHODS = ("none", "rmbp", "ransac_only", "rmbp+ransac")
SCHEMA_VERSION = 1
_CSV_COLUMNS = ("ratio", "method", "OP", "OR", "IP", "IR", "median_dist",
                "mean_runtime_ms", "n_seeds", "success_rate", "schema_version")
_CLUSTER_STD = 0.04
_PAIRING_ROUNDS = 1000


@dataclass(frozen=True)
class SceneConfig:
    """Knobs of the synthetic generator; num_points caps matched points."""

    num_points: int = 8000
    inlier_count: int = 100
    outlier_ratios: tuple = (1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0)
    noise_sigma: float = 0.005
    max_rotation: float = float(np.pi)
    max_translation: float = 0.5
    seed: int = 0
    clusters: int = 20
    uniform_cloud: bool = False

    def __post_init__(self):
        object.__setattr__(self, "outlier_ratios",
                           tuple(float(r) for r in self.outlier_ratios))
        if self.inlier_count < 3:
            raise ValueError("inlier_count must be >= 3")
        if any(r <= 0 for r in self.outlier_ratios):
            raise ValueError("outlier ratios must be positive")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be nonnegative")
        if self.num_points < self.inlier_count:
            raise ValueError("num_points must cover at least the inliers")
        if self.clusters < 1:
            raise ValueError("clusters must be >= 1")
        if self.seed < 0:
            raise ValueError("seed must be nonnegative")


@dataclass(frozen=True)
class SyntheticScene:
    cloud_p: PointCloud
    cloud_q: PointCloud
    gt_transform: RigidTransform
    matches: tuple[Correspondence, ...]
    labels: NDArray[np.bool_]

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=bool).copy()
        if labels.shape[0] != len(self.matches):
            raise ValueError("one label per match required")
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "matches", tuple(self.matches))


def _sample_cloud(rng: np.random.Generator, n: int, cfg: SceneConfig) -> np.ndarray:
    if cfg.uniform_cloud:
        return rng.uniform(0.0, 1.0, size=(n, 3))
    centers = rng.uniform(0.0, 1.0, size=(cfg.clusters, 3))
    assign = rng.integers(0, cfg.clusters, size=n)
    return centers[assign] + rng.normal(0.0, _CLUSTER_STD, size=(n, 3))


def _truncated_noise(rng: np.random.Generator, n: int, sigma: float) -> np.ndarray:
    """Gaussian noise resampled so no row exceeds 4 sigma in norm."""
    noise = rng.normal(0.0, sigma, size=(n, 3))
    if sigma == 0.0:
        return noise
    for _ in range(100):
        bad = np.linalg.norm(noise, axis=1) > 4.0 * sigma
        if not np.any(bad):
            return noise
        noise[bad] = rng.normal(0.0, sigma, size=(int(bad.sum()), 3))
    raise RuntimeError("noise truncation did not settle")


def _pair_outliers(rng: np.random.Generator, rest: np.ndarray,
                   residual_of: callable, min_residual: float) -> np.ndarray:
    """Random pairing rest[i] -> perm[i] avoiding self pairs and pairs whose
    ground-truth residual would look like an inlier."""
    perm = rng.permutation(rest)
    for _ in range(_PAIRING_ROUNDS):
        bad = (perm == rest) | (residual_of(rest, perm) <= min_residual)
        n_bad = int(bad.sum())
        if n_bad == 0:
            return perm
        if n_bad == 1 and rest.size > 1:
            j = int(rng.integers(0, rest.size))
            i = int(np.flatnonzero(bad)[0])
            perm[i], perm[j] = perm[j], perm[i]
        else:
            idx = np.flatnonzero(bad)
            perm[idx] = perm[idx[rng.permutation(n_bad)]]
    raise RuntimeError("could not sample valid outlier pairs; "
                       "increase num_points or reduce the outlier ratio")


def generate_scene(cfg: SceneConfig, ratio: float, seed: int) -> SyntheticScene:
    """One deterministic scene at the given outliers-per-inlier ratio.

    Raises when the requested outliers exceed the non-corresponding pairs
    available inside the num_points budget.
    """
    if ratio < 0:
        raise ValueError("ratio must be nonnegative")
    if seed < 0:
        raise ValueError("seed must be nonnegative")
    n_inl = cfg.inlier_count
    n_out = int(round(ratio * n_inl))
    n_used = n_inl + n_out
    if n_used > cfg.num_points:
        raise ValueError(
            f"requested {n_out} outliers exceed available non-corresponding "
            f"pairs: {n_used} matched points > num_points budget {cfg.num_points}")

    rng = np.random.default_rng([cfg.seed, seed])
    pts_p = _sample_cloud(rng, n_used, cfg)
    gt = random_transform(rng, cfg.max_rotation, cfg.max_translation)
    noise = _truncated_noise(rng, n_used, cfg.noise_sigma)
    pts_q = gt.apply(pts_p) + noise

    # Inliers occupy one compact region, the way true correspondences come
    # from the overlap patch of two scans.
    seed_pt = int(rng.integers(0, n_used))
    dist = np.linalg.norm(pts_p - pts_p[seed_pt], axis=1)
    order = np.lexsort((np.arange(n_used), dist))
    inlier_idx = np.sort(order[:n_inl])
    rest = np.setdiff1d(np.arange(n_used), inlier_idx)

    mapped = gt.apply(pts_p)

    def residual_of(p_idx, q_idx):
        return np.linalg.norm(mapped[p_idx] - pts_q[q_idx], axis=1)

    min_residual = 4.0 * cfg.noise_sigma
    pairs_p = [inlier_idx]
    pairs_q = [inlier_idx]
    if n_out:
        perm = _pair_outliers(rng, rest, residual_of, min_residual)
        pairs_p.append(rest)
        pairs_q.append(perm)
    all_p = np.concatenate(pairs_p)
    all_q = np.concatenate(pairs_q)
    labels = np.zeros(n_used, dtype=bool)
    labels[:n_inl] = True

    inl_dist = rng.uniform(0.05, 0.35, size=n_inl)
    out_dist = rng.uniform(0.25, 1.0, size=n_out)
    desc_dist = np.concatenate([inl_dist, out_dist])

    shuffle = rng.permutation(n_used)
    matches = tuple(Correspondence(int(all_p[i]), int(all_q[i]), float(desc_dist[i]))
                    for i in shuffle)
    return SyntheticScene(
        cloud_p=PointCloud(pts_p, id="bench-P"),
        cloud_q=PointCloud(pts_q, id="bench-Q"),
        gt_transform=gt,
        matches=matches,
        labels=labels[shuffle],
    )


@dataclass(frozen=True)
class BenchRow:
    """Raw outcome of one (ratio, method, seed) cell."""

    ratio: float
    method: str
    seed: int
    n_matches: int
    n_inliers: int
    n_kept: int
    n_kept_inliers: int
    registered: bool
    median_dist: float | None
    runtime_ms: float
    error: str | None = None

    def metrics(self) -> MatchMetrics:
        return MatchMetrics(self.n_matches, self.n_inliers,
                            self.n_kept, self.n_kept_inliers)


@dataclass(frozen=True)
class BenchAggregate:
    """Per (ratio, method) means; None where every seed was undefined."""

    ratio: float
    method: str
    n_seeds: int
    outlier_precision: float | None
    outlier_recall: float | None
    inlier_precision: float | None
    inlier_recall: float | None
    median_dist: float | None
    success_rate: float
    mean_runtime_ms: float


@dataclass(frozen=True)
class SweepResult:
    rows: tuple[BenchRow, ...]
    success_threshold: float

    def __post_init__(self):
        object.__setattr__(self, "rows", tuple(self.rows))

    def aggregates(self) -> list[BenchAggregate]:
        groups: dict[tuple, list[BenchRow]] = {}
        for row in self.rows:
            groups.setdefault((row.ratio, row.method), []).append(row)

        def none_mean(values):
            vals = [v for v in values if v is not None]
            return sum(vals) / len(vals) if vals else None

        out = []
        for (ratio, method) in sorted(groups):
            rows = groups[(ratio, method)]
            mets = [r.metrics() for r in rows if r.error is None]
            succ = [r.registered and r.median_dist is not None
                    and r.median_dist < self.success_threshold for r in rows]
            out.append(BenchAggregate(
                ratio=ratio, method=method, n_seeds=len(rows),
                outlier_precision=none_mean([m.outlier_precision for m in mets]),
                outlier_recall=none_mean([m.outlier_recall for m in mets]),
                inlier_precision=none_mean([m.inlier_precision for m in mets]),
                inlier_recall=none_mean([m.inlier_recall for m in mets]),
                median_dist=none_mean([r.median_dist for r in rows]),
                success_rate=sum(succ) / len(rows),
                mean_runtime_ms=sum(r.runtime_ms for r in rows) / len(rows),
            ))
        return out

    def success_rate(self, ratio: float, method: str) -> float:
        for agg in self.aggregates():
            if agg.ratio == ratio and agg.method == method:
                return agg.success_rate
        raise KeyError(f"no rows for ratio {ratio}, method {method}")


def _rmbp_kept(scene: SyntheticScene, pipe: PipelineConfig) -> np.ndarray:
    matches = list(scene.matches)
    idx_p = build_index(scene.cloud_p)
    idx_q = build_index(scene.cloud_q)
    observations = None
    if pipe.prior == "distance":
        observations = [observation_from_distance(c, pipe.prior_scale)
                        for c in matches]
    graph = build_graph(matches, idx_p, idx_q, k=pipe.k, l=pipe.l,
                        observations=observations,
                        lambda_safety=pipe.lambda_safety)
    marginals, _ = run_lbp(graph, max_iters=pipe.lbp_max_iters, tol=pipe.lbp_tol)
    kept, _ = filter_matches(matches, marginals, pipe.threshold)
    return kept


def _register_kabsch(scene: SyntheticScene, kept: np.ndarray):
    if kept.size < 3:
        raise ValueError("fewer than 3 matches left for registration")
    src = scene.cloud_p.points[[scene.matches[i].p for i in kept]]
    dst = scene.cloud_q.points[[scene.matches[i].q for i in kept]]
    return kabsch(src, dst)


def _cell_seed(cfg: SceneConfig, seed: int, ratio_idx: int, method_idx: int) -> int:
    ss = np.random.SeedSequence([cfg.seed, seed, ratio_idx, method_idx])
    return int(ss.generate_state(1)[0])


def run_sweep(cfg: SceneConfig, methods, seeds,
              pipeline: PipelineConfig | None = None) -> SweepResult:
    """Full protocol: per (ratio, method, seed) generate, filter, score,
    register. Failures become recorded rows, never abort the sweep."""
    methods = list(methods)
    if not methods:
        raise ValueError("methods must be nonempty")
    for m in methods:
        if m not in METHODS:
            raise ValueError(f"unknown method {m!r}; choose from {METHODS}")
    pipe = pipeline if pipeline is not None else PipelineConfig()
    success_threshold = max(10.0 * cfg.noise_sigma, 1e-9)

    rows: list[BenchRow] = []
    for ratio_idx, ratio in enumerate(cfg.outlier_ratios):
        for seed in seeds:
            try:
                scene = generate_scene(cfg, ratio, seed)
            except Exception as exc:  # record and move on
                for method in methods:
                    rows.append(BenchRow(ratio, method, seed, 0, 0, 0, 0,
                                         False, None, 0.0,
                                         error=f"scene: {exc}"))
                continue

            kept_cache: dict[str, np.ndarray] = {}
            filter_ms_cache: dict[str, float] = {}
            for method in methods:
                rows.append(_run_cell(cfg, pipe, scene, ratio, ratio_idx,
                                      seed, method, success_threshold,
                                      kept_cache, filter_ms_cache))
    rows.sort(key=lambda r: (r.ratio, r.method, r.seed))
    return SweepResult(rows=tuple(rows), success_threshold=success_threshold)


def _run_cell(cfg, pipe, scene, ratio, ratio_idx, seed, method,
              success_threshold, kept_cache, filter_ms_cache) -> BenchRow:
    """One method applied to one scene. The filter stage is shared between
    the two rmbp methods: it runs once and its wall time is charged to both."""
    matches = scene.matches
    n = len(matches)
    n_inl = int(np.count_nonzero(scene.labels))
    filter_ms = 0.0
    start = time.perf_counter()
    try:
        if method in ("rmbp", "rmbp+ransac"):
            if "rmbp" not in kept_cache:
                t0 = time.perf_counter()
                kept_cache["rmbp"] = _rmbp_kept(scene, pipe)
                filter_ms_cache["rmbp"] = (time.perf_counter() - t0) * 1e3
            base_kept = kept_cache["rmbp"]
            filter_ms = filter_ms_cache["rmbp"]
        else:
            base_kept = np.arange(n, dtype=np.int64)

        start = time.perf_counter()  # register stage only; filter charged below
        transform = None
        if method in ("ransac_only", "rmbp+ransac"):
            if base_kept.size < 3:
                raise ValueError("fewer than 3 matches left for RANSAC")
            subset = [matches[i] for i in base_kept]
            rcfg = RansacConfig(
                iterations=pipe.ransac_iterations,
                inlier_threshold=pipe.ransac_threshold,
                seed=_cell_seed(cfg, seed, ratio_idx, METHODS.index(method)))
            res = ransac_register(subset, scene.cloud_p, scene.cloud_q, rcfg)
            kept = base_kept[res.consensus]
            if res.ok:
                transform = res.transform
        else:
            kept = base_kept
            transform = _register_kabsch(scene, kept)

        median = None
        if transform is not None:
            median = median_point_distance(transform, scene.gt_transform,
                                           scene.cloud_p)
        runtime_ms = filter_ms + (time.perf_counter() - start) * 1e3
        kept_labels = scene.labels[kept] if kept.size else np.zeros(0, dtype=bool)
        return BenchRow(
            ratio=ratio, method=method, seed=seed,
            n_matches=n, n_inliers=n_inl,
            n_kept=int(kept.size),
            n_kept_inliers=int(np.count_nonzero(kept_labels)),
            registered=transform is not None,
            median_dist=median,
            runtime_ms=runtime_ms,
        )
    except Exception as exc:
        runtime_ms = filter_ms + (time.perf_counter() - start) * 1e3
        return BenchRow(ratio=ratio, method=method, seed=seed,
                        n_matches=n, n_inliers=n_inl, n_kept=0,
                        n_kept_inliers=0, registered=False, median_dist=None,
                        runtime_ms=runtime_ms, error=str(exc))


def _fmt(value, include=True) -> str:
    if value is None or not include:
        return ""
    if isinstance(value, float):
        return format(value, ".9g")
    return str(value)


def render_csv(result: SweepResult, include_runtime: bool = False) -> str:
    """Aggregate table as CSV text; deterministic for identical results.

    Runtime cells are written only on request because wall time varies
    between otherwise identical runs.
    """
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(_CSV_COLUMNS)
    for agg in result.aggregates():
        writer.writerow([
            _fmt(agg.ratio), agg.method,
            _fmt(agg.outlier_precision), _fmt(agg.outlier_recall),
            _fmt(agg.inlier_precision), _fmt(agg.inlier_recall),
            _fmt(agg.median_dist),
            _fmt(agg.mean_runtime_ms, include=include_runtime),
            str(agg.n_seeds), _fmt(agg.success_rate), str(SCHEMA_VERSION),
        ])
    return buf.getvalue()


def emit_report(result: SweepResult, destination,
                include_runtime: bool = False) -> None:
    """Write the aggregate CSV and a JSON mirror with per-seed raw rows.

    The JSON lands next to the CSV with the suffix replaced by .json.
    """
    csv_path = Path(destination)
    csv_path.write_text(render_csv(result, include_runtime), encoding="ascii")
    payload = {
        "schema_version": SCHEMA_VERSION,
        "success_threshold": result.success_threshold,
        "rows": [asdict(row) for row in result.rows],
        "aggregates": [asdict(agg) for agg in result.aggregates()],
    }
    csv_path.with_suffix(".json").write_text(
        json.dumps(payload, indent=2, sort_keys=True), encoding="ascii")


def load_report(json_path) -> SweepResult:
    """Rebuild a SweepResult from the JSON mirror (round-trips emit_report)."""
    data = json.loads(Path(json_path).read_text(encoding="ascii"))
    if data.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(f"unsupported report schema {data.get('schema_version')}")
    rows = tuple(BenchRow(**row) for row in data["rows"])
    return SweepResult(rows=rows, success_threshold=data["success_threshold"])
