"""Command-line surface wiring the pipeline end to end.

Subcommands: describe (stand-in descriptors), match (putative matching),
filter (graph + belief propagation + threshold), register (RANSAC +
refit), bench (the synthetic sweep). Every randomized stage takes an
explicit seed or falls back to a fixed constant, outputs are written
atomically, and any pipeline error exits nonzero with a message.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import bench as bench_mod
from .config import PipelineConfig, load_toml, pipeline_from_dict
from .descriptors import describe_cloud, load_descriptors, save_descriptors
from .fileio import (ParseError, atomic_output, read_correspondences,
                     read_ply, write_correspondences, write_ply,
                     write_transform)
from .inference import filter_matches, format_marginals, run_lbp
from .matchgraph import build_graph, dump_graph
from .matching import (mutual_best_match, observation_from_distance,
                       ratio_test_match)
from .geometry import build_index
from .registration import RansacConfig, ransac_register


def _add_pipeline_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, default=None,
                        help="TOML file with a [pipeline] table")
    parser.add_argument("--k", type=int, default=None,
                        help="mutual nearest-neighbor threshold")
    parser.add_argument("--l", type=int, default=None,
                        help="farness rank threshold (must exceed k)")
    parser.add_argument("--lambda-safety", type=float, default=None,
                        dest="lambda_safety",
                        help="fraction of the convergence bound to use")
    parser.add_argument("--tol", type=float, default=None, dest="lbp_tol")
    parser.add_argument("--max-iters", type=int, default=None,
                        dest="lbp_max_iters")
    parser.add_argument("--threshold", type=float, default=None,
                        help="marginal inlier probability cutoff")
    parser.add_argument("--prior", choices=("uniform", "distance"),
                        default=None, help="observation prior mode")
    parser.add_argument("--prior-scale", type=float, default=None,
                        dest="prior_scale")
    parser.add_argument("--ransac-iterations", type=int, default=None,
                        dest="ransac_iterations")
    parser.add_argument("--ransac-threshold", type=float, default=None,
                        dest="ransac_threshold")
    parser.add_argument("--seed", type=int, default=None,
                        help="seed for randomized stages (fixed default)")


def _pipeline_from_args(args) -> PipelineConfig:
    if args.config is not None:
        data = load_toml(args.config)
        cfg = pipeline_from_dict(dict(data.get("pipeline", {})))
    else:
        cfg = PipelineConfig()
    names = [f.name for f in dataclasses.fields(PipelineConfig)]
    overrides = {n: getattr(args, n, None) for n in names}
    return cfg.replace(**overrides)


def _observations(matches, cfg: PipelineConfig):
    if cfg.prior == "distance":
        return [observation_from_distance(c, cfg.prior_scale) for c in matches]
    return None


def _cmd_describe(args) -> int:
    cloud = read_ply(args.cloud)
    descs = describe_cloud(cloud, args.radius)
    with atomic_output(args.output) as tmp:
        save_descriptors(descs, tmp)
    print(f"wrote {len(descs)} descriptors of dimension {descs.dim} "
          f"to {args.output}")
    return 0


def _cmd_match(args) -> int:
    set_a = load_descriptors(args.desc_a)
    set_b = load_descriptors(args.desc_b)
    if args.ratio is not None:
        matches = ratio_test_match(set_a, set_b, args.ratio)
    else:
        matches = mutual_best_match(set_a, set_b)
    with atomic_output(args.output) as tmp:
        write_correspondences(tmp, matches)
    print(f"matched {len(matches)} correspondences to {args.output}")
    return 0


def _cmd_filter(args) -> int:
    cfg = _pipeline_from_args(args)
    cloud_p = read_ply(args.cloud_p)
    cloud_q = read_ply(args.cloud_q)
    records = read_correspondences(args.matches)
    matches = list(records.matches)
    if not matches:
        raise ValueError("no matches to filter")
    idx_p = build_index(cloud_p)
    idx_q = build_index(cloud_q)
    graph = build_graph(matches, idx_p, idx_q, k=cfg.k, l=cfg.l,
                        observations=_observations(matches, cfg),
                        lambda_safety=cfg.lambda_safety)
    marginals, report = run_lbp(graph, max_iters=cfg.lbp_max_iters,
                                tol=cfg.lbp_tol)
    kept, _ = filter_matches(matches, marginals, cfg.threshold)

    with atomic_output(args.output) as tmp:
        write_correspondences(tmp, [matches[i] for i in kept],
                              inlier_probs=marginals[kept, 1])
    if args.dump_marginals is not None:
        with atomic_output(args.dump_marginals) as tmp:
            Path(tmp).write_text(format_marginals(marginals), encoding="ascii")
    if args.dump_graph is not None:
        with atomic_output(args.dump_graph) as tmp:
            Path(tmp).write_text(dump_graph(graph), encoding="ascii")
    print(f"kept {len(kept)} of {len(matches)} matches "
          f"(edges={graph.num_edges}, lambda={graph.lam:.6g}, "
          f"iterations={report.iterations}, converged={report.converged})")
    return 0


def _cmd_register(args) -> int:
    cfg = _pipeline_from_args(args)
    cloud_p = read_ply(args.cloud_p)
    cloud_q = read_ply(args.cloud_q)
    records = read_correspondences(args.matches)
    rcfg = RansacConfig(iterations=cfg.ransac_iterations,
                        inlier_threshold=cfg.ransac_threshold,
                        seed=cfg.seed)
    result = ransac_register(list(records.matches), cloud_p, cloud_q, rcfg)
    if not result.ok:
        raise ValueError("registration failed: empty consensus")
    with atomic_output(args.output) as tmp:
        write_transform(result.transform, tmp,
                        consensus_size=result.consensus.size)
    print(f"registered with consensus {result.consensus.size} of "
          f"{len(records.matches)} matches")
    return 0


def _scene_from_table(table: dict) -> bench_mod.SceneConfig:
    fields = {f.name for f in dataclasses.fields(bench_mod.SceneConfig)}
    unknown = set(table) - fields
    if unknown:
        raise ValueError(f"unknown scene config keys: {sorted(unknown)}")
    return bench_mod.SceneConfig(**table)


def _cmd_bench(args) -> int:
    data = load_toml(args.config)
    scene_cfg = _scene_from_table(dict(data.get("scene", {})))
    pipe = pipeline_from_dict(dict(data.get("pipeline", {})))
    sweep = dict(data.get("sweep", {}))
    unknown = set(sweep) - {"methods", "seeds", "n_seeds", "include_runtime"}
    if unknown:
        raise ValueError(f"unknown sweep config keys: {sorted(unknown)}")
    methods = sweep.get("methods", ["none", "rmbp", "ransac_only",
                                    "rmbp+ransac"])
    if "seeds" in sweep:
        seeds = [int(s) for s in sweep["seeds"]]
    else:
        seeds = list(range(int(sweep.get("n_seeds", 20))))
    include_runtime = bool(sweep.get("include_runtime", False))
    if args.include_runtime:
        include_runtime = True

    result = bench_mod.run_sweep(scene_cfg, methods, seeds, pipeline=pipe)
    out = Path(args.output)
    with tempfile.TemporaryDirectory(dir=out.parent or Path(".")) as tmpdir:
        tmp_csv = Path(tmpdir) / out.name
        bench_mod.emit_report(result, tmp_csv, include_runtime=include_runtime)
        tmp_csv.replace(out)
        tmp_csv.with_suffix(".json").replace(out.with_suffix(".json"))
    print(f"wrote {out} and {out.with_suffix('.json')} "
          f"({len(result.rows)} cells)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bpmatch",
        description="Point-cloud correspondence filtering and registration")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("describe", help="compute stand-in local descriptors")
    p.add_argument("cloud", type=Path, help="input PLY")
    p.add_argument("-o", "--output", type=Path, required=True)
    p.add_argument("--radius", type=float, required=True,
                   help="neighborhood ball radius")
    p.set_defaults(func=_cmd_describe)

    p = sub.add_parser("match", help="putative matching of two descriptor files")
    p.add_argument("desc_a", type=Path)
    p.add_argument("desc_b", type=Path)
    p.add_argument("-o", "--output", type=Path, required=True)
    p.add_argument("--ratio", type=float, default=None,
                   help="use the ratio test at this value instead of "
                        "mutual-best matching")
    p.set_defaults(func=_cmd_match)

    p = sub.add_parser("filter",
                       help="reject outlier matches by belief propagation")
    p.add_argument("cloud_p", type=Path)
    p.add_argument("cloud_q", type=Path)
    p.add_argument("matches", type=Path)
    p.add_argument("-o", "--output", type=Path, required=True)
    p.add_argument("--dump-marginals", type=Path, default=None)
    p.add_argument("--dump-graph", type=Path, default=None)
    _add_pipeline_flags(p)
    p.set_defaults(func=_cmd_filter)

    p = sub.add_parser("register", help="RANSAC rigid registration")
    p.add_argument("cloud_p", type=Path)
    p.add_argument("cloud_q", type=Path)
    p.add_argument("matches", type=Path)
    p.add_argument("-o", "--output", type=Path, required=True)
    _add_pipeline_flags(p)
    p.set_defaults(func=_cmd_register)

    p = sub.add_parser("bench", help="run the synthetic outlier-ratio sweep")
    p.add_argument("--config", type=Path, required=True)
    p.add_argument("-o", "--output", type=Path, required=True,
                   help="CSV destination; a JSON mirror lands beside it")
    p.add_argument("--include-runtime", action="store_true",
                   help="write measured runtimes into the CSV "
                        "(breaks byte-for-byte reproducibility)")
    p.set_defaults(func=_cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ParseError, ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
