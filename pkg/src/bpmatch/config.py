"""Pipeline parameters: graph thresholds, propagation, prior and RANSAC.

One flat config object mirrors the library defaults and is shared by the
command-line tools and the benchmark harness. Files use TOML; command-line
flags override file values.
"""

from __future__ import annotations

import dataclasses
import sys
from dataclasses import dataclass
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib as _toml
else:
    import tomli as _toml

from .inference import DEFAULT_MAX_ITERS, DEFAULT_THRESHOLD, DEFAULT_TOL
from .matchgraph import DEFAULT_K, DEFAULT_L, DEFAULT_SAFETY

PRIOR_MODES = ("uniform", "distance")


@dataclass(frozen=True)
class PipelineConfig:
    k: int = DEFAULT_K
    l: int = DEFAULT_L
    lambda_safety: float = DEFAULT_SAFETY
    lbp_tol: float = DEFAULT_TOL
    lbp_max_iters: int = DEFAULT_MAX_ITERS
    threshold: float = DEFAULT_THRESHOLD
    prior: str = "uniform"
    prior_scale: float = 0.5
    ransac_iterations: int = 1024
    ransac_threshold: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.k < 2:
            raise ValueError("k must be >= 2")
        if self.l <= self.k:
            raise ValueError("l must be greater than k")
        if not (0.0 < self.lambda_safety <= 1.0):
            raise ValueError("lambda_safety must lie in (0, 1]")
        if self.lbp_tol <= 0 or self.lbp_max_iters < 1:
            raise ValueError("lbp_tol must be positive and lbp_max_iters >= 1")
        if not (0.0 < self.threshold < 1.0):
            raise ValueError("threshold must lie in (0, 1)")
        if self.prior not in PRIOR_MODES:
            raise ValueError(f"prior must be one of {PRIOR_MODES}")
        if self.prior_scale <= 0:
            raise ValueError("prior_scale must be positive")
        if self.ransac_iterations < 1 or self.ransac_threshold <= 0:
            raise ValueError("invalid RANSAC parameters")
        if self.seed < 0:
            raise ValueError("seed must be nonnegative")

    def replace(self, **overrides) -> "PipelineConfig":
        """New config with the given fields replaced (flags win over files)."""
        clean = {k: v for k, v in overrides.items() if v is not None}
        return dataclasses.replace(self, **clean)


def pipeline_from_dict(data: dict) -> PipelineConfig:
    fields = {f.name for f in dataclasses.fields(PipelineConfig)}
    unknown = set(data) - fields
    if unknown:
        raise ValueError(f"unknown pipeline config keys: {sorted(unknown)}")
    return PipelineConfig(**data)


def load_toml(path) -> dict:
    with open(path, "rb") as fh:
        return _toml.load(fh)


def pipeline_from_file(path) -> PipelineConfig:
    """Read a TOML file with an optional [pipeline] table (or flat keys)."""
    data = load_toml(Path(path))
    table = data.get("pipeline", data)
    return pipeline_from_dict(dict(table))
