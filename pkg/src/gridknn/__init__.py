"""Exact all-k-nearest-neighbor classification over an equal-sized grid
decomposition, executed as staged map/shuffle/reduce jobs."""

from .data_io import DatasetSpec, generate, parse_input, parse_training
from .errors import (
    ConfigError,
    DimensionMismatchError,
    GridKnnError,
    IngestionError,
    JobError,
    OutOfSpaceError,
    ParseError,
    UnsatisfiableKError,
)
from .geometry import BoundaryShape, GridSpec, Point
from .grid import CellStats, MergedGrid, MergeStats, compute_distribution, merge_cells
from .oracle import oracle_aknnc
from .pipeline import (
    Classification,
    KnnList,
    NeighborEntry,
    PipelineConfig,
    RunResult,
    run_aknnc,
)
from .quality import QualityReport, compute_quality

__all__ = [
    "BoundaryShape",
    "CellStats",
    "Classification",
    "ConfigError",
    "DatasetSpec",
    "DimensionMismatchError",
    "GridKnnError",
    "GridSpec",
    "IngestionError",
    "JobError",
    "KnnList",
    "MergeStats",
    "MergedGrid",
    "NeighborEntry",
    "OutOfSpaceError",
    "ParseError",
    "PipelineConfig",
    "Point",
    "QualityReport",
    "RunResult",
    "UnsatisfiableKError",
    "compute_distribution",
    "compute_quality",
    "generate",
    "merge_cells",
    "oracle_aknnc",
    "parse_input",
    "parse_training",
    "run_aknnc",
]
