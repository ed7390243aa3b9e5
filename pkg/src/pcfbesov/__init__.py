"""Discrete function-space machinery on p.c.f. self-similar sets."""

__version__ = "0.1.0"

from .core import (
    Dimensions,
    FractalDescriptor,
    LevelHierarchy,
    Partition,
    build_partition,
    cell_measure,
    dims,
    load_descriptor,
    make_descriptor,
    preset,
    solve_hausdorff_dimension,
)
from .errors import (
    DegenerateHarmonicSpace,
    DimensionMismatch,
    DisconnectedGluing,
    EigSolverFailure,
    FixedPointDivergence,
    HarmonicStructureViolation,
    InvalidLaplacian,
    LevelTooLarge,
    PcfError,
    SchemaError,
    SingularInterior,
    SolverFailure,
)

__all__ = [
    "__version__",
    "Dimensions",
    "FractalDescriptor",
    "LevelHierarchy",
    "Partition",
    "build_partition",
    "cell_measure",
    "dims",
    "load_descriptor",
    "make_descriptor",
    "preset",
    "solve_hausdorff_dimension",
    "PcfError",
    "SchemaError",
    "InvalidLaplacian",
    "DisconnectedGluing",
    "LevelTooLarge",
    "HarmonicStructureViolation",
    "SingularInterior",
    "DimensionMismatch",
    "SolverFailure",
    "FixedPointDivergence",
    "EigSolverFailure",
    "DegenerateHarmonicSpace",
]
