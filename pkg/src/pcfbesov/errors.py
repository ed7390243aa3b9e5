"""Exception types shared across the package."""


class PcfError(Exception):
    """Base class for all package errors."""


class SchemaError(PcfError):
    """Descriptor document is malformed or inconsistent."""


class InvalidLaplacian(SchemaError):
    """Boundary energy matrix fails the discrete Laplacian conditions."""


class DisconnectedGluing(SchemaError):
    """Gluing relations do not connect the level-1 cell graph."""


class LevelTooLarge(PcfError):
    """A requested refinement exceeds the configured cell or vertex budget."""


class HarmonicStructureViolation(PcfError):
    """The supplied (H, r) is not a harmonic structure (trace identity fails)."""


class SingularInterior(PcfError):
    """Interior block of a refinement system is not invertible."""


class DimensionMismatch(PcfError):
    """A function representation does not match the expected vertex set."""


class SolverFailure(PcfError):
    """A linear solve did not converge or produced unusable output."""


class FixedPointDivergence(PcfError):
    """The integration-weight fixed point did not converge on the simplex."""


class EigSolverFailure(PcfError):
    """The generalized eigensolver failed or returned invalid pairs."""


class DegenerateHarmonicSpace(PcfError):
    """All harmonic functions are constant; growth rates are undefined."""
