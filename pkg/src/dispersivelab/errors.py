"""Exception types shared across the lab.

Every error that a module contract can raise has its own class so that
experiment runners can capture failures into structured reports instead
of crashing.
"""

__all__ = [
    "DispersiveLabError",
    "GridTooCoarse",
    "AliasingRisk",
    "StepFailure",
    "CausticDetected",
    "ToleranceNotMet",
    "ProbeOutsideRegion",
    "BadParameters",
    "RegionMismatch",
    "DivisionUnsafe",
    "QuadratureUnderResolved",
    "SolverDiverged",
    "BoundaryContaminated",
    "WindowOutOfRange",
    "ConfigInvalid",
]


class DispersiveLabError(Exception):
    """Base class for all lab errors."""


class GridTooCoarse(DispersiveLabError):
    """Grid cannot represent the requested frequency or metric variation."""


class AliasingRisk(DispersiveLabError):
    """Symbol times data has non-negligible mass at the Nyquist momentum."""


class StepFailure(DispersiveLabError):
    """Adaptive ODE control could not meet the requested tolerance."""


class CausticDetected(DispersiveLabError):
    """Characteristics crossed inside the construction region."""


class ToleranceNotMet(DispersiveLabError):
    """Constructed object misses its accuracy contract."""


class ProbeOutsideRegion(DispersiveLabError):
    """A probe point lies outside the table's region of validity."""


class BadParameters(DispersiveLabError):
    """Interval or angle-threshold orderings violated."""


class RegionMismatch(DispersiveLabError):
    """Region chain nesting (radii or cosine thresholds) violated."""


class DivisionUnsafe(DispersiveLabError):
    """Denominator symbol too small where a quotient is required."""


class QuadratureUnderResolved(DispersiveLabError):
    """Oscillatory quadrature has more than the allowed phase swing per cell."""


class SolverDiverged(DispersiveLabError):
    """Inner linear solver failed to converge."""


class BoundaryContaminated(DispersiveLabError):
    """Wavepacket mass reached the periodic box boundary."""

    def __init__(self, message, time=None):
        super().__init__(message)
        self.time = time


class WindowOutOfRange(DispersiveLabError):
    """Spectral window not contained in the operator's covered spectrum."""


class ConfigInvalid(DispersiveLabError):
    """Configuration file violates a declared ordering or constraint."""
