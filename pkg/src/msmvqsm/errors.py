"""Exception types shared across the package."""


class MsmvQsmError(Exception):
    """Base class for all package errors."""


class GridMismatchError(MsmvQsmError):
    """Two volumes with different voxel grids were combined."""


class VolumeFormatError(MsmvQsmError):
    """A volume file could not be parsed under the declared format."""


class VolumeConsistencyError(MsmvQsmError):
    """Header/sidecar metadata disagrees with the stored data."""


class PhantomSpecError(MsmvQsmError):
    """A phantom region lies outside the grid or the spec is malformed."""


class ConvergenceError(MsmvQsmError):
    """An iterative solver diverged or stagnated; carries the iteration trace."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace if trace is not None else []


class ConfigError(MsmvQsmError):
    """A pipeline configuration failed validation; carries all violations."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))
