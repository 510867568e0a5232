"""Exception types shared across the package."""


class SimulationError(Exception):
    """Base class for numerical failures (CLI exit code 3)."""


class SingularInputError(SimulationError, ValueError):
    """Input sits on a singular point of a formula (zero detuning, t = 0, ...)."""


class InsideDielectricError(SimulationError):
    """Position lies inside the dielectric; the caller should remove the atom."""


class DomainExitError(SimulationError):
    """Position lies outside the simulation domain."""


class GridFormatError(ValueError):
    """Malformed field-grid file."""


class GridDomainError(ValueError):
    """Field grid evaluated outside its sampled area."""


class NoSignalError(SimulationError):
    """Alignment input carries no usable atomic signature."""


class BinningMismatchError(ValueError):
    """Histograms with different binning were combined."""


class ConfigError(ValueError):
    """Run configuration failed validation (CLI exit code 2)."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(f"{p}: {m}" for p, m in self.problems))


class NoTrapMinimumError(SimulationError):
    """Minimum search ended on a saddle, a slope or the dielectric."""
