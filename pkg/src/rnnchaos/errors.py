"""Exception hierarchy shared across the package."""


class RnnChaosError(Exception):
    """Base class for every error raised by this package."""


class NumericalError(RnnChaosError):
    """A numerical procedure failed; the CLI maps these to exit code 3."""


class DegenerateBasis(NumericalError):
    """A Gram-Schmidt direction collapsed to (numerically) zero length."""

    def __init__(self, index, norm):
        super().__init__(f"direction {index} collapsed (norm={norm:.3e})")
        self.index = index
        self.norm = norm


class SingularSystem(NumericalError):
    pass


class NoConvergence(NumericalError):
    pass


class NumericalBlowup(NumericalError):
    pass


class DegenerateRange(RnnChaosError, ValueError):
    pass


class TrajectoryTooShort(RnnChaosError, ValueError):
    pass


class EmptySpectrum(RnnChaosError, ValueError):
    pass


class LengthMismatch(RnnChaosError, ValueError):
    pass


class ConfigError(RnnChaosError, ValueError):
    """Invalid configuration or CLI usage; the CLI maps these to exit code 2."""


class FormatError(RnnChaosError, ValueError):
    """A binary file did not match its declared layout."""
