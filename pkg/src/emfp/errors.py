"""Exception types raised across the package."""


class EMFPError(Exception):
    """Base class for all package errors."""


class ConfigError(EMFPError):
    """Invalid or inconsistent configuration."""


class OverdampedCircuit(EMFPError):
    """Closed-form damped sinusoid requested for a circuit with zeta >= 1."""


class FitDiverged(EMFPError):
    """Damped-sinusoid fit failed or left a residual above threshold."""


class ParseError(EMFPError):
    """Malformed input file; ``line`` is the 1-based offending line."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class NonMonotonicTime(ParseError):
    """Waveform sample times are not strictly increasing."""


class SingularPoint(EMFPError):
    """Field requested on (or within 1e-9 m of) a current filament."""


class NewtonNoConvergence(EMFPError):
    """Return-mapping Newton iteration did not converge."""

    def __init__(self, message, residual=None, element=None):
        self.residual = residual
        self.element = element
        super().__init__(message)


class InvalidGeometry(EMFPError):
    """Non-physical mesh or tool dimensions."""


class LayoutOverlap(EMFPError):
    """Two rigid tools have intersecting bounding volumes."""


class UnstableRun(EMFPError):
    """Energy ledger or state sanity check violated during a run."""
