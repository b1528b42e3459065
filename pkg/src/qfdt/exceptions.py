"""Exception hierarchy shared by all qfdt modules."""


class QFDTError(Exception):
    """Base class for every error raised by qfdt."""


class ShapeError(QFDTError, ValueError):
    """Operands have incompatible dimensions."""


class HermiticityError(QFDTError, ValueError):
    """A matrix that must be Hermitian is not."""


class SpectralError(QFDTError):
    """The Hermitian eigensolver failed to converge."""


class DomainError(QFDTError, ValueError):
    """A matrix function is undefined on part of the spectrum."""

    def __init__(self, message, offending=()):
        super().__init__(message)
        self.offending = tuple(offending)


class DensityMatrixError(QFDTError, ValueError):
    """A matrix is not a valid (unit trace, positive) density matrix."""


class CompatibilityError(QFDTError, ValueError):
    """Two observables that must commute do not."""


class UnknownParameterError(QFDTError, KeyError):
    """A derivative was requested with respect to an unregistered parameter."""


class ConfigurationError(QFDTError, ValueError):
    """A model context lacks a component an identity needs."""


class NumericalConsistencyError(QFDTError, ArithmeticError):
    """Two routes to the same quantity disagree beyond their tolerance."""


class LevelCrossingError(QFDTError):
    """An eigenvalue is (nearly) degenerate inside a finite-difference stencil."""


class StepSizeError(QFDTError):
    """A time grid is too coarse for the requested accuracy."""

    def __init__(self, message, suggested_dt=None):
        super().__init__(message)
        self.suggested_dt = suggested_dt


class QuadratureError(QFDTError):
    """Adaptive quadrature hit its refinement limit."""


class InfeasibleError(QFDTError, ValueError):
    """MaxEnt targets lie outside the open joint-spectrum hull."""


class IllPosedError(QFDTError, ValueError):
    """MaxEnt Jacobian is singular: the constraint observables are dependent."""


class ConvergenceError(QFDTError):
    """An iterative solver exhausted its iteration budget."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class ScenarioError(QFDTError, ValueError):
    """A scenario file failed to parse or validate."""
