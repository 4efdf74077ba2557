class LabError(Exception):
    """Base class for every error raised by the laboratory"""


class ParameterError(LabError, ValueError):
    """A numerical parameter is outside its admissible range"""


class ConfigurationError(LabError, ValueError):
    """The experiment configuration cannot be resolved"""


class ResolutionError(LabError):
    """The grid or lattice does not resolve the requested quantity"""


class StateValidationError(LabError, ValueError):
    """A mixed state violates trace, positivity or orthonormality"""


class MassMismatchError(LabError, ValueError):
    """Two densities that should carry the same mass do not"""


class SingularityError(LabError, ValueError):
    """Evaluation point lies on the singular set of the potential"""

    def __init__(self, message: str, distance: float = 0.0):
        super().__init__(message)
        self.distance = distance


class BoundaryEscapeError(LabError):
    """Mass reached the edge of the periodic computational box"""

    def __init__(self, message: str, mass: float):
        super().__init__(message)
        self.mass = mass


class TransformConsistencyError(LabError):
    """Two independent routes to the same transform disagree"""

    def __init__(self, message: str, discrepancy: float):
        super().__init__(message)
        self.discrepancy = discrepancy


class AuditFailure(LabError):
    """An audited identity or bound was violated"""

    def __init__(self, message: str, offender: str = "", value: float = float("nan")):
        super().__init__(message)
        self.offender = offender
        self.value = value
