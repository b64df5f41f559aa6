"""Exception types shared across the package."""


class RtImplantError(Exception):
    """Base class for all package errors."""


class ShapeError(RtImplantError, ValueError):
    """Operands have incompatible shapes."""


class ParameterError(RtImplantError, ValueError):
    """An argument is outside its admissible range."""


class NumericError(RtImplantError, ArithmeticError):
    """A non-finite value entered or left a computation."""


class ContractViolation(RtImplantError):
    """A caller broke an operation's precondition (e.g. non-deterministic function)."""


class CheckpointError(RtImplantError):
    """A checkpoint or sidecar file is malformed."""


class TrainingError(RtImplantError):
    """Training diverged."""


class OptimizationError(RtImplantError):
    """Perturbation optimization produced a non-finite loss."""


class ScenarioError(RtImplantError):
    """An evaluation region could not be realized."""
