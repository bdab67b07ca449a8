"""Exception hierarchy shared by all modules."""


class PhysarumError(Exception):
    """Base class; ``module`` tags which subsystem raised it."""

    module = "physarum"

    def __init__(self, *args, module=None):
        super().__init__(*args)
        if module is not None:
            self.module = module

    def __str__(self):
        return f"[{self.module}] {super().__str__()}"


class InvalidGeometryError(PhysarumError, ValueError):
    module = "mesh"


class ContractError(PhysarumError, ValueError):
    """A precondition on inputs was violated."""


class ConvergenceError(PhysarumError, RuntimeError):
    """Iterative linear solver did not reach its tolerance."""

    module = "fem"

    def __init__(self, message, residual=float("nan"), iterations=0):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class NonConvergenceError(PhysarumError, RuntimeError):
    """Time loop hit ``max_steps`` before the variation dropped below tau."""

    module = "dynamics"

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state

    @property
    def trace(self):
        return None if self.state is None else self.state.trace


class UndefinedVariationError(PhysarumError, ZeroDivisionError):
    module = "dynamics"


class SingularSystemError(PhysarumError, ValueError):
    module = "graph"


class DegenerateStateError(PhysarumError, ValueError):
    module = "diagnostics"


class ResolutionTooCoarseError(PhysarumError, ValueError):
    module = "scenarios"


class ConfigError(PhysarumError, ValueError):
    module = "cli"
