"""Exception types shared across the package."""


class VertexFlowError(Exception):
    """Base class for all package errors."""


class ConfigError(VertexFlowError):
    """Invalid user input: case configuration, mesh file, well placement, probe point."""

    def __init__(self, message, problems=None):
        if problems:
            message = message + "\n  - " + "\n  - ".join(str(p) for p in problems)
        super().__init__(message)
        self.problems = list(problems) if problems else []


class SingularElementError(VertexFlowError):
    """Degenerate (zero-volume) element encountered."""


class NumericStateError(VertexFlowError):
    """Non-finite values (NaN/inf) in a state or input vector."""


class DegenerateStateError(VertexFlowError):
    """Both phase mobilities vanish; fractional flow undefined."""


class SingularBlockError(VertexFlowError):
    """Zero diagonal entry in the saturation block to be eliminated."""


class SolverConvergenceError(VertexFlowError):
    """Iterative linear solve failed to reach tolerance; carries the solve report."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class PicardDivergenceError(VertexFlowError):
    """Fixed-point iteration exceeded its iteration cap; carries diagnostics."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
