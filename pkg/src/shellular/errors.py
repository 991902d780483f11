"""Exception hierarchy shared by all modules."""


class ShellularError(Exception):
    """Base class; ``stage`` names the pipeline stage that failed, if known."""

    stage: str | None = None

    def __init__(self, message: str, *, stage: str | None = None, details: dict | None = None):
        super().__init__(message)
        if stage is not None:
            self.stage = stage
        self.details = details or {}

    def __str__(self):
        msg = super().__str__()
        return f"[{self.stage}] {msg}" if self.stage else msg


class ValidationError(ShellularError, ValueError):
    pass


class DegenerateDesignError(ShellularError):
    """The design has no usable surface (zero field or no sign change)."""


class MeshError(ShellularError):
    pass


class SolverError(ShellularError):
    pass
