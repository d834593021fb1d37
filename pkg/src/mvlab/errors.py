"""Exception hierarchy shared by all modules."""


class MVLabError(Exception):
    """Base class for all errors raised by mvlab."""


class UsageError(MVLabError, ValueError):
    """Invalid arguments: bad parameters, dimension mismatch, broken preconditions."""


class DomainEscapeError(MVLabError):
    """Particles left the computational box."""

    def __init__(self, message, indices=(), time=None):
        super().__init__(message)
        self.indices = tuple(int(i) for i in indices)
        self.time = time


class SimulationBlowupError(MVLabError):
    """A simulated coordinate became non-finite."""

    def __init__(self, message, indices=(), time=None):
        super().__init__(message)
        self.indices = tuple(int(i) for i in indices)
        self.time = time


class InsufficientBlocksError(MVLabError):
    """Too few Littlewood-Paley blocks above the numerical floor to fit an index."""


class ConfigError(MVLabError):
    """Malformed or inconsistent configuration file."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ResourceLimitError(MVLabError):
    """A run exceeded a configured resource cap (particle count or wall time)."""
