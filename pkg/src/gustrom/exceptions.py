"""Exception hierarchy shared by every gustrom module."""


class GustromError(Exception):
    """Base class for all errors raised by gustrom."""

    category = "error"


class ContractError(GustromError, ValueError):
    """Arguments violate a documented precondition (shape, range, order)."""

    category = "contract"


class ConfigError(GustromError, ValueError):
    """Invalid parameter set or configuration file content."""

    category = "config"

    def __init__(self, message, field=None, line=None):
        self.field = field
        self.line = line
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field '{field}'")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)


class NumericalError(GustromError, ArithmeticError):
    """A residual evaluation produced a non-finite value."""

    category = "numerical"

    def __init__(self, message, index=None):
        self.index = index
        super().__init__(message)


class SolverError(GustromError, RuntimeError):
    """Newton trim iteration broke down."""

    category = "solver"

    def __init__(self, message, iteration=None):
        self.iteration = iteration
        super().__init__(message)


class ReductionError(GustromError, RuntimeError):
    """The eigenbasis cannot support a reduced model (e.g. defective modes)."""

    category = "reduction"


class ConsistencyError(GustromError, RuntimeError):
    """An internal consistency check failed (pair handling, file hash)."""

    category = "consistency"


class DivergenceError(GustromError, RuntimeError):
    """Time integration produced a non-finite state."""

    category = "divergence"

    def __init__(self, message, time=None, last_state=None):
        self.time = time
        self.last_state = last_state
        super().__init__(message)
