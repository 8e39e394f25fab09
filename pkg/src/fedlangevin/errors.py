"""Exception types shared across the package."""


class FedLangevinError(Exception):
    """Base class for all package errors."""

    kind = "error"

    def to_dict(self):
        return {"error": self.kind, "message": str(self)}


class InputError(FedLangevinError, ValueError):
    kind = "input_error"


class ConfigError(FedLangevinError, ValueError):
    """Invalid configuration; ``path`` names the offending field when known."""

    kind = "config_error"

    def __init__(self, message, path=None):
        self.message = message
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)

    def to_dict(self):
        out = super().to_dict()
        if self.path is not None:
            out["path"] = self.path
        return out


class NumericalError(FedLangevinError, ArithmeticError):
    kind = "numerical_error"


class DivergenceError(NumericalError):
    kind = "divergence"

    def __init__(self, message, iteration):
        self.iteration = iteration
        super().__init__(message)

    def to_dict(self):
        out = super().to_dict()
        out["iteration"] = self.iteration
        return out


class InfeasibleBudgetError(FedLangevinError, ValueError):
    kind = "infeasible"


class TraceParseError(FedLangevinError, ValueError):
    kind = "parse_error"

    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}" if where else message)

    def to_dict(self):
        out = super().to_dict()
        out["line"] = self.line
        if self.path is not None:
            out["path"] = str(self.path)
        return out
