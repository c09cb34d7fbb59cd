"""Exception hierarchy. The CLI maps ValidationError to exit code 2."""


class UCLFError(Exception):
    pass


class ValidationError(UCLFError, ValueError):
    """Input data or configuration violates a contract."""


class ParseError(ValidationError):
    def __init__(self, path, line: int, message: str):
        self.path = str(path)
        self.line = line
        super().__init__(f"{path}:{line}: {message}")


class DegenerateError(UCLFError, ValueError):
    """A statistic is undefined because some variance is zero."""


class InvalidParameterError(UCLFError, ValueError):
    pass


class InsufficientDrawsError(UCLFError, ValueError):
    pass


class InitializationError(UCLFError, RuntimeError):
    pass
