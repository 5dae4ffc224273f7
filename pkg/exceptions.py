class OphydroError(Exception):
    """Base error. Carries a human-readable detail and the CLI exit code."""

    exit_code: int = 1

    def __init__(self, detail: str, exit_code: int = None):
        super().__init__(detail)
        self.detail = detail
        if exit_code is not None:
            self.exit_code = exit_code

    def __str__(self):
        return self.detail


class ParameterError(OphydroError, ValueError):
    exit_code = 2


class ConvergenceError(OphydroError, RuntimeError):
    exit_code = 3
