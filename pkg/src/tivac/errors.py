"""Exception hierarchy shared by the library and the command-line front end.

Every error carries a short machine-readable ``code`` that the CLI prints as
``ERROR <code>: <message>``.
"""


class TivacError(Exception):
    """Base class for user-facing errors (CLI exit code 1)."""

    code = "error"

    def __init__(self, message, code=None):
        super().__init__(message)
        if code is not None:
            self.code = code


class DataError(TivacError):
    code = "bad_data"

    def __init__(self, message, code=None, path=None, line=None):
        if path is not None:
            where = f"{path}:{line}" if line is not None else str(path)
            message = f"{where}: {message}"
        super().__init__(message, code)
        self.path = path
        self.line = line


class ConfigError(TivacError):
    code = "bad_config"


class ConvergenceError(TivacError):
    code = "fit_diverged"
