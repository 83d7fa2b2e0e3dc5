"""
Error classes shared by the simulators, the analysis pipeline and the CLIs.

Each class carries the process exit code the CLIs map it to:
  1 generic, 2 invalid argument, 3 config, 4 snapshot/file I/O, 5 numerical failure.
"""


class CoarseningError(Exception):
    exit_code = 1


class InvalidArgument(CoarseningError, ValueError):
    exit_code = 2


class ConfigError(CoarseningError):
    """Config could not be parsed or failed schema validation."""
    exit_code = 3

    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        where = []
        if path:
            where.append(f"field {path}")
        if line is not None:
            where.append(f"line {line}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)
        self.path = path
        self.line = line


class SnapshotFormatError(CoarseningError, OSError):
    exit_code = 4

    def __init__(self, message: str, filename: str | None = None, offset: int | None = None):
        text = message
        if filename is not None:
            text = f"{filename}: {text}"
        if offset is not None:
            text = f"{text} (byte offset {offset})"
        super().__init__(text)
        self.filename = filename
        self.offset = offset


class NumericalFailure(CoarseningError, RuntimeError):
    exit_code = 5


class IntegrationFailure(NumericalFailure):
    def __init__(self, message: str, t_reached: float | None = None, nfev: int | None = None):
        detail = message
        if t_reached is not None:
            detail += f" [t_reached={t_reached:.6g} us"
            detail += f", nfev={nfev}]" if nfev is not None else "]"
        super().__init__(detail)
        self.t_reached = t_reached
        self.nfev = nfev


class EigensolverFailure(NumericalFailure):
    def __init__(self, message: str, iterations: int | None = None):
        super().__init__(message if iterations is None else f"{message} after {iterations} iterations")
        self.iterations = iterations


class OptimizerFailure(NumericalFailure):
    pass
