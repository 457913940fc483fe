"""Exception hierarchy shared across modules; the CLI maps each class to an exit code."""


class WardsenseError(Exception):
    """Base class for all package errors."""


class ConfigError(WardsenseError, ValueError):
    """Invalid configuration; carries every problem found, not just the first."""

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class DataError(WardsenseError, ValueError):
    """Input data violates a contract (schema, invariant, or coverage)."""


class ParseError(DataError):
    """Malformed input file; ``line`` is 1-based and includes the header."""

    def __init__(self, message, path=None, line=None):
        self.path = None if path is None else str(path)
        self.line = line
        where = ""
        if self.path is not None:
            where = self.path
        if line is not None:
            where = f"{where}:{line}" if where else f"line {line}"
        super().__init__(f"{where}: {message}" if where else message)
