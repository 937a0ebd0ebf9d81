"""Exception hierarchy shared by all modules."""


class CstrError(Exception):
    """Base class for every error raised by this package."""


class InvalidArgumentError(CstrError, ValueError):
    pass


class FormatError(CstrError, ValueError):
    """Malformed input file or non-uniform frequency grid."""

    def __init__(self, message: str, line: int | None = None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}" if where else f"line {line}"
        super().__init__(f"{where}: {message}" if where else message)


class DegenerateChannelError(CstrError, ValueError):
    """Zero-energy channel, prefilter, or composite transmit sum."""


class ConfigError(CstrError, ValueError):
    """Invalid run configuration; ``key`` is the dotted path of the offending entry."""

    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"{key}: {message}")
