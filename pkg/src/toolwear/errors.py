"""Exception hierarchy shared by every stage of the pipeline."""

from __future__ import annotations


class ToolwearError(Exception):
    """Base class for all package errors."""


class ConfigurationError(ToolwearError, ValueError):
    pass


class DimensionError(ToolwearError, ValueError):
    pass


class DomainError(ToolwearError, ValueError):
    pass


class ValidationError(ToolwearError, ValueError):
    pass


class ParseError(ToolwearError):
    """Problem reading an input file. ``line`` is 1-based when known."""

    def __init__(self, message: str, path=None, line: int | None = None):
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)
        self.path = path
        self.line = line


class MissingInputError(ParseError, FileNotFoundError):
    pass


class MalformedRowError(ParseError):
    pass


class RaggedChannelError(ParseError):
    pass


class SegmentationError(ToolwearError):
    pass


class RegionError(ToolwearError, ValueError):
    pass


class DatasetError(ToolwearError, ValueError):
    pass


class ScalingError(ToolwearError, ValueError):
    pass


class NumericError(ToolwearError, ArithmeticError):
    """Training diverged or produced non-finite values."""


class LineageError(ToolwearError):
    """Artifacts were produced by different configurations."""
