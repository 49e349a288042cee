"""Exception hierarchy shared across the toolkit."""


class ArtContextError(Exception):
    """Base class for all toolkit errors."""


class SchemaError(ArtContextError):
    """A dataset file is missing a required column."""

    def __init__(self, column: str):
        self.column = column
        super().__init__(f"dataset header is missing required column: {column!r}")


class DatasetError(ArtContextError):
    """A dataset file violates a content invariant (e.g. duplicate ids)."""


class FormatError(ArtContextError):
    """A binary or text artifact file is malformed."""


class MagicError(FormatError):
    """An artifact file starts with the wrong magic bytes."""


class TruncatedFileError(FormatError):
    """An artifact file ends before its declared payload."""


class DimensionMismatchError(ArtContextError):
    """Vector or matrix shapes are inconsistent."""


class GraphFormatError(FormatError):
    """A graph file line cannot be parsed."""

    def __init__(self, line_number: int, message: str):
        self.line_number = line_number
        super().__init__(f"line {line_number}: {message}")


class StageError(ArtContextError):
    """A pipeline stage cannot run (typically a missing upstream artifact)."""
