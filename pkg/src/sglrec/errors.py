"""Exception types shared across the package."""


class SglrecError(Exception):
    """Base class for all package-specific errors."""


class ParseError(SglrecError):
    """An interaction file line could not be parsed."""

    def __init__(self, path, line_number, message):
        super().__init__(f"{path}:{line_number}: {message}")
        self.path = path
        self.line_number = line_number


class EmptyDatasetError(SglrecError):
    """A dataset became (or was already) empty."""


class SamplingExhaustedError(SglrecError):
    """Rejection sampling failed to find admissible samples within the retry budget."""


class DegenerateRepresentationError(SglrecError):
    """A node representation has zero norm, so its cosine similarity is undefined."""


class ChainMismatchError(SglrecError):
    """The adjacency chain passed to a backward pass differs from the forward chain."""
