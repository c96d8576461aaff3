"""Exception types shared across the package.

Every error raised by this package derives from :class:`TcdError`, so callers
(and the CLI exit-code mapping) can catch one base class.
"""

from __future__ import annotations


class TcdError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInput(TcdError):
    """A value violates an operation's input contract (shape, range, finiteness)."""


class InvalidConfig(TcdError):
    """A configuration value is out of its legal domain."""


class InsufficientCandidates(TcdError):
    """Fewer finite-scored tokens exist than the requested selection size."""


class TraceUnavailable(TcdError):
    """Step traces were requested from a decode that ran with debug off."""


class ProviderError(TcdError):
    """A logit provider failed. ``step`` is the 1-based decode step, if known."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step


class VocabMismatch(ProviderError):
    """The external provider's vocabulary hash differs from the expected one."""


class ProtocolError(ProviderError):
    """The external provider sent a frame that violates the wire protocol."""


class ProviderTimeout(ProviderError):
    """The external provider did not answer within the configured timeout."""


class KeywordNotFound(TcdError):
    """The control keyword does not occur in the prompt."""


class AmbiguousKeyword(TcdError):
    """The control keyword occurs more than once in the prompt."""


class NoOptionsBlock(TcdError):
    """No option lines were detected in the prompt."""


class ParseError(TcdError):
    """A dataset line is not valid JSON. ``line`` is 1-based."""

    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class ValidationError(TcdError):
    """A dataset item violates the item schema. ``item_id`` identifies it."""

    def __init__(self, message: str, item_id: str):
        super().__init__(f"item {item_id!r}: {message}")
        self.item_id = item_id


class OptionLetterNotSingleToken(TcdError):
    """An option letter does not map to a single token in the provider vocabulary."""


class PartialReportError(TcdError):
    """Too many items failed at the provider; carries the partial report."""

    def __init__(self, message: str, report):
        super().__init__(message)
        self.report = report


class IoError(TcdError):
    """A report or figure could not be written."""
