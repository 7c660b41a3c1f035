"""Exception hierarchy shared across the package."""

from __future__ import annotations


class SiteInspectError(Exception):
    """Base class for all package errors."""


class EmptyInputError(SiteInspectError, ValueError):
    pass


class DecodeError(SiteInspectError, ValueError):
    """Raised when image or audio bytes cannot be decoded."""


class ProviderError(SiteInspectError):
    """A provider call failed after exhausting its retry budget.

    Attributes:
        status: HTTP status code of the last failed attempt, or None when the
            failure happened below the HTTP layer.
        attempts: Number of attempts made before giving up.
    """

    def __init__(self, message: str, status: int | None = None, attempts: int = 1):
        super().__init__(message)
        self.status = status
        self.attempts = attempts


class ProviderTimeoutError(ProviderError, TimeoutError):
    pass


class DimMismatchError(SiteInspectError, ValueError):
    pass


class DegenerateVectorError(SiteInspectError, ValueError):
    pass


class HeaderParseError(SiteInspectError, ValueError):
    def __init__(self, field: str, detail: str = ""):
        msg = field if not detail else f"{field}: {detail}"
        super().__init__(msg)
        self.field = field


class EmptyQueryError(SiteInspectError, ValueError):
    pass


class EmptyIndexError(SiteInspectError, ValueError):
    pass


class DuplicatePageError(SiteInspectError, ValueError):
    def __init__(self, page_id: str):
        super().__init__(f"duplicate page id: {page_id!r}")
        self.page_id = page_id


class FormatError(SiteInspectError, ValueError):
    """Index file is malformed. ``offset`` is the byte position of the fault."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.reason = message
        self.offset = offset


class IndexLoadError(SiteInspectError):
    pass


class GenerationError(SiteInspectError):
    pass


class ConfigError(SiteInspectError, ValueError):
    pass


class KeyMismatchError(SiteInspectError, KeyError):
    def __init__(self, missing: list[str], extra: list[str]):
        self.missing = sorted(missing)
        self.extra = sorted(extra)
        super().__init__(f"report ids differ from ground truth: missing={self.missing} extra={self.extra}")

    def __str__(self) -> str:
        return self.args[0]


class ModeMismatchError(SiteInspectError, ValueError):
    pass
