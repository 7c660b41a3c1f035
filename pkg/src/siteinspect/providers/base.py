"""Provider-facing data types and the capability gateway.

Every capability call from the rest of the package goes through the
module-level functions here (``caption_image``, ``embed_text`` ...). They
enforce input preconditions, normalise returned vectors and reject empty
results, so individual provider classes only have to talk to their model.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Protocol, Sequence, runtime_checkable

import numpy as np

from siteinspect.errors import EmptyInputError, ProviderError
from siteinspect.providers import media

PATCH_DIM = 128
PATCH_PIXELS = 16

_ENV_NAME_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")
_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)


def tokenize(text: str, stop_words: Sequence[str] = ()) -> list[str]:
    """Lowercase ``text`` and split it on whitespace and punctuation."""
    stop = {w.lower() for w in stop_words}
    return [t for t in _TOKEN_RE.findall(text.lower()) if t not in stop]


@dataclass(frozen=True)
class ProviderConfig:
    """Connection settings for one provider.

    ``kind="stub"`` selects the deterministic offline provider; the remaining
    fields are then ignored. ``api_key_ref`` is the *name* of an environment
    variable, never the key itself.
    """

    kind: str = "http"
    endpoint_url: str = ""
    api_key_ref: str | None = None
    model_id: str = ""
    timeout: float = 30.0
    max_retries: int = 2
    max_concurrent_requests: int = 4

    def __post_init__(self) -> None:
        if self.kind not in ("http", "stub"):
            raise ValueError(f"unknown provider kind {self.kind!r}")
        if not self.timeout > 0:
            raise ValueError("timeout must be positive")
        if self.max_concurrent_requests < 1:
            raise ValueError("max_concurrent_requests must be >= 1")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.api_key_ref is not None and not _ENV_NAME_RE.match(self.api_key_ref):
            raise ValueError("api_key_ref must be an environment variable name")
        if self.kind == "http" and not self.endpoint_url:
            raise ValueError("http provider needs endpoint_url")

    @classmethod
    def stub(cls, model_id: str = "stub-v1") -> "ProviderConfig":
        return cls(kind="stub", model_id=model_id)


def _unit(values, what: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise ProviderError(f"{what}: expected a non-empty 1-d vector")
    if not np.all(np.isfinite(arr)):
        raise ProviderError(f"{what}: non-finite values")
    norm = float(np.linalg.norm(arr))
    if norm == 0.0 or not math.isfinite(norm):
        raise ProviderError(f"{what}: zero-norm vector")
    return arr / norm


@dataclass(frozen=True, eq=False)
class Embedding:
    """A unit-normalised real vector."""

    values: np.ndarray

    def __post_init__(self) -> None:
        self.values.setflags(write=False)

    @classmethod
    def from_values(cls, values) -> "Embedding":
        return cls(_unit(values, "embedding"))

    @property
    def dim(self) -> int:
        return int(self.values.shape[0])

    def __len__(self) -> int:
        return self.dim

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Embedding) and np.array_equal(self.values, other.values)

    __hash__ = None  # type: ignore[assignment]


@dataclass(frozen=True, eq=False)
class PatchMatrix:
    """Patch embeddings of one regulation page, one unit row per patch."""

    page_id: str
    patches: np.ndarray  # (n_patches, dim) float32, row-major

    def __post_init__(self) -> None:
        p = np.ascontiguousarray(self.patches, dtype=np.float32)
        if p.ndim != 2 or p.shape[0] < 1:
            raise ValueError(f"page {self.page_id!r}: need at least one patch")
        if not np.all(np.isfinite(p)):
            raise ValueError(f"page {self.page_id!r}: non-finite patch values")
        norms = np.linalg.norm(p.astype(np.float64), axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-6):
            raise ValueError(f"page {self.page_id!r}: patches must be unit-normalised")
        p.setflags(write=False)
        object.__setattr__(self, "patches", p)

    @classmethod
    def from_rows(cls, page_id: str, rows) -> "PatchMatrix":
        """Normalise ``rows`` and store them as float32."""
        arr = np.asarray(rows, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] < 1:
            raise ValueError(f"page {page_id!r}: need at least one patch")
        norms = np.linalg.norm(arr, axis=1, keepdims=True)
        if np.any(norms == 0) or not np.all(np.isfinite(arr)):
            raise ValueError(f"page {page_id!r}: zero-norm or non-finite patch")
        p = (arr / norms).astype(np.float32)
        # float32 rounding can leave norms ~1e-7 off; one more pass pins them
        p /= np.linalg.norm(p, axis=1, keepdims=True)
        return cls(page_id, p)

    @property
    def dim(self) -> int:
        return int(self.patches.shape[1])

    def __len__(self) -> int:
        return int(self.patches.shape[0])

    @property
    def embeddings(self) -> list[Embedding]:
        return [Embedding(row.astype(np.float64)) for row in self.patches]

    def __eq__(self, other: object) -> bool:
        return (
            isinstance(other, PatchMatrix)
            and self.page_id == other.page_id
            and self.patches.shape == other.patches.shape
            and np.array_equal(self.patches, other.patches)
        )

    __hash__ = None  # type: ignore[assignment]


@dataclass(frozen=True)
class EvidenceItem:
    page_id: str
    excerpt: str = ""


@dataclass(frozen=True)
class ReportPrompt:
    """Structured context handed to a report generator.

    ``rendered`` is the full prompt text built from the versioned template;
    the other fields carry the same information in structured form so a
    generator never has to parse it back out.
    """

    rendered: str
    time: str
    location: str
    caption: str
    transcript: str | None = None
    evidence: tuple[EvidenceItem, ...] = field(default_factory=tuple)


@runtime_checkable
class Provider(Protocol):
    """What a model backend has to implement.

    Implementations may assume inputs already passed the gateway checks.
    Returned vectors need not be normalised; the gateway does that.
    """

    model_id: str

    def caption_image(self, image: bytes) -> str: ...

    def transcribe_audio(self, audio: bytes) -> str: ...

    def embed_text(self, text: str) -> Sequence[float]: ...

    def embed_query_tokens(self, tokens: list[str], text: str) -> Sequence[Sequence[float]]: ...

    def embed_page(self, page_id: str, image: bytes) -> Sequence[Sequence[float]]: ...

    def generate_report(self, prompt: ReportPrompt) -> str: ...


_PROVIDERS: dict[ProviderConfig, Provider] = {}


def make_provider(cfg: ProviderConfig) -> Provider:
    """Return the shared client for ``cfg``, creating it on first use."""
    prov = _PROVIDERS.get(cfg)
    if prov is None:
        if cfg.kind == "stub":
            from siteinspect.providers.stub import StubProvider

            prov = StubProvider(model_id=cfg.model_id or "stub-v1")
        else:
            from siteinspect.providers.http import HttpProvider

            prov = HttpProvider(cfg)
        prov = _PROVIDERS.setdefault(cfg, prov)
    return prov


def as_provider(provider: Provider | ProviderConfig) -> Provider:
    if isinstance(provider, ProviderConfig):
        return make_provider(provider)
    return provider


def _nonempty(text, what: str) -> str:
    if not isinstance(text, str) or not text.strip():
        raise ProviderError(f"{what}: provider returned empty output")
    return text


def caption_image(image: bytes, provider: Provider | ProviderConfig) -> str:
    """Describe a site photograph in text."""
    media.check_image(image)
    return _nonempty(as_provider(provider).caption_image(image), "caption_image")


def transcribe_audio(audio: bytes, provider: Provider | ProviderConfig) -> str:
    media.check_audio(audio)
    return _nonempty(as_provider(provider).transcribe_audio(audio), "transcribe_audio")


def embed_text(text: str, provider: Provider | ProviderConfig) -> Embedding:
    if not text or not text.strip():
        raise EmptyInputError("embed_text: empty text")
    return Embedding(_unit(as_provider(provider).embed_text(text), "embed_text"))


def embed_query_tokens(
    text: str, provider: Provider | ProviderConfig, stop_words: Sequence[str] = ()
) -> list[Embedding]:
    """One unit vector per query token, in token order."""
    tokens = tokenize(text, stop_words)
    if not tokens:
        raise EmptyInputError("embed_query_tokens: no tokens in query")
    rows = as_provider(provider).embed_query_tokens(tokens, text)
    if len(rows) != len(tokens):
        raise ProviderError(f"embed_query_tokens: expected {len(tokens)} vectors, got {len(rows)}")
    out = [Embedding(_unit(r, "embed_query_tokens")) for r in rows]
    if any(e.dim != PATCH_DIM for e in out):
        raise ProviderError(f"embed_query_tokens: vectors must have dim {PATCH_DIM}")
    return out


def embed_page(page_id: str, image: bytes, provider: Provider | ProviderConfig) -> PatchMatrix:
    media.check_image(image)
    rows = np.asarray(as_provider(provider).embed_page(page_id, image), dtype=np.float64)
    if rows.ndim != 2 or rows.shape[0] < 1 or rows.shape[1] != PATCH_DIM:
        raise ProviderError(f"embed_page: expected (n, {PATCH_DIM}) patches, got shape {rows.shape}")
    if not np.all(np.isfinite(rows)) or np.any(np.linalg.norm(rows, axis=1) == 0):
        raise ProviderError("embed_page: zero-norm or non-finite patch")
    return PatchMatrix.from_rows(page_id, rows)


def generate_report(prompt: ReportPrompt, provider: Provider | ProviderConfig) -> str:
    return _nonempty(as_provider(provider).generate_report(prompt), "generate_report")
