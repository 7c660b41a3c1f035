"""Uniform gateway to captioning, transcription, embedding and generation models."""

from siteinspect.providers.base import (
    PATCH_DIM,
    Embedding,
    EvidenceItem,
    PatchMatrix,
    Provider,
    ProviderConfig,
    ReportPrompt,
    as_provider,
    caption_image,
    embed_page,
    embed_query_tokens,
    embed_text,
    generate_report,
    make_provider,
    tokenize,
    transcribe_audio,
)
from siteinspect.providers.stub import StubProvider

__all__ = [
    "PATCH_DIM",
    "Embedding",
    "EvidenceItem",
    "PatchMatrix",
    "Provider",
    "ProviderConfig",
    "ReportPrompt",
    "StubProvider",
    "as_provider",
    "caption_image",
    "embed_page",
    "embed_query_tokens",
    "embed_text",
    "generate_report",
    "make_provider",
    "tokenize",
    "transcribe_audio",
]
