"""Deterministic offline provider.

Everything here is a pure function of its input bytes, so results are
identical across runs and processes. Scheme summary:

* text and query tokens: each token is mapped to a unit vector drawn from
  ``numpy.random.default_rng(seed)``, with the seed being a 64-bit BLAKE2b hash
  of the token; a sentence vector is the normalised sum of its token vectors.
* page patches: the image is cut into a ceil(w/16) x ceil(h/16) grid and
  every cell's pixels are projected to 128-d with a fixed random matrix.
  A page image may carry a ``page_text`` text chunk; its distinct tokens
  then overwrite the leading cells (row-major) with their token vectors,
  which stands in for a vision-language model reading the page.
* captions and transcripts come from text embedded in the file (PNG/JPEG
  description, WAV ``trsc`` chunk); files without one get a fixed
  descriptive placeholder.
"""

from __future__ import annotations

import hashlib
import re
from functools import lru_cache

import numpy as np

from siteinspect.providers import media
from siteinspect.providers.base import PATCH_DIM, PATCH_PIXELS, ReportPrompt, tokenize

_PROJECTION_SEED = 0x5173_1D_16
_HAZARD_RE = re.compile(
    r"\b(no|not|neither|without|lack\w*|missing|risk\w*|hazard\w*|fall\w*|unsafe|expos\w*)\b",
    re.IGNORECASE,
)


def token_seed(token: str) -> int:
    return int.from_bytes(hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest(), "little")


@lru_cache(maxsize=65536)
def _token_vector(token: str, dim: int) -> np.ndarray:
    v = np.random.default_rng(token_seed(token)).standard_normal(dim)
    v /= np.linalg.norm(v)
    v.setflags(write=False)
    return v


def token_vector(token: str, dim: int = PATCH_DIM) -> np.ndarray:
    return _token_vector(token, dim).copy()


@lru_cache(maxsize=1)
def _projection() -> np.ndarray:
    cell = PATCH_PIXELS * PATCH_PIXELS * 3
    w = np.random.default_rng(_PROJECTION_SEED).standard_normal((cell + 1, PATCH_DIM))
    w.setflags(write=False)
    return w


def page_grid(width: int, height: int) -> tuple[int, int]:
    """Number of (rows, cols) of 16-pixel cells covering an image."""
    return -(-height // PATCH_PIXELS), -(-width // PATCH_PIXELS)


def _sentences(text: str) -> list[str]:
    return [s.strip() for s in re.split(r"(?<=[.!?])\s+|\n+", text) if s.strip()]


class StubProvider:
    def __init__(self, model_id: str = "stub-v1", text_dim: int = PATCH_DIM):
        self.model_id = model_id
        self.text_dim = text_dim

    def caption_image(self, image: bytes) -> str:
        img = media.open_image(image)
        meta = media.image_text(img)
        for key in ("Description", "Caption", "Comment", "comment"):
            if meta.get(key, "").strip():
                return meta[key].strip()
        rgb = np.asarray(img.convert("RGB"), dtype=np.float64)
        mean = rgb.reshape(-1, 3).mean(axis=0)
        digest = hashlib.sha256(image).hexdigest()[:12]
        return (
            f"Site photograph, {img.width}x{img.height} px, mean colour "
            f"RGB({mean[0]:.0f}, {mean[1]:.0f}, {mean[2]:.0f}); no annotation (digest {digest})."
        )

    def transcribe_audio(self, audio: bytes) -> str:
        info = media.read_audio(audio)
        if info.transcript and info.transcript.strip():
            return info.transcript
        digest = hashlib.sha256(audio).hexdigest()[:12]
        length = f"{info.duration:.1f} s" if info.duration is not None else "unknown length"
        return f"Untranscribed {info.container} recording, {length} (digest {digest})."

    def embed_text(self, text: str) -> np.ndarray:
        tokens = tokenize(text)
        if not tokens:
            # punctuation-only text still needs a stable vector
            tokens = [text]
        return np.sum([_token_vector(t, self.text_dim) for t in tokens], axis=0)

    def embed_query_tokens(self, tokens: list[str], text: str) -> list[np.ndarray]:
        return [token_vector(t, PATCH_DIM) for t in tokens]

    def embed_page(self, page_id: str, image: bytes) -> np.ndarray:
        img = media.open_image(image)
        rows, cols = page_grid(img.width, img.height)
        rgb = np.zeros((rows * PATCH_PIXELS, cols * PATCH_PIXELS, 3), dtype=np.float64)
        rgb[: img.height, : img.width] = np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0
        cells = (
            rgb.reshape(rows, PATCH_PIXELS, cols, PATCH_PIXELS, 3)
            .transpose(0, 2, 1, 3, 4)
            .reshape(rows * cols, -1)
        )
        feats = np.hstack([cells, np.ones((cells.shape[0], 1))])
        patches = feats @ _projection()
        page_text = media.image_text(img).get("page_text", "")
        planted = list(dict.fromkeys(tokenize(page_text)))[: len(patches)]
        for i, tok in enumerate(planted):
            patches[i] = _token_vector(tok, PATCH_DIM)
        return patches

    def generate_report(self, prompt: ReportPrompt) -> str:
        observation = prompt.caption if prompt.transcript is None else f"{prompt.caption}\n{prompt.transcript}"
        body = [
            s for s in _sentences(observation)
            if not re.match(r"(?i)^(time|location)\s*:", s)
        ]
        hazards = [s for s in body if _HAZARD_RE.search(s)]
        site = " ".join(body[:3]) or "No site description available."
        hazard_line = " ".join(hazards) or "No specific hazard stated in the observation."
        if prompt.evidence:
            cites = "; ".join(f"page {e.page_id}" for e in prompt.evidence)
            support = f"Relevant requirements are set out on {cites}."
            recs = (
                "Control each hazard listed above in line with the cited requirements "
                f"({cites})."
            )
        else:
            support = "None"
            recs = "Control each hazard listed above before work continues."
        return (
            f"Time: {prompt.time}\n"
            f"Location: {prompt.location}\n\n"
            f"Construction site: {site}\n\n"
            f"Safety Hazards: {hazard_line}\n\n"
            f"Regulatory Support: {support}\n\n"
            f"Recommendations: {recs}\n"
        )
