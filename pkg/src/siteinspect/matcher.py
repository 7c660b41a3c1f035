"""Pair site photos with inspector audio notes.

Each photo and each recording carries a ``Time:``/``Location:`` header.
Pairing runs in two phases:

1. exact-timestamp candidates, accepted only above the location threshold;
2. everything still unpaired, within ``time_window`` minutes and above the
   location threshold.

Both phases commit edges greedily in order of decreasing location
similarity, ties going to the lexicographically smallest audio id (then image
id), so the result never depends on input order.
"""

from __future__ import annotations

import re
from dataclasses import asdict, dataclass, field
from datetime import datetime
from typing import Callable, Sequence

import numpy as np

from siteinspect.errors import DegenerateVectorError, EmptyInputError, HeaderParseError
from siteinspect.providers.base import Embedding, Provider, ProviderConfig, embed_text

NO_CANDIDATE = "no-candidate"
TIME_WINDOW_EXCEEDED = "time-window-exceeded"
BELOW_THRESHOLD = "below-location-threshold"
CANDIDATE_TAKEN = "candidate-taken"
HEADER_MISSING = "header-missing"

_LABEL_RE = re.compile(r"^\s*(time|location)\s*:\s*(.*?)\s*$", re.IGNORECASE)
_INLINE_RE = re.compile(
    r"time\s*:\s*(?P<time>.+?)\s+location\s*:\s*(?P<loc>.+?)\s*$", re.IGNORECASE
)
_DMY_RE = re.compile(
    r"^(?P<d>\d{1,2})/(?P<m>\d{1,2})/(?P<y>\d{4}),?\s+(?P<H>\d{1,2}):(?P<M>\d{2})\s*"
    r"(?P<ampm>am|pm|a\.m\.?|p\.m\.?)?$",
    re.IGNORECASE,
)


@dataclass(frozen=True)
class AnnotationHeader:
    timestamp: datetime
    location_text: str
    body: str = ""

    def __post_init__(self) -> None:
        if not self.location_text.strip():
            raise HeaderParseError("location", "empty")


def parse_timestamp(text: str) -> datetime:
    """Parse ``DD/MM/YYYY H:MM [AM|PM|a.m.|p.m.]`` or ISO-8601, to the minute."""
    s = text.strip()
    m = _DMY_RE.match(s)
    if m:
        hour, minute = int(m["H"]), int(m["M"])
        ampm = (m["ampm"] or "").lower().replace(".", "")
        if ampm:
            if not 1 <= hour <= 12:
                raise HeaderParseError("time", f"hour {hour} invalid with {ampm}")
            hour = hour % 12 + (12 if ampm == "pm" else 0)
        try:
            return datetime(int(m["y"]), int(m["m"]), int(m["d"]), hour, minute)
        except ValueError as exc:
            raise HeaderParseError("time", str(exc)) from exc
    try:
        ts = datetime.fromisoformat(s)
    except ValueError as exc:
        raise HeaderParseError("time", f"unrecognised timestamp {s!r}") from exc
    if ts.tzinfo is not None:
        ts = ts.replace(tzinfo=None)
    return ts.replace(second=0, microsecond=0)


def parse_annotation(text: str) -> AnnotationHeader:
    """Read the leading ``Time:`` and ``Location:`` lines of a caption or transcript.

    Labels are case-insensitive. Both may also sit on one line
    (``Time: ... Location: ...``), as in reports that were flattened.
    """
    if not text or not text.strip():
        raise EmptyInputError("parse_annotation: empty text")
    lines = text.strip().splitlines()
    found: dict[str, str] = {}
    consumed = 0
    for i, line in enumerate(lines):
        if not line.strip():
            if found:
                consumed = i + 1
                continue
            continue
        lm = _LABEL_RE.match(line)
        im = _INLINE_RE.match(line.strip())
        if im and "time" not in found:
            found["time"], found["location"] = im["time"], im["loc"]
            consumed = i + 1
            continue
        if lm and lm[1].lower() not in found:
            found[lm[1].lower()] = lm[2]
            consumed = i + 1
            continue
        break
    if "time" not in found:
        raise HeaderParseError("time", "missing")
    if "location" not in found or not found["location"].strip():
        raise HeaderParseError("location", "missing")
    ts = parse_timestamp(found["time"])
    body = "\n".join(lines[consumed:]).strip()
    return AnnotationHeader(ts, found["location"].strip(), body)


def try_parse_annotation(text: str) -> AnnotationHeader | None:
    try:
        return parse_annotation(text)
    except (HeaderParseError, EmptyInputError):
        return None


@dataclass(frozen=True)
class MatchConfig:
    time_window: float = 15.0
    location_threshold: float = 0.75

    def __post_init__(self) -> None:
        if self.time_window < 0:
            raise ValueError("time_window must be >= 0")
        if not -1.0 <= self.location_threshold <= 1.0:
            raise ValueError("location_threshold must lie in [-1, 1]")


@dataclass(frozen=True)
class Pair:
    image_id: str
    audio_id: str
    similarity: float
    time_delta: float | None  # minutes; None when the image had no header


@dataclass
class MatchResult:
    pairs: list[Pair] = field(default_factory=list)
    unmatched_images: list[tuple[str, str]] = field(default_factory=list)
    unmatched_audio: list[tuple[str, str]] = field(default_factory=list)
    config: MatchConfig = field(default_factory=MatchConfig)

    def pair_set(self) -> set[tuple[str, str]]:
        return {(p.image_id, p.audio_id) for p in self.pairs}

    def to_dict(self) -> dict:
        return {
            "pairs": [
                {
                    "image": p.image_id,
                    "audio": p.audio_id,
                    "similarity": round(p.similarity, 6),
                    "time_delta_min": p.time_delta,
                }
                for p in self.pairs
            ],
            "unmatched_images": [{"id": i, "reason": r} for i, r in self.unmatched_images],
            "unmatched_audio": [{"id": a, "reason": r} for a, r in self.unmatched_audio],
            "config": asdict(self.config),
        }


Embedder = Callable[[str], Embedding]


def _embedder(embedder: Provider | ProviderConfig | Callable) -> Embedder:
    if callable(embedder) and not hasattr(embedder, "embed_text"):
        return embedder
    return lambda text: embed_text(text, embedder)


def _cosine_unit(u: np.ndarray, v: np.ndarray) -> float:
    nu, nv = float(np.linalg.norm(u)), float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        raise DegenerateVectorError("zero-norm location embedding")
    # u.v and v.u sum the same products in the same order, so this is symmetric bit for bit
    return max(-1.0, min(1.0, float(np.dot(u, v)) / (nu * nv)))


def location_similarity(a: str, b: str, embedder) -> float:
    """Cosine similarity of two location strings' embeddings."""
    if not a or not a.strip() or not b or not b.strip():
        raise EmptyInputError("location_similarity: empty location")
    emb = _embedder(embedder)
    return _cosine_unit(emb(a).values, emb(b).values)


def _minutes(a: datetime, b: datetime) -> float:
    return abs((a - b).total_seconds()) / 60.0


def _greedy(edges: list[tuple[float, str, str, float | None]], used_img: set, used_aud: set, out: list[Pair]):
    for sim, aud, img, dt in sorted(edges, key=lambda e: (-e[0], e[1], e[2])):
        if img in used_img or aud in used_aud:
            continue
        used_img.add(img)
        used_aud.add(aud)
        out.append(Pair(img, aud, sim, dt))


def match_pairs(
    images: Sequence[tuple[str, AnnotationHeader | None]],
    audio: Sequence[tuple[str, AnnotationHeader | None]],
    cfg: MatchConfig | None = None,
    embedder=None,
    image_texts: dict[str, str] | None = None,
) -> MatchResult:
    """Pair images with audio notes.

    Args:
        images: ``(image_id, header)``; a ``None`` header means the caption
            had no Time/Location block. Such images skip time matching and
            are compared on location alone, using their text from
            ``image_texts`` (typically the full caption).
        audio: ``(audio_id, header)``; recordings without a header cannot be
            placed and are reported as ``header-missing``.
        cfg: thresholds; defaults to 15 minutes / 0.75 cosine.
        embedder: provider, provider config, or ``text -> Embedding`` callable.

    Returns:
        MatchResult with pairs sorted by image id and every unpaired item
        listed with a machine-readable reason.
    """
    cfg = cfg or MatchConfig()
    for name, items in (("image", images), ("audio", audio)):
        ids = [i for i, _ in items]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate {name} ids")
    image_texts = image_texts or {}
    emb = _embedder(embedder)

    vec_cache: dict[str, np.ndarray] = {}

    def vec(text: str) -> np.ndarray:
        if text not in vec_cache:
            vec_cache[text] = emb(text).values
        return vec_cache[text]

    img_loc: dict[str, str | None] = {}
    for iid, hdr in images:
        img_loc[iid] = hdr.location_text if hdr else (image_texts.get(iid) or None)
    aud = {aid: hdr for aid, hdr in audio if hdr is not None}

    sims: dict[tuple[str, str], float] = {}
    for iid, _ in images:
        if img_loc[iid] is None:
            continue
        for aid, ahdr in aud.items():
            sims[iid, aid] = _cosine_unit(vec(img_loc[iid]), vec(ahdr.location_text))

    headers = dict(images)
    used_img: set[str] = set()
    used_aud: set[str] = set()
    pairs: list[Pair] = []

    exact = [
        (sims[iid, aid], aid, iid, 0.0)
        for iid, hdr in images
        if hdr is not None
        for aid, ahdr in aud.items()
        if ahdr.timestamp == hdr.timestamp and sims[iid, aid] >= cfg.location_threshold
    ]
    _greedy(exact, used_img, used_aud, pairs)

    def eligible_time(iid: str, aid: str) -> tuple[bool, float | None]:
        hdr = headers[iid]
        if hdr is None:
            return True, None
        dt = _minutes(hdr.timestamp, aud[aid].timestamp)
        return dt <= cfg.time_window, dt

    approx = []
    for iid, _ in images:
        if iid in used_img or img_loc[iid] is None:
            continue
        for aid in aud:
            if aid in used_aud:
                continue
            ok, dt = eligible_time(iid, aid)
            if ok and sims[iid, aid] >= cfg.location_threshold:
                approx.append((sims[iid, aid], aid, iid, dt))
    _greedy(approx, used_img, used_aud, pairs)

    def image_reason(iid: str) -> str:
        if headers[iid] is None and img_loc[iid] is None:
            return HEADER_MISSING
        if not aud:
            return NO_CANDIDATE
        in_window = [a for a in aud if eligible_time(iid, a)[0]]
        if headers[iid] is None:
            above = [a for a in aud if sims[iid, a] >= cfg.location_threshold]
            return CANDIDATE_TAKEN if above else HEADER_MISSING
        if not in_window:
            return TIME_WINDOW_EXCEEDED
        if not any(sims[iid, a] >= cfg.location_threshold for a in in_window):
            return BELOW_THRESHOLD
        return CANDIDATE_TAKEN

    def audio_reason(aid: str) -> str:
        if aid not in aud:
            return HEADER_MISSING
        placeable = [i for i, _ in images if img_loc[i] is not None]
        if not placeable:
            return NO_CANDIDATE
        in_window = [i for i in placeable if eligible_time(i, aid)[0]]
        if not in_window:
            return TIME_WINDOW_EXCEEDED
        if not any(sims[i, aid] >= cfg.location_threshold for i in in_window):
            return BELOW_THRESHOLD
        return CANDIDATE_TAKEN

    return MatchResult(
        pairs=sorted(pairs, key=lambda p: p.image_id),
        unmatched_images=sorted((i, image_reason(i)) for i, _ in images if i not in used_img),
        unmatched_audio=sorted((a, audio_reason(a)) for a, _ in audio if a not in used_aud),
        config=cfg,
    )
