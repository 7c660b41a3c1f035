"""Late-interaction page index.

A page's score for a query is the sum, over query token vectors, of the best
cosine similarity that token reaches against any of the page's patch
vectors. All pages are scored exhaustively.

On-disk layout (little-endian)::

    b"SSIX"  u32 version=1  u32 dim  u32 page_count  32-byte corpus fingerprint
    per page: u16 id_len, id (UTF-8), u32 patch_count, patch_count*dim float32
    u32 CRC32 of every preceding byte
"""

from __future__ import annotations

import hashlib
import os
import struct
import tempfile
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from siteinspect.errors import (
    DecodeError,
    DegenerateVectorError,
    DimMismatchError,
    DuplicatePageError,
    EmptyIndexError,
    EmptyInputError,
    EmptyQueryError,
    FormatError,
    ProviderError,
)
from siteinspect.providers.base import (
    PATCH_DIM,
    Embedding,
    PatchMatrix,
    Provider,
    ProviderConfig,
    embed_page,
    embed_query_tokens,
)

MAGIC = b"SSIX"
VERSION = 1
DEFAULT_K = 5
_HEADER = struct.Struct("<4sIII32s")


def _as_vec(x) -> np.ndarray:
    return x.values if isinstance(x, Embedding) else np.asarray(x, dtype=np.float64)


def _as_rows(x) -> np.ndarray:
    if isinstance(x, PatchMatrix):
        return x.patches.astype(np.float64)
    if len(x) and isinstance(x[0], Embedding):
        return np.vstack([e.values for e in x])
    return np.atleast_2d(np.asarray(x, dtype=np.float64))


def cosine(q, d) -> float:
    """Cosine similarity, clamped to [-1, 1]."""
    q, d = _as_vec(q), _as_vec(d)
    if q.shape != d.shape:
        raise DimMismatchError(f"dims differ: {q.shape[-1]} vs {d.shape[-1]}")
    nq, nd = float(np.linalg.norm(q)), float(np.linalg.norm(d))
    if nq == 0.0 or nd == 0.0:
        raise DegenerateVectorError("zero-norm vector")
    return max(-1.0, min(1.0, float(np.dot(q, d)) / (nq * nd)))


def _unit_rows(rows: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(rows, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise DegenerateVectorError("zero-norm vector")
    return rows / norms


# BLAS results for a given pair can move by an ulp with the row's position in
# the matrix, so BLAS only screens: every patch within _SCREEN of a page's best
# is re-scored with a fixed-order row reduction, which depends only on the two
# vectors. Scores are then invariant to patch and page order, bit for bit.
_SCREEN = 1e-12


def _exact_dots(q: np.ndarray, d: np.ndarray) -> np.ndarray:
    return np.add.reduce(q * d, axis=1)


def _page_maxsim(q: np.ndarray, rows: np.ndarray, offsets: np.ndarray) -> np.ndarray:
    """(tokens, pages) best cosine of each token on each page; inputs unit rows."""
    sims = q @ rows.T
    coarse = np.maximum.reduceat(sims, offsets, axis=1)
    counts = np.diff(np.append(offsets, rows.shape[0]))
    page_of = np.repeat(np.arange(len(offsets)), counts)
    ti, pj = np.nonzero(sims >= coarse[:, page_of] - _SCREEN)
    exact = np.clip(_exact_dots(q[ti], rows[pj]), -1.0, 1.0)
    best = np.full(coarse.shape, -np.inf)
    np.maximum.at(best, (ti, page_of[pj]), exact)
    return best


def maxsim_score(query, page) -> float:
    """Sum over query tokens of the max cosine against the page's patches."""
    q = _as_rows(query)
    d = _as_rows(page)
    if q.shape[0] == 0:
        raise EmptyQueryError("no query tokens")
    if q.shape[1] != d.shape[1]:
        raise DimMismatchError(f"query dim {q.shape[1]} != page dim {d.shape[1]}")
    best = _page_maxsim(_unit_rows(q), _unit_rows(d), np.zeros(1, dtype=np.intp))
    return float(best.sum(axis=0)[0])


@dataclass(frozen=True)
class RankedPage:
    page_id: str
    score: float
    rank: int

    def to_dict(self) -> dict:
        return {"page_id": self.page_id, "score": round(self.score, 6), "rank": self.rank}


def fingerprint_patches(pages: Sequence[PatchMatrix]) -> bytes:
    h = hashlib.sha256()
    for p in pages:
        pid = p.page_id.encode("utf-8")
        h.update(struct.pack("<H", len(pid)) + pid + struct.pack("<II", *p.patches.shape))
        h.update(p.patches.astype("<f4").tobytes())
    return h.digest()


@dataclass(eq=False)
class PatchIndex:
    """Immutable collection of page patch matrices in corpus order."""

    pages: list[PatchMatrix]
    fingerprint: bytes = b""
    dim: int = PATCH_DIM
    page_order: dict[str, int] = field(init=False)

    def __post_init__(self) -> None:
        self.pages = list(self.pages)
        self.page_order = {}
        for i, p in enumerate(self.pages):
            if p.page_id in self.page_order:
                raise DuplicatePageError(p.page_id)
            if p.dim != self.dim:
                raise DimMismatchError(f"page {p.page_id!r} has dim {p.dim}, index dim {self.dim}")
            self.page_order[p.page_id] = i
        if not self.fingerprint:
            self.fingerprint = fingerprint_patches(self.pages)
        if len(self.fingerprint) != 32:
            raise ValueError("fingerprint must be 32 bytes")
        if self.pages:
            counts = np.array([len(p) for p in self.pages])
            self._offsets = np.concatenate([[0], np.cumsum(counts)[:-1]]).astype(np.intp)
            # float64 unit rows: dot products equal cosines of the stored float32 values
            self._matrix = _unit_rows(np.vstack([p.patches for p in self.pages]).astype(np.float64))
        else:
            self._offsets = np.zeros(0, dtype=np.intp)
            self._matrix = np.zeros((0, self.dim))

    def __len__(self) -> int:
        return len(self.pages)

    @property
    def patch_count(self) -> int:
        return int(self._matrix.shape[0])

    def __eq__(self, other: object) -> bool:
        return (
            isinstance(other, PatchIndex)
            and self.dim == other.dim
            and self.fingerprint == other.fingerprint
            and self.pages == other.pages
        )

    __hash__ = None  # type: ignore[assignment]

    def score_all(self, query) -> np.ndarray:
        """MaxSim score of every page, in page order."""
        if not self.pages:
            raise EmptyIndexError("index has no pages")
        q = _as_rows(query)
        if q.shape[0] == 0:
            raise EmptyQueryError("no query tokens")
        if q.shape[1] != self.dim:
            raise DimMismatchError(f"query dim {q.shape[1]} != index dim {self.dim}")
        return _page_maxsim(_unit_rows(q), self._matrix, self._offsets).sum(axis=0)

    def rank(self, query, k: int = DEFAULT_K) -> list[RankedPage]:
        if k < 1:
            raise ValueError("k must be >= 1")
        scores = self.score_all(query)
        # stable sort keeps ascending page ordinal within equal scores
        order = np.argsort(-scores, kind="stable")[:k]
        return [RankedPage(self.pages[i].page_id, float(scores[i]), r) for r, i in enumerate(order, 1)]


def search(
    index: PatchIndex,
    query_text: str,
    k: int,
    provider: Provider | ProviderConfig,
    stop_words: Sequence[str] = (),
) -> list[RankedPage]:
    """Embed ``query_text`` into token vectors and return the top-k pages."""
    if not query_text or not query_text.strip():
        raise EmptyQueryError("empty query")
    if not index.pages:
        raise EmptyIndexError("index has no pages")
    try:
        tokens = embed_query_tokens(query_text, provider, stop_words)
    except EmptyInputError as exc:
        raise EmptyQueryError(str(exc)) from exc
    return index.rank(tokens, k)


def corpus_fingerprint(pages: Sequence[tuple[str, bytes]]) -> bytes:
    h = hashlib.sha256()
    for pid, data in pages:
        raw = pid.encode("utf-8")
        h.update(struct.pack("<HQ", len(raw), len(data)) + raw)
        h.update(data)
    return h.digest()


def build_index(
    pages: Sequence[tuple[str, bytes]] | Mapping[str, bytes],
    provider: Provider | ProviderConfig,
) -> PatchIndex:
    """Embed every page image and collect the results in input order.

    ``pages`` is a sequence of ``(page_id, image_bytes)`` or a mapping of the same.
    """
    if isinstance(pages, Mapping):
        pages = list(pages.items())
    if not pages:
        raise EmptyIndexError("no pages to index")
    seen: set[str] = set()
    for pid, _ in pages:
        if pid in seen:
            raise DuplicatePageError(pid)
        seen.add(pid)
    matrices = []
    for pid, data in pages:
        try:
            matrices.append(embed_page(pid, data, provider))
        except ProviderError as exc:
            raise ProviderError(f"page {pid!r}: {exc}", status=exc.status, attempts=exc.attempts) from exc
        except DecodeError as exc:
            raise DecodeError(f"page {pid!r}: {exc}") from exc
    return PatchIndex(matrices, corpus_fingerprint(pages))


def index_bytes(index: PatchIndex) -> bytes:
    parts = [_HEADER.pack(MAGIC, VERSION, index.dim, len(index.pages), index.fingerprint)]
    for p in index.pages:
        pid = p.page_id.encode("utf-8")
        if len(pid) > 0xFFFF:
            raise ValueError(f"page id too long: {p.page_id[:40]!r}...")
        parts.append(struct.pack("<H", len(pid)) + pid + struct.pack("<I", len(p)))
        parts.append(p.patches.astype("<f4", copy=False).tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def save_index(index: PatchIndex, path: str | os.PathLike) -> None:
    """Write the index atomically (temp file in the same directory, then rename)."""
    path = Path(path)
    data = index_bytes(index)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent or ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def parse_index(data: bytes) -> PatchIndex:
    if len(data) < 4 or data[:4] != MAGIC:
        raise FormatError("bad magic", 0)
    if len(data) < _HEADER.size:
        raise FormatError("truncated header", len(data))
    _, version, dim, count, fp = _HEADER.unpack_from(data, 0)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", 4)
    if dim == 0:
        raise FormatError("dim must be positive", 8)
    end = len(data) - 4
    pos = _HEADER.size
    pages = []
    for _ in range(count):
        if pos + 2 > end:
            raise FormatError("truncated page record", min(pos, len(data)))
        (id_len,) = struct.unpack_from("<H", data, pos)
        pos += 2
        if pos + id_len + 4 > end:
            raise FormatError("truncated page record", min(pos, len(data)))
        try:
            pid = data[pos : pos + id_len].decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError("page id is not UTF-8", pos) from exc
        pos += id_len
        (n,) = struct.unpack_from("<I", data, pos)
        pos += 4
        nbytes = n * dim * 4
        if pos + nbytes > end:
            raise FormatError("truncated patch data", min(pos, len(data)))
        if n == 0:
            raise FormatError(f"page {pid!r} has no patches", pos - 4)
        rows = np.frombuffer(data, dtype="<f4", count=n * dim, offset=pos).reshape(n, dim).astype(np.float32)
        try:
            pages.append(PatchMatrix(pid, rows))
        except ValueError as exc:
            raise FormatError(str(exc), pos) from exc
        pos += nbytes
    if pos != end:
        raise FormatError("trailing bytes before checksum" if pos < end else "truncated checksum", pos)
    (crc,) = struct.unpack_from("<I", data, end)
    if crc != zlib.crc32(data[:end]):
        raise FormatError("checksum mismatch", end)
    try:
        return PatchIndex(pages, fp, dim=dim)
    except DuplicatePageError as exc:
        raise FormatError(str(exc), _HEADER.size) from exc


def load_index(path: str | os.PathLike) -> PatchIndex:
    with open(path, "rb") as fh:
        return parse_index(fh.read())
