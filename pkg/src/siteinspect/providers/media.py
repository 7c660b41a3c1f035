"""Decoding helpers for raster images and audio containers.

WAV files may carry their transcript in a ``trsc`` RIFF chunk (UTF-8 text).
The stub transcriber reads it back; real providers ignore it.
"""

from __future__ import annotations

import io
import struct
import wave
from dataclasses import dataclass

from PIL import Image, UnidentifiedImageError

from siteinspect.errors import DecodeError

TRANSCRIPT_CHUNK = b"trsc"
IMAGE_TEXT_KEYS = ("Description", "Caption", "Comment", "comment", "page_text")

_PNG_MAGIC = b"\x89PNG\r\n\x1a\n"
_JPEG_MAGIC = b"\xff\xd8\xff"


def sniff_image(data: bytes) -> str:
    if not data:
        raise DecodeError("empty image")
    if data.startswith(_PNG_MAGIC):
        return "PNG"
    if data.startswith(_JPEG_MAGIC):
        return "JPEG"
    raise DecodeError("not a PNG or JPEG image")


def open_image(data: bytes) -> Image.Image:
    """Fully decode ``data``; any decoder failure becomes DecodeError."""
    fmt = sniff_image(data)
    try:
        img = Image.open(io.BytesIO(data))
        img.load()
    except (UnidentifiedImageError, OSError, SyntaxError, ValueError) as exc:
        raise DecodeError(f"cannot decode {fmt} image: {exc}") from exc
    if img.format != fmt:
        raise DecodeError(f"container says {img.format}, magic says {fmt}")
    return img


def check_image(data: bytes) -> None:
    open_image(data)


def image_text(img: Image.Image) -> dict[str, str]:
    """Text metadata embedded in the image (PNG text chunks, JPEG comment, EXIF description)."""
    out: dict[str, str] = {}
    for key, value in (getattr(img, "text", None) or {}).items():
        out[key] = str(value)
    comment = img.info.get("comment")
    if comment and "Comment" not in out:
        out["Comment"] = comment.decode("utf-8", "replace") if isinstance(comment, bytes) else str(comment)
    try:
        desc = img.getexif().get(270)
    except Exception:  # malformed EXIF is not fatal for captioning
        desc = None
    if desc and "Description" not in out:
        out["Description"] = str(desc)
    return out


@dataclass(frozen=True)
class AudioInfo:
    container: str
    duration: float | None
    transcript: str | None


def _riff_chunks(data: bytes):
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise DecodeError("not a RIFF/WAVE container")
    declared = struct.unpack_from("<I", data, 4)[0]
    if declared + 8 > len(data):
        raise DecodeError(f"truncated WAV: header declares {declared + 8} bytes, have {len(data)}")
    pos, end = 12, declared + 8
    while pos + 8 <= end:
        cid = data[pos : pos + 4]
        size = struct.unpack_from("<I", data, pos + 4)[0]
        body = pos + 8
        if body + size > end:
            raise DecodeError(f"truncated chunk {cid!r} at offset {pos}")
        yield cid, data[body : body + size]
        pos = body + size + (size & 1)


def read_wav(data: bytes) -> AudioInfo:
    transcript = None
    for cid, body in _riff_chunks(data):
        if cid == TRANSCRIPT_CHUNK:
            try:
                transcript = body.decode("utf-8").rstrip("\x00")
            except UnicodeDecodeError as exc:
                raise DecodeError("transcript chunk is not UTF-8") from exc
    try:
        with wave.open(io.BytesIO(data), "rb") as w:
            rate = w.getframerate()
            duration = w.getnframes() / rate if rate else None
    except (wave.Error, EOFError, struct.error) as exc:
        raise DecodeError(f"cannot decode WAV: {exc}") from exc
    return AudioInfo("WAV", duration, transcript)


def _looks_like_mp3(data: bytes) -> bool:
    if data.startswith(b"ID3") and len(data) >= 10:
        return True
    return len(data) >= 4 and data[0] == 0xFF and (data[1] & 0xE0) == 0xE0


def read_audio(data: bytes) -> AudioInfo:
    if not data:
        raise DecodeError("empty audio")
    if data.startswith(b"RIFF"):
        return read_wav(data)
    if _looks_like_mp3(data):
        return AudioInfo("MP3", None, None)
    raise DecodeError("not a WAV or MP3 container")


def check_audio(data: bytes) -> None:
    read_audio(data)


def make_wav(
    transcript: str | None = None,
    seconds: float = 1.0,
    rate: int = 8000,
    tone_hz: float = 440.0,
) -> bytes:
    """Build a mono 16-bit WAV, optionally carrying a transcript chunk."""
    import numpy as np

    n = int(round(seconds * rate))
    t = np.arange(n) / rate
    pcm = (0.2 * 32767 * np.sin(2 * np.pi * tone_hz * t)).astype("<i2").tobytes()
    buf = io.BytesIO()
    with wave.open(buf, "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(rate)
        w.writeframes(pcm)
    raw = buf.getvalue()
    if transcript is None:
        return raw
    body = transcript.encode("utf-8")
    chunk = TRANSCRIPT_CHUNK + struct.pack("<I", len(body)) + body + (b"\x00" if len(body) & 1 else b"")
    riff = raw[12:] + chunk
    return b"RIFF" + struct.pack("<I", 4 + len(riff)) + b"WAVE" + riff


def make_png(
    width: int,
    height: int,
    text: dict[str, str] | None = None,
    seed: int = 0,
) -> bytes:
    """Deterministic PNG with optional text chunks (noise pixels keyed by ``seed``)."""
    import numpy as np
    from PIL import PngImagePlugin

    rng = np.random.default_rng(seed)
    pixels = rng.integers(0, 256, size=(height, width, 3), dtype=np.uint8)
    img = Image.fromarray(pixels, "RGB")
    info = PngImagePlugin.PngInfo()
    for k, v in (text or {}).items():
        info.add_itxt(k, v)
    buf = io.BytesIO()
    img.save(buf, format="PNG", pnginfo=info)
    return buf.getvalue()
