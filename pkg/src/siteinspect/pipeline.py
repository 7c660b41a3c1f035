"""End-to-end report generation over a batch of site photos and audio notes."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path
from string import Template
from typing import Any, Callable, Mapping, Sequence

from siteinspect.errors import (
    ConfigError,
    FormatError,
    GenerationError,
    IndexLoadError,
    ProviderError,
    SiteInspectError,
)
from siteinspect.evalsuite import extract_citations
from siteinspect.index import PatchIndex, RankedPage, load_index, search
from siteinspect.matcher import (
    AnnotationHeader,
    MatchConfig,
    MatchResult,
    match_pairs,
    try_parse_annotation,
)
from siteinspect.providers import media
from siteinspect.providers.base import (
    EvidenceItem,
    Provider,
    ProviderConfig,
    ReportPrompt,
    caption_image,
    generate_report,
    transcribe_audio,
)

logger = logging.getLogger(__name__)

PROMPT_TEMPLATE = "report_prompt_v1.txt"
MODES = ("no-rag", "image", "image-audio")
IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")
AUDIO_SUFFIXES = (".wav", ".mp3")
TIME_FORMAT = "%d/%m/%Y %I:%M %p"


def prompt_template() -> str:
    return resources.files("siteinspect.assets").joinpath(PROMPT_TEMPLATE).read_text(encoding="utf-8")


def prompt_template_hash() -> str:
    return hashlib.sha256(prompt_template().encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class Providers:
    """One provider per capability."""

    caption: Provider | ProviderConfig
    transcribe: Provider | ProviderConfig
    embed_text: Provider | ProviderConfig
    embed_page: Provider | ProviderConfig
    generate: Provider | ProviderConfig

    @classmethod
    def uniform(cls, provider: Provider | ProviderConfig) -> "Providers":
        return cls(provider, provider, provider, provider, provider)

    def model_ids(self) -> dict[str, str]:
        return {name: getattr(getattr(self, name), "model_id", "") for name in
                ("caption", "transcribe", "embed_text", "embed_page", "generate")}


@dataclass(frozen=True)
class SiteObservation:
    image_id: str
    header: AnnotationHeader | None
    caption: str
    fused_text: str
    audio_id: str | None = None
    transcript: str | None = None

    def __post_init__(self) -> None:
        if (self.audio_id is None) != (self.transcript is None):
            raise ValueError("audio_id and transcript must be given together")
        if not self.fused_text.strip() or self.caption not in self.fused_text:
            raise ValueError("fused_text must contain the caption")
        if self.transcript is not None and self.transcript not in self.fused_text:
            raise ValueError("fused_text must contain the transcript")

    @property
    def time_text(self) -> str:
        return self.header.timestamp.strftime(TIME_FORMAT) if self.header else "unknown"

    @property
    def location_text(self) -> str:
        return self.header.location_text if self.header else "unknown"

    def query_text(self, caption_only: bool = False) -> str:
        if caption_only:
            return self.caption
        return self.fused_text


def fuse(header: AnnotationHeader | None, caption: str, transcript: str | None) -> str:
    parts = []
    if header is not None:
        parts.append(
            f"[Header]\nTime: {header.timestamp.strftime(TIME_FORMAT)}\nLocation: {header.location_text}"
        )
    parts.append(f"[Image caption]\n{caption}")
    if transcript is not None:
        parts.append(f"[Audio transcript]\n{transcript}")
    return "\n\n".join(parts)


def make_observation(
    image_id: str,
    caption: str,
    audio_id: str | None = None,
    transcript: str | None = None,
) -> SiteObservation:
    """Build an observation from already-extracted caption and transcript text.

    The header comes from the caption when it has one, else from the transcript.
    """
    header = try_parse_annotation(caption)
    if header is None and transcript is not None:
        header = try_parse_annotation(transcript)
    return SiteObservation(image_id, header, caption, fuse(header, caption, transcript), audio_id, transcript)


def observe(
    image_id: str,
    image: bytes,
    providers: Providers,
    audio: tuple[str, bytes] | None = None,
) -> SiteObservation:
    try:
        caption = caption_image(image, providers.caption)
        audio_id, transcript = None, None
        if audio is not None:
            audio_id = audio[0]
            transcript = transcribe_audio(audio[1], providers.transcribe)
    except SiteInspectError as exc:
        raise _tag(exc, image_id) from exc
    return make_observation(image_id, caption, audio_id, transcript)


def _tag(exc: Exception, item_id: str) -> Exception:
    msg = f"[{item_id}] {exc}"
    if isinstance(exc, ProviderError):
        new = type(exc)(msg, status=exc.status, attempts=exc.attempts)
    else:
        try:
            new = type(exc)(msg)
        except TypeError:
            return exc
    return new


def retrieve_evidence(
    obs: SiteObservation,
    index: PatchIndex,
    k: int,
    provider: Provider | ProviderConfig,
    caption_only: bool = False,
) -> list[RankedPage]:
    return search(index, obs.query_text(caption_only), k, provider)


def render_prompt(obs: SiteObservation, evidence: Sequence[EvidenceItem]) -> str:
    if evidence:
        blocks = "\n".join(
            f"[page {e.page_id}] {e.excerpt}" if e.excerpt else f"[page {e.page_id}]" for e in evidence
        )
    else:
        blocks = "(none)"
    return Template(prompt_template()).substitute(observation=obs.fused_text, evidence=blocks)


@dataclass
class SafetyReport:
    observation: SiteObservation
    report_text: str
    citations: set[int]
    evidence: list[RankedPage]
    config_snapshot: dict[str, Any] = field(default_factory=dict)

    @property
    def image_id(self) -> str:
        return self.observation.image_id

    def to_dict(self) -> dict:
        obs = self.observation
        return {
            "image_id": obs.image_id,
            "audio_id": obs.audio_id,
            "header": {"time": obs.time_text, "location": obs.location_text},
            "report_text": self.report_text,
            "citations": sorted(self.citations),
            "evidence": [e.to_dict() for e in self.evidence],
            "config_snapshot": self.config_snapshot,
        }


def generate_inspection_report(
    obs: SiteObservation,
    evidence: Sequence[RankedPage],
    generator: Provider | ProviderConfig,
    excerpts: Mapping[str, str] | None = None,
    config_snapshot: Mapping[str, Any] | None = None,
) -> SafetyReport:
    excerpts = excerpts or {}
    items = tuple(EvidenceItem(e.page_id, excerpts.get(e.page_id, "")) for e in evidence)
    prompt = ReportPrompt(
        rendered=render_prompt(obs, items),
        time=obs.time_text,
        location=obs.location_text,
        caption=obs.caption,
        transcript=obs.transcript,
        evidence=items,
    )
    try:
        text = generate_report(prompt, generator)
    except ProviderError as exc:
        raise GenerationError(f"[{obs.image_id}] report generation failed: {exc}") from exc
    snapshot = {"prompt_template_sha256": prompt_template_hash()}
    snapshot.update(config_snapshot or {})
    return SafetyReport(obs, text, extract_citations(text), list(evidence), snapshot)


# ---------------------------------------------------------------------------
# batch runs


@dataclass(frozen=True)
class BatchConfig:
    mode: str = "image-audio"
    k: int = 5
    match: MatchConfig = field(default_factory=MatchConfig)
    caption_only_query: bool = False
    parallelism: int = 1

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not isinstance(self.k, int) or self.k < 1:
            raise ConfigError(f"retrieval k must be a positive integer, got {self.k!r}")
        if self.parallelism < 1:
            raise ConfigError("parallelism must be >= 1")


@dataclass
class ItemOutcome:
    image_id: str
    audio_id: str | None = None
    status: str = "ok"
    stage: str | None = None
    error: str | None = None
    report: SafetyReport | None = None
    seconds: float = 0.0

    def to_dict(self) -> dict:
        d = {"image_id": self.image_id, "audio_id": self.audio_id, "status": self.status}
        if self.status == "ok":
            d["report_json"] = f"{self.image_id}.report.json"
            d["report_txt"] = f"{self.image_id}.report.txt"
        else:
            d["stage"] = self.stage
            d["error"] = self.error
        return d


@dataclass
class BatchResult:
    status: str
    items: list[ItemOutcome]
    matches: MatchResult | None
    manifest: dict

    @property
    def reports(self) -> list[SafetyReport]:
        return [i.report for i in self.items if i.report is not None]

    @property
    def failures(self) -> list[ItemOutcome]:
        return [i for i in self.items if i.status != "ok"]


def list_media(directory: Path, suffixes: Sequence[str]) -> dict[str, Path]:
    """Map file stem to path for every file with one of ``suffixes``."""
    out: dict[str, Path] = {}
    for p in sorted(Path(directory).iterdir()):
        if p.is_file() and p.suffix.lower() in suffixes:
            if p.stem in out:
                raise ConfigError(f"two files share the id {p.stem!r}: {out[p.stem].name}, {p.name}")
            out[p.stem] = p
    return out


def load_excerpts(corpus_dir: Path | None) -> dict[str, str]:
    """Page text carried by corpus page images, keyed by page id."""
    if corpus_dir is None or not Path(corpus_dir).is_dir():
        return {}
    out = {}
    for pid, path in list_media(Path(corpus_dir), IMAGE_SUFFIXES).items():
        try:
            meta = media.image_text(media.open_image(path.read_bytes()))
        except Exception:  # excerpts are optional context only
            continue
        text = (meta.get("page_text") or meta.get("Description") or "").strip()
        if text:
            out[pid] = " ".join(text.split())
    return out


def atomic_write(path: Path, data: str | bytes) -> None:
    path = Path(path)
    raw = data.encode("utf-8") if isinstance(data, str) else data
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(raw)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dump_json(obj: Any) -> str:
    return json.dumps(obj, indent=2, ensure_ascii=False, sort_keys=False) + "\n"


def _log(item: str, stage: str, seconds: float, outcome: str) -> None:
    logger.info("item=%s stage=%s duration=%.3fs outcome=%s", item, stage, seconds, outcome)


def run_batch(
    images_dir: Path,
    audio_dir: Path | None,
    index_path: Path | None,
    config: BatchConfig,
    providers: Providers,
    output_dir: Path,
    corpus_dir: Path | None = None,
    extra_snapshot: Mapping[str, Any] | None = None,
) -> BatchResult:
    """Caption, match, retrieve and generate a report for every image.

    Per-item failures are recorded in the manifest and never stop the batch.
    Index problems are fatal (IndexLoadError). Outputs in ``output_dir``:
    ``<image_id>.report.txt``, ``<image_id>.report.json``, ``matches.json``
    (image-audio mode) and ``manifest.json``. Timings and wall-clock
    timestamps live only under the manifest's ``run_info`` key.
    """
    started = datetime.now(timezone.utc)
    t_run = time.perf_counter()
    images_dir = Path(images_dir)
    output_dir = Path(output_dir)
    use_audio = config.mode == "image-audio"
    use_rag = config.mode != "no-rag"
    if use_audio and audio_dir is None:
        raise ConfigError("image-audio mode needs an audio directory")
    if use_rag and index_path is None:
        raise ConfigError(f"{config.mode} mode needs an index path")

    index = None
    if use_rag:
        try:
            index = load_index(index_path)
        except (OSError, FormatError) as exc:
            raise IndexLoadError(f"cannot load index {index_path}: {exc}") from exc
        if len(index) == 0:
            raise IndexLoadError(f"index {index_path} has no pages")
    excerpts = load_excerpts(corpus_dir) if use_rag else {}

    image_files = list_media(images_dir, IMAGE_SUFFIXES)
    audio_files = list_media(Path(audio_dir), AUDIO_SUFFIXES) if use_audio else {}
    output_dir.mkdir(parents=True, exist_ok=True)
    timings: dict[str, dict[str, float]] = {}

    def timed(item: str, stage: str, fn: Callable[[], Any]) -> Any:
        t0 = time.perf_counter()
        outcome = "error"
        try:
            result = fn()
            outcome = "ok"
            return result
        finally:
            dt = time.perf_counter() - t0
            timings.setdefault(item, {})[stage] = round(dt, 6)
            _log(item, stage, dt, outcome)

    pool = ThreadPoolExecutor(max_workers=config.parallelism)

    def extract(kind: str, files: dict[str, Path]) -> tuple[dict[str, str], dict[str, str]]:
        def one(item_id: str, path: Path) -> str:
            data = path.read_bytes()
            if kind == "caption":
                return caption_image(data, providers.caption)
            return transcribe_audio(data, providers.transcribe)

        futures = {i: pool.submit(timed, i, kind, lambda i=i, p=p: one(i, p)) for i, p in files.items()}
        texts, errors = {}, {}
        for i, fut in futures.items():
            try:
                texts[i] = fut.result()
            except (SiteInspectError, OSError) as exc:
                errors[i] = f"{type(exc).__name__}: {exc}"
        return texts, errors

    try:
        captions, caption_errors = extract("caption", image_files)
        transcripts, audio_errors = extract("transcribe", audio_files)

        matches = None
        audio_for: dict[str, str] = {}
        if use_audio:
            img_headers = [(i, try_parse_annotation(c)) for i, c in sorted(captions.items())]
            aud_headers = [(a, try_parse_annotation(t)) for a, t in sorted(transcripts.items())]
            matches = match_pairs(
                img_headers,
                aud_headers,
                config.match,
                providers.embed_text,
                image_texts={i: c for i, c in captions.items()},
            )
            audio_for = {p.image_id: p.audio_id for p in matches.pairs}

        snapshot_base = {
            "mode": config.mode,
            "k": config.k if use_rag else None,
            "caption_only_query": config.caption_only_query,
            "match": {"time_window": config.match.time_window, "location_threshold": config.match.location_threshold}
            if use_audio
            else None,
            "model_ids": providers.model_ids(),
            "index_fingerprint": index.fingerprint.hex() if index is not None else None,
        }
        snapshot_base.update(extra_snapshot or {})

        def process(image_id: str) -> ItemOutcome:
            aid = audio_for.get(image_id)
            out = ItemOutcome(image_id, aid)
            t0 = time.perf_counter()
            if image_id in caption_errors:
                out.status, out.stage, out.error = "failed", "caption", caption_errors[image_id]
                return out
            stage = "observe"
            try:
                obs = make_observation(image_id, captions[image_id], aid, transcripts.get(aid) if aid else None)
                evidence: list[RankedPage] = []
                if use_rag:
                    stage = "retrieve"
                    evidence = timed(
                        image_id,
                        "retrieve",
                        lambda: retrieve_evidence(obs, index, config.k, providers.embed_page, config.caption_only_query),
                    )
                stage = "generate"
                snapshot = dict(snapshot_base)
                snapshot["image_file"] = image_files[image_id].name
                snapshot["audio_file"] = audio_files[aid].name if aid else None
                report = timed(
                    image_id,
                    "generate",
                    lambda: generate_inspection_report(obs, evidence, providers.generate, excerpts, snapshot),
                )
                stage = "write"
                atomic_write(output_dir / f"{image_id}.report.txt", report.report_text)
                atomic_write(output_dir / f"{image_id}.report.json", dump_json(report.to_dict()))
                out.report = report
            except (SiteInspectError, OSError, ValueError) as exc:
                out.status, out.stage, out.error = "failed", stage, f"{type(exc).__name__}: {exc}"
            out.seconds = time.perf_counter() - t0
            return out

        outcomes = list(pool.map(process, sorted(image_files)))
    finally:
        pool.shutdown(wait=True)

    failed = [o for o in outcomes if o.status != "ok"]
    status = "ok" if not failed else ("failed" if len(failed) == len(outcomes) else "partial")
    if matches is not None:
        atomic_write(output_dir / "matches.json", dump_json(matches.to_dict()))
    manifest = {
        "status": status,
        "mode": config.mode,
        "n_images": len(image_files),
        "n_audio": len(audio_files),
        "n_reports": len(outcomes) - len(failed),
        "n_failures": len(failed),
        "config_snapshot": snapshot_base,
        "matches": matches.to_dict() if matches is not None else None,
        "audio_failures": [{"id": a, "error": e} for a, e in sorted(audio_errors.items())],
        "items": [o.to_dict() for o in outcomes],
        "run_info": {
            "started_at": started.isoformat(timespec="seconds"),
            "finished_at": datetime.now(timezone.utc).isoformat(timespec="seconds"),
            "total_seconds": round(time.perf_counter() - t_run, 6),
            "timings": {k: timings[k] for k in sorted(timings)},
        },
    }
    atomic_write(output_dir / "manifest.json", dump_json(manifest))
    return BatchResult(status, outcomes, matches, manifest)
