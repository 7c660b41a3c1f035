"""Command-line entry point: ``siteinspect {index,match,inspect,eval,compare}``.

Exit codes: 0 success, 1 some items failed, 2 config/usage error,
3 fatal I/O or data error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

from siteinspect.config import RunConfig
from siteinspect.errors import (
    ConfigError,
    DecodeError,
    EmptyInputError,
    IndexLoadError,
    KeyMismatchError,
    ModeMismatchError,
    ProviderError,
    SiteInspectError,
)
from siteinspect.evalsuite import (
    AVERAGING_MODES,
    ComplianceMetrics,
    GroundTruth,
    compare_runs,
    compute_metrics,
    delta_json,
    extract_citations,
    render_delta_table,
)
from siteinspect.index import build_index, load_index, save_index
from siteinspect.matcher import match_pairs, try_parse_annotation
from siteinspect.pipeline import (
    AUDIO_SUFFIXES,
    IMAGE_SUFFIXES,
    atomic_write,
    dump_json,
    list_media,
    run_batch,
)
from siteinspect.providers.base import caption_image, transcribe_audio

logger = logging.getLogger("siteinspect")

EXIT_OK, EXIT_PARTIAL, EXIT_USAGE, EXIT_FATAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


def _err(msg: str) -> None:
    print(f"error: {msg}", file=sys.stderr)


def _config(args) -> RunConfig:
    cfg = RunConfig.load(args.config)
    over = {}
    for key in ("corpus", "index", "images", "audio", "output"):
        over[key] = getattr(args, key, None)
    for key in ("mode", "k", "time_window", "location_threshold", "parallelism"):
        over[key] = getattr(args, key, None)
    if getattr(args, "caption_only_query", False):
        over["caption_only_query"] = True
    return cfg.override(**over)


def cmd_index(args) -> int:
    cfg = _config(args)
    corpus = cfg.require_dir("corpus")
    out = cfg.paths.get("index")
    if out is None:
        raise ConfigError("paths.index (output index file) is required")
    if not out.parent.is_dir():
        raise ConfigError(f"index directory {out.parent} does not exist")
    cfg.check_credentials(["embed_page"])
    files = list_media(corpus, IMAGE_SUFFIXES)
    if not files:
        _err(f"no pages found in {corpus}")
        return EXIT_FATAL
    pages, bad = [], []
    for pid, path in files.items():
        try:
            pages.append((pid, path.read_bytes()))
        except OSError as exc:
            bad.append(f"{path.name}: {exc}")
    if bad:
        for line in bad:
            _err(line)
        return EXIT_FATAL
    try:
        index = build_index(pages, cfg.providers["embed_page"])
    except (DecodeError, ProviderError) as exc:
        _err(f"corpus error: {exc}")
        return EXIT_FATAL
    save_index(index, out)
    size = out.stat().st_size
    print(f"indexed {len(index)} pages, {index.patch_count} patches, {size} bytes -> {out}")
    return EXIT_OK


def cmd_match(args) -> int:
    cfg = _config(args)
    if cfg.mode != "image-audio":
        raise UsageError(f"match needs audio input; mode is {cfg.mode!r}")
    if cfg.paths.get("audio") is None:
        raise UsageError("match needs --audio (or paths.audio)")
    images = cfg.require_dir("images")
    audio = cfg.require_dir("audio")
    out = Path(args.out) if args.out else (cfg.paths.get("output") or Path(".")) / "matches.json"
    if not out.parent.is_dir():
        raise ConfigError(f"output directory {out.parent} does not exist")
    cfg.check_credentials(["caption", "transcribe", "embed_text"])
    problems = []
    img_headers, texts = [], {}
    for iid, path in list_media(images, IMAGE_SUFFIXES).items():
        try:
            text = caption_image(path.read_bytes(), cfg.providers["caption"])
        except (SiteInspectError, OSError) as exc:
            problems.append({"id": iid, "kind": "image", "error": str(exc)})
            continue
        texts[iid] = text
        img_headers.append((iid, try_parse_annotation(text)))
    aud_headers = []
    for aid, path in list_media(audio, AUDIO_SUFFIXES).items():
        try:
            text = transcribe_audio(path.read_bytes(), cfg.providers["transcribe"])
        except (SiteInspectError, OSError) as exc:
            problems.append({"id": aid, "kind": "audio", "error": str(exc)})
            continue
        aud_headers.append((aid, try_parse_annotation(text)))
    result = match_pairs(img_headers, aud_headers, cfg.match, cfg.providers["embed_text"], texts)
    payload = result.to_dict()
    if problems:
        payload["errors"] = problems
    atomic_write(out, dump_json(payload))
    print(
        f"{len(result.pairs)} pairs, {len(result.unmatched_images)} unmatched images, "
        f"{len(result.unmatched_audio)} unmatched audio -> {out}"
    )
    return EXIT_PARTIAL if problems else EXIT_OK


def cmd_inspect(args) -> int:
    cfg = _config(args)
    images = cfg.require_dir("images")
    audio = cfg.require_dir("audio") if cfg.mode == "image-audio" else None
    index = None
    if cfg.mode != "no-rag":
        index = cfg.paths.get("index")
        if index is None:
            raise ConfigError(f"paths.index is required in {cfg.mode} mode")
        if not index.is_file():
            raise ConfigError(f"index file {index} does not exist")
    output = cfg.paths.get("output")
    if output is None:
        raise ConfigError("paths.output is required")
    if output.exists() and not output.is_dir():
        raise ConfigError(f"output {output} is not a directory")
    cfg.check_credentials()
    try:
        result = run_batch(
            images,
            audio,
            index,
            cfg.batch_config(),
            cfg.make_providers(),
            output,
            corpus_dir=cfg.paths.get("corpus"),
            extra_snapshot=cfg.snapshot(),
        )
    except IndexLoadError as exc:
        _err(str(exc))
        return EXIT_FATAL
    print(f"{result.manifest['n_reports']} reports, {len(result.failures)} failures, status {result.status} -> {output}")
    for f in result.failures:
        _err(f"{f.image_id}: {f.stage}: {f.error}")
    return EXIT_OK if result.status == "ok" else EXIT_PARTIAL


def read_report_citations(reports_dir: Path) -> dict[str, set[str]]:
    """Citations of every ``<id>.report.json`` (or ``.report.txt``) in a directory."""
    preds: dict[str, set[str]] = {}
    for path in sorted(reports_dir.iterdir()):
        name = path.name
        if name.endswith(".report.json"):
            rid = name[: -len(".report.json")]
            text = json.loads(path.read_text(encoding="utf-8"))["report_text"]
        elif name.endswith(".report.txt"):
            rid = name[: -len(".report.txt")]
            if rid in preds:
                continue
            text = path.read_text(encoding="utf-8")
        else:
            continue
        preds[rid] = {str(c) for c in extract_citations(text)}
    return preds


def cmd_eval(args) -> int:
    reports = Path(args.reports)
    if not reports.is_dir():
        raise ConfigError(f"reports directory {reports} does not exist")
    try:
        gt = GroundTruth.load(args.gt)
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(f"ground truth {args.gt}: {exc}") from exc
    except OSError as exc:
        _err(f"cannot read ground truth: {exc}")
        return EXIT_FATAL
    try:
        preds = read_report_citations(reports)
    except (OSError, KeyError, ValueError) as exc:
        _err(f"cannot read reports: {exc}")
        return EXIT_FATAL
    try:
        metrics = compute_metrics(gt, preds, args.averaging)
    except KeyMismatchError as exc:
        _err(str(exc))
        return EXIT_USAGE
    except EmptyInputError as exc:
        _err(str(exc))
        return EXIT_FATAL
    table = (
        f"averaging={metrics.averaging} reports={metrics.n_reports} universe={metrics.universe_size}\n"
        f"hamming_loss {metrics.hamming_loss:.4f}\nprecision    {metrics.precision:.4f}\n"
        f"recall       {metrics.recall:.4f}\nf1           {metrics.f1:.4f}\n"
    )
    if args.out:
        out = Path(args.out)
        atomic_write(out, dump_json(metrics.to_dict()))
        atomic_write(out.with_suffix(".txt"), table)
    print(table, end="")
    return EXIT_OK


def _load_metrics(path: str) -> ComplianceMetrics:
    try:
        return ComplianceMetrics.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
    except (OSError, ValueError, TypeError) as exc:
        raise ConfigError(f"cannot read metrics file {path}: {exc}") from exc


def cmd_compare(args) -> int:
    a, b = _load_metrics(args.a), _load_metrics(args.b)
    try:
        rows = compare_runs(a, b)
    except ModeMismatchError as exc:
        _err(str(exc))
        return EXIT_USAGE
    labels = tuple(Path(x).name.removesuffix(".json").removesuffix(".metrics") for x in (args.a, args.b))
    print(render_delta_table(rows, labels), end="")
    if args.json:
        atomic_write(Path(args.json), dump_json(delta_json(rows)))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    # SUPPRESS lets the flags appear before or after the subcommand
    common.add_argument("--config", default=argparse.SUPPRESS, help="YAML run configuration")
    common.add_argument("--verbose", "-v", action="count", default=argparse.SUPPRESS)

    parser = argparse.ArgumentParser(prog="siteinspect", description=__doc__.splitlines()[0], parents=[common])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("index", parents=[common], help="embed a corpus of page images into an index file")
    p.add_argument("corpus", nargs="?", help="directory of <page_id>.png/.jpg pages")
    p.add_argument("--out", dest="index", help="index file to write")
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("match", parents=[common], help="pair images with audio notes")
    p.add_argument("--images")
    p.add_argument("--audio")
    p.add_argument("--out", help="matches.json path (default <output>/matches.json)")
    p.add_argument("--mode", choices=("no-rag", "image", "image-audio"))
    p.add_argument("--time-window", type=float)
    p.add_argument("--location-threshold", type=float)
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("inspect", parents=[common], help="generate reports for a batch")
    p.add_argument("--images")
    p.add_argument("--audio")
    p.add_argument("--index")
    p.add_argument("--corpus")
    p.add_argument("--output")
    p.add_argument("--mode", choices=("no-rag", "image", "image-audio"))
    p.add_argument("--k", type=int)
    p.add_argument("--time-window", type=float)
    p.add_argument("--location-threshold", type=float)
    p.add_argument("--parallelism", type=int)
    p.add_argument("--caption-only-query", action="store_true")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("eval", parents=[common], help="score report citations against ground truth")
    p.add_argument("reports", help="directory of <id>.report.json files")
    p.add_argument("gt", help="ground-truth JSON")
    p.add_argument("--averaging", choices=AVERAGING_MODES, default="sample")
    p.add_argument("--out", help="metrics.json path (a .txt table is written beside it)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("compare", parents=[common], help="tabulate metric deltas between two runs")
    p.add_argument("a", help="baseline metrics.json")
    p.add_argument("b", help="comparison metrics.json")
    p.add_argument("--json", help="also write the deltas as JSON")
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    # filled in here, not via set_defaults, which would also reset the shared subcommand actions
    args.config = getattr(args, "config", None)
    args.verbose = getattr(args, "verbose", 0)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(
        level=level,
        format="%(asctime)s %(levelname)s %(name)s %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        _err(str(exc))
        return EXIT_USAGE
    except ConfigError as exc:
        _err(f"config: {exc}")
        return EXIT_USAGE
    except (OSError, SiteInspectError) as exc:
        _err(str(exc))
        return EXIT_FATAL


if __name__ == "__main__":
    sys.exit(main())
