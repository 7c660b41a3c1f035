"""Regulatory-compliance scoring of generated reports.

Reports are treated as multi-label predictions: the set of regulation
references a report cites, compared against a hand-labelled set per report
drawn from a fixed label universe.
"""

from __future__ import annotations

import json
import logging
import math
import re
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from siteinspect.errors import EmptyInputError, KeyMismatchError, ModeMismatchError

logger = logging.getLogger(__name__)

SAMPLE = "sample"
MICRO = "micro"
AVERAGING_MODES = (SAMPLE, MICRO)
RUBRIC_CRITERIA = ("completeness", "relevance", "accuracy", "clarity_readability")

_NUM = r"\d+(?:\s*[-‐-―]\s*\d+)?"
_SEP = r"(?:\s*,\s*(?:and\s+|&\s*)?|\s+and\s+|\s*&\s*)"
_LIST = rf"{_NUM}(?:{_SEP}{_NUM})*"
_PAGE_RE = re.compile(rf"\bpages?\s+(?P<list>{_LIST})", re.IGNORECASE)
_CLAUSE_RE = re.compile(
    rf"\b(?:WHS\s+)?(?:reg(?:ulation)?s?\.?)\s+(?:clauses?\s+)?(?P<list>{_LIST})",
    re.IGNORECASE,
)
_ITEM_RE = re.compile(r"(\d+)(?:\s*[-‐-―]\s*(\d+))?")
_MAX_RANGE = 200


def _expand(fragment: str) -> set[int]:
    out: set[int] = set()
    for lo, hi in _ITEM_RE.findall(fragment):
        a = int(lo)
        if not hi:
            out.add(a)
            continue
        b = int(hi)
        if b < a or b - a > _MAX_RANGE:
            logger.warning("ignoring implausible page range %s-%s", lo, hi)
            out.update((a, b))
            continue
        out.update(range(a, b + 1))
    return out


def extract_citations(report_text: str, clauses: bool = True) -> set[int]:
    """Collect cited regulation references from report text.

    Recognises ``page N``, ``pages N and M``, ``pages N, M``, ``pages N-M``
    (ranges expand; en dash and hyphen both accepted) and, when ``clauses``
    is set, regulation clause mentions such as ``WHS Reg 44 & 46`` or
    ``Regulation clause 54``. Matching is case-insensitive.
    """
    found: set[int] = set()
    patterns = (_PAGE_RE, _CLAUSE_RE) if clauses else (_PAGE_RE,)
    for pat in patterns:
        for m in pat.finditer(report_text or ""):
            found |= _expand(m["list"])
    return found


@dataclass(frozen=True)
class GroundTruth:
    universe: tuple[str, ...]
    per_report: dict[str, frozenset[str]]

    def __post_init__(self) -> None:
        if not self.universe:
            raise ValueError("label universe is empty")
        if len(set(self.universe)) != len(self.universe):
            raise ValueError("label universe has duplicates")
        known = set(self.universe)
        for rid, refs in self.per_report.items():
            stray = set(refs) - known
            if stray:
                raise ValueError(f"report {rid!r} has labels outside the universe: {sorted(stray)}")

    @property
    def universe_size(self) -> int:
        return len(self.universe)

    @classmethod
    def from_dict(cls, data: Mapping) -> "GroundTruth":
        return cls(
            tuple(str(u) for u in data["universe"]),
            {str(k): frozenset(str(r) for r in v) for k, v in data["reports"].items()},
        )

    @classmethod
    def load(cls, path) -> "GroundTruth":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def to_dict(self) -> dict:
        return {"universe": list(self.universe), "reports": {k: sorted(v) for k, v in sorted(self.per_report.items())}}


def confusion(gt: Iterable, pred: Iterable, universe: Iterable) -> tuple[int, int, int, int]:
    """(TP, FP, FN, TN) of one report.

    Predictions outside the universe count as false positives; TN is taken
    over the universe only.
    """
    u, g, p = set(universe), set(gt), set(pred)
    tp = len(g & p)
    fp = len(p - g)
    fn = len(g - p)
    tn = len(u - g - p)
    return tp, fp, fn, tn


@dataclass(frozen=True)
class ComplianceMetrics:
    hamming_loss: float
    precision: float
    recall: float
    f1: float
    averaging: str = SAMPLE
    n_reports: int = 0
    universe_size: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping) -> "ComplianceMetrics":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in data.items() if k in names})


def _ratio(num: int, den: int) -> float:
    return num / den if den else 0.0


def _f1(p: float, r: float) -> float:
    return 2 * p * r / (p + r) if p + r > 0 else 0.0


def per_report_scores(gt: set, pred: set, universe) -> tuple[float, float, float]:
    """Precision, recall and F1 of a single report.

    Both sets empty scores 1/1/1; otherwise an empty denominator scores 0.
    """
    if not gt and not pred:
        return 1.0, 1.0, 1.0
    tp, fp, fn, _ = confusion(gt, pred, universe)
    p, r = _ratio(tp, tp + fp), _ratio(tp, tp + fn)
    return p, r, _f1(p, r)


def compute_metrics(
    gt: GroundTruth,
    preds: Mapping[str, Iterable],
    averaging: str = SAMPLE,
) -> ComplianceMetrics:
    if averaging not in AVERAGING_MODES:
        raise ValueError(f"averaging must be one of {AVERAGING_MODES}")
    missing = set(gt.per_report) - set(preds)
    extra = set(preds) - set(gt.per_report)
    if missing or extra:
        raise KeyMismatchError(list(missing), list(extra))
    ids = sorted(gt.per_report)
    n, u = len(ids), gt.universe_size
    if n == 0:
        raise EmptyInputError("no reports to score")
    pred_sets = {rid: {str(x) for x in preds[rid]} for rid in ids}
    counts = np.array([confusion(gt.per_report[rid], pred_sets[rid], gt.universe) for rid in ids])
    tp, fp, fn = (int(c) for c in counts[:, :3].sum(axis=0))
    hamming = (fp + fn) / (n * u)
    if averaging == MICRO:
        p, r = _ratio(tp, tp + fp), _ratio(tp, tp + fn)
        f1 = _f1(p, r)
    else:
        per = np.array([per_report_scores(set(gt.per_report[rid]), pred_sets[rid], gt.universe) for rid in ids])
        p, r, f1 = (float(x) for x in per.mean(axis=0))
    return ComplianceMetrics(hamming, p, r, f1, averaging, n, u)


@dataclass(frozen=True)
class RubricScore:
    """One rater's 1-10 scores for one report."""

    completeness: int
    relevance: int
    accuracy: int
    clarity_readability: int

    def __post_init__(self) -> None:
        for name in RUBRIC_CRITERIA:
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, np.integer)) or not 1 <= v <= 10:
                raise ValueError(f"{name} must be an integer in 1..10, got {v!r}")


@dataclass(frozen=True)
class RubricSummary:
    mean: dict[str, float]
    sd: dict[str, float]
    n_samples: int

    def to_dict(self) -> dict:
        return {
            "n_samples": self.n_samples,
            "mean": {k: round(v, 2) for k, v in self.mean.items()},
            "sd": {k: round(v, 2) for k, v in self.sd.items()},
        }


def aggregate_rubric(scores: Sequence[RubricScore | Sequence[RubricScore]]) -> RubricSummary:
    """Per-criterion mean and population standard deviation.

    Each element is either one score or the scores several raters gave the
    same report; rater scores are averaged per report first, and the
    statistics are then taken over reports.
    """
    if not scores:
        raise EmptyInputError("no rubric scores")
    samples = []
    for item in scores:
        raters = [item] if isinstance(item, RubricScore) else list(item)
        if not raters:
            raise EmptyInputError("a report has no rater scores")
        samples.append([sum(getattr(s, c) for s in raters) / len(raters) for c in RUBRIC_CRITERIA])
    arr = np.array(samples, dtype=np.float64)
    mean = arr.mean(axis=0)
    sd = arr.std(axis=0, ddof=0)
    return RubricSummary(
        dict(zip(RUBRIC_CRITERIA, map(float, mean))),
        dict(zip(RUBRIC_CRITERIA, map(float, sd))),
        len(samples),
    )


METRIC_FIELDS = ("hamming_loss", "precision", "recall", "f1")


@dataclass(frozen=True)
class DeltaRow:
    metric: str
    a: float
    b: float
    delta: float
    relative_pct: float | None


def compare_runs(a: ComplianceMetrics, b: ComplianceMetrics) -> list[DeltaRow]:
    """Per-metric change from run ``a`` to run ``b``; relative change uses ``a`` as base."""
    if a.averaging != b.averaging:
        raise ModeMismatchError(f"averaging modes differ: {a.averaging!r} vs {b.averaging!r}")
    if a.universe_size and b.universe_size and a.universe_size != b.universe_size:
        raise ModeMismatchError(f"label universes differ: {a.universe_size} vs {b.universe_size} labels")
    rows = []
    for name in METRIC_FIELDS:
        va, vb = getattr(a, name), getattr(b, name)
        rel = (vb - va) / va * 100.0 if va != 0 else None
        rows.append(DeltaRow(name, va, vb, vb - va, rel))
    return rows


def _fmt_delta(x: float) -> str:
    s = f"{x:+.4f}"
    return "+0.0000" if s == "-0.0000" else s


def _fmt_rel(x: float | None) -> str:
    if x is None or not math.isfinite(x):
        return "n/a"
    s = f"{x:+.2f}%"
    return "+0.00%" if s == "-0.00%" else s


def render_delta_table(rows: Sequence[DeltaRow], labels: tuple[str, str] = ("A", "B")) -> str:
    a, b = (str(x)[:9] for x in labels)
    head = f"{'metric':<14}{a:>10}{b:>10}{'delta':>10}{'rel':>10}"
    lines = [head, "-" * len(head)]
    for r in rows:
        lines.append(f"{r.metric:<14}{r.a:>10.4f}{r.b:>10.4f}{_fmt_delta(r.delta):>10}{_fmt_rel(r.relative_pct):>10}")
    return "\n".join(lines) + "\n"


def delta_json(rows: Sequence[DeltaRow]) -> dict:
    return {
        r.metric: {
            "a": r.a,
            "b": r.b,
            "delta": round(r.delta, 10),
            "relative_pct": None if r.relative_pct is None else round(r.relative_pct, 6),
        }
        for r in rows
    }
