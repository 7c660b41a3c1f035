import json
import math
import random
import statistics

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import fixture_text
from siteinspect.errors import EmptyInputError, KeyMismatchError, ModeMismatchError
from siteinspect.evalsuite import (
    ComplianceMetrics,
    GroundTruth,
    RubricScore,
    aggregate_rubric,
    compare_runs,
    compute_metrics,
    confusion,
    delta_json,
    extract_citations,
    per_report_scores,
    render_delta_table,
)

IMAGE_RUN = ComplianceMetrics(0.1044, 0.5717, 0.8800, 0.6479, "sample")
IMAGE_AUDIO_RUN = ComplianceMetrics(0.0422, 0.7600, 0.9600, 0.8170, "sample")


# --- independent oracle: walks every label one at a time -------------------

def oracle_counts(gt, pred, universe):
    tp = fp = fn = tn = 0
    for label in universe:
        g, p = label in gt, label in pred
        tp += g and p
        fp += p and not g
        fn += g and not p
        tn += not g and not p
    fp += sum(1 for x in pred if x not in universe)
    return tp, fp, fn, tn


def oracle_metrics(universe, gts, preds, averaging):
    rows = [oracle_counts(g, p, universe) for g, p in zip(gts, preds)]
    wrong = sum(r[1] + r[2] for r in rows)
    hamming = wrong / (len(rows) * len(universe))
    if averaging == "micro":
        tp = sum(r[0] for r in rows)
        fp = sum(r[1] for r in rows)
        fn = sum(r[2] for r in rows)
        p = tp / (tp + fp) if tp + fp else 0.0
        r = tp / (tp + fn) if tp + fn else 0.0
        f = 2 * p * r / (p + r) if p + r else 0.0
        return hamming, p, r, f
    ps, rs, fs = [], [], []
    for (tp, fp, fn, _), g, pr in zip(rows, gts, preds):
        if not g and not pr:
            ps.append(1.0), rs.append(1.0), fs.append(1.0)
            continue
        p = tp / (tp + fp) if tp + fp else 0.0
        r = tp / (tp + fn) if tp + fn else 0.0
        ps.append(p), rs.append(r), fs.append(2 * p * r / (p + r) if p + r else 0.0)
    n = len(rows)
    return hamming, math.fsum(ps) / n, math.fsum(rs) / n, math.fsum(fs) / n


def random_instance(rng):
    u = [f"L{i}" for i in range(rng.randint(1, 12))]
    n = rng.randint(1, 10)
    gts = [set(rng.sample(u, rng.randint(0, len(u)))) for _ in range(n)]
    preds = []
    for _ in range(n):
        p = set(rng.sample(u, rng.randint(0, len(u))))
        if rng.random() < 0.2:
            p.add(f"X{rng.randint(0, 3)}")
        preds.append(p)
    return u, gts, preds


def as_gt(u, gts):
    return GroundTruth(tuple(u), {f"r{i}": frozenset(g) for i, g in enumerate(gts)})


WORKED = GroundTruth(("A", "B", "C", "D"), {"r1": frozenset("AB"), "r2": frozenset("C")})
WORKED_PRED = {"r1": {"A", "C"}, "r2": {"C", "D"}}


class TestExtractCitations:
    @pytest.mark.parametrize(
        "text, expected",
        [
            ("as outlined on pages 56 and 85.", {56, 85}),
            ("(Code of Practice pages 56, 22–23)", {56, 22, 23}),
            ("see page 84 of PPE guidelines", {84}),
            ("PAGES 10-12", {10, 11, 12}),
            ("Page 3, 5 & 7", {3, 5, 7}),
            ("nothing cited here", set()),
            ("", set()),
            ("in accordance with WHS Reg 44 & 46", {44, 46}),
            ("Regulation clause 54 applies", {54}),
        ],
    )
    def test_patterns(self, text, expected):
        assert extract_citations(text) == expected

    def test_clause_patterns_can_be_disabled(self):
        assert extract_citations("WHS Reg 44 & 46 and page 9", clauses=False) == {9}

    def test_implausible_range_keeps_endpoints(self, caplog):
        assert extract_citations("pages 5-900") == {5, 900}
        assert "implausible" in caplog.text

    def test_image_audio_fixture(self):
        assert extract_citations(fixture_text("report_image_audio.txt")) == {56, 22, 23, 83, 85, 44, 46}

    def test_image_fixture_checked_version(self):
        assert extract_citations(fixture_text("report_image_checked.txt")) == {83, 84, 56, 85}

    def test_image_fixture_unchecked_version(self):
        # the earlier version of this text cites "page 84" where the checked one has "page 83-84"
        assert extract_citations(fixture_text("report_image.txt")) == {56, 84, 85}

    def test_norag_fixture_cites_nothing(self):
        assert extract_citations(fixture_text("report_norag.txt")) == set()

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.sampled_from([
        "page 4", "pages 7 and 9", "pages 12–14", "no refs", "WHS Reg 44 & 46", "pages 1, 2", "\n",
    ]), max_size=8), st.randoms())
    def test_order_insensitive_and_idempotent(self, frags, rnd):
        whole = extract_citations(" . ".join(frags))
        shuffled = frags[:]
        rnd.shuffle(shuffled)
        assert extract_citations(" . ".join(shuffled)) == whole
        union = set().union(*(extract_citations(f) for f in frags)) if frags else set()
        assert whole == union
        rendered = " ".join(f"page {n}" for n in sorted(whole))
        assert extract_citations(rendered) == whole


class TestConfusion:
    def test_worked_example(self):
        assert confusion({"A", "B"}, {"A", "C"}, "ABCD") == (1, 1, 1, 1)

    def test_exact_match_has_no_errors(self):
        tp, fp, fn, _ = confusion({"A"}, {"A"}, "AB")
        assert (tp, fp, fn) == (1, 0, 0)

    def test_empty_prediction(self):
        assert confusion({"A"}, set(), "AB")[:3] == (0, 0, 1)

    def test_out_of_universe_is_fp(self):
        tp, fp, fn, tn = confusion({"A"}, {"A", "Z"}, "AB")
        assert (tp, fp, fn, tn) == (1, 1, 0, 1)
        assert tp + fp + fn + tn == 2 + 1


class TestComputeMetrics:
    def test_worked_sample(self):
        m = compute_metrics(WORKED, WORKED_PRED, "sample")
        assert m.hamming_loss == pytest.approx(0.375, abs=1e-12)
        assert m.precision == pytest.approx(0.5, abs=1e-12)
        assert m.recall == pytest.approx(0.75, abs=1e-12)
        assert m.f1 == pytest.approx(0.5833, abs=1e-4)
        assert (m.n_reports, m.universe_size, m.averaging) == (2, 4, "sample")

    def test_worked_micro(self):
        m = compute_metrics(WORKED, WORKED_PRED, "micro")
        assert m.hamming_loss == pytest.approx(0.375, abs=1e-12)
        assert m.precision == pytest.approx(0.5, abs=1e-12)
        assert m.recall == pytest.approx(0.6667, abs=1e-4)
        assert m.f1 == pytest.approx(0.5714, abs=1e-4)

    def test_all_correct(self):
        m = compute_metrics(WORKED, dict(WORKED.per_report))
        assert (m.hamming_loss, m.precision, m.recall, m.f1) == (0.0, 1.0, 1.0, 1.0)

    def test_key_mismatch(self):
        with pytest.raises(KeyMismatchError) as ei:
            compute_metrics(WORKED, {"r1": set(), "r9": set()})
        assert "r2" in str(ei.value) and "r9" in str(ei.value)

    def test_bad_mode(self):
        with pytest.raises(ValueError):
            compute_metrics(WORKED, WORKED_PRED, "macro")

    def test_empty_conventions(self):
        assert per_report_scores(set(), set(), "AB") == (1.0, 1.0, 1.0)
        assert per_report_scores({"A"}, set(), "AB") == (0.0, 0.0, 0.0)

    def test_numeric_predictions_match_string_labels(self):
        gt = GroundTruth(("56", "83"), {"r": frozenset({"56"})})
        assert compute_metrics(gt, {"r": {56}}).f1 == 1.0

    def test_oracle_500_instances(self):
        rng = random.Random(20250202)
        for _ in range(500):
            u, gts, preds = random_instance(rng)
            gt = as_gt(u, gts)
            pm = {f"r{i}": p for i, p in enumerate(preds)}
            for mode in ("sample", "micro"):
                m = compute_metrics(gt, pm, mode)
                want = oracle_metrics(u, gts, preds, mode)
                got = (m.hamming_loss, m.precision, m.recall, m.f1)
                assert got == pytest.approx(want, abs=1e-12, rel=0)

    @settings(max_examples=150, deadline=None)
    @given(st.randoms(use_true_random=False))
    def test_hamming_zero_iff_exact(self, rnd):
        u, gts, preds = random_instance(rnd)
        gt = as_gt(u, gts)
        pm = {f"r{i}": p for i, p in enumerate(preds)}
        exact = all(g == p for g, p in zip(gts, preds))
        assert (compute_metrics(gt, pm).hamming_loss == 0) == exact
        assert compute_metrics(gt, {f"r{i}": g for i, g in enumerate(gts)}).hamming_loss == 0

    @settings(max_examples=150, deadline=None)
    @given(st.randoms(use_true_random=False))
    def test_micro_f1_identity_and_sample_per_report(self, rnd):
        u, gts, preds = random_instance(rnd)
        gt = as_gt(u, gts)
        pm = {f"r{i}": p for i, p in enumerate(preds)}
        m = compute_metrics(gt, pm, "micro")
        if m.precision + m.recall > 0:
            assert m.f1 == 2 * m.precision * m.recall / (m.precision + m.recall)
        s = compute_metrics(gt, pm, "sample")
        per = [per_report_scores(g, p, u) for g, p in zip(gts, preds)]
        for p, r, f in per:
            assert f == (2 * p * r / (p + r) if p + r else 0.0)
        assert s.f1 == pytest.approx(float(np.mean([f for _, _, f in per])), abs=1e-12)
        for v in (s.precision, s.recall, s.f1, m.precision, m.recall, m.f1):
            assert 0.0 <= v <= 1.0

    def test_roundtrip_json(self, tmp_path):
        p = tmp_path / "gt.json"
        p.write_text(json.dumps(WORKED.to_dict()))
        assert GroundTruth.load(p) == WORKED
        m = compute_metrics(WORKED, WORKED_PRED)
        assert ComplianceMetrics.from_dict(json.loads(json.dumps(m.to_dict()))) == m


class TestGroundTruth:
    def test_rejects_empty_universe(self):
        with pytest.raises(ValueError):
            GroundTruth((), {})

    def test_rejects_stray_labels(self):
        with pytest.raises(ValueError, match="outside"):
            GroundTruth(("A",), {"r": frozenset({"B"})})

    def test_rejects_duplicates(self):
        with pytest.raises(ValueError):
            GroundTruth(("A", "A"), {})


def score(c, r=5, a=5, cl=5):
    return RubricScore(c, r, a, cl)


class TestRubric:
    def test_single(self):
        s = aggregate_rubric([score(7, 3, 9, 1)])
        assert s.mean == {"completeness": 7, "relevance": 3, "accuracy": 9, "clarity_readability": 1}
        assert set(s.sd.values()) == {0.0}

    def test_two_values(self):
        s = aggregate_rubric([score(6), score(8)])
        assert s.mean["completeness"] == 7.0
        assert s.sd["completeness"] == 1.0

    def test_two_rater_fixture_mean_8_02(self):
        # 25 reports, two raters; rater B gives one report a 9, everything else is 8.
        # Per-report means: 24 x 8.0 and 1 x 8.5, so mean = 8 + 0.5/25 = 8.02 and
        # the population SD of a two-valued sample is |8.5 - 8| * sqrt(p (1 - p)), p = 1/25.
        reports = [[score(8), score(9 if i == 0 else 8)] for i in range(25)]
        s = aggregate_rubric(reports)
        closed = 0.5 * math.sqrt((1 / 25) * (24 / 25))
        assert s.mean["completeness"] == pytest.approx(8.02, abs=1e-12)
        assert s.sd["completeness"] == pytest.approx(closed, abs=1e-12)
        assert s.sd["completeness"] == pytest.approx(statistics.pstdev([8.5] + [8.0] * 24), abs=1e-12)
        assert s.to_dict()["mean"]["completeness"] == 8.02
        assert s.to_dict()["sd"]["completeness"] == 0.1
        assert s.n_samples == 25

    @pytest.mark.parametrize("bad", [0, 11, 5.5, True])
    def test_range_validation(self, bad):
        with pytest.raises(ValueError):
            score(bad)

    def test_empty(self):
        with pytest.raises(EmptyInputError):
            aggregate_rubric([])
        with pytest.raises(EmptyInputError):
            aggregate_rubric([[]])


class TestCompareRuns:
    def test_published_values(self):
        rows = {r.metric: r for r in compare_runs(IMAGE_RUN, IMAGE_AUDIO_RUN)}
        assert f"{rows['f1'].delta:+.4f}" == "+0.1691"
        assert f"{rows['hamming_loss'].delta:+.4f}" == "-0.0622"
        table = render_delta_table(list(rows.values()), ("image", "image+audio"))
        assert "+0.1691" in table and "-0.0622" in table
        assert rows["f1"].relative_pct == pytest.approx((0.8170 - 0.6479) / 0.6479 * 100)

    def test_identical_runs(self):
        rows = compare_runs(IMAGE_RUN, IMAGE_RUN)
        assert all(r.delta == 0 for r in rows)
        assert "-0.0000" not in render_delta_table(rows)

    def test_zero_base(self):
        a = ComplianceMetrics(0.0, 0.0, 0.0, 0.0)
        rows = compare_runs(a, IMAGE_RUN)
        assert "n/a" in render_delta_table(rows)
        assert delta_json(rows)["f1"]["relative_pct"] is None

    def test_mode_mismatch(self):
        with pytest.raises(ModeMismatchError):
            compare_runs(IMAGE_RUN, ComplianceMetrics(0, 1, 1, 1, "micro"))
        with pytest.raises(ModeMismatchError):
            compare_runs(ComplianceMetrics(0, 1, 1, 1, universe_size=3), ComplianceMetrics(0, 1, 1, 1, universe_size=4))

    def test_table_has_fixed_columns(self):
        lines = render_delta_table(compare_runs(IMAGE_RUN, IMAGE_AUDIO_RUN)).splitlines()
        assert len({len(l) for l in lines}) == 1
