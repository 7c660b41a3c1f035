"""
Scoring regulatory citations
============================

Each report is a multi-label prediction: the set of pages it cites. Against
hand-labelled sets drawn from a fixed label universe we compute hamming loss,
precision, recall and F1, averaged per report ("sample") or over pooled
counts ("micro").
"""

from siteinspect.evalsuite import (
    ComplianceMetrics,
    GroundTruth,
    compare_runs,
    compute_metrics,
    extract_citations,
    render_delta_table,
)

# Citations are pulled out of free text. Lists, ranges and clause mentions
# all count.
text = (
    "Scaffolds need guardrails (Code of Practice pages 56, 22-23). PPE must be "
    "provided in accordance with WHS Reg 44 & 46; see also page 83."
)
print(sorted(extract_citations(text)))

# %%
# A two-report example over the universe {A, B, C, D}. Report 1 gets one hit,
# one false positive and one omission; report 2 gets its only label plus a
# false positive.
gt = GroundTruth(("A", "B", "C", "D"), {"r1": frozenset("AB"), "r2": frozenset("C")})
pred = {"r1": {"A", "C"}, "r2": {"C", "D"}}
for mode in ("sample", "micro"):
    m = compute_metrics(gt, pred, mode)
    print(f"{mode:>6}: hamming {m.hamming_loss:.4f}  P {m.precision:.4f}  R {m.recall:.4f}  F1 {m.f1:.4f}")

# Sample-averaged F1 is the mean of per-report F1s, so it need not equal
# the harmonic mean of the averaged P and R. Micro F1 always does.
s = compute_metrics(gt, pred, "sample")
print("harmonic mean of sample P and R:", round(2 * s.precision * s.recall / (s.precision + s.recall), 4))

# %%
# Comparing two runs gives a delta table with the first run as the base.
image_only = ComplianceMetrics(0.1044, 0.5717, 0.8800, 0.6479)
image_audio = ComplianceMetrics(0.0422, 0.7600, 0.9600, 0.8170)
print(render_delta_table(compare_runs(image_only, image_audio), ("image", "img+audio")))
