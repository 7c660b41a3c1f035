"""
Pairing site photos with audio notes
====================================

Both photos and voice notes open with a ``Time:`` / ``Location:`` header.
Pairs are found in two passes: exact timestamps first, then anything inside
a time window. Either way the two locations must be close enough, measured
as cosine similarity of their text embeddings.
"""

from siteinspect.matcher import MatchConfig, location_similarity, match_pairs, parse_annotation
from siteinspect.providers import StubProvider

stub = StubProvider()

# The same spot written two ways still scores high; a different site does not.
a = "12 York St, Sydney NSW 2000"
print(f"{location_similarity(a, '12 York St Sydney NSW 2000', stub):.3f}  same site, no commas")
print(f"{location_similarity(a, '12 York Street, Sydney', stub):.3f}  street spelled out")
print(f"{location_similarity(a, 'Shed 3 Airport Drive, Tamworth NSW 2340', stub):.3f}  another town")

# %%
# Headers are parsed from free text. Both day-first and ISO dates work, as do
# "a.m."/"PM" suffixes.
img = parse_annotation("Time: 02/02/2025 8:00 a.m.\nLocation: 12 York St, Sydney NSW 2000\nScaffold photo")
rec = parse_annotation("Time: 02/02/2025 8:06 AM Location: 12 York St Sydney NSW 2000")
decoy = parse_annotation("Time: 02/02/2025 8:00 AM Location: Shed 3 Airport Drive, Tamworth NSW 2340")
print(img.timestamp, "|", rec.timestamp, "|", decoy.location_text)

# %%
# The decoy has the exact timestamp but the wrong place, so it is rejected
# and reported with a reason. The real note is six minutes late and is
# picked up in the windowed pass.
result = match_pairs(
    [("img01", img)],
    [("rec01", rec), ("decoy", decoy)],
    MatchConfig(time_window=15.0, location_threshold=0.75),
    embedder=stub,
)
for p in result.pairs:
    print(f"pair {p.image_id} <-> {p.audio_id}  sim {p.similarity:.3f}  dt {p.time_delta} min")
for aid, reason in result.unmatched_audio:
    print(f"unmatched {aid}: {reason}")

# Tightening the window leaves the photo unpaired.
strict = match_pairs([("img01", img)], [("rec01", rec)], MatchConfig(time_window=5.0), embedder=stub)
print("window 5 min:", strict.unmatched_images)
