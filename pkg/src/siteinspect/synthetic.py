"""Planted inspection sets for offline runs and tests.

Images are PNGs whose description chunk holds the caption (with a
Time/Location header); audio notes are WAVs with a transcript chunk; corpus
pages are noise PNGs carrying a ``page_text`` chunk. All of it is read by
the stub provider, so the true image/audio pairing, the relevant pages and
the expected citations are known in advance.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from pathlib import Path

import numpy as np

from siteinspect.providers.media import make_png, make_wav

# topic -> (scene sentence, spoken hazard detail, relevant regulation pages)
HAZARDS: dict[str, tuple[str, str, tuple[str, ...]]] = {
    "ppe": (
        "Two workers on scaffolding wearing hard hats.",
        "Neither worker wore high visibility vests or gloves.",
        ("23", "83", "84"),
    ),
    "fall": (
        "A worker stands at an unprotected slab edge on level three.",
        "No guardrail and no harness at the edge, posing a fall from height risk above two metres.",
        ("22", "56"),
    ),
    "falling_objects": (
        "Loose timber and tools are stacked near the scaffold edge above the footpath.",
        "No toe boards or containment screens are fitted, so materials could fall onto pedestrians.",
        ("85",),
    ),
    "excavation": (
        "An open trench runs beside the site hoarding.",
        "The trench is deeper than one and a half metres with no shoring and no barricade.",
        ("61",),
    ),
    "electrical": (
        "Extension leads run across wet ground near the site shed.",
        "Leads are not tagged and lie in water, a risk of electric shock.",
        ("70",),
    ),
}

PAGES: dict[str, str] = {
    "22": "working at height fall prevention guardrail edge protection harness anchor fall arrest two metres",
    "23": "personal protective equipment high visibility clothing reflective vests hard hats",
    "56": "working above ground scaffold fall from height slab edge licensed scaffolder platforms",
    "61": "excavation trench shoring barricade collapse depth one and a half metres",
    "70": "electrical safety extension leads tagged inspected wet ground electric shock residual current",
    "83": "ppe provision workers hard hats gloves high visibility vests boots",
    "84": "ppe examples gloves sun protection long sleeved shirts eye protection",
    "85": "falling objects toe boards containment screens tool lanyards materials pedestrians footpath",
    "10": "site induction sign in visitors supervisor contact",
    "11": "concrete formwork curing slump testing pour sequence",
    "12": "noise exposure hearing assessment decibel limits",
    "30": "asbestos register removal licence clearance certificate",
    "31": "traffic management plan spotters delivery zones",
    "40": "first aid kits trained first aiders emergency plan",
}

_STREETS = [
    "York", "George", "Pitt", "Kent", "Clarence", "Sussex", "Elizabeth", "Macquarie", "Phillip",
    "Bathurst", "Liverpool", "Goulburn", "Harris", "Bridge", "Hunter", "Market", "King", "Druitt",
    "Crown", "Oxford", "Bourke", "Riley", "Abercrombie", "Regent", "Cleveland",
]
_SUBURBS = [
    "Sydney", "Parramatta", "Chatswood", "Ryde", "Hornsby", "Penrith", "Liverpool", "Bankstown",
    "Burwood", "Strathfield", "Manly", "Mosman", "Randwick", "Coogee", "Bondi", "Marrickville",
    "Newtown", "Glebe", "Ultimo", "Redfern", "Waterloo", "Zetland", "Mascot", "Rockdale", "Kogarah",
]
_DECOY_LOCATIONS = [
    "Unit 9 Harbour Parade, Wollongong NSW 2500",
    "Lot 77 Vineyard Crescent, Cessnock NSW 2325",
    "Shed 3 Airport Drive, Tamworth NSW 2340",
]


def fmt_time(ts: datetime, style: str = "upper") -> str:
    # the hour drops its leading zero, the day keeps it
    s = ts.strftime("%d/%m/%Y ") + ts.strftime("%I:%M %p").lstrip("0")
    if style == "dotted":
        s = s.replace("AM", "a.m.").replace("PM", "p.m.")
    return s


@dataclass
class PlantedSet:
    root: Path
    images_dir: Path
    audio_dir: Path
    corpus_dir: Path
    truth_pairs: set[tuple[str, str]] = field(default_factory=set)
    decoys: list[str] = field(default_factory=list)
    topics: dict[str, str] = field(default_factory=dict)
    ground_truth: dict = field(default_factory=dict)


def write_corpus(corpus_dir: Path, size: int = 128) -> dict[str, str]:
    corpus_dir = Path(corpus_dir)
    corpus_dir.mkdir(parents=True, exist_ok=True)
    for i, (pid, text) in enumerate(sorted(PAGES.items())):
        (corpus_dir / f"{pid}.png").write_bytes(make_png(size, size, {"page_text": text}, seed=1000 + i))
    return dict(PAGES)


def write_inspection_set(
    root: Path,
    n_pairs: int = 25,
    n_decoys: int = 3,
    seed: int = 0,
) -> PlantedSet:
    """Write images/, audio/, corpus/ and gt.json under ``root``.

    Images come in twos sharing a timestamp (several audio candidates at the
    same minute); every fifth audio note is recorded a few minutes after its
    photo, so both matching phases are exercised. Decoy recordings share a
    photo's timestamp but were made at a distant location.
    """
    if n_pairs > len(_STREETS):
        raise ValueError(f"at most {len(_STREETS)} planted pairs")
    root = Path(root)
    images_dir, audio_dir, corpus_dir = root / "images", root / "audio", root / "corpus"
    for d in (images_dir, audio_dir):
        d.mkdir(parents=True, exist_ok=True)
    write_corpus(corpus_dir)
    rng = np.random.default_rng(seed)
    topics = list(HAZARDS)
    start = datetime(2025, 2, 2, 8, 0)
    planted = PlantedSet(root, images_dir, audio_dir, corpus_dir)
    gt_reports: dict[str, list[str]] = {}
    image_times = []
    for i in range(n_pairs):
        ts = start + timedelta(minutes=30 * (i // 2))
        image_times.append(ts)
        number = 10 + 7 * i
        location = f"{number} {_STREETS[i]} St, {_SUBURBS[i]} NSW {2000 + i}"
        spoken = location.replace(",", "") if i % 3 else location
        if i % 4 == 1:
            spoken = spoken.replace(" NSW", "")
        topic = topics[int(rng.integers(len(topics)))]
        scene, detail, pages = HAZARDS[topic]
        image_id, audio_id = f"img{i + 1:02d}", f"rec{n_pairs - i:02d}"
        caption = f"Time: {fmt_time(ts)}\nLocation: {location}\n{scene}"
        audio_ts = ts + timedelta(minutes=4) if i % 5 == 4 else ts
        transcript = f"Time: {fmt_time(audio_ts, 'dotted')}\nLocation: {spoken}\n{detail}"
        (images_dir / f"{image_id}.png").write_bytes(make_png(64, 48, {"Description": caption}, seed=seed * 1000 + i))
        (audio_dir / f"{audio_id}.wav").write_bytes(make_wav(transcript, seconds=0.25, tone_hz=300 + 10 * i))
        planted.truth_pairs.add((image_id, audio_id))
        planted.topics[image_id] = topic
        gt_reports[image_id] = sorted(pages)
    for j in range(n_decoys):
        ts = image_times[(7 * j + 3) % n_pairs]
        aid = f"zdecoy{j + 1}"
        transcript = f"Time: {fmt_time(ts, 'dotted')}\nLocation: {_DECOY_LOCATIONS[j % len(_DECOY_LOCATIONS)]}\nGeneral housekeeping walk, nothing to report."
        (audio_dir / f"{aid}.wav").write_bytes(make_wav(transcript, seconds=0.25, tone_hz=900 + 10 * j))
        planted.decoys.append(aid)
    planted.ground_truth = {"universe": sorted(PAGES, key=int), "reports": gt_reports}
    (root / "gt.json").write_text(json.dumps(planted.ground_truth, indent=2) + "\n", encoding="utf-8")
    return planted
