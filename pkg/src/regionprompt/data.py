"""Dataset ingestion and a deterministic synthetic corpus for desk-scale runs.

Annotation format (schema_version 1): one JSON record per line with fields
{id, image, bbox: [x, y, w, h], clue, inference, candidates?}. ``image`` is a
path relative to a configured root; ``candidates`` is an optional list of
[x, y, w, h] boxes used for localization. A sidecar JSONL with the same shape
carries auto-detected candidate boxes.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .imaging import RegionBox

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1

N_CONCEPTS = 8
N_SCENES = 7
CONCEPT_COLORS = np.array([
    (0.9, 0.1, 0.1), (0.1, 0.8, 0.1), (0.1, 0.2, 0.9), (0.9, 0.8, 0.1),
], dtype=np.float32)


def scene_of(concept: int) -> int:
    """Fixed surjective concept-to-scene map; two concepts share scene 0 and 1."""
    return concept % N_SCENES


@dataclass
class Observation:
    """One sample. The clue is a training/diagnostic-only signal; evaluation
    scoring never reads it."""

    sample_id: str
    image_path: str | None
    box: RegionBox
    clue: str
    inference: str
    image: np.ndarray | None = None  # in-memory raster for synthetic corpora


@dataclass
class DatasetSplit:
    name: str
    observations: list[Observation]
    candidate_boxes: dict = field(default_factory=dict)  # sample_id -> [RegionBox]
    diagnostics: list[str] = field(default_factory=list)

    def __len__(self):
        return len(self.observations)

    def __iter__(self):
        return iter(self.observations)


def _parse_record(record: dict, lineno: int) -> Observation:
    missing = [k for k in ("id", "image", "bbox", "clue", "inference") if k not in record]
    if missing:
        raise ValueError(f"missing fields {missing}")
    bbox = record["bbox"]
    if (not isinstance(bbox, (list, tuple)) or len(bbox) != 4
            or not all(isinstance(v, (int, float)) for v in bbox)):
        raise ValueError(f"bbox must be four numbers, got {bbox!r}")
    return Observation(
        sample_id=str(record["id"]),
        image_path=str(record["image"]),
        box=RegionBox(*(int(round(v)) for v in bbox)),
        clue=str(record["clue"]),
        inference=str(record["inference"]),
    )


def load_sherlock(path, split: str = "train") -> DatasetSplit:
    """Load a JSONL annotation file; malformed records are rejected per line.

    Parse failures do not abort the load: each is recorded in
    ``split.diagnostics`` as "line N: reason" and logged once at the end.
    """
    observations, candidates, diagnostics = [], {}, []
    seen_ids = set()
    with open(path) as fh:
        lines = fh.readlines()
    if not any(line.strip() for line in lines):
        logger.warning("annotation file %s is empty", path)
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
            obs = _parse_record(record, lineno)
            if obs.sample_id in seen_ids:
                raise ValueError(f"duplicate sample id {obs.sample_id!r}")
        except (json.JSONDecodeError, ValueError, TypeError) as err:
            diagnostics.append(f"line {lineno}: {err}")
            continue
        seen_ids.add(obs.sample_id)
        observations.append(obs)
        if "candidates" in record:
            candidates[obs.sample_id] = [RegionBox(*(int(round(v)) for v in b))
                                         for b in record["candidates"]]
    if diagnostics:
        logger.warning("%s: rejected %d record(s): %s", path, len(diagnostics),
                       "; ".join(diagnostics))
    return DatasetSplit(split, observations, candidates, diagnostics)


def dump_sherlock(split: DatasetSplit, path) -> None:
    """Serialize a split back to the JSONL annotation schema."""
    with open(path, "w") as fh:
        for obs in split:
            record = {
                "schema_version": SCHEMA_VERSION,
                "id": obs.sample_id,
                "image": obs.image_path,
                "bbox": [obs.box.x, obs.box.y, obs.box.w, obs.box.h],
                "clue": obs.clue,
                "inference": obs.inference,
            }
            if obs.sample_id in split.candidate_boxes:
                record["candidates"] = [[b.x, b.y, b.w, b.h]
                                        for b in split.candidate_boxes[obs.sample_id]]
            fh.write(json.dumps(record) + "\n")


def convert_official_annotations(in_path, out_path, split: str = "train") -> int:
    """Convert the public Sherlock release layout to our JSONL schema.

    Field map: the release is one JSON array of records shaped
    {"inputs": {"image": {"url": ...}, "bboxes": [{"left", "top", "width",
    "height"}, ...]}, "targets": {"clue": ..., "inference": ...},
    "instance_id": ...}. The first bbox becomes the region; the image URL's
    basename becomes the relative image path. Returns the record count.
    """
    with open(in_path) as fh:
        records = json.load(fh)
    n = 0
    with open(out_path, "w") as out:
        for rec in records:
            bbox = rec["inputs"]["bboxes"][0]
            out.write(json.dumps({
                "schema_version": SCHEMA_VERSION,
                "id": str(rec["instance_id"]),
                "image": rec["inputs"]["image"]["url"].rsplit("/", 1)[-1],
                "bbox": [bbox["left"], bbox["top"], bbox["width"], bbox["height"]],
                "clue": rec["targets"]["clue"],
                "inference": rec["targets"]["inference"],
            }) + "\n")
            n += 1
    return n


# ---- synthetic corpus -----------------------------------------------------
#
# Each sample draws a latent concept k in [0, 8). The region is an 8x8 patch
# whose color encodes k // 2 and whose 1-pixel checkerboard phase encodes
# k % 2 (the phase survives upsampling but is destroyed by 2x area
# averaging, which is what makes low-resolution ablations degrade). Context
# is uniform noise with the patch planted at the box. The clue is the literal
# token "object_k"; the inference is "scene_{scene_of(k)}" via the fixed
# surjective map, so the inference is causally, not literally, tied to the
# clue.

REGION_SIDE = 8


def _region_patch(concept: int) -> np.ndarray:
    color = CONCEPT_COLORS[concept // 2]
    phase = concept % 2
    yy, xx = np.mgrid[0:REGION_SIDE, 0:REGION_SIDE]
    mask = ((yy + xx) % 2 == phase)[..., None]
    return np.where(mask, color, np.zeros(3, dtype=np.float32)).astype(np.float32)


def decode_concept(region: np.ndarray) -> int:
    """Rule-based decoder for the planted encoding (the corpus oracle).

    Expects the raw (unresized) region patch: color by nearest mean over lit
    pixels, phase by checkerboard parity.
    """
    lit = region.max(axis=-1) > 0.05
    mean_color = region[lit].mean(axis=0)
    color_idx = int(np.argmin(((CONCEPT_COLORS - mean_color) ** 2).sum(axis=1)))
    yy, xx = np.nonzero(lit)
    phase = int(np.round(((yy + xx) % 2).mean()))
    return 2 * color_idx + phase


def rule_based_scorer(corpus: DatasetSplit):
    """Scorer that reads the planted encoding directly; establishes the
    retrieval/localization ceiling the trained tiny model is measured against."""

    def score(image: np.ndarray, box: RegionBox, inference: str) -> float:
        region = image[box.y : box.y + box.h, box.x : box.x + box.w]
        # the planted patch is half exactly-black squares; noise almost never is
        dark = region.max(axis=-1) < 0.05
        if dark.mean() < 0.3:
            return -1.0
        concept = decode_concept(region)
        return 1.0 if inference == f"scene_{scene_of(concept)}" else 0.0

    return score


def synth_corpus(seed: int, n: int, image_side: int = 32,
                 split: str = "train") -> DatasetSplit:
    """Deterministic separable corpus with stratified concept sampling."""
    if n <= 0:
        raise ValueError(f"corpus size must be positive, got {n}")
    if image_side < 2 * REGION_SIDE:
        raise ValueError(f"image_side must be at least {2 * REGION_SIDE}")
    rng = np.random.default_rng(seed)
    observations, candidates = [], {}
    for i in range(n):
        concept = i % N_CONCEPTS  # stratified: each concept appears n/8 times
        image = rng.uniform(0.0, 0.35, size=(image_side, image_side, 3)).astype(np.float32)
        max_off = image_side - REGION_SIDE
        x = int(rng.integers(0, max_off // 2 + 1)) * 2
        y = int(rng.integers(0, max_off // 2 + 1)) * 2
        image[y : y + REGION_SIDE, x : x + REGION_SIDE] = _region_patch(concept)
        box = RegionBox(x, y, REGION_SIDE, REGION_SIDE)
        sample_id = f"{split}-{i:04d}"
        observations.append(Observation(
            sample_id=sample_id, image_path=None, box=box,
            clue=f"object_{concept}", inference=f"scene_{scene_of(concept)}",
            image=image))
        candidates[sample_id] = [box] + _decoy_boxes(rng, box, image_side)
    return DatasetSplit(split, observations, candidates)


def _decoy_boxes(rng: np.random.Generator, true_box: RegionBox,
                 image_side: int, k: int = 3) -> list[RegionBox]:
    decoys = []
    while len(decoys) < k:
        x = int(rng.integers(0, image_side - REGION_SIDE + 1))
        y = int(rng.integers(0, image_side - REGION_SIDE + 1))
        cand = RegionBox(x, y, REGION_SIDE, REGION_SIDE)
        overlap_w = min(x + REGION_SIDE, true_box.x + REGION_SIDE) - max(x, true_box.x)
        overlap_h = min(y + REGION_SIDE, true_box.y + REGION_SIDE) - max(y, true_box.y)
        if max(0, overlap_w) * max(0, overlap_h) > REGION_SIDE:  # mostly off the patch
            continue
        decoys.append(cand)
    return decoys
