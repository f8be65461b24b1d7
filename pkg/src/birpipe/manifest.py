"""Dataset manifests and the experiment protocol variants built on them.

A manifest is an ordered list of image records (path, identity, camera,
split, variant). Protocol assembly only ever flips the per-record
variant between "original" and "segmented"; record count, order,
identities and cameras are never touched, so results stay comparable
across variants.
"""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Mapping

SPLIT_TRAIN = "train"
SPLIT_QUERY = "test_query"
SPLIT_GALLERY = "test_gallery"
SPLITS = (SPLIT_TRAIN, SPLIT_QUERY, SPLIT_GALLERY)

VARIANT_ORIGINAL = "original"
VARIANT_SEGMENTED = "segmented"
VARIANTS = (VARIANT_ORIGINAL, VARIANT_SEGMENTED)

PROTOCOL_BASELINE = "baseline"
PROTOCOL_SEG = "seg"
PROTOCOL_SEG_POST = "seg-post"
PROTOCOL_TRAINS_TESTN = "trains-testn"
PROTOCOL_RANDOM_K = "random-k"
PROTOCOLS = (
    PROTOCOL_BASELINE,
    PROTOCOL_SEG,
    PROTOCOL_SEG_POST,
    PROTOCOL_TRAINS_TESTN,
    PROTOCOL_RANDOM_K,
)

_MANIFEST_HEADER_PREFIX = "# manifest v1 seed="


@dataclass(frozen=True)
class ImageRecord:
    image_path: str
    identity: int
    camera: int
    split: str
    variant: str = VARIANT_ORIGINAL

    def __post_init__(self):
        if not self.image_path:
            raise ValueError("image_path must be non-empty")
        if self.identity < 0 or self.camera < 0:
            raise ValueError("identity and camera must be non-negative")
        if self.split not in SPLITS:
            raise ValueError(f"split must be one of {SPLITS}, got {self.split!r}")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")


@dataclass(frozen=True)
class Manifest:
    records: tuple[ImageRecord, ...]
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))

    def identities(self) -> set[int]:
        return {record.identity for record in self.records}

    def count_variant(self, variant: str) -> int:
        return sum(1 for record in self.records if record.variant == variant)


@dataclass(frozen=True)
class CropRecord:
    source_path: str
    x: int
    y: int
    w: int
    h: int

    def __post_init__(self):
        if not self.source_path:
            raise ValueError("source_path must be non-empty")
        if self.w < 1 or self.h < 1:
            raise ValueError("crop width and height must be at least 1")
        if self.x < 0 or self.y < 0:
            raise ValueError("crop origin must be non-negative")


def crop_within_bounds(crop: CropRecord, image_w: int, image_h: int) -> bool:
    """True iff the crop box lies fully inside an image of the given size."""
    return crop.x + crop.w <= image_w and crop.y + crop.h <= image_h


def filter_crops(crops: Iterable[CropRecord], min_w: int = 256, min_h: int = 256) -> list[CropRecord]:
    """Drop detected crops strictly smaller than the minimum in either dimension."""
    return [crop for crop in crops if crop.w >= min_w and crop.h >= min_h]


def pair_segmented(manifest: Manifest, outcomes: Mapping[str, Any]) -> Manifest:
    """Mark records whose post-processing outcome was kept as segmented.

    Records whose mask was discarded by the gate fall back to the
    original variant instead of being dropped, so every identity keeps
    all of its images. Raises KeyError if a record has no outcome.
    """
    records = []
    for record in manifest.records:
        if record.image_path not in outcomes:
            raise KeyError(f"no post-processing outcome for {record.image_path!r}")
        kept = outcomes[record.image_path].kept
        variant = VARIANT_SEGMENTED if kept else VARIANT_ORIGINAL
        records.append(dataclasses.replace(record, variant=variant))
    return Manifest(tuple(records), seed=manifest.seed)


def _unit_draw(seed: int, index: int) -> float:
    """Deterministic uniform draw in [0, 1) keyed by (seed, record index).

    Counter-based so one record's draw never depends on any other
    record's position or presence.
    """
    digest = hashlib.blake2b(f"{seed}:{index}".encode("ascii"), digest_size=8).digest()
    return int.from_bytes(digest, "little") / 2.0**64


def derive_seed(seed: int, label) -> int:
    """Derive an independent 63-bit child seed from a root seed and a label."""
    digest = hashlib.blake2b(f"{seed}/{label}".encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") >> 1


def mix_random_selection(manifest: Manifest, k: float, seed: int) -> Manifest:
    """Keep each segmented-capable record segmented with probability `k`.

    Capability is carried by the incoming variant field: records already
    marked segmented (e.g. by `pair_segmented`) are re-drawn, records
    marked original stay original. Deterministic for a fixed
    (record order, k, seed).
    """
    if not 0.0 <= k <= 1.0:
        raise ValueError(f"k must be in [0, 1], got {k}")
    records = []
    for index, record in enumerate(manifest.records):
        if record.variant != VARIANT_SEGMENTED:
            records.append(record)
            continue
        variant = VARIANT_SEGMENTED if _unit_draw(seed, index) < k else VARIANT_ORIGINAL
        records.append(dataclasses.replace(record, variant=variant))
    return Manifest(tuple(records), seed=seed)


def _with_variant(manifest: Manifest, variant: str) -> Manifest:
    records = tuple(dataclasses.replace(record, variant=variant) for record in manifest.records)
    return Manifest(records, seed=manifest.seed)


def _segment_with_gate(manifest: Manifest, outcomes) -> Manifest:
    # Without mask outcomes (synthetic corpora) every record counts as capable.
    if outcomes is None:
        return _with_variant(manifest, VARIANT_SEGMENTED)
    return pair_segmented(manifest, outcomes)


def assemble_protocol(
    variant: str,
    train: Manifest,
    test: Manifest,
    seed: int,
    outcomes=None,
    k: float | None = None,
) -> tuple[Manifest, Manifest]:
    """Build the (train, test) manifests for one evaluation protocol.

    baseline      both manifests untouched
    seg           both fully segmented, no post-processing gate
    seg-post      both segmented through the post-processing gate
    trains-testn  train segmented through the gate, test fully original
    random-k      gate, then each capable record segmented with probability k
                  (independent draws per manifest, same k for both)
    """
    if variant == PROTOCOL_BASELINE:
        return train, test
    if variant == PROTOCOL_SEG:
        return _with_variant(train, VARIANT_SEGMENTED), _with_variant(test, VARIANT_SEGMENTED)
    if variant == PROTOCOL_SEG_POST:
        return _segment_with_gate(train, outcomes), _segment_with_gate(test, outcomes)
    if variant == PROTOCOL_TRAINS_TESTN:
        return _segment_with_gate(train, outcomes), _with_variant(test, VARIANT_ORIGINAL)
    if variant == PROTOCOL_RANDOM_K:
        if k is None:
            raise ValueError("random-k protocol requires k")
        capable_train = _segment_with_gate(train, outcomes)
        capable_test = _segment_with_gate(test, outcomes)
        return (
            mix_random_selection(capable_train, k, derive_seed(seed, "train")),
            mix_random_selection(capable_test, k, derive_seed(seed, "test")),
        )
    raise ValueError(f"unknown protocol variant {variant!r}")


def serialize_manifest(manifest: Manifest) -> str:
    lines = [f"{_MANIFEST_HEADER_PREFIX}{manifest.seed}"]
    for record in manifest.records:
        lines.append(
            f"{record.image_path}\t{record.identity}\t{record.camera}"
            f"\t{record.split}\t{record.variant}"
        )
    return "\n".join(lines) + "\n"


def parse_manifest(text: str) -> Manifest:
    lines = text.splitlines()
    if not lines or not lines[0].startswith(_MANIFEST_HEADER_PREFIX):
        raise ValueError("manifest is missing its version/seed header line")
    try:
        seed = int(lines[0][len(_MANIFEST_HEADER_PREFIX):])
    except ValueError as exc:
        raise ValueError(f"bad manifest header: {lines[0]!r}") from exc
    records = []
    for number, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != 5:
            raise ValueError(f"manifest line {number} has {len(fields)} fields, expected 5")
        path, identity, camera, split, variant = fields
        records.append(ImageRecord(path, int(identity), int(camera), split, variant))
    return Manifest(tuple(records), seed=seed)


def save_manifest(path, manifest: Manifest) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(serialize_manifest(manifest), encoding="utf-8")


def load_manifest(path) -> Manifest:
    return parse_manifest(Path(path).read_text(encoding="utf-8"))
