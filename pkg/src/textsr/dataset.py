"""Record schema, manifest I/O, and the dataset build pipeline.

A build renders synthetic scenes, captions them from ground truth, keeps
the captions of the top-3 largest segments, degrades the HR render into
the LR input, and appends one line-delimited JSON record per scene to
``manifest.jsonl``.  Everything is keyed by the configured seed, so a
rebuild is byte-identical (manifest and images).

Per-record streams derive from ``record_seed = seed * 1_000_003 + index``;
that value is stored in the record, so the LR image is reconstructible
from the HR image plus the recorded degradation parameters and seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .captions import caption_scene, corrupt_captions, hf_vocabulary, lf_vocabulary
from .degradation import DegradationParams, degrade
from .latent import to_uint8
from .priors import CaptionSet
from .rng import bytes_key_hash
from .scenes import SegmentRegion, generate_scene, random_scene_spec

SCHEMA_VERSION = 1
GENERATOR_VERSION = "1"
TOP_K = 3

_RECORD_SEED_STRIDE = 1_000_003


@dataclass
class BuildConfig:
    """Knobs for one dataset build."""

    canvas: int = 64
    min_objects: int = 1
    max_objects: int = 4
    seed: int = 0
    corrupt_p: float = 0.0
    top_k: int = TOP_K
    degradation: DegradationParams = field(default_factory=DegradationParams)


@dataclass
class AnnotationRecord:
    """One training sample: image pair plus disentangled captions."""

    record_id: int
    hr_path: str
    lr_path: str
    captions: CaptionSet
    areas: list[int]
    degradation: DegradationParams
    seed: int
    generator_version: str = GENERATOR_VERSION
    schema_version: int = SCHEMA_VERSION

    def to_json_dict(self) -> dict:
        return {
            "record_id": self.record_id,
            "hr_path": self.hr_path,
            "lr_path": self.lr_path,
            "global": self.captions.global_caption,
            "lf": list(self.captions.lf_captions),
            "hf": list(self.captions.hf_captions),
            "areas": [int(a) for a in self.areas],
            "degradation": self.degradation.to_dict(),
            "seed": self.seed,
            "generator_version": self.generator_version,
            "schema_version": self.schema_version,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "AnnotationRecord":
        return cls(
            record_id=d["record_id"],
            hr_path=d["hr_path"],
            lr_path=d["lr_path"],
            captions=CaptionSet(global_caption=d["global"], lf_captions=list(d["lf"]),
                                hf_captions=list(d["hf"])),
            areas=[int(a) for a in d["areas"]],
            degradation=DegradationParams.from_dict(d["degradation"]),
            seed=d["seed"],
            generator_version=d.get("generator_version", GENERATOR_VERSION),
            schema_version=d["schema_version"],
        )

    def serialize(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def parse(cls, line: str) -> "AnnotationRecord":
        return cls.from_json_dict(json.loads(line))


def validate_record(record: AnnotationRecord, top_k: int = TOP_K) -> None:
    """Schema check; raises ValueError on any violation."""
    caps = record.captions
    if not isinstance(caps.global_caption, str) or not caps.global_caption:
        raise ValueError("record must carry exactly one non-empty global caption")
    if len(caps.lf_captions) != len(caps.hf_captions):
        raise ValueError("LF and HF caption counts must match")
    if len(caps.lf_captions) > top_k:
        raise ValueError(f"at most {top_k} captions allowed per frequency band")
    if len(record.areas) != len(caps.lf_captions):
        raise ValueError("area count must match caption count")
    if any(a < 0 for a in record.areas):
        raise ValueError("segment areas must be non-negative")
    if not record.hr_path or not record.lr_path:
        raise ValueError("image paths must be non-empty")
    if record.schema_version != SCHEMA_VERSION:
        raise ValueError(f"unsupported schema version {record.schema_version}")
    record.degradation.validate()


def select_top_segments(regions: list[SegmentRegion], k: int = TOP_K) -> list[SegmentRegion]:
    """The k largest regions by area, ties broken by lower segment id."""
    if k < 1:
        raise ValueError("k must be >= 1")
    ordered = sorted(regions, key=lambda r: (-r.area, r.segment_id))
    return ordered[:k]


def record_seed_for(seed: int, index: int) -> int:
    return seed * _RECORD_SEED_STRIDE + index


def save_png(path, image_uint8: np.ndarray) -> None:
    Image.fromarray(image_uint8, mode="RGB").save(path, format="PNG")


def load_png(path) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"))


@dataclass
class BuildResult:
    manifest_path: Path
    written: int
    skipped: int


def build_dataset(count: int, output_dir, config: BuildConfig) -> BuildResult:
    """Generate `count` records under `output_dir` and write the manifest.

    A record that fails schema validation is counted and skipped; the
    build itself continues.
    """
    if count < 0:
        raise ValueError("count must be non-negative")
    config.degradation.validate()
    out = Path(output_dir)
    (out / "hr").mkdir(parents=True, exist_ok=True)
    (out / "lr").mkdir(parents=True, exist_ok=True)
    manifest_path = out / "manifest.jsonl"

    written = skipped = 0
    with open(manifest_path, "w", encoding="utf-8") as manifest:
        for i in range(count):
            rseed = record_seed_for(config.seed, i)
            spec = random_scene_spec(rseed, canvas=config.canvas,
                                     min_objects=config.min_objects,
                                     max_objects=config.max_objects)
            hr, regions = generate_scene(spec)
            all_captions = caption_scene(spec, regions)
            top = select_top_segments(regions, config.top_k)
            captions = CaptionSet(
                global_caption=all_captions.global_caption,
                lf_captions=[all_captions.lf_captions[r.segment_id] for r in top],
                hf_captions=[all_captions.hf_captions[r.segment_id] for r in top],
            )
            if config.corrupt_p > 0:
                captions = corrupt_captions(captions, config.corrupt_p, rseed)
            hr_u8 = to_uint8(hr)
            lr_u8 = degrade(hr_u8, config.degradation, rseed)
            record = AnnotationRecord(
                record_id=i,
                hr_path=f"hr/{i:05d}.png",
                lr_path=f"lr/{i:05d}.png",
                captions=captions,
                areas=[r.area for r in top],
                degradation=config.degradation,
                seed=rseed,
            )
            try:
                validate_record(record, top_k=config.top_k)
            except ValueError:
                skipped += 1
                continue
            save_png(out / record.hr_path, hr_u8)
            save_png(out / record.lr_path, lr_u8)
            manifest.write(record.serialize() + "\n")
            written += 1
    return BuildResult(manifest_path=manifest_path, written=written, skipped=skipped)


def load_manifest(manifest_path) -> list[AnnotationRecord]:
    records = []
    with open(manifest_path, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                records.append(AnnotationRecord.parse(line))
    return records


def load_record_images(record: AnnotationRecord, root) -> tuple[np.ndarray, np.ndarray]:
    root = Path(root)
    return load_png(root / record.hr_path), load_png(root / record.lr_path)


def check_corpus_disentanglement(records: list[AnnotationRecord]) -> None:
    """Assert LF/HF vocabulary disjointness over a generated corpus.

    The corruption token is exempt (it may appear on both sides by design).
    """
    lf_words: set[str] = set()
    hf_words: set[str] = set()
    for rec in records:
        for cap in rec.captions.lf_captions:
            lf_words |= set(cap.split())
        for cap in rec.captions.hf_captions:
            hf_words |= set(cap.split())
    overlap = (lf_words & hf_words) - {"None"}
    if overlap:
        raise ValueError(f"LF/HF vocabulary overlap: {sorted(overlap)}")
    if not lf_vocabulary().isdisjoint(hf_vocabulary()):
        raise ValueError("template vocabularies overlap")


class ReplayCaptioner:
    """Caption backend replaying recorded caption sets keyed by image hash.

    Adapter with the same shape as the rule-based captioner for plugging
    in captions produced by external models while keeping runs hermetic.
    """

    def __init__(self, path):
        self._table: dict[str, CaptionSet] = {}
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                rec = json.loads(line)
                self._table[rec["key_hash"]] = CaptionSet(
                    global_caption=rec["global"], lf_captions=list(rec["lf"]),
                    hf_captions=list(rec["hf"]))

    def caption(self, image_uint8: np.ndarray) -> CaptionSet:
        key = bytes_key_hash(np.ascontiguousarray(image_uint8).tobytes())
        if key not in self._table:
            raise KeyError(f"no replay captions for image hash {key[:12]}...")
        return self._table[key]


def record_captions(image_uint8: np.ndarray, captions: CaptionSet) -> dict:
    return {"key_hash": bytes_key_hash(np.ascontiguousarray(image_uint8).tobytes()),
            "global": captions.global_caption, "lf": list(captions.lf_captions),
            "hf": list(captions.hf_captions)}
