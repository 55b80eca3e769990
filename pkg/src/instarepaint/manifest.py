"""Variant manifest: the persistent index of generated assets.

The manifest is a single JSON document::

    {
      "schema": 1,
      "dataset_id": "...",
      "generation_config": {...},
      "entries": [
        {"image_id": "...", "instance_id": "...", "variant_index": 0,
         "asset_path": "assets/...png", "prompt_text": "...", "seed": 123,
         "refined_mask_path": null, "nsfw_attempts": 1, "flags": []},
        ...
      ]
    }

Paths are relative to the directory holding the manifest file.
"""

import json
from collections import defaultdict
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

from .errors import ManifestFormatError

SCHEMA_VERSION = 1

KEPT_ORIGINAL = "kept_original"
REFINED = "refined"
SMALL_OBJECT = "small_object"
KNOWN_FLAGS = frozenset({KEPT_ORIGINAL, REFINED, SMALL_OBJECT})

_ENTRY_FIELDS = (
    "image_id", "instance_id", "variant_index", "asset_path", "prompt_text",
    "seed", "refined_mask_path", "nsfw_attempts", "flags",
)


@dataclass(frozen=True)
class VariantEntry:
    image_id: str
    instance_id: str
    variant_index: int
    asset_path: Optional[str]
    prompt_text: str
    seed: int
    refined_mask_path: Optional[str] = None
    nsfw_attempts: int = 1
    flags: frozenset = frozenset()

    @property
    def key(self):
        return (self.image_id, self.instance_id, self.variant_index)

    @property
    def kept_original(self):
        return KEPT_ORIGINAL in self.flags

    def with_flags(self, *flags):
        return replace(self, flags=frozenset(self.flags) | frozenset(flags))

    def to_dict(self):
        return {
            "image_id": self.image_id,
            "instance_id": self.instance_id,
            "variant_index": self.variant_index,
            "asset_path": self.asset_path,
            "prompt_text": self.prompt_text,
            "seed": self.seed,
            "refined_mask_path": self.refined_mask_path,
            "nsfw_attempts": self.nsfw_attempts,
            "flags": sorted(self.flags),
        }

    @classmethod
    def from_dict(cls, d):
        extra = set(d) - set(_ENTRY_FIELDS)
        absent = set(_ENTRY_FIELDS) - set(d)
        if extra or absent:
            raise ManifestFormatError(f"entry fields mismatch: extra={sorted(extra)} missing={sorted(absent)}")
        seed = int(d["seed"])
        if not 0 <= seed < 2**64:
            raise ManifestFormatError(f"seed {seed} is not a 64-bit unsigned value")
        return cls(
            image_id=str(d["image_id"]),
            instance_id=str(d["instance_id"]),
            variant_index=int(d["variant_index"]),
            asset_path=d["asset_path"],
            prompt_text=str(d["prompt_text"]),
            seed=seed,
            refined_mask_path=d["refined_mask_path"],
            nsfw_attempts=int(d["nsfw_attempts"]),
            flags=frozenset(d["flags"]),
        )


def sort_entries(entries):
    return tuple(sorted(entries, key=lambda e: e.key))


@dataclass(frozen=True)
class VariantManifest:
    dataset_id: str
    entries: tuple = ()
    generation_config: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "schema": SCHEMA_VERSION,
            "dataset_id": self.dataset_id,
            "generation_config": self.generation_config,
            "entries": [e.to_dict() for e in self.entries],
        }

    def for_image(self, image_id):
        return [e for e in self.entries if e.image_id == image_id]

    def variants(self, image_id, instance_id, usable_only=True):
        """Entries of one instance ordered by variant index."""
        found = [
            e for e in self.entries
            if e.image_id == image_id and e.instance_id == instance_id
            and not (usable_only and e.kept_original)
        ]
        return sorted(found, key=lambda e: e.variant_index)


def dumps_manifest(manifest):
    return json.dumps(manifest.to_dict(), indent=2, sort_keys=True) + "\n"


def write_manifest(manifest, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(dumps_manifest(manifest))
    tmp.replace(path)
    return path


def read_manifest(path) -> VariantManifest:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ManifestFormatError(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ManifestFormatError(f"{path}: top level is not an object")
    if doc.get("schema") != SCHEMA_VERSION:
        raise ManifestFormatError(f"{path}: schema {doc.get('schema')!r}, expected {SCHEMA_VERSION}")
    try:
        entries = tuple(VariantEntry.from_dict(e) for e in doc["entries"])
        return VariantManifest(str(doc["dataset_id"]), entries, dict(doc["generation_config"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise ManifestFormatError(f"{path}: {exc}") from exc


@dataclass
class ValidationReport:
    dangling: list = field(default_factory=list)
    missing_assets: list = field(default_factory=list)
    non_contiguous: list = field(default_factory=list)
    duplicates: list = field(default_factory=list)

    @property
    def ok(self):
        return not (self.dangling or self.missing_assets or self.non_contiguous or self.duplicates)

    def __bool__(self):
        return not self.ok

    def lines(self):
        out = []
        out += [f"dangling reference: {e.image_id}/{e.instance_id} variant {e.variant_index}" for e in self.dangling]
        out += [f"missing asset: {e.asset_path} ({e.image_id}/{e.instance_id} variant {e.variant_index})"
                for e in self.missing_assets]
        out += [f"non-contiguous variants for {img}/{inst}: {idx}" for img, inst, idx in self.non_contiguous]
        out += [f"duplicate entry: {k}" for k in self.duplicates]
        return out


def validate_manifest(manifest, dataset, root=None) -> ValidationReport:
    """Cross-check a manifest against its dataset.

    Asset files are checked relative to ``root`` when given; entries flagged
    ``kept_original`` need no asset.
    """
    report = ValidationReport()
    known = {(r.image_id, i.instance_id) for r in dataset for i in r.instances}
    indices = defaultdict(list)
    seen = set()
    for e in manifest.entries:
        if e.key in seen:
            report.duplicates.append(e.key)
        seen.add(e.key)
        if (e.image_id, e.instance_id) not in known:
            report.dangling.append(e)
        indices[(e.image_id, e.instance_id)].append(e.variant_index)
        if root is not None and not e.kept_original:
            if e.asset_path is None or not (Path(root) / e.asset_path).is_file():
                report.missing_assets.append(e)
    for (img, inst), idx in sorted(indices.items()):
        if sorted(set(idx)) != list(range(len(set(idx)))):
            report.non_contiguous.append((img, inst, sorted(idx)))
    return report
