"""End-to-end runs: augmentation, anonymization and the training-time sampler.

Runs write into an output directory::

    out/
      manifest.json              final, sorted manifest
      manifest.journal.jsonl     write-ahead record while a run is in progress
      assets/<image>/<inst>_v<k>.png
      masks/<image>/<inst>_v<k>.png   refined masks (saliency datasets)
      scene/<image>_depth.png + .json, scene/<image>_edge.png
      report.json, report.txt

The journal's first line holds the config hash; every later line is one
entry, flushed as soon as its instance is finished. ``resume=True`` reuses
the journal and skips finished ``(image, instance, variant)`` triples.
"""

import json
import logging
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .assets import AssetStore, safe_name
from .config import PipelineConfig, config_hash
from .errors import GenerationError, ResumeError
from .manifest import SMALL_OBJECT, VariantEntry, VariantManifest, sort_entries, write_manifest
from .prompting import Lexicon, PromptBuilder, build_prompt
from .rendering import ORIGINAL, assemble_image, generate_variants, refine_entry
from .scene import SceneCache, analyze_scene, draw_order, load_depth_map, save_depth_map, save_edge_map
from .seeding import derive_seed, prompt_rng

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
JOURNAL_NAME = "manifest.journal.jsonl"

__all__ = [
    "RunReport", "TrainingView", "derive_seed", "run_augmentation", "run_anonymization",
    "sample_training_view", "image_draw_order",
]


@dataclass
class RunReport:
    mode: str = "augmentation"
    master_seed: int = 0
    images_processed: int = 0
    instances_processed: int = 0
    entries_written: int = 0
    kept_original: int = 0
    small_objects: int = 0
    refinement_failures: list = field(default_factory=list)
    backend_failures: list = field(default_factory=list)
    prompt_failures: list = field(default_factory=list)
    anonymization_failures: list = field(default_factory=list)
    resumed_entries: int = 0
    wall_clock_s: float = 0.0

    @property
    def failed(self):
        return bool(self.backend_failures or self.anonymization_failures)

    @property
    def exit_status(self):
        return 2 if self.failed else 0

    def to_dict(self):
        d = dict(self.__dict__)
        d["exit_status"] = self.exit_status
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_text(self):
        lines = [
            f"{self.mode} run (master seed {self.master_seed})",
            f"  images processed:    {self.images_processed}",
            f"  instances processed: {self.instances_processed}",
            f"  entries written:     {self.entries_written} ({self.resumed_entries} resumed)",
            f"  kept original:       {self.kept_original}",
            f"  small objects:       {self.small_objects}",
            f"  wall clock:          {self.wall_clock_s:.2f} s",
        ]
        for title, items in (("backend failures", self.backend_failures),
                             ("anonymization failures", self.anonymization_failures),
                             ("refinement failures", self.refinement_failures),
                             ("prompt failures", self.prompt_failures)):
            if items:
                lines.append(f"  {title}:")
                lines += [f"    - {item if isinstance(item, str) else json.dumps(item, sort_keys=True)}"
                          for item in items]
        return "\n".join(lines) + "\n"

    def write(self, out_dir):
        out_dir = Path(out_dir)
        (out_dir / "report.json").write_text(self.to_json())
        (out_dir / "report.txt").write_text(self.to_text())


class _Journal:
    """Append-only entry log guarded by a lock; the single sink for finished entries."""

    def __init__(self, path, digest, resume):
        self.path = Path(path) if path is not None else None
        self.lock = threading.Lock()
        self.previous = []
        if self.path is None:
            return
        if resume and self.path.exists():
            lines = self.path.read_text().splitlines()
            header = json.loads(lines[0]) if lines else {}
            if header.get("config_hash") != digest:
                raise ResumeError(f"{self.path}: journal was written with a different configuration")
            for line in lines[1:]:
                try:
                    self.previous.append(VariantEntry.from_dict(json.loads(line)))
                except (ValueError, KeyError):
                    logger.warning("ignoring torn journal line")
            self.path.write_text("".join(l + "\n" for l in lines[: 1 + len(self.previous)]))
        else:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text(json.dumps({"config_hash": digest}) + "\n")

    def append(self, entries):
        if self.path is None:
            return
        with self.lock, open(self.path, "a") as fh:
            for e in entries:
                fh.write(json.dumps(e.to_dict(), sort_keys=True) + "\n")
            fh.flush()
            os.fsync(fh.fileno())

    def close(self):
        if self.path is not None and self.path.exists():
            self.path.unlink()


def _prompt_builder(config):
    lexicon = Lexicon.load(config.lexicon_path)
    return PromptBuilder(lexicon, config.appearance, config.use_lemmas, config.person_aliases,
                         config.action_question)


def _prompts_for(record, image, instances, builder, backends, config, K, failures):
    prompts = {}
    for inst in instances:
        action = builder.action_for(image, inst, backends.vqa, failures)
        prompts[inst.instance_id] = [
            build_prompt(builder.spec_for(inst, prompt_rng(config.master_seed, record.image_id,
                                                           inst.instance_id, k), action))
            for k in range(K)
        ]
    return prompts


def _save_scene(store, image_id, scene):
    if store.root is None:
        return
    depth, edge = scene
    save_depth_map(store.root / "scene" / f"{safe_name(image_id)}_depth.png", depth)
    save_edge_map(store.root / "scene" / f"{safe_name(image_id)}_edge.png", edge)


def _run(dataset, config, backends, mode, out_dir, resume, jobs, targets_only):
    started = time.perf_counter()
    gen_config = config.generation_config(mode, backends)
    digest = config_hash(gen_config)
    out_dir = Path(out_dir) if out_dir is not None else None
    store = AssetStore(out_dir)
    journal = _Journal(out_dir / JOURNAL_NAME if out_dir else None, digest, resume)
    done_keys = {e.key for e in journal.previous}
    K = 1 if targets_only else config.K
    small_threshold = (config.small_object_threshold
                       if targets_only or config.small_objects_in_augmentation else None)
    builder = _prompt_builder(config)
    cache = SceneCache()
    report = RunReport(mode=mode, master_seed=config.master_seed, resumed_entries=len(journal.previous))
    fresh = []
    lock = threading.Lock()

    def finish_instance(record, inst, entries):
        out = []
        for e in entries:
            if config.refine_masks and backends.saliency is not None:
                failures = []
                e = refine_entry(e, inst, store, backends.saliency, config.saliency_threshold, failures)
                with lock:
                    report.refinement_failures += failures
            out.append(e)
        journal.append(out)
        with lock:
            fresh.extend(out)

    def process(record):
        if targets_only:
            instances = [i for i in record.instances if i.class_label in config.target_classes]
        else:
            instances = list(record.instances)
        pending = [i for i in instances if any((record.image_id, i.instance_id, k) not in done_keys
                                               for k in range(K))]
        with lock:
            report.images_processed += 1
            report.instances_processed += len(instances)
        if not pending:
            return
        try:
            image = record.load_image()
            scene = analyze_scene(image, backends.depth, backends.edge, record.image_id, cache)
            _save_scene(store, record.image_id, scene)
            prompt_failures = []
            prompts = _prompts_for(record, image, pending, builder, backends, config, K, prompt_failures)
            by_id = {i.instance_id: i for i in pending}
            generate_variants(
                record, scene, prompts, backends.inpaint, backends.nsfw, K, config.max_attempts,
                image=image, master_seed=config.master_seed, store=store,
                small_object_threshold=small_threshold, small_object_target=config.small_object_target,
                context_px=config.small_object_context, instance_ids=set(by_id), skip=done_keys,
                on_instance=lambda entries: finish_instance(record, by_id[entries[0].instance_id], entries),
                negative_hint=config.negative_hint,
            )
            with lock:
                report.prompt_failures += prompt_failures
        except GenerationError as exc:
            logger.error("image %s: %s", record.image_id, exc)
            with lock:
                report.backend_failures.append({"image_id": record.image_id, "error": str(exc)})
        except Exception as exc:
            logger.error("image %s failed: %s", record.image_id, exc)
            with lock:
                report.backend_failures.append({"image_id": record.image_id, "error": f"{type(exc).__name__}: {exc}"})

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            list(pool.map(process, dataset.records))
    else:
        for record in dataset.records:
            process(record)

    entries = sort_entries(list(journal.previous) + fresh)
    manifest = VariantManifest(dataset.dataset_id, entries, gen_config)
    report.entries_written = len(entries)
    report.kept_original = sum(e.kept_original for e in entries)
    report.small_objects = sum(SMALL_OBJECT in e.flags for e in entries)
    if targets_only:
        report.anonymization_failures = [
            {"image_id": e.image_id, "instance_id": e.instance_id, "nsfw_attempts": e.nsfw_attempts}
            for e in entries if e.kept_original
        ]
    report.wall_clock_s = time.perf_counter() - started
    if out_dir is not None:
        write_manifest(manifest, out_dir / MANIFEST_NAME)
        journal.close()
        report.write(out_dir)
    return manifest, report


def run_augmentation(dataset, config: PipelineConfig, backends, out_dir=None, resume=False, jobs=1):
    """Generate ``config.K`` variants for every instance of every image.

    Returns ``(manifest, report)``. Failures are isolated per image and
    listed in ``report.backend_failures``; entries finished before a failure
    are kept. Variants that exhaust the NSFW retries stay in the manifest
    flagged ``kept_original``.
    """
    return _run(dataset, config, backends, "augmentation", out_dir, resume, jobs, targets_only=False)


def run_anonymization(dataset, config: PipelineConfig, backends, out_dir=None, resume=False, jobs=1):
    """Repaint every instance whose class is in ``config.target_classes`` exactly once.

    Small instances always go through the crop/upsample path. A target left
    ``kept_original`` is an anonymization failure and makes
    ``report.exit_status`` nonzero.
    """
    if not config.target_classes:
        raise ValueError("anonymization needs at least one target class")
    return _run(dataset, config, backends, "anonymization", out_dir, resume, jobs, targets_only=True)


def image_draw_order(record, store=None, depth=None, mode="sum"):
    """Back-to-front order for ``record`` from a depth map or the run's scene cache.

    Falls back to annotation order when no depth is available.
    """
    if depth is None and store is not None and store.root is not None:
        path = store.root / "scene" / f"{safe_name(record.image_id)}_depth.png"
        if path.exists():
            depth = load_depth_map(path)
    if depth is None:
        return list(range(len(record.instances)))
    return draw_order(record.instances, depth, mode)


def anonymized_image(record, manifest, store, order=None, image=None, feather_radius=0):
    """Original image with every accepted anonymization variant composited in."""
    if not isinstance(store, AssetStore):
        store = AssetStore(store)
    choice = []
    for inst in record.instances:
        variants = manifest.variants(record.image_id, inst.instance_id)
        choice.append(variants[0].variant_index if variants else ORIGINAL)
    if order is None:
        order = image_draw_order(record, store, mode=manifest.generation_config.get("depth_mode", "sum"))
    return assemble_image(record, manifest, choice, order, store, image, feather_radius)


@dataclass
class TrainingView:
    image: np.ndarray
    instances: tuple
    choice: tuple
    fallbacks: int = 0


def sample_training_view(record, manifest, p, rng, store, order=None, image=None, feather_radius=0):
    """Draw one training image: each instance is repainted with probability ``p``.

    A repainted instance uses a variant drawn uniformly from its usable
    variants; an instance with none falls back to the original (counted in
    ``fallbacks``). Annotations are returned untouched.
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must lie in [0, 1]")
    if not isinstance(store, AssetStore):
        store = AssetStore(store)
    choice = []
    fallbacks = 0
    for inst in record.instances:
        if rng.random() < p:
            variants = manifest.variants(record.image_id, inst.instance_id)
            if variants:
                choice.append(variants[int(rng.integers(len(variants)))].variant_index)
                continue
            fallbacks += 1
        choice.append(ORIGINAL)
    if order is None:
        order = image_draw_order(record, store, mode=manifest.generation_config.get("depth_mode", "sum"))
    out = assemble_image(record, manifest, choice, order, store, image, feather_radius)
    return TrainingView(out, record.instances, tuple(choice), fallbacks)
