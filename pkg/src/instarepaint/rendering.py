"""Repainting and recombination of instances.

Each instance is generated independently from the *original* image, and an
output image is assembled by compositing the chosen generations over the
original in back-to-front order::

    out_0 = original
    out_i = out_{i-1} * (1 - M_i) + G(original, M_i, T_i) * M_i

With binary masks this is pure per-pixel selection. ``iterative_redraw``
implements the alternative that feeds each output back into the
generator; it exists to measure how much that degrades the image.
"""

import logging
from dataclasses import dataclass, replace
from itertools import product

import cv2
import numpy as np
from scipy import ndimage

from .assets import AssetStore, asset_relpath, mask_relpath
from .backends.base import GenerationRequest
from .dataset import bounding_rect, binarize
from .errors import AssemblyError, DimensionError, EmptyMaskError, GenerationError, PreconditionError
from .manifest import KEPT_ORIGINAL, REFINED, SMALL_OBJECT, VariantEntry
from .raster import resize_area, resize_bilinear
from .seeding import derive_seed

logger = logging.getLogger(__name__)

ORIGINAL = None
SMALL_OBJECT_AREA = 32 * 32
SMALL_OBJECT_TARGET = 512
SMALL_OBJECT_CONTEXT = 64


def _check_same_size(*arrays):
    shapes = {np.asarray(a).shape[:2] for a in arrays}
    if len(shapes) != 1:
        raise DimensionError(f"raster sizes differ: {sorted(shapes)}")


def feather_weights(mask, radius):
    """Blend weights ramping linearly across ``radius`` px centred on the mask boundary."""
    mask = np.asarray(mask, dtype=bool)
    inside = ndimage.distance_transform_edt(mask)
    outside = ndimage.distance_transform_edt(~mask)
    signed = np.where(mask, inside - 0.5, 0.5 - outside)
    return np.clip(0.5 + signed / (2.0 * radius), 0.0, 1.0)


def composite(base, generated, mask, feather_radius=0):
    """Take ``generated`` where ``mask`` is set and ``base`` elsewhere.

    With ``feather_radius == 0`` this is an exact per-pixel select.
    """
    base = np.asarray(base)
    generated = np.asarray(generated)
    mask = np.asarray(mask, dtype=bool)
    _check_same_size(base, generated, mask)
    if base.shape != generated.shape:
        raise DimensionError(f"base {base.shape} and generated {generated.shape} differ")
    if feather_radius <= 0:
        sel = mask[..., None] if base.ndim == 3 else mask
        return np.where(sel, generated, base)
    alpha = feather_weights(mask, feather_radius)
    if base.ndim == 3:
        alpha = alpha[..., None]
    out = base.astype(np.float64) * (1.0 - alpha) + generated.astype(np.float64) * alpha
    return np.clip(np.rint(out), 0, 255).astype(base.dtype)


def count_variations(n_instances, variants_per_instance):
    """Number of distinct choice vectors: ``(V + 1) ** N``."""
    if n_instances < 0 or variants_per_instance < 0:
        raise ValueError("counts must be nonnegative")
    return (int(variants_per_instance) + 1) ** int(n_instances)


def enumerate_choices(available):
    """All choice vectors for per-instance variant counts ``available``."""
    return product(*[(ORIGINAL, *range(v)) for v in available])


def check_choice(choice, available):
    if len(choice) != len(available):
        raise ValueError(f"choice has {len(choice)} entries for {len(available)} instances")
    for c, v in zip(choice, available):
        if c is not ORIGINAL and not 0 <= c < v:
            raise ValueError(f"variant index {c} outside 0..{v - 1}")


def assemble_image(record, manifest, choice, order, store, image=None, feather_radius=0):
    """Recombine chosen variants over the original image.

    ``choice[i]`` selects a variant index for ``record.instances[i]`` or
    ``ORIGINAL`` (``None``); ``order`` lists instance indices back to front.
    Asset paths are resolved through ``store`` (an :class:`AssetStore` or a
    directory path).
    """
    if not isinstance(store, AssetStore):
        store = AssetStore(store)
    if len(choice) != len(record.instances):
        raise ValueError(f"choice has {len(choice)} entries for {len(record.instances)} instances")
    out = record.load_image() if image is None else np.asarray(image)
    out = out.copy()
    by_key = {e.key: e for e in manifest.entries if e.image_id == record.image_id}
    for idx in order:
        k = choice[idx]
        if k is ORIGINAL:
            continue
        inst = record.instances[idx]
        entry = by_key.get((record.image_id, inst.instance_id, k))
        if entry is None or entry.kept_original:
            raise AssemblyError(f"no usable variant {k} for {record.image_id}/{inst.instance_id}")
        if not store.exists(entry.asset_path):
            raise AssemblyError(
                f"asset {entry.asset_path} missing for {record.image_id}/{inst.instance_id} variant {k}"
            )
        generated = store.get_image(entry.asset_path)
        out = composite(out, generated, inst.mask, feather_radius)
    return out


def _blank_controls(shape):
    return np.zeros(shape, dtype=np.float64), np.zeros(shape, dtype=np.float64)


def iterative_redraw(image, instances, prompts, backend, seeds, scene=None):
    """Redraw instances one after another, each step starting from the previous output."""
    current = np.asarray(image, dtype=np.uint8).copy()
    depth, edge = scene if scene is not None else _blank_controls(current.shape[:2])
    for step, (inst, prompt, seed) in enumerate(zip(instances, prompts, seeds)):
        req = GenerationRequest(current, inst.mask, prompt, depth, edge, int(seed),
                                context={"instance_id": inst.instance_id, "step": step})
        try:
            current = np.asarray(backend.inpaint(req), dtype=np.uint8)
        except Exception as exc:
            raise GenerationError(f"iterative redraw failed at step {step}: {exc}", step=step) from exc
    return current


def independent_redraw(image, instances, prompts, backend, seeds, order=None, scene=None, feather_radius=0):
    """Redraw every instance from the original image and composite back to front."""
    original = np.asarray(image, dtype=np.uint8)
    depth, edge = scene if scene is not None else _blank_controls(original.shape[:2])
    out = original.copy()
    order = range(len(instances)) if order is None else order
    for idx in order:
        inst = instances[idx]
        req = GenerationRequest(original, inst.mask, prompts[idx], depth, edge, int(seeds[idx]),
                                context={"instance_id": inst.instance_id})
        try:
            generated = np.asarray(backend.inpaint(req), dtype=np.uint8)
        except Exception as exc:
            raise GenerationError(f"redraw failed for instance {idx}: {exc}", step=idx) from exc
        out = composite(out, generated, inst.mask, feather_radius)
    return out


@dataclass(frozen=True)
class PlacementTransform:
    """Maps a square crop at ``(x0, y0)`` with side ``side`` to a ``size`` x ``size`` raster."""

    x0: int
    y0: int
    side: int
    size: int

    @property
    def scale(self):
        return self.size / self.side

    def to_crop(self, x, y):
        """Full-image pixel-center coordinates to crop coordinates."""
        return ((np.asarray(x) + 0.5 - self.x0) * self.scale - 0.5,
                (np.asarray(y) + 0.5 - self.y0) * self.scale - 0.5)

    def to_image(self, u, v):
        return ((np.asarray(u) + 0.5) / self.scale - 0.5 + self.x0,
                (np.asarray(v) + 0.5) / self.scale - 0.5 + self.y0)

    def crop(self, raster):
        return np.asarray(raster)[self.y0:self.y0 + self.side, self.x0:self.x0 + self.side]

    def forward_image(self, image):
        return resize_bilinear(self.crop(image), self.size, self.size)

    def forward_float(self, values):
        return resize_bilinear(self.crop(values).astype(np.float32), self.size, self.size).astype(np.float64)

    def forward_mask(self, mask):
        crop = self.crop(mask).astype(np.uint8)
        return cv2.resize(crop, (self.size, self.size), interpolation=cv2.INTER_NEAREST_EXACT).astype(bool)

    def inverse_mask(self, mask):
        small = cv2.resize(np.asarray(mask, np.uint8), (self.side, self.side),
                           interpolation=cv2.INTER_NEAREST_EXACT).astype(bool)
        return small

    def paste_back(self, full_image, generated):
        """Downsample ``generated`` to the crop size and paste it into a copy of ``full_image``."""
        out = np.array(full_image, copy=True)
        out[self.y0:self.y0 + self.side, self.x0:self.x0 + self.side] = resize_area(generated, self.side, self.side)
        return out


def prepare_small_object(image, instance, threshold_area=SMALL_OBJECT_AREA, target=SMALL_OBJECT_TARGET,
                         context=SMALL_OBJECT_CONTEXT):
    """Square crop around a small instance, upsampled to ``target`` px.

    The crop side is ``max(longest bbox side, context)`` clamped to the image,
    centred on the box and shifted to stay inside the image. Returns the
    upsampled crop and the :class:`PlacementTransform` used to paste results
    back.
    """
    if instance.area >= threshold_area:
        raise PreconditionError(f"instance area {instance.area} is not below {threshold_area}")
    x0, y0, x1, y1 = instance.bbox
    bw, bh = x1 - x0 + 1, y1 - y0 + 1
    if instance.area <= 0 or bw <= 0 or bh <= 0:
        raise EmptyMaskError(f"instance {instance.instance_id} has a degenerate box")
    h, w = np.asarray(image).shape[:2]
    side = min(max(bw, bh, context), h, w)
    cx, cy = (x0 + x1 + 1) / 2.0, (y0 + y1 + 1) / 2.0
    left = int(np.clip(round(cx - side / 2.0), 0, w - side))
    top = int(np.clip(round(cy - side / 2.0), 0, h - side))
    transform = PlacementTransform(left, top, int(side), int(target))
    return transform.forward_image(image), transform


def build_request(image, instance, scene, prompt, seed, small_object_threshold=None,
                  small_object_target=SMALL_OBJECT_TARGET, context_px=SMALL_OBJECT_CONTEXT, negative_hint=None,
                  context=None):
    """Build the generation request for one instance; returns ``(request, transform or None)``."""
    depth, edge = scene
    ctx = dict(context or {})
    if small_object_threshold is not None and instance.area < small_object_threshold:
        crop, transform = prepare_small_object(image, instance, small_object_threshold, small_object_target,
                                               context_px)
        req = GenerationRequest(
            crop, transform.forward_mask(instance.mask), prompt,
            transform.forward_float(depth), np.clip(transform.forward_float(edge), 0, 1),
            seed, negative_hint, ctx,
        )
        return req, transform
    return GenerationRequest(image, instance.mask, prompt, depth, edge, seed, negative_hint, ctx), None


def _masked_region(asset, mask):
    x0, y0, x1, y1 = bounding_rect(mask)
    return asset[y0:y1 + 1, x0:x1 + 1]


def generate_variants(record, scene, prompts, backend, nsfw, K, max_attempts=5, *, image=None, master_seed=0,
                      store=None, small_object_threshold=None, small_object_target=SMALL_OBJECT_TARGET,
                      context_px=SMALL_OBJECT_CONTEXT, instance_ids=None, skip=(), on_instance=None,
                      negative_hint=None):
    """Generate ``K`` NSFW-checked variants of every instance of ``record``.

    ``prompts`` maps instance id to one prompt or to a list of ``K`` prompts.
    Every generation starts from the original image. A variant that fails
    the NSFW check is regenerated with a fresh derived seed up to
    ``max_attempts`` times; after that it is recorded with the
    ``kept_original`` flag and no asset. Keys in ``skip`` are not generated.

    ``on_instance(entries)`` is called once per finished instance. A backend
    exception is raised as :class:`GenerationError` whose ``partial`` lists
    the entries finished so far.
    """
    if K < 1 or max_attempts < 1:
        raise ValueError("K and max_attempts must be >= 1")
    store = store if store is not None else AssetStore()
    image = record.load_image() if image is None else np.asarray(image, dtype=np.uint8)
    skip = set(skip)
    entries = []
    for inst in record.instances:
        if instance_ids is not None and inst.instance_id not in instance_ids:
            continue
        inst_prompts = prompts[inst.instance_id]
        if isinstance(inst_prompts, str):
            inst_prompts = [inst_prompts] * K
        done = []
        for k in range(K):
            key = (record.image_id, inst.instance_id, k)
            if key in skip:
                continue
            prompt = inst_prompts[k]
            entry = None
            for attempt in range(max_attempts):
                seed = derive_seed(master_seed, record.image_id, inst.instance_id, k, attempt)
                ctx = {"image_id": record.image_id, "instance_id": inst.instance_id,
                       "variant_index": k, "attempt": attempt}
                try:
                    req, transform = build_request(image, inst, scene, prompt, seed, small_object_threshold,
                                                   small_object_target, context_px, negative_hint, ctx)
                    generated = np.asarray(backend.inpaint(req), dtype=np.uint8)
                    if generated.shape[:2] != req.size:
                        raise DimensionError(f"backend returned {generated.shape[:2]}, expected {req.size}")
                except Exception as exc:
                    raise GenerationError(
                        f"generation failed for {record.image_id}/{inst.instance_id} variant {k}: {exc}",
                        partial=entries + done,
                    ) from exc
                asset = transform.paste_back(image, generated) if transform is not None else generated
                flags = {SMALL_OBJECT} if transform is not None else set()
                verdict = nsfw.check(_masked_region(asset, inst.mask))
                if verdict.passed:
                    path = store.put_image(asset_relpath(record.image_id, inst.instance_id, k), asset)
                    entry = VariantEntry(record.image_id, inst.instance_id, k, path, prompt, seed,
                                         None, attempt + 1, frozenset(flags))
                    break
                logger.info("nsfw fail %s/%s v%d attempt %d", record.image_id, inst.instance_id, k, attempt + 1)
            if entry is None:
                entry = VariantEntry(record.image_id, inst.instance_id, k, None, prompt, seed, None,
                                     max_attempts, frozenset(flags | {KEPT_ORIGINAL}))
            done.append(entry)
        entries.extend(done)
        if on_instance is not None and done:
            on_instance(done)
    return entries


def refine_mask(generated_asset, instance, saliency_backend, threshold=127, failures=None):
    """Re-segment a generated object inside the original mask's bounding box.

    Returns the full-frame refined mask, or ``None`` when the backend fails
    or returns an empty mask (the failure is appended to ``failures``).
    """
    x0, y0, x1, y1 = bounding_rect(instance.mask)
    crop = np.asarray(generated_asset)[y0:y1 + 1, x0:x1 + 1]
    hint = instance.mask[y0:y1 + 1, x0:x1 + 1]
    try:
        saliency = np.asarray(saliency_backend.predict(crop, hint))
        if saliency.shape[:2] != crop.shape[:2]:
            raise DimensionError(f"saliency map {saliency.shape[:2]} != crop {crop.shape[:2]}")
        refined_crop = binarize(saliency, threshold)
        if not refined_crop.any():
            raise EmptyMaskError("refined mask is empty")
    except Exception as exc:
        logger.warning("mask refinement failed for %s: %s", instance.instance_id, exc)
        if failures is not None:
            failures.append(f"refine {instance.instance_id}: {exc}")
        return None
    full = np.zeros(instance.mask.shape, dtype=bool)
    full[y0:y1 + 1, x0:x1 + 1] = refined_crop
    return full


def refine_entry(entry, instance, store, saliency_backend, threshold=127, failures=None):
    """Run :func:`refine_mask` for a stored variant and record the result on the entry."""
    if entry.kept_original or entry.asset_path is None:
        return entry
    refined = refine_mask(store.get_image(entry.asset_path), instance, saliency_backend, threshold, failures)
    if refined is None:
        return entry
    path = store.put_mask(mask_relpath(entry.image_id, entry.instance_id, entry.variant_index), refined)
    return replace(entry, refined_mask_path=path, flags=frozenset(entry.flags | {REFINED}))
