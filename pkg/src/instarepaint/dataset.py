"""Annotated datasets: image records, instances and loaders.

Three on-disk layouts are understood:

* COCO-style detection JSON (polygon or RLE segmentation),
* VOC-style ``SegmentationObject`` / ``SegmentationClass`` palette PNGs,
* saliency-style image/map pairs (one object per image, named through a VQA
  backend).

Masks are stored densely as read-only ``bool`` arrays.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np
from PIL import Image

from .errors import DatasetLoadError, DatasetParseError, EmptyMaskError
from .raster import read_gray, read_indexed, read_rgb

logger = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".jpg", ".jpeg", ".png", ".bmp", ".tif", ".tiff", ".webp")

DEFAULT_SALIENCY_THRESHOLD = 127
OBJECT_NAME_QUESTION = "what is the object?"

VOC_CLASSES = (
    "background", "aeroplane", "bicycle", "bird", "boat", "bottle", "bus", "car",
    "cat", "chair", "cow", "diningtable", "dog", "horse", "motorbike", "person",
    "pottedplant", "sheep", "sofa", "train", "tvmonitor",
)


def normalize_label(label):
    return " ".join(str(label).split()).lower()


def bounding_rect(mask):
    """Tight inclusive ``(x0, y0, x1, y1)`` rectangle around the 1-pixels of ``mask``."""
    mask = np.asarray(mask, dtype=bool)
    rows = np.flatnonzero(mask.any(axis=1))
    if rows.size == 0:
        raise EmptyMaskError("bounding_rect of an empty mask")
    cols = np.flatnonzero(mask.any(axis=0))
    return (int(cols[0]), int(rows[0]), int(cols[-1]), int(rows[-1]))


def binarize(saliency, threshold=DEFAULT_SALIENCY_THRESHOLD):
    """Binarize an 8-bit saliency map with ``value > threshold``.

    Boolean input is returned unchanged so that binarization is idempotent.
    """
    arr = np.asarray(saliency)
    if arr.dtype == bool:
        return arr.copy()
    return arr > threshold


def _readonly(mask):
    mask = np.ascontiguousarray(mask, dtype=bool)
    mask.flags.writeable = False
    return mask


@dataclass(frozen=True, eq=False)
class Instance:
    """One annotated object: a binary mask plus a free-form class label."""

    instance_id: str
    mask: np.ndarray
    class_label: str
    bbox: tuple
    area: int

    @classmethod
    def from_mask(cls, instance_id, mask, class_label):
        mask = _readonly(mask)
        return cls(
            instance_id=str(instance_id),
            mask=mask,
            class_label=normalize_label(class_label),
            bbox=bounding_rect(mask),
            area=int(mask.sum()),
        )

    def __eq__(self, other):
        if not isinstance(other, Instance):
            return NotImplemented
        return (
            self.instance_id == other.instance_id
            and self.class_label == other.class_label
            and tuple(self.bbox) == tuple(other.bbox)
            and self.area == other.area
            and self.mask.shape == other.mask.shape
            and bool(np.array_equal(self.mask, other.mask))
        )

    __hash__ = None


@dataclass(frozen=True)
class ImageRecord:
    image_id: str
    path: Path
    width: int
    height: int
    instances: tuple = ()

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError(f"image {self.image_id}: invalid size {self.width}x{self.height}")
        ids = [inst.instance_id for inst in self.instances]
        if len(set(ids)) != len(ids):
            raise ValueError(f"image {self.image_id}: duplicate instance ids")
        for inst in self.instances:
            if inst.mask.shape != (self.height, self.width):
                raise ValueError(
                    f"image {self.image_id}: mask of {inst.instance_id} has shape "
                    f"{inst.mask.shape}, expected {(self.height, self.width)}"
                )

    def load_image(self):
        img = read_rgb(self.path)
        if img.shape[:2] != (self.height, self.width):
            raise DatasetLoadError(f"{self.path}: size {img.shape[1]}x{img.shape[0]} does not match record")
        return img

    def instance(self, instance_id):
        for inst in self.instances:
            if inst.instance_id == instance_id:
                return inst
        raise KeyError(instance_id)


@dataclass
class LoadReport:
    skipped: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    def warn(self, message, record=None):
        logger.warning(message)
        self.warnings.append(message)
        if record is not None:
            self.skipped.append(record)


@dataclass(frozen=True)
class Dataset:
    dataset_id: str
    records: tuple
    report: LoadReport = field(default_factory=LoadReport, compare=False)

    def __iter__(self) -> Iterator[ImageRecord]:
        return iter(self.records)

    def __len__(self):
        return len(self.records)

    def record(self, image_id) -> ImageRecord:
        for rec in self.records:
            if rec.image_id == image_id:
                return rec
        raise KeyError(image_id)

    @property
    def num_instances(self):
        return sum(len(r.instances) for r in self.records)


# --- COCO -----------------------------------------------------------------


def rasterize_polygon(coords, height, width):
    """Fill a polygon given as a flat ``[x0, y0, x1, y1, ...]`` list.

    A pixel is set when its center lies inside the polygon (even-odd rule),
    so the polygon ``(0,0)-(10,0)-(10,10)-(0,10)`` covers exactly 100 pixels.
    """
    pts = np.asarray(coords, dtype=np.float64).reshape(-1, 2)
    mask = np.zeros((height, width), dtype=bool)
    if len(pts) < 3:
        return mask
    x0, y0 = pts[:, 0], pts[:, 1]
    x1, y1 = np.roll(x0, -1), np.roll(y0, -1)
    row_lo = max(int(np.floor(pts[:, 1].min())) - 1, 0)
    row_hi = min(int(np.ceil(pts[:, 1].max())) + 1, height - 1)
    for r in range(row_lo, row_hi + 1):
        yc = r + 0.5
        crossing = (y0 <= yc) != (y1 <= yc)
        if not crossing.any():
            continue
        xs = x0[crossing] + (yc - y0[crossing]) * (x1[crossing] - x0[crossing]) / (y1[crossing] - y0[crossing])
        xs.sort()
        for a, b in zip(xs[0::2], xs[1::2]):
            c0 = max(int(np.ceil(a - 0.5)), 0)
            c1 = min(int(np.ceil(b - 0.5)), width)
            if c1 > c0:
                mask[r, c0:c1] = True
    return mask


def _rle_counts_from_string(s):
    counts = []
    p = 0
    while p < len(s):
        x = 0
        k = 0
        more = True
        while more:
            c = ord(s[p]) - 48
            x |= (c & 0x1F) << (5 * k)
            more = bool(c & 0x20)
            p += 1
            k += 1
            if not more and (c & 0x10):
                x |= -1 << (5 * k)
        if len(counts) > 2:
            x += counts[-2]
        counts.append(x)
    return counts


def decode_rle(rle):
    """Decode a COCO RLE dict (compressed string or uncompressed counts)."""
    h, w = (int(v) for v in rle["size"])
    counts = rle["counts"]
    if isinstance(counts, bytes):
        counts = counts.decode("ascii")
    if isinstance(counts, str):
        counts = _rle_counts_from_string(counts)
    flat = np.zeros(h * w, dtype=bool)
    pos = 0
    value = False
    for n in counts:
        n = int(n)
        if n < 0 or pos + n > h * w:
            raise ValueError("RLE counts exceed mask size")
        if value:
            flat[pos:pos + n] = True
        pos += n
        value = not value
    return flat.reshape((w, h)).T


def segmentation_to_mask(segmentation, height, width):
    if isinstance(segmentation, list):
        mask = np.zeros((height, width), dtype=bool)
        for poly in segmentation:
            if len(poly) % 2 or len(poly) < 6:
                raise ValueError(f"polygon with {len(poly)} coordinates")
            mask |= rasterize_polygon(poly, height, width)
        return mask
    if isinstance(segmentation, dict):
        size = [int(v) for v in segmentation.get("size", ())]
        if size != [height, width]:
            raise ValueError(f"RLE size {size} does not match image {height}x{width}")
        return decode_rle(segmentation)
    raise ValueError(f"unsupported segmentation type {type(segmentation).__name__}")


def _image_size(path):
    with Image.open(path) as im:
        return im.size


def load_coco(annotation_path, image_root, dataset_id=None, check_files=True) -> Dataset:
    """Load a COCO-style instance annotation file.

    Raises :class:`DatasetParseError` naming the offending record for
    structural problems and :class:`DatasetLoadError` listing every missing
    image file.
    """
    annotation_path = Path(annotation_path)
    image_root = Path(image_root)
    try:
        doc = json.loads(annotation_path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DatasetParseError(f"{annotation_path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise DatasetParseError(f"{annotation_path}: top level is not an object")
    for key in ("images", "annotations", "categories"):
        if not isinstance(doc.get(key), list):
            raise DatasetParseError(f"{annotation_path}: missing list '{key}'")

    categories = {}
    for i, cat in enumerate(doc["categories"]):
        try:
            categories[cat["id"]] = normalize_label(cat["name"])
        except (KeyError, TypeError) as exc:
            raise DatasetParseError(f"categories[{i}]: {exc!r}") from exc

    images = {}
    for i, img in enumerate(doc["images"]):
        try:
            images[img["id"]] = (str(img["file_name"]), int(img["width"]), int(img["height"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise DatasetParseError(f"images[{i}]: {exc!r}") from exc

    report = LoadReport()
    per_image = {image_id: [] for image_id in images}
    for i, ann in enumerate(doc["annotations"]):
        where = f"annotations[{i}] (id={ann.get('id') if isinstance(ann, dict) else None})"
        if not isinstance(ann, dict):
            raise DatasetParseError(f"{where}: not an object")
        if ann.get("image_id") not in images:
            raise DatasetParseError(f"{where}: unknown image_id {ann.get('image_id')!r}")
        if ann.get("category_id") not in categories:
            raise DatasetParseError(f"{where}: unknown category_id {ann.get('category_id')!r}")
        if "segmentation" not in ann or "id" not in ann:
            raise DatasetParseError(f"{where}: missing 'id' or 'segmentation'")
        _, w, h = images[ann["image_id"]]
        try:
            mask = segmentation_to_mask(ann["segmentation"], h, w)
        except (ValueError, KeyError, TypeError) as exc:
            raise DatasetParseError(f"{where}: bad segmentation: {exc}") from exc
        if not mask.any():
            report.warn(f"{where}: empty mask after rasterization, skipped", record=str(ann["id"]))
            continue
        per_image[ann["image_id"]].append(
            Instance.from_mask(str(ann["id"]), mask, categories[ann["category_id"]])
        )

    missing = []
    records = []
    for image_id, (file_name, w, h) in images.items():
        path = image_root / file_name
        if check_files:
            if not path.is_file():
                missing.append(str(path))
                continue
            actual = _image_size(path)
            if actual != (w, h):
                raise DatasetLoadError(f"{path}: size {actual} differs from annotation {(w, h)}")
        try:
            records.append(ImageRecord(str(image_id), path, w, h, tuple(per_image[image_id])))
        except ValueError as exc:
            raise DatasetParseError(str(exc)) from exc
    if missing:
        raise DatasetLoadError(f"{len(missing)} image file(s) missing: {', '.join(missing)}", missing)
    return Dataset(dataset_id or annotation_path.stem, tuple(records), report)


# --- VOC ------------------------------------------------------------------


def load_voc(image_dir, annotation_root, class_names: Sequence[str] = VOC_CLASSES, dataset_id=None) -> Dataset:
    """Load VOC-style instance segmentation.

    ``annotation_root`` must contain ``SegmentationObject/`` (instance index
    per pixel) and ``SegmentationClass/`` (class index per pixel) PNGs; index
    255 marks void boundaries and is ignored.
    """
    image_dir = Path(image_dir)
    root = Path(annotation_root)
    obj_dir, cls_dir = root / "SegmentationObject", root / "SegmentationClass"
    if not obj_dir.is_dir() or not cls_dir.is_dir():
        raise DatasetParseError(f"{root}: expected SegmentationObject/ and SegmentationClass/")
    report = LoadReport()
    records, missing = [], []
    for obj_path in sorted(obj_dir.glob("*.png")):
        stem = obj_path.stem
        image_path = _find_image(image_dir, stem)
        cls_path = cls_dir / obj_path.name
        if image_path is None:
            missing.append(str(image_dir / f"{stem}.jpg"))
            continue
        if not cls_path.is_file():
            raise DatasetParseError(f"{stem}: missing class map {cls_path}")
        obj = read_indexed(obj_path)
        cls = read_indexed(cls_path)
        if obj.shape != cls.shape:
            raise DatasetParseError(f"{stem}: object and class maps differ in size")
        w, h = _image_size(image_path)
        if obj.shape != (h, w):
            raise DatasetLoadError(f"{stem}: segmentation size differs from image")
        instances = []
        for idx in sorted(int(v) for v in np.unique(obj) if v not in (0, 255)):
            mask = obj == idx
            labels = cls[mask]
            labels = labels[(labels != 0) & (labels != 255)]
            if labels.size == 0:
                report.warn(f"{stem}: instance {idx} has no class pixels, skipped", record=f"{stem}/{idx}")
                continue
            label_idx = int(np.bincount(labels).argmax())
            if label_idx >= len(class_names):
                raise DatasetParseError(f"{stem}: class index {label_idx} outside class list")
            instances.append(Instance.from_mask(str(idx), mask, class_names[label_idx]))
        records.append(ImageRecord(stem, image_path, w, h, tuple(instances)))
    if missing:
        raise DatasetLoadError(f"{len(missing)} image file(s) missing: {', '.join(missing)}", missing)
    return Dataset(dataset_id or root.name, tuple(records), report)


def _find_image(directory, stem) -> Optional[Path]:
    for suffix in IMAGE_SUFFIXES:
        candidate = directory / f"{stem}{suffix}"
        if candidate.is_file():
            return candidate
    return None


# --- saliency -------------------------------------------------------------


def load_saliency_dataset(
    image_dir,
    mask_dir,
    vqa,
    threshold=DEFAULT_SALIENCY_THRESHOLD,
    question=OBJECT_NAME_QUESTION,
    dataset_id=None,
    fallback_label="object",
) -> Dataset:
    """Load image/saliency-map pairs, naming each object through ``vqa``.

    Each map is binarized with ``value > threshold``; the image is cropped to
    the mask's bounding rectangle and ``vqa.answer(crop, question)`` supplies
    the class label. Images whose map binarizes to nothing are skipped and
    listed in ``dataset.report``.
    """
    image_dir, mask_dir = Path(image_dir), Path(mask_dir)
    report = LoadReport()
    records, missing = [], []
    for image_path in sorted(p for p in image_dir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES):
        stem = image_path.stem
        map_path = _find_image(mask_dir, stem)
        if map_path is None:
            missing.append(str(mask_dir / f"{stem}.png"))
            continue
        saliency = read_gray(map_path)
        image = read_rgb(image_path)
        if saliency.shape != image.shape[:2]:
            raise DatasetLoadError(
                f"{stem}: saliency map {saliency.shape[::-1]} does not match image {image.shape[1::-1]}"
            )
        mask = binarize(saliency, threshold)
        if not mask.any():
            report.warn(f"{stem}: saliency map is empty after binarization, skipped", record=stem)
            continue
        x0, y0, x1, y1 = bounding_rect(mask)
        answer = normalize_label(vqa.answer(image[y0:y1 + 1, x0:x1 + 1], question))
        if not answer:
            report.warn(f"{stem}: empty object name from VQA, using '{fallback_label}'")
            answer = fallback_label
        h, w = mask.shape
        records.append(ImageRecord(stem, image_path, w, h, (Instance.from_mask("0", mask, answer),)))
    if missing:
        raise DatasetLoadError(f"{len(missing)} saliency map(s) missing: {', '.join(missing)}", missing)
    return Dataset(dataset_id or image_dir.name, tuple(records), report)
