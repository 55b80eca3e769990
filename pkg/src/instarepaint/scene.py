"""Image-level depth and edge maps, per-instance depth, and draw order."""

import json
import threading
from pathlib import Path

import numpy as np

from .errors import AnalysisError, DimensionError
from .raster import read_gray, write_png

DEPTH_MODES = ("sum", "mean")


def instance_depth(mask, depth, mode="sum"):
    """Depth estimate of one instance.

    ``sum`` is the mask-weighted sum of the depth map over all pixels;
    ``mean`` divides it by the mask area (0 for an empty mask).
    """
    mask = np.asarray(mask, dtype=bool)
    depth = np.asarray(depth, dtype=np.float64)
    if mask.shape != depth.shape:
        raise DimensionError(f"mask shape {mask.shape} != depth shape {depth.shape}")
    if mode not in DEPTH_MODES:
        raise ValueError(f"unknown depth mode {mode!r}")
    total = float(depth[mask].sum())
    if mode == "sum":
        return total
    area = int(mask.sum())
    return total / area if area else 0.0


def draw_order(instances, depth, mode="sum"):
    """Indices of ``instances`` back to front (descending depth).

    Ties are broken by ascending ``instance_id`` so the order is
    reproducible.
    """
    keyed = [
        (-instance_depth(inst.mask, depth, mode), inst.instance_id, i)
        for i, inst in enumerate(instances)
    ]
    keyed.sort(key=lambda t: (t[0], t[1]))
    return [i for _, _, i in keyed]


def _check_map(values, shape, what, backend, image_id):
    values = np.asarray(values, dtype=np.float64)
    if values.shape != shape:
        raise AnalysisError(
            f"{what} backend {backend} returned shape {values.shape} for image {image_id}, expected {shape}",
            backend=backend, image_id=image_id,
        )
    if not np.all(np.isfinite(values)):
        raise AnalysisError(f"{what} backend {backend} returned non-finite values", backend, image_id)
    return values


def to_depth_map(raw, larger_is_farther=True):
    """Normalize a backend depth raster to the nonnegative, larger = farther convention."""
    raw = np.asarray(raw, dtype=np.float64)
    if not larger_is_farther:
        raw = raw.max() - raw
    lo = raw.min()
    if lo < 0:
        raw = raw - lo
    return raw


class SceneCache:
    """Per-run cache of ``(depth, edge)`` keyed by image id; safe for concurrent use."""

    def __init__(self):
        self._data = {}
        self._lock = threading.Lock()

    def get(self, image_id):
        with self._lock:
            return self._data.get(image_id)

    def put(self, image_id, value):
        with self._lock:
            return self._data.setdefault(image_id, value)

    def __len__(self):
        return len(self._data)


def analyze_scene(image, depth_backend, edge_backend, image_id=None, cache=None):
    """Run the depth and edge backends on ``image``.

    Returns ``(depth, edge)`` at full image resolution; depth is nonnegative
    with larger = farther, edges are clipped to ``[0, 1]``.
    """
    if cache is not None and image_id is not None:
        hit = cache.get(image_id)
        if hit is not None:
            return hit
    shape = np.asarray(image).shape[:2]
    depth_name = depth_backend.descriptor.name
    edge_name = edge_backend.descriptor.name
    try:
        raw_depth = depth_backend.estimate(image)
    except AnalysisError:
        raise
    except Exception as exc:
        raise AnalysisError(f"depth backend {depth_name} failed on image {image_id}: {exc}",
                            depth_name, image_id) from exc
    depth = _check_map(raw_depth, shape, "depth", depth_name, image_id)
    depth = to_depth_map(depth, getattr(depth_backend, "larger_is_farther", True))
    try:
        raw_edge = edge_backend.detect(image)
    except Exception as exc:
        raise AnalysisError(f"edge backend {edge_name} failed on image {image_id}: {exc}",
                            edge_name, image_id) from exc
    edge = np.clip(_check_map(raw_edge, shape, "edge", edge_name, image_id), 0.0, 1.0)
    result = (depth, edge)
    if cache is not None and image_id is not None:
        result = cache.put(image_id, result)
    return result


def save_depth_map(path, depth):
    """Store depth as a 16-bit PNG with a JSON sidecar holding the value range."""
    path = Path(path)
    depth = np.asarray(depth, dtype=np.float64)
    lo, hi = float(depth.min()), float(depth.max())
    scaled = np.zeros(depth.shape) if hi == lo else (depth - lo) / (hi - lo) * 65535
    write_png(path, np.rint(scaled).astype(np.uint16))
    sidecar = path.with_suffix(".json")
    sidecar.write_text(json.dumps({"min": lo, "max": hi, "convention": "larger_is_farther"}, sort_keys=True))
    return path


def load_depth_map(path):
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    raw = read_gray(path).astype(np.float64)
    return meta["min"] + raw / 65535.0 * (meta["max"] - meta["min"])


def save_edge_map(path, edge):
    write_png(path, np.rint(np.clip(edge, 0, 1) * 255).astype(np.uint8))
    return Path(path)


def load_edge_map(path):
    return read_gray(path).astype(np.float64) / 255.0
