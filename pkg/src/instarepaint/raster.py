"""Small raster helpers: PNG I/O, resampling and luminance.

RGB rasters are ``uint8`` arrays of shape ``(H, W, 3)``; binary masks are
``bool`` arrays of shape ``(H, W)``.
"""

from pathlib import Path

import cv2
import numpy as np
from PIL import Image

LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])


def read_rgb(path):
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()


def read_gray(path):
    """Read a single-channel 8-bit image (saliency maps, masks)."""
    with Image.open(path) as im:
        if im.mode not in ("L", "P", "1", "I", "I;16"):
            im = im.convert("L")
        if im.mode == "1":
            im = im.convert("L")
        return np.asarray(im).copy()


def read_indexed(path):
    """Read a palette PNG as raw indices (VOC segmentation files)."""
    with Image.open(path) as im:
        if im.mode != "P":
            im = im.convert("L")
        return np.asarray(im).copy()


def write_png(path, array):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    array = np.asarray(array)
    if array.dtype == np.uint16:
        Image.fromarray(array).save(path, format="PNG")
    else:
        Image.fromarray(np.ascontiguousarray(array.astype(np.uint8))).save(path, format="PNG")


def write_mask(path, mask):
    write_png(path, np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8))


def read_mask(path):
    return read_gray(path) > 127


def resize_bilinear(array, width, height):
    """Bilinear resampling with half-pixel centers; dtype is preserved.

    Integer inputs are computed in float and rounded, so constant rasters
    stay exactly constant.
    """
    src = np.asarray(array)
    out = cv2.resize(src.astype(np.float32), (int(width), int(height)), interpolation=cv2.INTER_LINEAR)
    if src.ndim == 3 and out.ndim == 2:
        out = out[:, :, None]
    if np.issubdtype(src.dtype, np.integer):
        info = np.iinfo(src.dtype)
        return np.clip(np.rint(out), info.min, info.max).astype(src.dtype)
    return out.astype(src.dtype)


def resize_area(array, width, height):
    """Area-averaging downsample (exact block mean for integer factors)."""
    src = np.asarray(array)
    out = cv2.resize(src.astype(np.float32), (int(width), int(height)), interpolation=cv2.INTER_AREA)
    if src.ndim == 3 and out.ndim == 2:
        out = out[:, :, None]
    if np.issubdtype(src.dtype, np.integer):
        info = np.iinfo(src.dtype)
        return np.clip(np.rint(out), info.min, info.max).astype(src.dtype)
    return out.astype(src.dtype)


def resize_nearest(mask, width, height):
    src = np.asarray(mask)
    out = cv2.resize(src.astype(np.uint8), (int(width), int(height)), interpolation=cv2.INTER_NEAREST)
    return out.astype(src.dtype)


def luminance(image):
    """BT.601 luma as float64; 2-D input is returned as float unchanged."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 2:
        return img
    return img[..., :3] @ LUMA_WEIGHTS


def ensure_rgb(image):
    img = np.asarray(image)
    if img.ndim == 2:
        img = np.repeat(img[:, :, None], 3, axis=2)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected an RGB raster, got shape {img.shape}")
    if img.dtype != np.uint8:
        img = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    return img
