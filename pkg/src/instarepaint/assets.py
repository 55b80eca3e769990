"""Where generated rasters live: a directory of PNGs or an in-memory dict."""

import hashlib
import re
from pathlib import Path

import numpy as np

from .raster import read_mask, read_rgb, write_mask, write_png

_UNSAFE = re.compile(r"[^A-Za-z0-9._-]")


def safe_name(text):
    text = str(text)
    cleaned = _UNSAFE.sub("_", text) or "_"
    if cleaned != text or cleaned.startswith("."):
        cleaned = f"{cleaned.lstrip('.')}-{hashlib.sha1(text.encode()).hexdigest()[:8]}"
    return cleaned


def asset_relpath(image_id, instance_id, variant_index):
    return f"assets/{safe_name(image_id)}/{safe_name(instance_id)}_v{variant_index}.png"


def mask_relpath(image_id, instance_id, variant_index):
    return f"masks/{safe_name(image_id)}/{safe_name(instance_id)}_v{variant_index}.png"


class AssetStore:
    """Stores full-frame assets and refined masks under relative paths.

    With ``root=None`` everything stays in memory, which is what the tests
    and notebooks use.
    """

    def __init__(self, root=None):
        self.root = Path(root) if root is not None else None
        self._memory = {}

    def put_image(self, relpath, image):
        if self.root is None:
            self._memory[relpath] = np.array(image, dtype=np.uint8)
        else:
            write_png(self.root / relpath, image)
        return relpath

    def put_mask(self, relpath, mask):
        if self.root is None:
            self._memory[relpath] = np.array(mask, dtype=bool)
        else:
            write_mask(self.root / relpath, mask)
        return relpath

    def get_image(self, relpath):
        if self.root is None:
            return self._memory[relpath].copy()
        return read_rgb(self.root / relpath)

    def get_mask(self, relpath):
        if self.root is None:
            return self._memory[relpath].copy()
        return read_mask(self.root / relpath)

    def exists(self, relpath):
        if relpath is None:
            return False
        if self.root is None:
            return relpath in self._memory
        return (self.root / relpath).is_file()
