"""Deterministic stand-ins for every backend.

The mocks are bit-deterministic functions of their inputs and never touch a
global RNG. The inpainter's fill color is::

    h = FNV-1a-64(utf8(prompt_text) || seed.to_bytes(8, "little"))
    h = splitmix64_finalize(h)
    rgb = (h & 0xFF, (h >> 8) & 0xFF, (h >> 16) & 0xFF)

so independent implementations can agree on exact pixel values.
"""

import threading
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import ndimage

from ..errors import BackendError
from ..raster import luminance, resize_bilinear
from .base import (
    BackendDescriptor,
    DepthEstimator,
    EdgeDetector,
    GenerationRequest,
    Inpainter,
    NsfwFilter,
    NsfwResult,
    SaliencyModel,
    VqaModel,
)

MASK64 = (1 << 64) - 1
FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3


def fnv1a64(data: bytes, h: int = FNV_OFFSET) -> int:
    for byte in data:
        h ^= byte
        h = (h * FNV_PRIME) & MASK64
    return h


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def mix64(prompt_text: str, seed: int) -> int:
    return splitmix64(fnv1a64(prompt_text.encode("utf-8") + int(seed).to_bytes(8, "little")))


def mock_color(prompt_text, seed):
    h = mix64(prompt_text, seed)
    return np.array([h & 0xFF, (h >> 8) & 0xFF, (h >> 16) & 0xFF], dtype=np.uint8)


@dataclass(frozen=True)
class LossyCodecSpec:
    down_factor: int = 2
    interpolation: str = "bilinear"

    def __post_init__(self):
        if self.down_factor < 2:
            raise ValueError("down_factor must be >= 2")
        if self.interpolation != "bilinear":
            raise ValueError("only bilinear interpolation is supported")


class LossyCodec:
    """Stand-in for a latent-space round trip: bilinear down- then upsampling."""

    def __init__(self, spec=None):
        self.spec = spec or LossyCodecSpec()

    def encode(self, image):
        h, w = image.shape[:2]
        f = self.spec.down_factor
        small = resize_bilinear(image.astype(np.float32), max(1, w // f), max(1, h // f))
        return small, (h, w)

    def decode(self, latent):
        small, (h, w) = latent
        out = resize_bilinear(small, w, h)
        return np.clip(np.rint(out), 0, 255).astype(np.uint8)

    def roundtrip(self, image):
        return self.decode(self.encode(np.asarray(image)))


class MockInpainter(Inpainter):
    """Fills the masked region with a color hashed from ``(prompt, seed)``.

    ``mode="textured"`` modulates the color with a deterministic stripe
    pattern. With a ``codec`` the unmasked region is the base after one
    codec round trip; otherwise it is copied bit-exact. If the fill would
    leave every masked pixel unchanged, the fill is inverted so that a
    nonempty mask always changes at least one pixel.
    """

    def __init__(self, mode="constant_color", codec: Optional[LossyCodec] = None,
                 fail_image_ids: Sequence[str] = (), name="mock-inpaint"):
        if mode not in ("constant_color", "textured"):
            raise ValueError(f"unknown mock mode {mode!r}")
        self.mode = mode
        self.codec = codec
        self.fail_image_ids = frozenset(str(i) for i in fail_image_ids)
        self.descriptor = BackendDescriptor("inpaint", name, deterministic=True, max_in_flight=8)

    def inpaint(self, request: GenerationRequest):
        if request.context.get("image_id") in self.fail_image_ids:
            raise BackendError(f"mock inpainter poisoned for image {request.context['image_id']}")
        base = np.asarray(request.base_image, dtype=np.uint8)
        mask = np.asarray(request.mask, dtype=bool)
        out = self.codec.roundtrip(base) if self.codec is not None else base.copy()
        if not mask.any():
            return out
        fill = self._fill(request.prompt_text, request.seed, base.shape[:2])
        if np.array_equal(fill[mask], base[mask]):
            fill = 255 - fill
        out[mask] = fill[mask]
        return out

    def _fill(self, prompt, seed, shape):
        color = mock_color(prompt, seed)
        fill = np.broadcast_to(color, shape + (3,)).copy()
        if self.mode == "textured":
            h = mix64(prompt, seed)
            period = 2 + (h >> 24) % 7
            rows = np.arange(shape[0])[:, None] + np.arange(shape[1])[None, :]
            stripe = ((rows // period) % 2).astype(bool)
            fill[stripe] = 255 - fill[stripe]
        return fill


class MockDepth(DepthEstimator):
    """Vertical gradient ``D[r, c] = r / (H - 1)``; larger = farther."""

    def __init__(self, name="mock-depth"):
        self.descriptor = BackendDescriptor("depth", name)

    def estimate(self, image):
        h, w = np.asarray(image).shape[:2]
        col = np.arange(h, dtype=np.float64) / max(h - 1, 1)
        return np.repeat(col[:, None], w, axis=1)


class MockEdge(EdgeDetector):
    """Central-difference gradient magnitude of luma, scaled to ``[0, 1]``."""

    def __init__(self, name="mock-edge"):
        self.descriptor = BackendDescriptor("edge", name)

    def detect(self, image):
        lum = luminance(image)
        if min(lum.shape) < 2:
            return np.zeros_like(lum)
        gy, gx = np.gradient(lum)
        mag = np.hypot(gx, gy)
        peak = mag.max()
        return mag / peak if peak > 0 else mag


class MockVqa(VqaModel):
    """Answers from a question -> answer table, or through ``fn(image, question)``."""

    def __init__(self, answers=None, fn: Optional[Callable] = None, default="", name="mock-vqa"):
        self.answers = dict(answers or {})
        self.fn = fn
        self.default = default
        self.descriptor = BackendDescriptor("vqa", name)

    def answer(self, image, question):
        if self.fn is not None:
            return self.fn(image, question)
        return self.answers.get(question, self.default)


class MockNsfw(NsfwFilter):
    """Flags regions by mean intensity or by a scripted verdict sequence.

    ``trigger_band=(lo, hi)`` fails regions whose mean intensity lies in
    ``[lo, hi]``; ``None`` disables it. ``script`` is consumed one verdict per
    call (``True`` = pass) and takes precedence while it lasts; afterwards
    ``after_script`` decides. ``always_fail`` fails everything.
    """

    def __init__(self, trigger_band=None, script: Sequence[bool] = (), after_script=True,
                 always_fail=False, name="mock-nsfw"):
        self.trigger_band = trigger_band
        self.script = list(script)
        self.after_script = after_script
        self.always_fail = always_fail
        self.calls = 0
        self._lock = threading.Lock()
        self.descriptor = BackendDescriptor("nsfw", name, deterministic=not self.script)

    def check(self, region):
        region = np.asarray(region)
        if region.size == 0:
            raise ValueError("empty region")
        with self._lock:
            idx = self.calls
            self.calls += 1
        if self.always_fail:
            return NsfwResult(False, 1.0)
        if idx < len(self.script):
            ok = bool(self.script[idx])
            return NsfwResult(ok, 0.0 if ok else 1.0)
        mean = float(region.mean())
        if self.trigger_band is not None:
            lo, hi = self.trigger_band
            if lo <= mean <= hi:
                return NsfwResult(False, 1.0)
        return NsfwResult(bool(self.after_script), 0.0 if self.after_script else 1.0)

    @staticmethod
    def threshold(score, threshold):
        """Verdict for a model score: a region passes iff ``score < threshold``."""
        return NsfwResult(score < threshold, score)


class MockSaliency(SaliencyModel):
    """Echoes the hint mask (``identity``), erodes it (``erode``) or returns nothing (``empty``)."""

    def __init__(self, mode="identity", erode_px=1, name="mock-saliency"):
        if mode not in ("identity", "erode", "empty"):
            raise ValueError(f"unknown mock mode {mode!r}")
        self.mode = mode
        self.erode_px = erode_px
        self.descriptor = BackendDescriptor("saliency", name)

    def predict(self, image, hint_mask=None):
        h, w = np.asarray(image).shape[:2]
        if self.mode == "empty" or hint_mask is None:
            return np.zeros((h, w), dtype=np.uint8)
        mask = np.asarray(hint_mask, dtype=bool)
        if self.mode == "erode":
            mask = ndimage.binary_erosion(mask, iterations=self.erode_px, border_value=0)
        return np.where(mask, 255, 0).astype(np.uint8)


def mock_backend_set(codec=None, nsfw=None, saliency=None, vqa=None, inpaint_mode="constant_color",
                     fail_image_ids=()):
    from .base import BackendSet

    return BackendSet(
        inpaint=MockInpainter(inpaint_mode, codec=codec, fail_image_ids=fail_image_ids),
        depth=MockDepth(),
        edge=MockEdge(),
        vqa=vqa or MockVqa(default=""),
        nsfw=nsfw or MockNsfw(),
        saliency=saliency or MockSaliency(),
    )
