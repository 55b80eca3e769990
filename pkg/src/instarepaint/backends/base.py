"""Backend interfaces.

Every model the pipeline depends on sits behind one of six small
interfaces. Concrete backends carry a :class:`BackendDescriptor` so the
scheduler knows how many requests it may keep in flight.
"""

import abc
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

KINDS = ("inpaint", "depth", "edge", "vqa", "nsfw", "saliency")


@dataclass(frozen=True)
class BackendDescriptor:
    kind: str
    name: str
    deterministic: bool = True
    max_in_flight: int = 1
    native_resolution: Optional[int] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown backend kind {self.kind!r}")
        if self.max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")


@dataclass(frozen=True, eq=False)
class GenerationRequest:
    """Everything an inpainting backend needs for one generation.

    ``context`` carries identifiers (image id, instance id, ...) for logging
    and fault injection; backends must not let it influence pixels.
    """

    base_image: np.ndarray
    mask: np.ndarray
    prompt_text: str
    depth_control: np.ndarray
    edge_control: np.ndarray
    seed: int
    negative_hint: Optional[str] = None
    context: dict = field(default_factory=dict)

    def __post_init__(self):
        h, w = self.base_image.shape[:2]
        for name in ("mask", "depth_control", "edge_control"):
            arr = getattr(self, name)
            if arr.shape[:2] != (h, w):
                raise ValueError(f"{name} has shape {arr.shape[:2]}, base image is {(h, w)}")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    @property
    def size(self):
        return self.base_image.shape[:2]


@dataclass(frozen=True)
class NsfwResult:
    passed: bool
    score: float = 0.0


class Backend(abc.ABC):
    descriptor: BackendDescriptor


class Inpainter(Backend):
    @abc.abstractmethod
    def inpaint(self, request: GenerationRequest) -> np.ndarray:
        """Return a full-frame RGB raster the size of ``request.base_image``."""


class DepthEstimator(Backend):
    #: Backends whose native output has larger = nearer set this to False.
    larger_is_farther = True

    @abc.abstractmethod
    def estimate(self, image: np.ndarray) -> np.ndarray:
        ...


class EdgeDetector(Backend):
    @abc.abstractmethod
    def detect(self, image: np.ndarray) -> np.ndarray:
        ...


class VqaModel(Backend):
    @abc.abstractmethod
    def answer(self, image: np.ndarray, question: str) -> str:
        ...


class NsfwFilter(Backend):
    @abc.abstractmethod
    def check(self, region: np.ndarray) -> NsfwResult:
        ...


class SaliencyModel(Backend):
    @abc.abstractmethod
    def predict(self, image: np.ndarray, hint_mask: Optional[np.ndarray] = None) -> np.ndarray:
        """Return an 8-bit saliency map the size of ``image``.

        ``hint_mask`` is the annotation mask cropped alongside the image; real
        models may ignore it.
        """


@dataclass
class BackendSet:
    inpaint: Inpainter
    depth: DepthEstimator
    edge: EdgeDetector
    vqa: VqaModel
    nsfw: NsfwFilter
    saliency: Optional[SaliencyModel] = None

    def descriptors(self):
        return {
            kind: getattr(self, kind).descriptor
            for kind in KINDS
            if getattr(self, kind, None) is not None
        }
