"""Pipeline configuration and backend wiring.

A config file is JSON or YAML with the fields of :class:`PipelineConfig`
(all optional). Backend endpoints come from the ``backends`` section, from
``INSTAREPAINT_ENDPOINT_<KIND>`` environment variables (which win), or from
explicit overrides passed on the command line.
"""

import hashlib
import json
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

import yaml

from .backends.base import KINDS, BackendSet
from .backends.mocks import (
    LossyCodec,
    LossyCodecSpec,
    MockDepth,
    MockEdge,
    MockInpainter,
    MockNsfw,
    MockSaliency,
    MockVqa,
)
from .backends.remote import REMOTE_CLASSES, RemoteClient
from .dataset import DEFAULT_SALIENCY_THRESHOLD, OBJECT_NAME_QUESTION
from .errors import ConfigError
from .prompting import ACTION_QUESTION, AppearanceConfig

ENV_PREFIX = "INSTAREPAINT_ENDPOINT_"


@dataclass
class PipelineConfig:
    K: int = 3
    max_attempts: int = 5
    depth_mode: str = "sum"
    repaint_probability: float = 0.30
    target_classes: frozenset = frozenset()
    small_object_threshold: int = 32 * 32
    small_object_target: int = 512
    small_object_context: int = 64
    small_objects_in_augmentation: bool = True
    feather_radius: int = 0
    master_seed: int = 0
    appearance: AppearanceConfig = field(default_factory=AppearanceConfig.default)
    use_lemmas: bool = True
    lexicon_path: Optional[str] = None
    person_aliases: frozenset = frozenset({"person"})
    object_question: str = OBJECT_NAME_QUESTION
    action_question: str = ACTION_QUESTION
    saliency_threshold: int = DEFAULT_SALIENCY_THRESHOLD
    refine_masks: bool = False
    negative_hint: Optional[str] = None
    nsfw_threshold: Optional[float] = None
    backends: dict = field(default_factory=dict)
    mock: dict = field(default_factory=dict)

    def __post_init__(self):
        self.target_classes = frozenset(c.strip().lower() for c in self.target_classes)
        self.person_aliases = frozenset(a.strip().lower() for a in self.person_aliases)
        if isinstance(self.appearance, dict):
            self.appearance = AppearanceConfig.from_dict(self.appearance)
        if self.K < 1:
            raise ConfigError("K must be >= 1")
        if self.max_attempts < 1:
            raise ConfigError("max_attempts must be >= 1")
        if not 0.0 <= self.repaint_probability <= 1.0:
            raise ConfigError("repaint_probability must lie in [0, 1]")
        if self.depth_mode not in ("sum", "mean"):
            raise ConfigError(f"depth_mode must be 'sum' or 'mean', got {self.depth_mode!r}")
        if not 0 <= int(self.master_seed) < 2**64:
            raise ConfigError("master_seed must be a 64-bit unsigned integer")

    def to_dict(self):
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, frozenset):
                value = sorted(value)
            elif isinstance(value, AppearanceConfig):
                value = value.to_dict()
            out[f.name] = value
        return out

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        kw = dict(d)
        for key in ("target_classes", "person_aliases"):
            if key in kw:
                kw[key] = frozenset(kw[key])
        return cls(**kw)

    def generation_config(self, mode, backend_set=None):
        """Everything that influences generated pixels, as stored in the manifest."""
        d = self.to_dict()
        d.pop("backends")
        d["mode"] = mode
        if backend_set is not None:
            d["backend_names"] = {k: v.name for k, v in sorted(backend_set.descriptors().items())}
        return d


def config_hash(generation_config):
    blob = json.dumps(generation_config, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def read_config_dict(path):
    """Parse a JSON or YAML config file into a plain mapping."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    try:
        doc = yaml.safe_load(text) if path.suffix in (".yaml", ".yml") else json.loads(text)
    except (yaml.YAMLError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot parse config file {path}: {exc}") from exc
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ConfigError(f"config file {path} must hold a mapping")
    return doc


def load_config(path) -> PipelineConfig:
    doc = read_config_dict(path)
    try:
        return PipelineConfig.from_dict(doc)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"config file {path}: {exc}") from exc


def endpoints(config, overrides=None, environ=None):
    """Resolve ``kind -> URL`` from config, then environment, then explicit overrides."""
    environ = os.environ if environ is None else environ
    out = {}
    for kind in KINDS:
        section = config.backends.get(kind) or {}
        if section.get("endpoint"):
            out[kind] = section["endpoint"]
        env = environ.get(ENV_PREFIX + kind.upper())
        if env:
            out[kind] = env
    out.update(overrides or {})
    return out


def build_mock_backends(config):
    m = config.mock
    inp = m.get("inpaint", {})
    codec = LossyCodec(LossyCodecSpec(int(inp["codec_down_factor"]))) if inp.get("codec_down_factor") else None
    nsfw_opts = m.get("nsfw", {})
    band = nsfw_opts.get("trigger_band")
    vqa_opts = m.get("vqa", {})
    return BackendSet(
        inpaint=MockInpainter(inp.get("mode", "constant_color"), codec=codec,
                              fail_image_ids=inp.get("fail_image_ids", ())),
        depth=MockDepth(),
        edge=MockEdge(),
        vqa=MockVqa(answers=vqa_opts.get("answers"), default=vqa_opts.get("default", "")),
        nsfw=MockNsfw(trigger_band=tuple(band) if band else None, script=nsfw_opts.get("script", ()),
                      always_fail=bool(nsfw_opts.get("always_fail", False))),
        saliency=MockSaliency(m.get("saliency", {}).get("mode", "identity")),
    )


def build_backends(config, mock=False, overrides=None, environ=None, transport=None):
    """Mock backends, or remote clients for every kind with an endpoint.

    Kinds without an endpoint raise :class:`ConfigError`, except saliency,
    which is only needed for mask refinement.
    """
    if mock:
        return build_mock_backends(config)
    urls = endpoints(config, overrides, environ)
    required = [k for k in KINDS if k != "saliency" or config.refine_masks]
    absent = [k for k in required if k not in urls]
    if absent:
        raise ConfigError(f"no endpoint configured for backend(s): {', '.join(absent)}")
    clients = {}
    built = {}
    for kind, url in urls.items():
        section = config.backends.get(kind) or {}
        if url not in clients:
            clients[url] = RemoteClient(url, retries=int(section.get("retries", 3)), transport=transport,
                                        shared_dir=section.get("shared_dir"))
        client = clients[url]
        kw = {"max_in_flight": int(section.get("max_in_flight", 1))}
        if kind == "depth":
            kw["larger_is_farther"] = bool(section.get("larger_is_farther", True))
        built[kind] = REMOTE_CLASSES[kind](client, **kw)
    return BackendSet(**{k: built.get(k) for k in KINDS})
