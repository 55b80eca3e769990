"""Text prompts for repainting an instance.

A prompt starts from the class label and is extended with synonym lemmas,
an optional sampled color and qualifier (for classes that come in many
colors), an optional lighting condition and, for people, an action
predicted by a VQA model.
"""

import json
import logging
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

from .errors import PreconditionError

logger = logging.getLogger(__name__)

NONE_SENTINEL = "none"
ACTION_QUESTION = "what is the person doing?"
DEFAULT_PERSON_ALIASES = frozenset({"person"})


def _clean(text):
    return " ".join(str(text).split())


class Lexicon:
    """Class label -> synonym lemmas table."""

    def __init__(self, entries=None):
        self.entries = {k.strip().lower(): list(v) for k, v in (entries or {}).items()}

    @classmethod
    def load(cls, path=None):
        if path is None:
            text = resources.files("instarepaint").joinpath("data/lexicon.json").read_text()
        else:
            text = Path(path).read_text()
        doc = json.loads(text)
        return cls(doc["entries"] if "entries" in doc else doc)

    def lemmas(self, class_label):
        return self.entries.get(class_label.strip().lower(), [])


def expand_class_description(class_label, lexicon):
    """The label followed by its distinct lemmas, deduplicated case-insensitively."""
    out = [class_label]
    seen = {class_label.strip().lower()}
    lookup = lexicon.lemmas(class_label) if isinstance(lexicon, Lexicon) else lexicon.get(class_label, [])
    for lemma in lookup:
        lemma = _clean(lemma)
        if lemma and lemma.lower() not in seen:
            seen.add(lemma.lower())
            out.append(lemma)
    return out


@dataclass(frozen=True)
class AppearanceConfig:
    color_categories: frozenset = frozenset()
    colors: tuple = ()
    qualifiers: tuple = ()
    lightings: tuple = (NONE_SENTINEL,)

    def __post_init__(self):
        object.__setattr__(self, "color_categories", frozenset(c.lower() for c in self.color_categories))
        object.__setattr__(self, "colors", tuple(self.colors))
        object.__setattr__(self, "qualifiers", tuple(self.qualifiers))
        object.__setattr__(self, "lightings", tuple(self.lightings))
        if self.color_categories and not (self.colors and self.qualifiers):
            raise ValueError("colors and qualifiers must be nonempty when color_categories is set")
        if not self.lightings:
            raise ValueError("lightings must list at least one option (use 'none' for no lighting)")

    @classmethod
    def default(cls):
        text = resources.files("instarepaint").joinpath("data/appearance.json").read_text()
        return cls.from_dict(json.loads(text))

    @classmethod
    def from_dict(cls, d):
        return cls(
            color_categories=frozenset(d.get("color_categories", ())),
            colors=tuple(d.get("colors", ())),
            qualifiers=tuple(d.get("qualifiers", ())),
            lightings=tuple(d.get("lightings", (NONE_SENTINEL,))),
        )

    def to_dict(self):
        return {
            "color_categories": sorted(self.color_categories),
            "colors": list(self.colors),
            "qualifiers": list(self.qualifiers),
            "lightings": list(self.lightings),
        }


def sample_appearance(class_label, config, rng):
    """Draw ``(color, qualifier, lighting)``; absent parts are ``None``.

    ``rng`` is a :class:`numpy.random.Generator`. Color and qualifier are
    drawn only for classes in ``config.color_categories``; lighting is drawn
    for every class and comes back ``None`` when the sentinel is picked.
    """
    color = qualifier = None
    if class_label.strip().lower() in config.color_categories:
        color = config.colors[int(rng.integers(len(config.colors)))]
        qualifier = config.qualifiers[int(rng.integers(len(config.qualifiers)))]
    lighting = config.lightings[int(rng.integers(len(config.lightings)))]
    if lighting == NONE_SENTINEL:
        lighting = None
    return color, qualifier, lighting


def is_person(class_label, aliases=DEFAULT_PERSON_ALIASES):
    return class_label.strip().lower() in {a.lower() for a in aliases}


def person_action(image, instance, vqa, aliases=DEFAULT_PERSON_ALIASES, question=ACTION_QUESTION,
                  failures=None):
    """Ask the VQA backend what the person in ``instance`` is doing.

    Returns ``None`` for an empty answer. A backend exception is logged,
    appended to ``failures`` when given, and also yields ``None``.
    """
    if not is_person(instance.class_label, aliases):
        raise PreconditionError(f"instance {instance.instance_id} ({instance.class_label!r}) is not a person")
    x0, y0, x1, y1 = instance.bbox
    crop = image[y0:y1 + 1, x0:x1 + 1]
    try:
        answer = vqa.answer(crop, question)
    except Exception as exc:
        logger.warning("action query failed for %s: %s", instance.instance_id, exc)
        if failures is not None:
            failures.append(f"vqa action {instance.instance_id}: {exc}")
        return None
    answer = _clean(answer or "").lower()
    return answer or None


@dataclass(frozen=True)
class PromptSpec:
    class_label: str
    lemmas: tuple = ()
    color: Optional[str] = None
    color_qualifier: Optional[str] = None
    lighting: Optional[str] = None
    action: Optional[str] = None

    def __post_init__(self):
        if not _clean(self.class_label):
            raise ValueError("class_label must be nonempty")
        object.__setattr__(self, "lemmas", tuple(self.lemmas))

    def check(self, appearance):
        if self.color is not None and self.class_label.lower() not in appearance.color_categories:
            raise ValueError(f"color given for {self.class_label!r}, which is not color-diverse")


def build_prompt(spec):
    """Render a :class:`PromptSpec` as comma-separated segments.

    Order: label (plus action), lemmas other than the label, color,
    qualifier, lighting. Empty parts are dropped.
    """
    label = _clean(spec.class_label)
    head = f"{label} {_clean(spec.action)}" if spec.action and _clean(spec.action) else label
    segments = [head]
    segments += [_clean(lem) for lem in spec.lemmas if _clean(lem) and _clean(lem).lower() != label.lower()]
    for part in (spec.color, spec.color_qualifier, spec.lighting):
        if part is not None and _clean(part) and _clean(part) != NONE_SENTINEL:
            segments.append(_clean(part))
    return ", ".join(segments)


@dataclass
class PromptBuilder:
    """Bundles lexicon, appearance lists and VQA settings for the pipeline."""

    lexicon: Lexicon = field(default_factory=Lexicon.load)
    appearance: AppearanceConfig = field(default_factory=AppearanceConfig.default)
    use_lemmas: bool = True
    person_aliases: frozenset = DEFAULT_PERSON_ALIASES
    action_question: str = ACTION_QUESTION

    def spec_for(self, instance, rng, action=None):
        label = instance.class_label
        lemmas = tuple(expand_class_description(label, self.lexicon)[1:]) if self.use_lemmas else ()
        color, qualifier, lighting = sample_appearance(label, self.appearance, rng)
        return PromptSpec(label, lemmas, color, qualifier, lighting, action)

    def action_for(self, image, instance, vqa, failures=None):
        if vqa is None or not is_person(instance.class_label, self.person_aliases):
            return None
        return person_action(image, instance, vqa, self.person_aliases, self.action_question, failures)
