"""Asset catalog and task templates, loaded from a versioned JSON document."""
from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .errors import EmptyCatalog
from .scene import Affordance, AssetTemplate

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class SlotSpec:
    name: str
    assets: tuple
    place: str  # "floor" or "counter"


@dataclass(frozen=True)
class TaskTemplate:
    name: str
    verb: str
    patterns: tuple
    slots: tuple
    milestones: tuple
    primitives: tuple

    def slot(self, name):
        for s in self.slots:
            if s.name == name:
                return s
        raise KeyError(name)

    def to_dict(self):
        return {
            "name": self.name, "verb": self.verb, "patterns": list(self.patterns),
            "slots": [{"name": s.name, "assets": list(s.assets), "place": s.place} for s in self.slots],
            "milestones": [list(m) for m in self.milestones],
            "primitives": [list(p) for p in self.primitives],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            d["name"], d["verb"], tuple(d["patterns"]),
            tuple(SlotSpec(s["name"], tuple(s["assets"]), s["place"]) for s in d["slots"]),
            tuple(tuple(m) for m in d["milestones"]),
            tuple(tuple(p) for p in d["primitives"]),
        )


@dataclass(frozen=True)
class AssetCatalog:
    entries: tuple  # AssetTemplate, sorted by name
    task_templates: tuple
    distractors: tuple = ()  # ((place, (asset, ...)), ...)
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(sorted(self.entries, key=lambda a: a.name)))
        object.__setattr__(self, "_index", {a.name: a for a in self.entries})

    def __contains__(self, name):
        return name in self._index

    def get(self, name) -> AssetTemplate:
        return self._index[name]

    @property
    def names(self):
        return tuple(a.name for a in self.entries)

    def query(self, required=(), exclude=()):
        """Entries carrying every affordance in `required` and none in `exclude`."""
        req = {Affordance(r) for r in required}
        exc = {Affordance(r) for r in exclude}
        return tuple(a for a in self.entries if req <= a.affordances and not (exc & a.affordances))

    def template(self, name) -> TaskTemplate:
        for t in self.task_templates:
            if t.name == name:
                return t
        raise KeyError(name)

    def distractor_assets(self, place):
        return dict(self.distractors).get(place, ())

    def check(self):
        if not self.entries or not self.task_templates:
            raise EmptyCatalog("catalog has no assets or no task templates")
        for t in self.task_templates:
            for s in t.slots:
                for a in s.assets:
                    if a not in self:
                        raise ValueError(f"template {t.name}: unknown asset {a!r}")
        return self

    def to_dict(self):
        return {
            "schema_version": self.schema_version,
            "assets": [a.to_dict() for a in self.entries],
            "task_templates": [t.to_dict() for t in self.task_templates],
            "distractors": {k: list(v) for k, v in self.distractors},
        }

    @classmethod
    def from_dict(cls, d):
        version = d.get("schema_version")
        if version != SCHEMA_VERSION:
            raise ValueError(f"unsupported catalog schema_version {version!r}")
        return cls(
            tuple(AssetTemplate.from_dict(a) for a in d.get("assets", ())),
            tuple(TaskTemplate.from_dict(t) for t in d.get("task_templates", ())),
            tuple((k, tuple(v)) for k, v in sorted(d.get("distractors", {}).items())),
            version,
        )


def load_catalog(path=None) -> AssetCatalog:
    if path is None:
        text = resources.files("taskforge").joinpath("data/catalog.json").read_text()
    else:
        text = Path(path).read_text()
    return AssetCatalog.from_dict(json.loads(text))


_DEFAULT = None


def default_catalog() -> AssetCatalog:
    global _DEFAULT
    if _DEFAULT is None:
        _DEFAULT = load_catalog().check()
    return _DEFAULT
