"""Per-class textual knowledge records and corpus file handling.

A corpus file is a JSON array of objects with keys ``class_id, name,
level1, level2, h_text, s_text, d_text, keywords``. The package ships a
55-class demo corpus under ``krast/assets``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from typing import Dict, List, Sequence

from .errors import CorpusError

_KEYS = {"class_id", "name", "level1", "level2", "h_text", "s_text", "d_text", "keywords"}


@dataclass(frozen=True)
class ClassDescription:
    """Textual knowledge for one action class.

    ``h_text``/``s_text``/``d_text`` are the hierarchical, semantic and
    discriminative description segments; texts are stored verbatim
    (casing included) and only normalized at tokenize time.
    """

    class_id: int
    name: str
    level1: str = ""
    level2: str = ""
    h_text: str = ""
    s_text: str = ""
    d_text: str = ""
    keywords: Sequence[str] = field(default_factory=tuple)

    def segment(self, tag: str) -> str:
        return {"S": self.s_text, "H": self.h_text, "D": self.d_text}[tag]


class Corpus:
    """An ordered, id-unique collection of class descriptions."""

    def __init__(self, entries: Sequence[ClassDescription]):
        if not entries:
            raise CorpusError("corpus is empty")
        ordered = sorted(entries, key=lambda e: e.class_id)
        seen = set()
        for e in ordered:
            if e.class_id in seen:
                raise CorpusError("duplicate class_id", class_id=e.class_id)
            seen.add(e.class_id)
        self.entries: List[ClassDescription] = list(ordered)

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    @property
    def class_ids(self) -> List[int]:
        return [e.class_id for e in self.entries]

    @property
    def names(self) -> List[str]:
        return [e.name for e in self.entries]

    def index_of(self, class_id: int) -> int:
        """Position of a class_id in sorted corpus order."""
        return self.class_ids.index(class_id)

    def to_json(self) -> list:
        return [
            {
                "class_id": e.class_id,
                "name": e.name,
                "level1": e.level1,
                "level2": e.level2,
                "h_text": e.h_text,
                "s_text": e.s_text,
                "d_text": e.d_text,
                "keywords": list(e.keywords),
            }
            for e in self.entries
        ]

    def save(self, path: str) -> None:
        with open(path, "w") as f:
            json.dump(self.to_json(), f, indent=2)


def _entry_from_dict(obj: Dict) -> ClassDescription:
    unknown = set(obj) - _KEYS
    if unknown:
        raise CorpusError(f"unknown corpus keys {sorted(unknown)}")
    try:
        return ClassDescription(
            class_id=int(obj["class_id"]),
            name=str(obj["name"]),
            level1=str(obj.get("level1", "")),
            level2=str(obj.get("level2", "")),
            h_text=str(obj.get("h_text", "")),
            s_text=str(obj.get("s_text", "")),
            d_text=str(obj.get("d_text", "")),
            keywords=tuple(obj.get("keywords", ())),
        )
    except KeyError as e:
        raise CorpusError(f"corpus entry missing key {e}")


def load_corpus(path: str) -> Corpus:
    with open(path) as f:
        raw = json.load(f)
    if not isinstance(raw, list):
        raise CorpusError("corpus file must hold a JSON array")
    return Corpus([_entry_from_dict(o) for o in raw])


def demo_corpus() -> Corpus:
    """The bundled 55-class daily-activity corpus."""
    text = resources.files("krast").joinpath("assets/demo_corpus.json").read_text()
    return Corpus([_entry_from_dict(o) for o in json.loads(text)])
