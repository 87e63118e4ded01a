"""File-based prompt registry.

Each template lives in ``<id>.txt`` inside the registry directory. Leading
``# key: value`` header lines declare metadata; ``version`` and ``slots`` are
recognized::

    # version: 2
    # slots: vertical, confidence, query
    Diagnose for {vertical} ...

Every ``{placeholder}`` in the body must be a declared slot.
"""

from __future__ import annotations

import string
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

from .core import TelebridgeError


class RegistryError(TelebridgeError):
    pass


def template_fields(text: str) -> list[str]:
    fields = []
    for _, name, _, _ in string.Formatter().parse(text):
        if name is not None and name not in fields:
            fields.append(name)
    return fields


@dataclass(frozen=True)
class PromptTemplate:
    id: str
    text: str
    version: str = "1"
    slots: tuple[str, ...] = ()

    def render(self, **values) -> str:
        missing = [s for s in template_fields(self.text) if s not in values]
        if missing:
            raise RegistryError(f"template {self.id!r}: no value for {', '.join(missing)}")
        return self.text.format(**values)


class PromptRegistry:
    def __init__(self, templates: Mapping[str, PromptTemplate]):
        self._templates = dict(templates)
        for t in self._templates.values():
            undeclared = [f for f in template_fields(t.text) if f not in t.slots]
            if undeclared:
                raise RegistryError(f"template {t.id!r} uses undeclared placeholders: {', '.join(undeclared)}")

    @classmethod
    def from_texts(cls, texts: Mapping[str, str]) -> "PromptRegistry":
        """Build from plain bodies; slots are whatever the body uses."""
        return cls({k: PromptTemplate(k, v, slots=tuple(template_fields(v))) for k, v in texts.items()})

    @classmethod
    def load(cls, directory: str | Path) -> "PromptRegistry":
        templates = {}
        for path in sorted(Path(directory).glob("*.txt")):
            meta, body = _split_header(path.read_text(encoding="utf-8"))
            slots = tuple(s.strip() for s in meta.get("slots", "").split(",") if s.strip())
            templates[path.stem] = PromptTemplate(path.stem, body, meta.get("version", "1"), slots)
        return cls(templates)

    def __contains__(self, template_id: str) -> bool:
        return template_id in self._templates

    def ids(self) -> list[str]:
        return sorted(self._templates)

    def get(self, template_id: str) -> PromptTemplate:
        try:
            return self._templates[template_id]
        except KeyError:
            raise RegistryError(f"no template {template_id!r} in registry") from None

    def render(self, template_id: str, **values) -> str:
        return self.get(template_id).render(**values)


def _split_header(text: str) -> tuple[dict, str]:
    meta = {}
    lines = text.splitlines(keepends=True)
    i = 0
    while i < len(lines) and lines[i].startswith("#"):
        key, _, value = lines[i][1:].partition(":")
        meta[key.strip()] = value.strip()
        i += 1
    return meta, "".join(lines[i:]).rstrip("\n")
