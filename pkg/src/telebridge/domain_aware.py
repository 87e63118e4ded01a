"""Soft assignment of a query to industrial verticals.

Per-vertical raw score::

    score_v = 0.5 * overlap_v + 0.5 * cos(e_q, centroid_v)

where ``overlap_v`` is the sum of weights of the distinct gazetteer terms that
occur in the query (case-insensitive, whole words) and ``centroid_v`` is the
mean embedding of the vertical's gazetteer terms. Probabilities are
``softmax(score)`` at temperature 1. Confidence blends the entropy-based and
margin-based signals equally.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .backends import EmbeddingBackend, cosine, embed
from .core import UserQuery, ValidationError
from .prompts import PromptRegistry, RegistryError, template_fields

DOMAIN_SLOTS = ("vertical", "confidence", "query")


@dataclass(frozen=True)
class Vertical:
    id: str
    name: str
    gazetteer: dict[str, float]
    prompt_template: str


class VerticalTaxonomy:
    def __init__(self, verticals: Sequence[Vertical]):
        self.verticals = tuple(verticals)
        ids = [v.id for v in self.verticals]
        if len(ids) < 2:
            raise ValidationError("taxonomy has >= 2 verticals")
        if len(set(ids)) != len(ids):
            raise ValidationError("vertical ids are unique")
        for v in self.verticals:
            if not v.gazetteer:
                raise ValidationError(f"gazetteer of {v.id!r} is non-empty")
        self._patterns = {
            v.id: [(re.compile(rf"(?<![\w-]){re.escape(t)}(?![\w-])", re.IGNORECASE), w) for t, w in v.gazetteer.items()]
            for v in self.verticals
        }

    @classmethod
    def from_list(cls, data: list[dict]) -> "VerticalTaxonomy":
        return cls(
            [
                Vertical(d["id"], d.get("name", d["id"]), {k: float(w) for k, w in d["gazetteer"].items()}, d.get("prompt_template", d["id"]))
                for d in data
            ]
        )

    @classmethod
    def load(cls, path: str | Path) -> "VerticalTaxonomy":
        return cls.from_list(json.loads(Path(path).read_text(encoding="utf-8")))

    @property
    def ids(self) -> list[str]:
        return [v.id for v in self.verticals]

    def get(self, vertical_id: str) -> Vertical:
        for v in self.verticals:
            if v.id == vertical_id:
                return v
        raise KeyError(vertical_id)

    def overlap(self, vertical_id: str, text: str) -> float:
        return sum(w for pat, w in self._patterns[vertical_id] if pat.search(text))


@dataclass(frozen=True)
class DomainAssignment:
    probs: tuple[float, ...]
    vertical_ids: tuple[str, ...]
    top_vertical: str
    top_name: str
    entropy: float
    margin: float
    confidence: float
    raw_scores: tuple[float, ...] = field(default=(), compare=False)

    def to_dict(self) -> dict:
        return {
            "top_vertical": self.top_vertical,
            "probs": dict(zip(self.vertical_ids, self.probs)),
            "entropy": self.entropy,
            "margin": self.margin,
            "confidence": self.confidence,
        }


def softmax(scores: Sequence[float], temperature: float = 1.0) -> np.ndarray:
    z = np.asarray(scores, dtype=float) / temperature
    z = np.exp(z - z.max())
    return z / z.sum()


def shannon_entropy(probs: Sequence[float]) -> float:
    return -sum(p * math.log(p) for p in probs if p > 0)


def entropy_confidence(probs: Sequence[float]) -> float:
    """``1 - H(p)/ln(n)``: 1 for a one-hot vector, 0 for the uniform one."""
    n = len(probs)
    if n < 2:
        raise ValueError("entropy confidence needs at least 2 outcomes")
    return min(1.0, max(0.0, 1.0 - shannon_entropy(probs) / math.log(n)))


def argmax_first(values: Sequence[float]) -> int:
    best = 0
    for i, v in enumerate(values):
        if v > values[best]:
            best = i
    return best


def top_two_margin(probs: Sequence[float]) -> float:
    ordered = sorted(probs, reverse=True)
    return float(ordered[0] - ordered[1])


class DomainScorer:
    """Precomputes gazetteer centroids so repeated assignments are cheap."""

    def __init__(self, taxonomy: VerticalTaxonomy, embedder: EmbeddingBackend):
        self.taxonomy = taxonomy
        self.embedder = embedder
        self.centroids = [np.mean([embed(embedder, t) for t in v.gazetteer], axis=0) for v in taxonomy.verticals]

    def raw_scores(self, text: str, hint: Optional[str] = None) -> list[float]:
        e_q = embed(self.embedder, text)
        scores = []
        for v, c in zip(self.taxonomy.verticals, self.centroids):
            overlap = self.taxonomy.overlap(v.id, text)
            if hint is not None and v.id == hint:
                overlap += 1.0
            scores.append(0.5 * overlap + 0.5 * cosine(e_q, c))
        return scores

    def assign(self, q: UserQuery) -> DomainAssignment:
        hint = q.vertical_hint if q.vertical_hint in self.taxonomy.ids else None
        return assignment_from_scores(self.taxonomy, self.raw_scores(q.text, hint))


def assignment_from_scores(taxonomy: VerticalTaxonomy, scores: Sequence[float]) -> DomainAssignment:
    probs = softmax(scores)
    top = argmax_first(list(probs))
    margin = top_two_margin(probs)
    conf = 0.5 * entropy_confidence(probs) + 0.5 * margin
    v = taxonomy.verticals[top]
    return DomainAssignment(
        probs=tuple(float(p) for p in probs),
        vertical_ids=tuple(taxonomy.ids),
        top_vertical=v.id,
        top_name=v.name,
        entropy=float(shannon_entropy(probs)),
        margin=margin,
        confidence=float(min(1.0, max(0.0, conf))),
        raw_scores=tuple(scores),
    )


def assign_domain(q: UserQuery, taxonomy: VerticalTaxonomy, embedder: EmbeddingBackend) -> DomainAssignment:
    return DomainScorer(taxonomy, embedder).assign(q)


def build_domain_prompt(assign: DomainAssignment, registry: PromptRegistry, taxonomy: VerticalTaxonomy, query: str = "") -> str:
    template = registry.get(taxonomy.get(assign.top_vertical).prompt_template)
    unknown = [f for f in template_fields(template.text) if f not in DOMAIN_SLOTS]
    if unknown:
        raise RegistryError(f"template {template.id!r} has unresolvable placeholders: {', '.join(unknown)}")
    return template.render(vertical=assign.top_name, confidence=f"{assign.confidence:.2f}", query=query)
