"""Privacy and translation metrics with deterministic definitions.

Spans are ``(start, end, type)`` triples. A detection matches a gold entity
when the types are equal and the overlap covers at least half of the longer
of the two spans.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

from ..backends import EmbeddingBackend, HashingEmbedder, cosine, embed, tokenize
from ..translation import TechnicalQuery, TelecomOntology, constraint_has_source, infer_implicit_constraints, map_terms

Span = tuple[int, int, str]
MATCH_OVERLAP = 0.5


def as_span(e) -> Span:
    if isinstance(e, dict):
        return (int(e["start"]), int(e["end"]), str(e["type"]))
    if hasattr(e, "etype"):
        return (e.start, e.end, e.etype.value)
    return (int(e[0]), int(e[1]), str(e[2]))


def spans_match(a: Span, b: Span, threshold: float = MATCH_OVERLAP) -> bool:
    if a[2] != b[2]:
        return False
    inter = min(a[1], b[1]) - max(a[0], b[0])
    longest = max(a[1] - a[0], b[1] - b[0])
    return inter > 0 and inter >= threshold * longest


def _f1(p: float, r: float) -> float:
    return 0.0 if p + r == 0 else 2 * p * r / (p + r)


def pii_metrics(detected: Iterable, gold: Iterable) -> tuple[float, float, float]:
    """``(recall, precision, f1)``; nothing to find and nothing found scores 1."""
    det = [as_span(e) for e in detected]
    gs = [as_span(e) for e in gold]
    if not det and not gs:
        return 1.0, 1.0, 1.0
    recall = sum(any(spans_match(d, g) for d in det) for g in gs) / len(gs) if gs else 1.0
    precision = sum(any(spans_match(d, g) for g in gs) for d in det) / len(det) if det else 1.0
    return recall, precision, _f1(precision, recall)


def token_retention(q: str, q_prime: str, entities: Iterable = ()) -> float:
    """Share of whitespace tokens outside entity spans that survive verbatim in ``q_prime``."""
    spans = [as_span(e) for e in entities]
    kept = []
    pos = 0
    for tok in q.split():
        start = q.index(tok, pos)
        end = start + len(tok)
        pos = end
        if not any(start < e and s < end for s, e, _ in spans):
            kept.append(tok)
    if not kept:
        return 1.0
    survived = Counter(kept) & Counter(q_prime.split())
    return sum(survived.values()) / len(kept)


def preservation_score(q: str, q_prime: str, embedder: Optional[EmbeddingBackend] = None) -> float:
    embedder = embedder or HashingEmbedder()
    if not (q.strip() and q_prime.strip()):
        return 0.0
    return 100.0 * min(1.0, max(0.0, cosine(embed(embedder, q), embed(embedder, q_prime))))


@dataclass(frozen=True)
class TranslationMetrics:
    overlap: float
    coverage: float
    similarity: float
    hallucination: float


def expected_attributes(q_anon: str, ontology: TelecomOntology, vertical: Optional[str], intent: Optional[str]) -> list[str]:
    terms = [t for _, t in map_terms(q_anon, ontology)]
    implicit = [c.expression for c in infer_implicit_constraints(vertical, intent, ontology)]
    return list(dict.fromkeys(terms + implicit))


def hallucination_rate(constraints: Sequence, ontology: TelecomOntology) -> float:
    if not constraints:
        return 0.0
    return 100.0 * sum(not constraint_has_source(c, ontology) for c in constraints) / len(constraints)


def translation_metrics(
    q_anon: str,
    q_tech: TechnicalQuery,
    ontology: TelecomOntology,
    vertical: Optional[str] = None,
    intent: Optional[str] = None,
    embedder: Optional[EmbeddingBackend] = None,
) -> TranslationMetrics:
    src = set(tokenize(q_anon))
    overlap = 100.0 * len(src & set(tokenize(q_tech.text))) / len(src) if src else 0.0
    expected = expected_attributes(q_anon, ontology, vertical, intent)
    text = q_tech.text.lower()
    coverage = 100.0 * sum(a.lower() in text for a in expected) / len(expected) if expected else 100.0
    similarity = preservation_score(q_anon, q_tech.text, embedder)
    return TranslationMetrics(overlap, coverage, similarity, hallucination_rate(q_tech.constraints, ontology))
