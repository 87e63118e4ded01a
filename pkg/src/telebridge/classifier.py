"""Two-stage query classification.

Stage 1 is a prototype classifier over embeddings: each intent's prototype is
the mean embedding of its seed examples, the per-intent logit is the cosine
to that prototype, and ``softmax(logit / T)`` gives the intent distribution.
Confidence ``(score* + margin) / 2`` is routed by two thresholds; the middle
band escalates to a chain-of-thought completion primed with exemplars chosen
by maximal marginal relevance.
"""

from __future__ import annotations

import enum
import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .backends import CompletionBackend, EmbeddingBackend, complete, cosine, embed
from .core import CLARIFY_MESSAGE, ClarificationRequest, PipelineConfig, TelebridgeError, UserQuery, ValidationError
from .domain_aware import DomainAssignment, argmax_first, softmax, top_two_margin
from .prompts import PromptRegistry
from .reflection import Checklist, ReflectionReport, generate_reflection

logger = logging.getLogger(__name__)

MMR_RELEVANCE = 0.7

STAGE2_PROMPT = """You are classifying a network troubleshooting query.
Think step by step about which intent fits best.

Intents:
{intents}

Similar past queries:
{exemplars}

Query: {query}
Domain: {vertical}

Reply with `reasoning=<one line>` and then `intent=<intent id> score=<0..1> confidence=<0..1>`."""

STAGE2_STRICT_SUFFIX = """
Your previous reply could not be parsed. Reply with exactly one line:
intent=<one of the intent ids above> score=<number in [0,1]> confidence=<number in [0,1]>"""


class Stage2ParseError(TelebridgeError):
    pass


class RetrievalError(TelebridgeError):
    pass


class RoutingDecision(enum.Enum):
    ACCEPT = "accept"
    ESCALATE_S2 = "escalate_s2"
    CLARIFY = "clarify"


@dataclass(frozen=True)
class Intent:
    id: str
    name: str
    description: str
    examples: tuple[str, ...]
    technical_phrase: str = ""


class IntentTaxonomy:
    def __init__(self, intents: Sequence[Intent]):
        self.intents = tuple(intents)
        ids = [i.id for i in self.intents]
        if len(ids) < 2:
            raise ValidationError("intent taxonomy has >= 2 intents")
        if len({i.lower() for i in ids}) != len(ids):
            raise ValidationError("intent ids are unique")
        for i in self.intents:
            if not i.examples:
                raise ValidationError(f"intent {i.id!r} has >= 1 seed example")
        self._by_key = {i.id.lower(): i for i in self.intents}

    @classmethod
    def from_list(cls, data: list[dict]) -> "IntentTaxonomy":
        return cls(
            [
                Intent(d["id"], d.get("name", d["id"]), d.get("description", ""), tuple(d["examples"]), d.get("technical_phrase", ""))
                for d in data
            ]
        )

    @classmethod
    def load(cls, path: str | Path) -> "IntentTaxonomy":
        return cls.from_list(json.loads(Path(path).read_text(encoding="utf-8")))

    @property
    def ids(self) -> list[str]:
        return [i.id for i in self.intents]

    def canonical(self, intent_id: str) -> Optional[str]:
        hit = self._by_key.get(intent_id.strip().lower())
        return hit.id if hit else None

    def get(self, intent_id: str) -> Intent:
        hit = self._by_key.get(intent_id.lower())
        if hit is None:
            raise KeyError(intent_id)
        return hit


@dataclass(frozen=True)
class ClassificationContext:
    vertical: Optional[str]
    timestamp: str
    notes: str = ""


@dataclass(frozen=True)
class Classification:
    score: float
    intent: str
    context: ClassificationContext
    confidence: float
    stage: int = 1
    reasoning: str = ""

    def __post_init__(self):
        if not (0.0 <= self.score <= 1.0 and 0.0 <= self.confidence <= 1.0):
            raise ValidationError("classification score and confidence in [0,1]")

    def to_dict(self) -> dict:
        return {
            "score": self.score,
            "intent": self.intent,
            "confidence": self.confidence,
            "stage": self.stage,
            "context": {"vertical": self.context.vertical, "timestamp": self.context.timestamp, "notes": self.context.notes},
            "reasoning": self.reasoning,
        }


@dataclass(frozen=True)
class Stage1Result:
    probs: tuple[float, ...]
    intent_ids: tuple[str, ...]
    intent: str
    score: float
    margin: float


class PrototypeClassifier:
    def __init__(self, taxonomy: IntentTaxonomy, embedder: EmbeddingBackend, temperature: float = 0.1):
        self.taxonomy = taxonomy
        self.embedder = embedder
        self.temperature = temperature
        self.prototypes = [np.mean([embed(embedder, x) for x in it.examples], axis=0) for it in taxonomy.intents]

    def logits(self, text: str) -> list[float]:
        e_q = embed(self.embedder, text)
        return [cosine(e_q, p) for p in self.prototypes]

    def classify(self, text: str) -> Stage1Result:
        return stage1_from_logits(self.taxonomy, self.logits(text), self.temperature)


def stage1_from_logits(taxonomy: IntentTaxonomy, logits: Sequence[float], temperature: float) -> Stage1Result:
    probs = [float(p) for p in softmax(logits, temperature)]
    return stage1_from_probs(taxonomy, probs)


def stage1_from_probs(taxonomy: IntentTaxonomy, probs: Sequence[float]) -> Stage1Result:
    top = argmax_first(probs)
    return Stage1Result(
        probs=tuple(probs),
        intent_ids=tuple(taxonomy.ids),
        intent=taxonomy.ids[top],
        score=float(probs[top]),
        margin=max(0.0, top_two_margin(probs)),
    )


def stage1_classify(q: UserQuery, taxonomy: IntentTaxonomy, embedder: EmbeddingBackend, temperature: float = 0.1) -> Stage1Result:
    return PrototypeClassifier(taxonomy, embedder, temperature).classify(q.text)


def calibrate(score: float, margin: float) -> float:
    if not (0.0 <= score <= 1.0 and 0.0 <= margin <= 1.0):
        raise ValueError("calibrate inputs must lie in [0,1]")
    return min(1.0, max(0.0, (score + margin) / 2.0))


def route_between(confidence: float, theta_low: float, theta_high: float) -> RoutingDecision:
    if confidence >= theta_high:
        return RoutingDecision.ACCEPT
    if confidence >= theta_low:
        return RoutingDecision.ESCALATE_S2
    return RoutingDecision.CLARIFY


def route(confidence: float, cfg: PipelineConfig = PipelineConfig()) -> RoutingDecision:
    return route_between(confidence, cfg.theta_low, cfg.theta_high)


# --------------------------------------------------------------------------- exemplars


@dataclass(frozen=True)
class Exemplar:
    text: str
    embedding: np.ndarray = field(repr=False, compare=False)
    intent: Optional[str] = None


class ExemplarStore:
    def __init__(self, items: Sequence[Exemplar], embedder: EmbeddingBackend):
        self.items = tuple(items)
        self.embedder = embedder
        dims = {len(i.embedding) for i in self.items}
        if len(dims) > 1:
            raise ValidationError("exemplar embeddings share one dimension")

    @classmethod
    def from_records(cls, records: Sequence[dict], embedder: EmbeddingBackend) -> "ExemplarStore":
        return cls([Exemplar(r["text"], embed(embedder, r["text"]), r.get("intent")) for r in records], embedder)

    @classmethod
    def load(cls, path: str | Path, embedder: EmbeddingBackend) -> "ExemplarStore":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls.from_records([json.loads(l) for l in lines if l.strip()], embedder)

    def __len__(self) -> int:
        return len(self.items)


def mmr_select(query_vec: np.ndarray, vectors: Sequence[np.ndarray], k: int, relevance: float = MMR_RELEVANCE) -> list[int]:
    """Greedy maximal marginal relevance; ties go to the earlier item."""
    rel = [cosine(query_vec, v) for v in vectors]
    chosen: list[int] = []
    remaining = list(range(len(vectors)))
    while remaining and len(chosen) < k:
        def gain(i: int) -> float:
            if not chosen:
                return rel[i]
            redundancy = max(cosine(vectors[i], vectors[j]) for j in chosen)
            return relevance * rel[i] - (1 - relevance) * redundancy

        best = remaining[0]
        for i in remaining[1:]:
            if gain(i) > gain(best):
                best = i
        chosen.append(best)
        remaining.remove(best)
    return chosen


def retrieve_exemplars(q: UserQuery, store: ExemplarStore, k: int = 5) -> list[Exemplar]:
    if len(store) == 0:
        raise RetrievalError("exemplar store is empty")
    if k < 1:
        raise ValueError("k >= 1")
    e_q = embed(store.embedder, q.text)
    return [store.items[i] for i in mmr_select(e_q, [x.embedding for x in store.items], k)]


# --------------------------------------------------------------------------- stage 2

_FIELD_RES = {name: re.compile(rf"\b{name}\s*[=:]\s*([^\s,;]+)", re.IGNORECASE) for name in ("intent", "score", "confidence")}
_REASONING_RE = re.compile(r"\breasoning\s*[=:]\s*(.+)", re.IGNORECASE)


def parse_stage2_reply(reply: str, taxonomy: IntentTaxonomy) -> Optional[tuple[str, str, float, float]]:
    """``(reasoning, intent, score, confidence)`` or None when unusable."""
    found = {}
    for name, rx in _FIELD_RES.items():
        m = rx.search(reply)
        if not m:
            return None
        found[name] = m.group(1).strip("`'\".")
    intent = taxonomy.canonical(found["intent"])
    if intent is None:
        return None
    try:
        score, conf = float(found["score"]), float(found["confidence"])
    except ValueError:
        return None
    if not (0.0 <= score <= 1.0 and 0.0 <= conf <= 1.0):
        return None
    m = _REASONING_RE.search(reply)
    if m:
        reasoning = m.group(1).strip()
    else:
        reasoning = " ".join(l.strip() for l in reply.splitlines() if "=" not in l).strip()
    return reasoning, intent, score, conf


def stage2_prompt(q: UserQuery, exemplars: Sequence[Exemplar], taxonomy: IntentTaxonomy, vertical: str, registry: Optional[PromptRegistry]) -> str:
    values = dict(
        intents="\n".join(f"- {i.id}: {i.description}" for i in taxonomy.intents),
        exemplars="\n".join(f"- {e.text}" + (f" -> {e.intent}" if e.intent else "") for e in exemplars) or "- (none)",
        query=q.text,
        vertical=vertical,
    )
    if registry is not None and "stage2_cot" in registry:
        return registry.render("stage2_cot", **values)
    return STAGE2_PROMPT.format(**values)


def stage2_classify(
    q: UserQuery,
    exemplars: Sequence[Exemplar],
    taxonomy: IntentTaxonomy,
    backend: CompletionBackend,
    registry: Optional[PromptRegistry] = None,
    vertical: Optional[str] = None,
) -> Classification:
    prompt = stage2_prompt(q, exemplars, taxonomy, vertical or "unknown", registry)
    for attempt in range(2):
        reply = complete(backend, prompt if attempt == 0 else prompt + STAGE2_STRICT_SUFFIX)
        parsed = parse_stage2_reply(reply, taxonomy)
        if parsed is not None:
            break
        logger.info("stage-2 reply unparseable (attempt %d)", attempt + 1)
    else:
        raise Stage2ParseError("stage-2 reply unparseable after one reprompt")
    reasoning, intent, score, conf = parsed
    ctx = ClassificationContext(vertical, q.received_at.isoformat(), notes="stage 2 chain-of-thought")
    return Classification(score, intent, ctx, conf, stage=2, reasoning=reasoning)


# --------------------------------------------------------------------------- composition


@dataclass
class TwoStageResult:
    stage1: Stage1Result
    stage1_confidence: float
    routing: RoutingDecision
    classification: Optional[Classification] = None
    clarification: Optional[ClarificationRequest] = None
    reflection: Optional[ReflectionReport] = None
    needs_user_input: bool = False
    exemplars: list[Exemplar] = field(default_factory=list)

    @property
    def escalated(self) -> bool:
        """True when Stage 2 was consulted."""
        return self.routing is RoutingDecision.ESCALATE_S2

    def to_dict(self) -> dict:
        return {
            "stage1": {"intent": self.stage1.intent, "score": self.stage1.score, "margin": self.stage1.margin, "probs": dict(zip(self.stage1.intent_ids, self.stage1.probs))},
            "stage1_confidence": self.stage1_confidence,
            "routing": self.routing.value,
            "classification": self.classification.to_dict() if self.classification else None,
            "clarification": self.clarification.message if self.clarification else None,
            "needs_user_input": self.needs_user_input,
            "exemplars": [e.text for e in self.exemplars],
        }


def classification_observation(res: TwoStageResult, cfg: PipelineConfig) -> dict:
    c = res.classification
    return {
        "text": f"intent={c.intent} score={c.score:.3f} confidence={c.confidence:.3f} stage={c.stage}",
        "probs": res.stage1.probs,
        "score": res.stage1.score,
        "margin": res.stage1.margin,
        "stage": 1,
        "confidence": res.stage1_confidence,
        "decision": res.routing.value,
        "theta_low": cfg.theta_low,
        "theta_high": cfg.theta_high,
    }


def two_stage(
    q: UserQuery,
    taxonomy: IntentTaxonomy,
    store: ExemplarStore,
    embedder: EmbeddingBackend,
    backend: Optional[CompletionBackend],
    cfg: PipelineConfig,
    *,
    assign: Optional[DomainAssignment] = None,
    checklist: Optional[Checklist] = None,
    critic: Optional[CompletionBackend] = None,
    registry: Optional[PromptRegistry] = None,
    classifier: Optional[PrototypeClassifier] = None,
) -> TwoStageResult:
    classifier = classifier or PrototypeClassifier(taxonomy, embedder, cfg.classifier_temperature)
    s1 = classifier.classify(q.text)
    conf = calibrate(s1.score, s1.margin)
    decision = route(conf, cfg)
    res = TwoStageResult(s1, conf, decision)
    vertical = assign.top_vertical if assign else None

    if decision is RoutingDecision.CLARIFY:
        res.clarification = ClarificationRequest(q.request_id, CLARIFY_MESSAGE, "classify")
        res.needs_user_input = True
        return res

    if decision is RoutingDecision.ACCEPT:
        ctx = ClassificationContext(vertical, q.received_at.isoformat(), notes="stage 1 prototype classifier")
        res.classification = Classification(s1.score, s1.intent, ctx, conf, stage=1)
    else:
        if backend is None:
            raise TelebridgeError("stage 2 needs a completion backend")
        res.exemplars = retrieve_exemplars(q, store, cfg.exemplar_k)
        c2 = stage2_classify(q, res.exemplars, taxonomy, backend, registry, vertical)
        if c2.confidence <= cfg.clarify_band_high:
            if c2.confidence >= cfg.clarify_band_low:
                alt = sorted(zip(s1.probs, s1.intent_ids), reverse=True)[:2]
                names = " or ".join(taxonomy.get(i).name.lower() for _, i in alt)
                msg = f"{CLARIFY_MESSAGE}: is the problem {names}?"
            else:
                msg = CLARIFY_MESSAGE
            res.clarification = ClarificationRequest(q.request_id, msg, "classify")
            res.needs_user_input = True
            return res
        res.classification = c2

    if checklist is not None:
        res.reflection = generate_reflection(classification_observation(res, cfg), checklist, critic, registry)
    return res
