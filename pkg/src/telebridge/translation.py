"""Anonymized user query -> technical query.

Formulation is a template: an intent clause, the query with user phrases
swapped for ontology terms, then a constraint clause for anything the text
does not already state. Every constraint carries the id of the pattern or
implicit rule that produced it.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

from .backends import BackendError, CompletionBackend, complete
from .core import PipelineConfig, TelebridgeError, ValidationError
from .domain_aware import DomainAssignment
from .privacy.anonymize import PLACEHOLDER_RE
from .prompts import PromptRegistry
from .reflection import Checklist, LoopResult, ReflectionReport, reflection_loop

CONSTRAINT_KINDS = ("temporal", "spatial", "performance", "segment", "protocol")
UNCONVERGED_CAP = 0.5


class OntologyError(TelebridgeError):
    pass


@dataclass(frozen=True)
class Constraint:
    kind: str
    expression: str
    source: str = "explicit"
    origin: str = ""

    def __post_init__(self):
        if self.kind not in CONSTRAINT_KINDS:
            raise ValidationError(f"constraint kind in {CONSTRAINT_KINDS}")
        if not self.expression.strip():
            raise ValidationError("constraint expression non-empty")
        if self.source not in ("explicit", "implicit"):
            raise ValidationError("constraint source is explicit or implicit")

    @property
    def key(self) -> tuple[str, str]:
        return (self.kind, self.expression.lower())

    def clause(self) -> str:
        return f"{self.kind}: {self.expression}"

    def to_dict(self) -> dict:
        return {"kind": self.kind, "expression": self.expression, "source": self.source, "origin": self.origin}


@dataclass(frozen=True)
class TermEntry:
    pattern: str
    term: str
    definition: str = ""
    kpis: tuple[str, ...] = ()


@dataclass(frozen=True)
class ImplicitRule:
    id: str
    vertical: str
    intent: str
    constraints: tuple[tuple[str, str], ...]


def _phrase_re(phrase: str) -> re.Pattern:
    return re.compile(rf"(?<![\w-]){re.escape(phrase)}(?![\w-])", re.IGNORECASE)


class TelecomOntology:
    def __init__(self, terms: Sequence[TermEntry], rules: Sequence[ImplicitRule], glossary: Mapping[str, str] | None = None):
        patterns = [t.pattern.lower() for t in terms]
        if len(set(patterns)) != len(patterns):
            raise OntologyError("ontology term patterns must be unique")
        ids = [r.id for r in rules]
        if len(set(ids)) != len(ids):
            raise OntologyError("implicit rule ids must be unique")
        self.terms = tuple(terms)
        self.rules = tuple(rules)
        self.glossary = dict(glossary or {})
        ordered = sorted(self.terms, key=lambda t: len(t.pattern), reverse=True)
        self._by_pattern = {t.pattern.lower(): t for t in ordered}
        alternation = "|".join(re.escape(t.pattern) for t in ordered)
        self._scan = re.compile(rf"(?<![\w-])(?:{alternation})(?![\w-])", re.IGNORECASE) if ordered else None
        # a technical term that contains a user phrase would be re-mapped on a second pass
        for t in self.terms:
            if self._scan is not None and self._scan.search(t.term):
                raise OntologyError(f"technical term {t.term!r} matches a user pattern")

    @classmethod
    def from_dict(cls, d: dict) -> "TelecomOntology":
        terms = [TermEntry(t["pattern"], t["term"], t.get("definition", ""), tuple(t.get("kpis", ()))) for t in d.get("terms", [])]
        rules = [
            ImplicitRule(r["id"], r["vertical"], r.get("intent", "*"), tuple((c["kind"], c["expression"]) for c in r["constraints"]))
            for r in d.get("implicit_rules", [])
        ]
        for r in rules:
            for kind, expr in r.constraints:
                Constraint(kind, expr, "implicit", r.id)
        return cls(terms, rules, d.get("glossary", {}))

    @classmethod
    def load(cls, path: str | Path) -> "TelecomOntology":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def validate_references(self, vertical_ids: Iterable[str], intent_ids: Iterable[str]) -> None:
        verticals, intents = set(vertical_ids), set(intent_ids)
        for r in self.rules:
            if r.vertical not in verticals:
                raise OntologyError(f"rule {r.id} names unknown vertical {r.vertical!r}")
            if r.intent != "*" and r.intent not in intents:
                raise OntologyError(f"rule {r.id} names unknown intent {r.intent!r}")

    def lookup(self, phrase: str) -> Optional[TermEntry]:
        return self._by_pattern.get(phrase.lower())

    def definitions(self) -> dict[str, str]:
        """Technical term and glossary definitions, keyed by surface."""
        out = {t.term: t.definition for t in self.terms if t.definition}
        out.update(self.glossary)
        return out


# --------------------------------------------------------------------------- explicit constraints

_METRICS = (
    "packet loss", "PRB utilization", "end-to-end latency", "latency", "delay", "jitter", "round trip time", "RTT",
    "uplink throughput", "downlink throughput", "throughput", "bandwidth", "RSRP", "RSRQ", "SINR", "signal strength", "error rate",
)
_METRIC_ALT = "|".join(re.escape(m) for m in sorted(_METRICS, key=len, reverse=True))
_NUM_UNIT = r"(-?\d+(?:\.\d+)?)\s?(Mbps|Gbps|kbps|dBm|dB|MHz|GHz|ms|%|s)(?![\w%])"
_OPS = {
    ">": ">", "above": ">", "over": ">", "exceeds": ">", "exceed": ">", "exceeding": ">", "greater than": ">", "more than": ">",
    "higher than": ">", "<": "<", "below": "<", "under": "<", "less than": "<", "lower than": "<", "=": "=", "of": "=", "at": "=",
    "is": "=", "around": "=", "about": "=", "reaching": "=",
}
_OP_ALT = "|".join(re.escape(o) for o in sorted(_OPS, key=len, reverse=True))
_PARTS = "morning|afternoon|evening|night|midnight|noon|yesterday|today"
_SEGMENTS = [
    (r"core network|5G core|5GC", "core network"),
    (r"radio access network|RAN", "radio access network"),
    (r"transport network|backhaul", "transport network"),
    (r"fronthaul", "fronthaul"),
    (r"edge compute|edge server|MEC", "edge compute"),
]
_PROTOCOLS = ("MQTT", "CoAP", "HTTPS", "HTTP", "TCP", "UDP", "Modbus", "OPC UA", "PROFINET", "LoRaWAN", "Wi-Fi", "LTE", "5G NR")

# (pattern id, kind, regex, normalizer)
EXPLICIT_PATTERNS: list[tuple[str, str, re.Pattern, object]] = []


def _pattern(pid: str, kind: str, rx: str, flags=re.IGNORECASE):
    def deco(fn):
        EXPLICIT_PATTERNS.append((pid, kind, re.compile(rx, flags), fn))
        return fn

    return deco


def _clock(hour: int, minute: int, ampm: str) -> str:
    ampm = (ampm or "").lower()
    if ampm == "pm" and hour < 12:
        hour += 12
    if ampm == "am" and hour == 12:
        hour = 0
    return f"{hour:02d}:{minute:02d}"


@_pattern("metric_op_value", "performance", rf"(?<![\w-])({_METRIC_ALT})\s+(?:(?:is|was)\s+)?({_OP_ALT})\s+{_NUM_UNIT}")
def _metric_op_value(m):
    metric = next(x for x in _METRICS if x.lower() == m.group(1).lower())
    return f"{metric} {_OPS[m.group(2).lower()]} {m.group(3)} {m.group(4)}"


@_pattern("value_metric", "performance", rf"(?<![\w.-]){_NUM_UNIT}\s+(?:of\s+)?({_METRIC_ALT})(?![\w-])")
def _value_metric(m):
    metric = next(x for x in _METRICS if x.lower() == m.group(3).lower())
    return f"{metric} = {m.group(1)} {m.group(2)}"


@_pattern("slow_uplink", "performance", r"\bslow\s+(?:when|while)\s+uploading\b|\bslow\s+uploads?\b|\buploads?\s+(?:is|are)\s+(?:very\s+)?slow\b|\buplink throughput degradation\b")
def _slow_uplink(m):
    return "uplink throughput degradation"


@_pattern("slow_downlink", "performance", r"\bslow\s+(?:when|while)\s+downloading\b|\bslow\s+downloads?\b|\bdownlink throughput degradation\b")
def _slow_downlink(m):
    return "downlink throughput degradation"


@_pattern("since_clock", "temporal", r"\bsince\s+(?:(\d{1,2}):(\d{2})\s?([ap]m)?|(\d{1,2})\s?([ap]m))(?!\w)")
def _since_clock(m):
    if m.group(1):
        return "since " + _clock(int(m.group(1)), int(m.group(2)), m.group(3))
    return "since " + _clock(int(m.group(4)), 0, m.group(5))


@_pattern("since_date", "temporal", r"\bsince\s+(\d{4}-\d{2}(?:-\d{2})?)(?![\w-])")
def _since_date(m):
    return "since " + m.group(1)


@_pattern("since_part", "temporal", rf"\bsince\s+(?:this\s+|the\s+)?({_PARTS})\b")
def _since_part(m):
    return "since " + m.group(1).lower()


@_pattern("for_last", "temporal", r"\b(?:for|over|in)\s+the\s+(?:last|past)\s+(\d+)\s+(second|minute|hour|day|week)s?\b")
def _for_last(m):
    n, unit = int(m.group(1)), m.group(2).lower()
    return f"for the last {n} {unit}{'s' if n != 1 else ''}"


@_pattern("every_n", "temporal", r"\bevery\s+(?:(\d+)\s+)?(second|minute|hour|day)s?\b")
def _every_n(m):
    if m.group(1):
        n = int(m.group(1))
        return f"every {n} {m.group(2).lower()}{'s' if n != 1 else ''}"
    return f"every {m.group(2).lower()}"


@_pattern("placeholder_ref", "spatial", r"\[(?:IP|MAC|DEVICE|NODE)(?:_[A-Z]+)?(?:_\d+)?\]|\[REDACTED_LOC\]", 0)
def _placeholder_ref(m):
    return m.group(0)


for _i, (_rx, _norm) in enumerate(_SEGMENTS):
    EXPLICIT_PATTERNS.append((f"segment_{_i}", "segment", re.compile(rf"(?<![\w-])(?:{_rx})(?![\w-])", re.IGNORECASE), lambda m, _n=_norm: _n))

EXPLICIT_PATTERNS.append(
    (
        "protocol",
        "protocol",
        re.compile(rf"(?<![\w-])({'|'.join(re.escape(p) for p in _PROTOCOLS)})(?![\w-])"),
        lambda m: "protocol " + m.group(1),
    )
)

PATTERN_IDS = frozenset(p[0] for p in EXPLICIT_PATTERNS)


def _dedupe(cs: Iterable[Constraint]) -> list[Constraint]:
    seen, out = set(), []
    for c in cs:
        if c.key not in seen:
            seen.add(c.key)
            out.append(c)
    return out


def extract_explicit_constraints(q_anon: str) -> list[Constraint]:
    """Pattern-table extraction; overlapping matches go to the longest span."""
    cands = []
    for order, (pid, kind, rx, norm) in enumerate(EXPLICIT_PATTERNS):
        for m in rx.finditer(q_anon):
            cands.append((m.start(), m.end(), order, pid, kind, norm(m)))
    cands.sort(key=lambda c: (-(c[1] - c[0]), c[2], c[0]))
    taken, chosen = [], []
    for start, end, _, pid, kind, expr in cands:
        if any(start < e and s < end for s, e in taken):
            continue
        taken.append((start, end))
        chosen.append((start, Constraint(kind, expr, "explicit", pid)))
    return _dedupe(c for _, c in sorted(chosen, key=lambda x: x[0]))


def infer_implicit_constraints(assign: DomainAssignment | str | None, intent: Optional[str], ontology: TelecomOntology) -> list[Constraint]:
    """Constraints of every rule registered for the top vertical and intent; ``assign`` may be a vertical id."""
    if assign is None:
        return []
    vertical = assign if isinstance(assign, str) else assign.top_vertical
    out = []
    for r in ontology.rules:
        if r.vertical == vertical and (r.intent == "*" or (intent is not None and r.intent.lower() == intent.lower())):
            out.extend(Constraint(kind, expr, "implicit", r.id) for kind, expr in r.constraints)
    return _dedupe(out)


def constraint_has_source(c: Constraint, ontology: TelecomOntology) -> bool:
    if c.source == "explicit":
        return c.origin in PATTERN_IDS
    return c.origin in {r.id for r in ontology.rules}


# --------------------------------------------------------------------------- terms


def map_terms(q_anon: str, ontology: TelecomOntology) -> list[tuple[str, str]]:
    if ontology._scan is None:
        return []
    return [(m.group(0), ontology.lookup(m.group(0)).term) for m in ontology._scan.finditer(q_anon)]


def apply_terms(text: str, ontology: TelecomOntology) -> str:
    if ontology._scan is None:
        return text
    return ontology._scan.sub(lambda m: ontology.lookup(m.group(0)).term, text)


# --------------------------------------------------------------------------- formulation


def _contains(text: str, expr: str) -> bool:
    return expr.lower() in text.lower()


def _target_placeholder(text: str) -> Optional[str]:
    found = PLACEHOLDER_RE.findall(text)
    for prefix in ("[IP", "[DEVICE", "[MAC", "[NODE"):
        for ph in found:
            if ph.startswith(prefix):
                return ph
    return None


def _sentence(s: str) -> str:
    s = s.strip()
    return s if not s or s[-1] in ".!?" else s + "."


def formulate(q_anon: str, intent_phrase: str, constraints: Sequence[Constraint], ontology: TelecomOntology) -> str:
    """Template formulation; a text already in technical form is only completed."""
    body = apply_terms(q_anon.strip(), ontology)
    if body.startswith("Diagnose "):
        text = body
    else:
        head = f"Diagnose {intent_phrase}"
        target = _target_placeholder(body)
        if target:
            head += f" for IoT device {target}"
        segments = [c.expression for c in constraints if c.kind == "segment"]
        if segments:
            head += " in " + " and ".join(segments)
        text = _sentence(head) + (" Report: " + _sentence(body) if body else "")
    return add_constraint_clause(text, constraints)


def add_constraint_clause(text: str, constraints: Sequence[Constraint]) -> str:
    missing = [c for c in constraints if not _contains(text, c.expression)]
    if not missing:
        return text
    return _sentence(text) + " Constraints: " + "; ".join(c.clause() for c in missing) + "."


# --------------------------------------------------------------------------- confidence


def validate_translation(q_tech_text: str, q_anon: str, term_map: Sequence[tuple[str, str]], constraints: Sequence[Constraint]) -> float:
    """0.5 * mapped-term coverage + 0.5 * constraint inclusion; an empty ratio counts 0."""
    coverage = sum(1 for _, t in term_map if _contains(q_tech_text, t)) / len(term_map) if term_map else 0.0
    inclusion = sum(1 for c in constraints if _contains(q_tech_text, c.expression)) / len(constraints) if constraints else 0.0
    return min(1.0, max(0.0, 0.5 * coverage + 0.5 * inclusion))


@dataclass
class TechnicalQuery:
    text: str
    constraints: tuple[Constraint, ...]
    conf_trans: float
    request_id: Optional[str] = None
    terms: tuple[tuple[str, str], ...] = ()
    intent: Optional[str] = None
    reflection: Optional[LoopResult] = None
    warnings: list[str] = field(default_factory=list)

    def __post_init__(self):
        if not 0.0 <= self.conf_trans <= 1.0:
            raise ValidationError("conf_trans in [0,1]")
        for c in self.constraints:
            if not _contains(self.text, c.expression):
                raise ValidationError(f"constraint {c.expression!r} appears in text")

    def to_dict(self) -> dict:
        return {
            "text": self.text,
            "constraints": [c.to_dict() for c in self.constraints],
            "conf_trans": self.conf_trans,
            "request_id": self.request_id,
            "terms": [list(t) for t in self.terms],
            "intent": self.intent,
            "reflection": self.reflection.summary() if self.reflection else None,
            "warnings": list(self.warnings),
        }


def _humanize(intent: str) -> str:
    return intent.replace("_", " ").lower()


def translation_observation(text: str, intent_phrase: str, terms, constraints, q_anon: str) -> dict:
    return {
        "text": text,
        "intent_phrase": intent_phrase,
        "terms": list(terms),
        "constraints": [c.expression for c in constraints],
        "confidence": validate_translation(text, q_anon, terms, constraints),
    }


def _backend_formulation(backend, registry, q_anon, intent_phrase, constraints) -> Optional[str]:
    if backend is None or registry is None or "translation" not in registry:
        return None
    prompt = registry.render(
        "translation",
        query=q_anon,
        intent=intent_phrase,
        constraints="; ".join(c.clause() for c in constraints) or "none",
    )
    try:
        return complete(backend, prompt).strip()
    except BackendError:
        return None


def translate(
    q_anon: str,
    assign: Optional[DomainAssignment],
    intent: Optional[str],
    ontology: TelecomOntology,
    critic: Optional[CompletionBackend] = None,
    backend: Optional[CompletionBackend] = None,
    *,
    cfg: PipelineConfig = PipelineConfig(),
    checklist: Optional[Checklist] = None,
    registry: Optional[PromptRegistry] = None,
    intent_phrase: Optional[str] = None,
    vertical_name: Optional[str] = None,
    request_id: Optional[str] = None,
) -> TechnicalQuery:
    phrase = intent_phrase or (_humanize(intent) if intent else "reported network fault")
    explicit = [Constraint(c.kind, apply_terms(c.expression, ontology), c.source, c.origin) for c in extract_explicit_constraints(q_anon)]
    constraints = sorted(
        _dedupe(infer_implicit_constraints(assign, intent, ontology) + explicit),
        key=lambda c: (CONSTRAINT_KINDS.index(c.kind), c.expression.lower()),
    )
    terms = map_terms(q_anon, ontology)
    text = _backend_formulation(backend, registry, q_anon, phrase, constraints)
    if text:
        for user, term in terms:
            text = re.sub(re.escape(user), term, text, flags=re.IGNORECASE)
        text = add_constraint_clause(text, constraints)
    else:
        text = formulate(q_anon, phrase, constraints, ontology)
    warnings: list[str] = []
    loop = None

    def observe(t: str) -> dict:
        return translation_observation(t, phrase, terms, constraints, q_anon)

    def refine(t: str, report: ReflectionReport) -> str:
        t = add_constraint_clause(apply_terms(t, ontology), constraints)
        missing_terms = [term for _, term in terms if not _contains(t, term)]
        if missing_terms:
            t = _sentence(t) + " Terms: " + ", ".join(missing_terms) + "."
        if not _contains(t, phrase):
            t = _sentence(t) + f" Intent: {phrase}."
        if vertical_name and not _contains(t, vertical_name):
            t = _sentence(t) + f" Vertical: {vertical_name}."
        return t

    if checklist is not None:
        loop = reflection_loop(text, checklist, observe, refine, cfg.max_reflection_rounds, critic, registry)
        text = loop.output
        warnings.extend(loop.warnings)
    text = add_constraint_clause(text, constraints)
    conf = validate_translation(text, q_anon, terms, constraints)
    if loop is not None and not loop.converged:
        conf = min(conf, UNCONVERGED_CAP)
    return TechnicalQuery(text, tuple(constraints), conf, request_id, tuple(terms), intent, loop, warnings)
