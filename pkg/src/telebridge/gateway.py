"""End-to-end router: domain -> classify -> privacy -> translate -> expert -> simplify."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Optional

from .backends import BackendError, CompletionBackend, HashingEmbedder, HTTPBackend, ScriptedBackend, ScriptedFixture, complete
from .classifier import ExemplarStore, IntentTaxonomy, PrototypeClassifier, two_stage
from .core import PipelineConfig, PipelineTrace, StageRecord, TelebridgeError, UserQuery, digest
from .domain_aware import DomainScorer, VerticalTaxonomy, build_domain_prompt
from .privacy.anonymize import AnonymizationResult, PrivacyParams, anonymize, deanonymize
from .privacy.detection import Detector
from .privacy.hierarchy import GeneralizationHierarchy
from .prompts import PromptRegistry
from .reflection import Checklist, ReflectionReport, generate_reflection, load_checklists
from .resources import data_dir, data_path
from .simplification import Lexicon, simplify
from .translation import TelecomOntology, translate

logger = logging.getLogger(__name__)

OUTCOMES = ("answered", "clarification", "error")
EXPERT_ATTEMPTS = 2
# batch queries get a fixed receive time so reruns are byte-identical
_EPOCH = datetime(1970, 1, 1, tzinfo=timezone.utc)


@dataclass
class Resources:
    """Everything loaded once at startup and shared read-only across requests."""

    verticals: VerticalTaxonomy
    intents: IntentTaxonomy
    embedder: HashingEmbedder
    scorer: DomainScorer
    classifier: PrototypeClassifier
    exemplars: ExemplarStore
    hierarchy: GeneralizationHierarchy
    detector: Detector
    ontology: TelecomOntology
    lexicon: Lexicon
    checklists: dict[str, Checklist]
    registry: PromptRegistry
    expert: Optional[CompletionBackend] = None
    stage2: Optional[CompletionBackend] = None
    critic: Optional[CompletionBackend] = None

    @classmethod
    def load(
        cls,
        directory: Optional[str | Path] = None,
        cfg: PipelineConfig = PipelineConfig(),
        backend: Optional[CompletionBackend] = None,
        critic: Optional[CompletionBackend] = None,
    ) -> "Resources":
        d = Path(directory) if directory else data_dir()
        embedder = HashingEmbedder()
        verticals = VerticalTaxonomy.load(d / "verticals.json")
        intents = IntentTaxonomy.load(d / "intents.json")
        records = [{"text": ex, "intent": i.id} for i in intents.intents for ex in i.examples]
        extra_path = d / "exemplars.jsonl"
        extra = [json.loads(l) for l in extra_path.read_text(encoding="utf-8").splitlines() if l.strip()] if extra_path.exists() else []
        records += extra
        hierarchy = GeneralizationHierarchy.load(d / "hierarchy.json")
        ontology = TelecomOntology.load(d / "ontology.json")
        ontology.validate_references(verticals.ids, intents.ids)
        return cls(
            verticals=verticals,
            intents=intents,
            embedder=embedder,
            scorer=DomainScorer(verticals, embedder),
            classifier=PrototypeClassifier(intents, embedder, cfg.classifier_temperature),
            exemplars=ExemplarStore.from_records(records, embedder),
            hierarchy=hierarchy,
            detector=Detector.from_resources(hierarchy, d / "gazetteers"),
            ontology=ontology,
            lexicon=Lexicon.load(d / "lexicon.tsv"),
            checklists=load_checklists(d / "checklists"),
            registry=PromptRegistry.load(d / "prompts"),
            expert=backend,
            stage2=backend,
            critic=critic if critic is not None else backend,
        )

    @classmethod
    def scripted(cls, fixture_paths=None, cfg: PipelineConfig = PipelineConfig(), directory=None) -> "Resources":
        """Resources whose model roles all replay scripted fixtures (the shipped demo set by default)."""
        paths = list(fixture_paths or [data_path("fixtures", "demo.json")])
        fixture = ScriptedFixture.load(paths[0])
        for p in paths[1:]:
            fixture = fixture.merged(ScriptedFixture.load(p))
        return cls.load(directory, cfg, ScriptedBackend(fixture))

    @classmethod
    def http(cls, base_url: Optional[str] = None, cfg: PipelineConfig = PipelineConfig(), directory=None) -> "Resources":
        return cls.load(directory, cfg, HTTPBackend.from_env(base_url))


@dataclass
class GatewayResponse:
    request_id: str
    outcome: str
    response: Optional[dict] = None
    clarification: Optional[dict] = None
    error: Optional[dict] = None
    trace: Optional[PipelineTrace] = None
    artifacts: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.outcome not in OUTCOMES:
            raise ValueError(f"outcome in {OUTCOMES}")
        payloads = {"answered": self.response, "clarification": self.clarification, "error": self.error}
        if payloads[self.outcome] is None or sum(p is not None for p in payloads.values()) != 1:
            raise ValueError("exactly one payload matching the outcome")

    def to_dict(self, include_trace: bool = False) -> dict:
        d = {
            "request_id": self.request_id,
            "outcome": self.outcome,
            "response": self.response,
            "clarification": self.clarification,
            "error": self.error,
        }
        if include_trace and self.trace is not None:
            d["trace"] = self.trace.to_dict()
        return d

    def to_json(self, include_trace: bool = False) -> str:
        return json.dumps(self.to_dict(include_trace), ensure_ascii=False, sort_keys=True)


def privacy_observation(res: AnonymizationResult, params: PrivacyParams) -> dict:
    gens = [
        {"population": d.population or 0, "flagged": bool(d.flags)}
        for d in res.report
        if d.action == "generalize" and d.etype in ("LOCATION", "ORG_NAME", "ROLE_TITLE")
    ]
    return {
        "text": res.text,
        "placeholders": res.placeholders,
        "generalizations": gens,
        "k_anon": params.k_anon,
        "epsilon": params.epsilon,
    }


def domain_observation(assign) -> dict:
    return {
        "text": f"vertical={assign.top_vertical} confidence={assign.confidence:.3f}",
        "probs": assign.probs,
        "confidence": assign.confidence,
    }


def call_expert(backend: CompletionBackend, prompt: str, attempts: int = EXPERT_ATTEMPTS) -> tuple[str, int]:
    last = None
    for i in range(attempts):
        try:
            return complete(backend, prompt), i + 1
        except BackendError as exc:
            logger.warning("expert call failed (attempt %d): %s", i + 1, exc)
            last = exc
    raise last


def handle_query(
    q: UserQuery,
    res: Resources,
    cfg: PipelineConfig = PipelineConfig(),
    *,
    clock: Callable[[], float] = time.perf_counter,
) -> GatewayResponse:
    trace = PipelineTrace(q.request_id)
    artifacts: dict = {}
    params = PrivacyParams(cfg.epsilon, cfg.k_anon, cfg.seed)
    state = {"stage": None, "start": 0.0}

    def begin(stage: str):
        state["stage"], state["start"] = stage, clock()

    def record(inp: dict, out: dict, decision: str, report: Optional[ReflectionReport | dict] = None, details=None, warnings=()):
        refl = report.to_dict() if isinstance(report, ReflectionReport) else report
        trace.add(
            StageRecord(
                state["stage"], inp, out, decision, refl, round((clock() - state["start"]) * 1000.0, 3), dict(details or {}), list(warnings)
            )
        )

    def reflect(component: str, obs: dict) -> Optional[ReflectionReport]:
        cl = res.checklists.get(component)
        return generate_reflection(obs, cl, res.critic, res.registry) if cl else None

    try:
        begin("domain_aware")
        assign = res.scorer.assign(q)
        artifacts["assign"] = assign
        record(
            digest(q.text, preview=False),
            digest(assign.top_vertical),
            assign.top_vertical,
            reflect("domain_aware", domain_observation(assign)),
            {"assignment": assign.to_dict(), "vertical_name": assign.top_name},
        )

        begin("classify")
        cls_res = two_stage(
            q,
            res.intents,
            res.exemplars,
            res.embedder,
            res.stage2,
            cfg,
            assign=assign,
            checklist=res.checklists.get("classifier"),
            critic=res.critic,
            registry=res.registry,
            classifier=res.classifier,
        )
        artifacts["classification"] = cls_res
        if cls_res.needs_user_input:
            record(digest(q.text, preview=False), digest(cls_res.clarification.message), cls_res.routing.value, None, cls_res.to_dict())
            return GatewayResponse(q.request_id, "clarification", clarification=cls_res.clarification.to_dict(), trace=trace, artifacts=artifacts)
        intent = cls_res.classification.intent
        record(digest(q.text, preview=False), digest(intent), cls_res.routing.value, cls_res.reflection, cls_res.to_dict())

        begin("privacy")
        anon = anonymize(q.text, assign, params, res.hierarchy, res.detector)
        artifacts["anonymization"] = anon
        record(
            digest(q.text, preview=False),
            digest(anon.text),
            f"{len(anon.report)} entities",
            reflect("privacy", privacy_observation(anon, params)),
            {"entities": [d.to_dict() for d in anon.report], "placeholders": anon.placeholders},
        )

        begin("translate")
        q_tech = translate(
            anon.text,
            assign,
            intent,
            res.ontology,
            res.critic,
            cfg=cfg,
            checklist=res.checklists.get("translation"),
            registry=res.registry,
            intent_phrase=res.intents.get(intent).technical_phrase or None,
            vertical_name=assign.top_name,
            request_id=q.request_id,
        )
        artifacts["technical_query"] = q_tech
        record(
            digest(anon.text),
            digest(q_tech.text),
            f"conf_trans={q_tech.conf_trans:.3f}",
            q_tech.reflection.last.to_dict() if q_tech.reflection and q_tech.reflection.last else None,
            {
                "constraints": [c.to_dict() for c in q_tech.constraints],
                "terms": [list(t) for t in q_tech.terms],
                "rounds": q_tech.reflection.rounds if q_tech.reflection else 0,
                "reflections": q_tech.reflection.summary()["reports"] if q_tech.reflection else [],
            },
            q_tech.warnings,
        )

        begin("expert")
        if res.expert is None:
            raise TelebridgeError("no expert backend configured")
        prompt = res.registry.render(
            "expert",
            domain_prompt=build_domain_prompt(assign, res.registry, res.verticals, anon.text),
            query=q_tech.text,
            constraints="; ".join(c.clause() for c in q_tech.constraints) or "none",
        )
        r_tech, attempts = call_expert(res.expert, prompt)
        artifacts["expert_response"] = r_tech
        record(digest(prompt), digest(r_tech), "answered", None, {"attempts": attempts, "backend": getattr(res.expert, "name", "")})

        begin("simplify")
        simple = simplify(
            r_tech,
            anon.text,
            res.lexicon,
            res.critic,
            cfg,
            glossary=res.ontology.glossary,
            checklist=res.checklists.get("simplification"),
            registry=res.registry,
        )
        artifacts["simplified"] = simple
        record(
            digest(r_tech),
            digest(simple.text),
            "verified" if simple.verified else "unverified",
            simple.reflection.last.to_dict() if simple.reflection and simple.reflection.last else None,
            {"fre": simple.fre, "rounds_used": simple.rounds_used, "rewrites": simple.rewrites, "reflections": simple.reflection.summary()["reports"] if simple.reflection else []},
            simple.warnings,
        )
    except Exception as exc:  # any stage error becomes an error outcome naming the stage
        stage = state["stage"] or "domain_aware"
        logger.warning("stage %s failed: %s", stage, exc)
        if not trace.stages or trace.stages[-1].stage != stage:
            record({}, {}, "error", None, {"error": f"{type(exc).__name__}: {exc}"})
        return GatewayResponse(q.request_id, "error", error={"stage": stage, "message": str(exc)}, trace=trace, artifacts=artifacts)

    response = {
        "text": deanonymize(simple.text, anon.mapping),
        "fre": simple.fre,
        "verification_confidence": simple.confidence,
        "verified": simple.verified,
        "rounds_used": simple.rounds_used,
        "vertical": assign.top_vertical,
        "intent": intent,
    }
    return GatewayResponse(q.request_id, "answered", response=response, trace=trace, artifacts=artifacts)


def run_batch(lines, res: Resources, cfg: PipelineConfig = PipelineConfig(), include_trace: bool = False, clock=None) -> list[str]:
    """JSON Lines in, JSON Lines of responses out, one per non-empty input line."""
    out = []
    clock = clock or (lambda: 0.0)
    for n, line in enumerate(lines):
        if not line.strip():
            continue
        rec = json.loads(line)
        rid = str(rec.get("request_id") or rec.get("id") or f"req-{n:06d}")
        try:
            q = UserQuery(rec.get("query", ""), rec.get("vertical_hint"), request_id=rid, received_at=_EPOCH)
        except TelebridgeError as exc:
            out.append(GatewayResponse(rid, "error", error={"stage": "input", "message": str(exc)}).to_json())
            continue
        out.append(handle_query(q, res, cfg, clock=clock).to_json(include_trace))
    return out
