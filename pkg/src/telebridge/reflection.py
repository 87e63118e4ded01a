"""Checklist-driven self-reflection.

A checklist mixes rule items, evaluated here by deterministic checks, and
judged items, which go to a separate critic backend. The critic answers one
line per judged item::

    item_id: PASS|FAIL - evidence
    confidence: 0.85          (optional)

A malformed answer gets one stricter reprompt; after that every judged item
fails with evidence ``critic unparseable``. Critic transport errors fail
closed the same way.
"""

from __future__ import annotations

import json
import logging
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping, Optional, Sequence

from .backends import BackendError, CompletionBackend, complete
from .core import TelebridgeError, ValidationError
from .prompts import PromptRegistry

logger = logging.getLogger(__name__)

COMPONENTS = ("domain_aware", "classifier", "privacy", "translation", "simplification")

CRITIC_PROMPT = """Evaluate output
Component: {component}
Round: {round}
Checklist:
{checklist}
Output:
{output}
Answer one line per checklist item as `item_id: PASS|FAIL - evidence`, then optionally `confidence: <number in [0,1]>`."""

CRITIC_PROMPT_STRICT = CRITIC_PROMPT + """
Your previous answer could not be parsed. Reply with ONLY the item lines and the optional confidence line, nothing else."""

UNPARSEABLE = "critic unparseable"


class ReflectionError(TelebridgeError):
    pass


@dataclass(frozen=True)
class ChecklistItem:
    id: str
    text: str
    kind: str = "judged"
    rule: Optional[str] = None

    def __post_init__(self):
        if self.kind not in ("rule", "judged"):
            raise ValidationError("check kind is rule or judged")
        if self.kind == "rule" and self.rule not in RULES:
            raise ValidationError(f"rule item {self.id!r} names a known rule (got {self.rule!r})")


@dataclass(frozen=True)
class Checklist:
    component: str
    items: tuple[ChecklistItem, ...]

    def __post_init__(self):
        if self.component not in COMPONENTS:
            raise ValidationError(f"checklist component in {COMPONENTS}")
        ids = [i.id for i in self.items]
        if len(set(ids)) != len(ids):
            raise ValidationError("checklist item ids are unique")

    @classmethod
    def from_dict(cls, d: dict) -> "Checklist":
        return cls(d["component"], tuple(ChecklistItem(**item) for item in d["items"]))

    @classmethod
    def load(cls, path: str | Path) -> "Checklist":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    @property
    def judged(self) -> list[ChecklistItem]:
        return [i for i in self.items if i.kind == "judged"]

    @property
    def rules(self) -> list[ChecklistItem]:
        return [i for i in self.items if i.kind == "rule"]


def load_checklists(directory: str | Path) -> dict[str, Checklist]:
    out = {}
    for path in sorted(Path(directory).glob("*.json")):
        cl = Checklist.load(path)
        out[cl.component] = cl
    return out


@dataclass(frozen=True)
class Verdict:
    item_id: str
    passed: bool
    evidence: str = ""


@dataclass(frozen=True)
class ReflectionReport:
    component: str
    verdicts: tuple[Verdict, ...]
    confidence: float
    feedback: str = ""
    round: int = 1

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValidationError("reflection confidence in [0,1]")

    @property
    def issues(self) -> int:
        return sum(1 for v in self.verdicts if not v.passed)

    @property
    def failing(self) -> list[Verdict]:
        return [v for v in self.verdicts if not v.passed]

    def to_dict(self) -> dict:
        return {
            "component": self.component,
            "round": self.round,
            "issues": self.issues,
            "confidence": self.confidence,
            "verdicts": [{"item_id": v.item_id, "passed": v.passed, "evidence": v.evidence} for v in self.verdicts],
            "feedback": self.feedback,
        }


# --------------------------------------------------------------------------- rule checks
# Each rule takes the stage observation mapping and returns (passed, evidence).

RuleFn = Callable[[Mapping[str, Any]], tuple[bool, str]]
RULES: dict[str, RuleFn] = {}


def rule(name: str):
    def deco(fn: RuleFn) -> RuleFn:
        RULES[name] = fn
        return fn

    return deco


@rule("residual_pii")
def _residual_pii(obs):
    from .privacy.detection import find_residual_identifiers

    found = find_residual_identifiers(obs["text"])
    if found:
        return False, "raw identifier patterns remain: " + ", ".join(sorted(set(found)))
    return True, "no raw identifier pattern"


@rule("placeholder_grammar")
def _placeholder_grammar(obs):
    from .privacy.anonymize import PLACEHOLDER_RE, bracket_tokens

    bad = [t for t in bracket_tokens(obs["text"]) if not PLACEHOLDER_RE.fullmatch(t)]
    if bad:
        return False, "malformed placeholders: " + ", ".join(bad)
    missing = [p for p in obs.get("placeholders", ()) if p not in obs["text"]]
    if missing:
        return False, "placeholders lost: " + ", ".join(missing)
    return True, "placeholders well-formed and preserved"


@rule("quantity_preservation")
def _quantity_preservation(obs):
    from .simplification import quantity_tokens

    src, out = Counter(quantity_tokens(obs["source"])), Counter(quantity_tokens(obs["text"]))
    if src != out:
        lost = list((src - out).elements())
        added = list((out - src).elements())
        return False, f"quantities changed: lost {lost}, added {added}"
    return True, f"{sum(src.values())} quantitative tokens preserved"


@rule("fre_band")
def _fre_band(obs):
    fre, lo, hi = obs["fre"], obs["fre_min"], obs["fre_max"]
    if lo <= fre <= hi:
        return True, f"FRE {fre:.2f} within [{lo}, {hi}]"
    return False, f"FRE {fre:.2f} outside [{lo}, {hi}]"


@rule("lexicon_applied")
def _lexicon_applied(obs):
    left = obs.get("residual_terms", ())
    if left:
        return False, "technical terms left unmapped: " + ", ".join(left)
    return True, "all lexicon terms mapped"


@rule("constraint_inclusion")
def _constraint_inclusion(obs):
    text = obs["text"].lower()
    missing = [c for c in obs["constraints"] if c.lower() not in text]
    if missing:
        return False, "constraints missing from text: " + "; ".join(missing)
    return True, f"{len(obs['constraints'])} constraints included"


@rule("translation_grounding")
def _translation_grounding(obs):
    if obs.get("terms") or obs.get("constraints"):
        return True, "translation grounded in mapped terms or constraints"
    return False, "no ontology term and no constraint found"


@rule("term_mapping")
def _term_mapping(obs):
    text = obs["text"].lower()
    missing = [t for _, t in obs.get("terms", ()) if t.lower() not in text]
    if missing:
        return False, "technical terms missing: " + ", ".join(missing)
    return True, "all mapped terms present"


@rule("intent_clause")
def _intent_clause(obs):
    if obs["intent_phrase"].lower() in obs["text"].lower():
        return True, "intent clause present"
    return False, f"intent {obs['intent_phrase']!r} not stated"


@rule("probability_validity")
def _probability_validity(obs):
    probs = list(obs["probs"])
    if any(not (0.0 <= p <= 1.0) or math.isnan(p) for p in probs):
        return False, "probability outside [0,1]"
    if abs(sum(probs) - 1.0) > 1e-9:
        return False, f"probabilities sum to {sum(probs):.12f}"
    return True, f"valid distribution over {len(probs)} outcomes"


@rule("threshold_band")
def _threshold_band(obs):
    from .classifier import route_between

    expected = route_between(obs["confidence"], obs["theta_low"], obs["theta_high"]).value
    if obs["decision"] != expected:
        return False, f"decision {obs['decision']} but confidence {obs['confidence']:.3f} routes to {expected}"
    return True, f"confidence {obs['confidence']:.3f} routes to {expected}"


@rule("confidence_calibration")
def _confidence_calibration(obs):
    c = obs["confidence"]
    if not 0.0 <= c <= 1.0:
        return False, f"confidence {c} outside [0,1]"
    if "score" in obs and "margin" in obs and obs.get("stage") == 1:
        from .classifier import calibrate

        if abs(calibrate(obs["score"], obs["margin"]) - c) > 1e-12:
            return False, "confidence does not match calibrate(score, margin)"
    return True, f"confidence {c:.3f} calibrated"


@rule("k_anonymity")
def _k_anonymity(obs):
    bad = [g for g in obs.get("generalizations", ()) if g["population"] < obs["k_anon"] and not g.get("flagged")]
    if bad:
        return False, f"{len(bad)} generalizations below k={obs['k_anon']}"
    return True, f"all generalizations satisfy k={obs['k_anon']} or are flagged"


@rule("noise_parameters")
def _noise_parameters(obs):
    eps = obs["epsilon"]
    if not eps > 0:
        return False, f"epsilon {eps} is not positive"
    return True, f"epsilon {eps} > 0"


# --------------------------------------------------------------------------- critic


_VERDICT_RE = re.compile(r"^\s*([\w.-]+)\s*:\s*(PASS|FAIL)\b\s*(?:[-:]\s*(.*))?$", re.IGNORECASE)
_CONF_RE = re.compile(r"^\s*confidence\s*[:=]\s*([0-9]*\.?[0-9]+)\s*$", re.IGNORECASE)


def parse_critic_reply(reply: str, item_ids: Sequence[str]) -> Optional[tuple[dict[str, Verdict], Optional[float]]]:
    """Return ``(verdicts by id, confidence)`` or None if malformed."""
    verdicts: dict[str, Verdict] = {}
    confidence = None
    for line in reply.splitlines():
        m = _CONF_RE.match(line)
        if m:
            confidence = float(m.group(1))
            if not 0.0 <= confidence <= 1.0:
                return None
            continue
        m = _VERDICT_RE.match(line)
        if m and m.group(1) in item_ids:
            verdicts[m.group(1)] = Verdict(m.group(1), m.group(2).upper() == "PASS", (m.group(3) or "").strip())
    if set(verdicts) != set(item_ids):
        return None
    return verdicts, confidence


def render_observation(obs: Mapping[str, Any]) -> str:
    if "text" in obs:
        return str(obs["text"])
    return json.dumps(obs, sort_keys=True, default=str)


def critic_prompt(checklist: Checklist, observation: Mapping[str, Any], round_no: int, strict: bool, registry: Optional[PromptRegistry]) -> str:
    items = "\n".join(f"{i.id}: {i.text}" for i in checklist.judged)
    values = dict(component=checklist.component, round=round_no, checklist=items, output=render_observation(observation))
    tid = "critic_strict" if strict else "critic"
    if registry is not None and tid in registry:
        prompt = registry.render(tid, **values)
    else:
        prompt = (CRITIC_PROMPT_STRICT if strict else CRITIC_PROMPT).format(**values)
    if not prompt.startswith("Evaluate output"):
        prompt = "Evaluate output\n" + prompt
    return prompt


def generate_reflection(
    observation: Mapping[str, Any],
    checklist: Checklist,
    critic: Optional[CompletionBackend] = None,
    registry: Optional[PromptRegistry] = None,
    round_no: int = 1,
) -> ReflectionReport:
    """Evaluate one stage output against its checklist.

    Without a critic, judged items are not evaluated and do not appear in the
    verdicts; the feedback says so.
    """
    verdicts: dict[str, Verdict] = {}
    for item in checklist.rules:
        try:
            ok, evidence = RULES[item.rule](observation)
        except KeyError as exc:
            ok, evidence = False, f"observation lacks field {exc}"
        verdicts[item.id] = Verdict(item.id, ok, evidence)

    critic_conf = None
    notes = []
    judged = checklist.judged
    if judged and critic is None:
        notes.append(f"{len(judged)} judged items not evaluated (no critic)")
    elif judged:
        ids = [i.id for i in judged]
        parsed = None
        for strict in (False, True):
            try:
                reply = complete(critic, critic_prompt(checklist, observation, round_no, strict, registry))
            except BackendError as exc:
                logger.warning("critic call failed for %s: %s", checklist.component, exc)
                notes.append(f"critic error: {exc}")
                break
            parsed = parse_critic_reply(reply, ids)
            if parsed is not None:
                break
        if parsed is None:
            for i in ids:
                verdicts[i] = Verdict(i, False, UNPARSEABLE)
        else:
            verdicts.update(parsed[0])
            critic_conf = parsed[1]

    ordered = tuple(verdicts[i.id] for i in checklist.items if i.id in verdicts)
    if critic_conf is not None:
        confidence = critic_conf
    elif ordered:
        confidence = sum(v.passed for v in ordered) / len(ordered)
    else:
        confidence = 1.0
    feedback = "; ".join([f"{v.item_id}: {v.evidence}" for v in ordered if not v.passed] + notes)
    return ReflectionReport(checklist.component, ordered, confidence, feedback, round_no)


def apply_reflection(
    action: Optional[Callable[[Any, ReflectionReport], Any]],
    observation: Any,
    report: ReflectionReport,
    warnings: Optional[list[str]] = None,
) -> Any:
    """Next agent output from (action, observation, reflection)."""
    if report.issues == 0:
        return observation
    if action is None:
        msg = f"{report.component}: {report.issues} issues but no refine hook"
        logger.warning(msg)
        if warnings is not None:
            warnings.append(msg)
        return observation
    return action(observation, report)


@dataclass
class LoopResult:
    output: Any
    reports: list[ReflectionReport] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    converged: bool = False

    @property
    def rounds(self) -> int:
        return len(self.reports)

    @property
    def last(self) -> Optional[ReflectionReport]:
        return self.reports[-1] if self.reports else None

    def summary(self) -> dict:
        return {
            "rounds": self.rounds,
            "converged": self.converged,
            "reports": [r.to_dict() for r in self.reports],
        }


def reflection_loop(
    output: Any,
    checklist: Checklist,
    observe: Callable[[Any], Mapping[str, Any]],
    refine: Optional[Callable[[Any, ReflectionReport], Any]],
    max_rounds: int,
    critic: Optional[CompletionBackend] = None,
    registry: Optional[PromptRegistry] = None,
    accept: Optional[Callable[[ReflectionReport, Any], bool]] = None,
) -> LoopResult:
    """Reflect, refine, repeat: at most ``max_rounds`` reflections, hard cap."""
    if max_rounds < 1:
        raise ValueError("max_rounds >= 1")
    accept = accept or (lambda report, _out: report.issues == 0)
    result = LoopResult(output)
    for round_no in range(1, max_rounds + 1):
        report = generate_reflection(observe(result.output), checklist, critic, registry, round_no)
        result.reports.append(report)
        if accept(report, result.output):
            result.converged = True
            break
        if round_no == max_rounds:
            break
        if refine is None:
            result.warnings.append(f"{checklist.component}: {report.issues} issues but no refine hook")
            break
        result.output = refine(result.output, report)
    if not result.converged:
        result.warnings.append(f"{checklist.component}: reflection did not converge in {result.rounds} rounds")
    return result
