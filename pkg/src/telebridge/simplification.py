"""Technical expert response -> plain-language answer.

Numbers, units and placeholders are protected tokens: they pass through
every rewrite byte-identical. Readability is Flesch Reading Ease with a
dictionary-free syllable count (vowel groups, minus a silent final ``e``,
at least one per word).
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional

from .backends import CompletionBackend
from .core import PipelineConfig, TelebridgeError, ValidationError
from .privacy.anonymize import PLACEHOLDER_RE
from .prompts import PromptRegistry
from .reflection import Checklist, ChecklistItem, LoopResult, reflection_loop

UNITS = ("Mbps", "Gbps", "kbps", "dBm", "MHz", "GHz", "bpm", "ms", "dB", "%", "s")
_UNIT_ALT = "|".join(re.escape(u) for u in UNITS)
QUANTITY_RE = re.compile(rf"(?<![\w.,:-])-?\d+(?:[.,:]\d+)*(?:\s?(?:{_UNIT_ALT}))?(?![\w%])")
_SENTENCE_SPLIT = re.compile(r"(?<=[.!?])\s+")
_VOWELS = re.compile(r"[aeiouy]+")


class LexiconError(TelebridgeError):
    pass


def quantity_tokens(text: str) -> list[str]:
    """Numbers with an optional unit, in order; a number glued to letters (``5G``) is not a quantity."""
    return QUANTITY_RE.findall(text)


# --------------------------------------------------------------------------- readability


def count_syllables(word: str) -> int:
    w = re.sub(r"[^a-z]", "", word.lower())
    n = len(_VOWELS.findall(w))
    if w.endswith("e"):
        n -= 1
    return max(1, n)


def split_sentences(text: str) -> list[str]:
    return [s for s in _SENTENCE_SPLIT.split(text.strip()) if s.strip()]


def words_of(text: str) -> list[str]:
    return [t for t in text.split() if re.search(r"[A-Za-z0-9]", t)]


def flesch_reading_ease(text: str) -> float:
    words = words_of(text)
    if not words:
        raise ValueError("flesch_reading_ease needs at least one word")
    sentences = max(1, len([s for s in split_sentences(text) if words_of(s)]))
    syllables = sum(count_syllables(w) for w in words)
    return 206.835 - 1.015 * (len(words) / sentences) - 84.6 * (syllables / len(words))


# --------------------------------------------------------------------------- lexicon


def _term_re(term: str) -> str:
    return rf"(?<![\w-]){re.escape(term)}(?![\w-])"


class Lexicon:
    def __init__(self, entries: Mapping[str, str]):
        keys = [k.lower() for k in entries]
        if len(set(keys)) != len(keys):
            raise LexiconError("lexicon keys must be unique case-insensitively")
        for k in entries:
            if not k.strip() or QUANTITY_RE.fullmatch(k) or PLACEHOLDER_RE.fullmatch(k) or k in UNITS:
                raise LexiconError(f"lexicon key {k!r} is a protected token")
        self.entries = dict(entries)
        self._lookup = {k.lower(): v for k, v in entries.items()}
        ordered = sorted(entries, key=len, reverse=True)
        self._scan = re.compile("|".join(_term_re(k) for k in ordered), re.IGNORECASE) if ordered else None
        for plain in entries.values():
            if self._scan is not None and self._scan.search(plain):
                raise LexiconError(f"plain phrase {plain!r} contains a lexicon key")

    @classmethod
    def load(cls, path: str | Path) -> "Lexicon":
        entries = {}
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            if not line.strip() or line.startswith("#"):
                continue
            tech, plain = line.split("\t")
            entries[tech.strip()] = plain.strip()
        return cls(entries)

    def __contains__(self, term: str) -> bool:
        return term.lower() in self._lookup

    def residual_terms(self, text: str) -> list[str]:
        if self._scan is None:
            return []
        protected = _protected_spans(text)
        return [m.group(0) for m in self._scan.finditer(text) if not _overlaps(m.span(), protected)]


def _protected_spans(text: str) -> list[tuple[int, int]]:
    return [m.span() for m in QUANTITY_RE.finditer(text)] + [m.span() for m in PLACEHOLDER_RE.finditer(text)]


def _overlaps(span, spans) -> bool:
    return any(span[0] < e and s < span[1] for s, e in spans)


def map_terms_plain(r_tech: str, lexicon: Lexicon) -> str:
    if lexicon._scan is None:
        return r_tech
    protected = _protected_spans(r_tech)
    out, last = [], 0
    for m in lexicon._scan.finditer(r_tech):
        if _overlaps(m.span(), protected):
            continue
        out.append(r_tech[last : m.start()])
        out.append(lexicon._lookup[m.group(0).lower()])
        last = m.end()
    out.append(r_tech[last:])
    return "".join(out)


# --------------------------------------------------------------------------- actions

ACTION_CUES = (
    "check", "verify", "restart", "reboot", "reconfigure", "reset", "update", "upgrade", "inspect", "ensure",
    "confirm", "review", "replace", "contact", "monitor", "move", "reduce", "increase", "enable", "disable",
    "re-enable", "re-establish", "recreate", "re-create", "restore", "escalate", "apply", "remove", "investigate",
    "reposition", "realign", "reroute", "retry", "test",
)
_RECOMMEND = re.compile(r"\b(?:you should|we recommend|it is recommended to|operators should|please)\s+(\w[\w-]*)", re.IGNORECASE)


@dataclass(frozen=True)
class ActionItem:
    text: str
    verb: str
    index: int


def _action_verb(sentence: str) -> Optional[str]:
    s = re.sub(r"^[\s\-*•\d.)]+", "", sentence)
    first = re.match(r"[A-Za-z][\w-]*", s)
    if first and first.group(0).lower() in ACTION_CUES:
        return first.group(0).lower()
    m = _RECOMMEND.search(s)
    if m and m.group(1).lower() in ACTION_CUES:
        return m.group(1).lower()
    return None


def extract_actions(r_tech: str) -> list[ActionItem]:
    out = []
    for i, s in enumerate(split_sentences(r_tech)):
        verb = _action_verb(s)
        if verb:
            out.append(ActionItem(s.strip(), verb, i))
    return out


# --------------------------------------------------------------------------- rewrite rules

PLAIN_WORDS = {
    "terminated": "ended",
    "terminate": "end",
    "termination": "end",
    "halting": "stopping",
    "halted": "stopped",
    "halts": "stops",
    "configuration": "setup",
    "operation": "action",
    "approximately": "about",
    "utilize": "use",
    "utilization": "use",
    "additional": "more",
    "outbound": "outgoing",
    "inbound": "incoming",
    "notification": "alert",
    "endpoint": "end point",
    "analytics": "data",
    "intermittent": "on and off",
    "degradation": "drop",
    "insufficient": "not enough",
    "subsequently": "then",
    "functionality": "function",
    "transmission": "sending",
    "initiate": "start",
    "mapping": "link",
}
_CLAUSE_BREAKS = re.compile(r",\s+(?:and|but|which|because|so)\s+|;\s+|,\s+(?=halting|causing|leading|resulting)", re.IGNORECASE)
_IDENTIFIER = re.compile(r"\b[A-Za-z][A-Za-z0-9]*(?:_[A-Za-z0-9]+){2,}\b")
LONG_SENTENCE = 14
# a clause split off at a participle becomes its own sentence with an explicit subject
_PARTICIPLE_SUBJECT = {"halting": "This halts", "causing": "This causes", "leading": "This leads", "resulting": "This results"}


def _capitalize(s: str) -> str:
    return s[:1].upper() + s[1:] if s else s


def _subject_for(piece: str) -> str:
    head, _, rest = piece.partition(" ")
    subject = _PARTICIPLE_SUBJECT.get(head.lower())
    return f"{subject} {rest}" if subject and rest else piece


def shorten_sentences(text: str) -> str:
    out = []
    for line in text.split("\n"):
        if line.startswith("- "):
            out.append(line)
            continue
        parts = []
        for s in split_sentences(line):
            if len(words_of(s)) > LONG_SENTENCE:
                pieces = [p.strip() for p in _CLAUSE_BREAKS.split(s) if p.strip()]
                pieces = [p if p[-1] in ".!?" else p + "." for p in pieces]
                pieces = [_subject_for(p) for p in pieces]
                parts.extend(_capitalize(p) for p in pieces)
            else:
                parts.append(s)
        out.append(" ".join(parts))
    return "\n".join(out)


def plain_words(text: str) -> str:
    def ident(m):
        last = m.group(0).split("_")[-1]
        return m.group(0) if last.isdigit() else "'" + last + "'"

    text = _IDENTIFIER.sub(ident, text)
    rx = re.compile(r"\b(" + "|".join(sorted(PLAIN_WORDS, key=len, reverse=True)) + r")\b", re.IGNORECASE)

    def sub(m):
        plain = PLAIN_WORDS[m.group(0).lower()]
        return _capitalize(plain) if m.group(0)[0].isupper() else plain

    return rx.sub(sub, text)


def expand_definitions(text: str, glossary: Mapping[str, str]) -> str:
    """Turn parenthetical glosses into sentences of their own."""
    for term, definition in glossary.items():
        gloss = f"{term} ({definition})"
        if gloss in text:
            head, tail = text.split(gloss, 1)
            m = re.search(r"[.!?](?:\s|$)", tail)
            cut = m.end() if m else len(tail)
            text = head + term + tail[:cut].rstrip() + f" {term} is {definition}. " + tail[cut:].lstrip()
    return text.strip()


def add_glosses(text: str, glossary: Mapping[str, str], lexicon: Lexicon) -> str:
    for term, definition in glossary.items():
        if term in lexicon or re.search(r"\d", definition):
            continue
        m = re.search(_term_re(term) + r"(?!\s*\()", text)
        if m and f"{term} (" not in text:
            text = text[: m.end()] + f" ({definition})" + text[m.end() :]
    return text


REWRITES = ("shorter sentences and plain words", "definition expansion")
DEFAULT_CHECKLIST = Checklist(
    "simplification",
    (
        ChecklistItem("quantitative_retention", "Quantitative finding retention without modification", "rule", "quantity_preservation"),
        ChecklistItem("lexicon_consistency", "Lexicon mapping appropriateness and consistency", "rule", "lexicon_applied"),
        ChecklistItem("readability", "Readability metric compliance", "rule", "fre_band"),
    ),
)


# --------------------------------------------------------------------------- simplify


@dataclass
class SimplifiedResponse:
    text: str
    fre: float
    confidence: float
    rounds_used: int
    actions: list[ActionItem] = field(default_factory=list)
    rewrites: list[str] = field(default_factory=list)
    verified: bool = False
    reflection: Optional[LoopResult] = None
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "text": self.text,
            "fre": self.fre,
            "confidence": self.confidence,
            "rounds_used": self.rounds_used,
            "verified": self.verified,
            "actions": [a.text for a in self.actions],
            "rewrites": list(self.rewrites),
            "reflection": self.reflection.summary() if self.reflection else None,
            "warnings": list(self.warnings),
        }


def _compose(r_tech: str, lexicon: Lexicon, glossary: Mapping[str, str], level: int) -> str:
    actions = {a.index for a in extract_actions(r_tech)}
    sentences = split_sentences(r_tech)
    body = " ".join(s for i, s in enumerate(sentences) if i not in actions)
    acts = [s for i, s in enumerate(sentences) if i in actions]
    parts = [body] if body else []
    if acts:
        parts.append("What to do:\n" + "\n".join("- " + a for a in acts))
    text = map_terms_plain("\n\n".join(parts), lexicon)
    text = add_glosses(text, glossary, lexicon)
    if level >= 1:
        text = plain_words(shorten_sentences(text))
    if level >= 2:
        text = expand_definitions(text, {k: v for k, v in glossary.items() if k not in lexicon})
    return text


def simplify_observation(text: str, r_tech: str, p: str, lexicon: Lexicon, cfg: PipelineConfig) -> dict:
    return {
        "text": text,
        "source": r_tech,
        "query": p,
        "fre": flesch_reading_ease(text),
        "fre_min": cfg.fre_min,
        "fre_max": cfg.fre_max,
        "residual_terms": lexicon.residual_terms(text),
    }


def simplify(
    r_tech: str,
    p: str,
    lexicon: Lexicon,
    critic: Optional[CompletionBackend] = None,
    cfg: PipelineConfig = PipelineConfig(),
    *,
    glossary: Optional[Mapping[str, str]] = None,
    checklist: Optional[Checklist] = None,
    registry: Optional[PromptRegistry] = None,
) -> SimplifiedResponse:
    if not r_tech.strip():
        raise ValidationError("technical response non-empty")
    glossary = dict(glossary or {})
    level0 = (0, _compose(r_tech, lexicon, glossary, 0))

    def observe(state):
        return simplify_observation(state[1], r_tech, p, lexicon, cfg)

    def in_band(text: str) -> bool:
        return cfg.fre_min <= flesch_reading_ease(text) <= cfg.fre_max

    def refine(state, report):
        level = state[0] + 1
        return (level, _compose(r_tech, lexicon, glossary, level))

    def accept(report, state):
        return report.confidence >= cfg.theta_verify and in_band(state[1])

    loop = reflection_loop(level0, checklist or DEFAULT_CHECKLIST, observe, refine, cfg.max_reflection_rounds, critic, registry, accept)
    level, text = loop.output
    if Counter(quantity_tokens(text)) != Counter(quantity_tokens(r_tech)):
        raise TelebridgeError("simplification changed a quantitative token")
    return SimplifiedResponse(
        text,
        flesch_reading_ease(text),
        loop.last.confidence,
        loop.rounds,
        extract_actions(r_tech),
        list(REWRITES[:level]),
        loop.converged,
        loop,
        list(loop.warnings),
    )
