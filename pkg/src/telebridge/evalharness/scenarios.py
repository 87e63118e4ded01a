"""Synthetic troubleshooting scenarios with gold entity labels.

Templates carry slot markers; every substituted slot value is recorded as a gold
entity with its character offsets, so labels are exact by construction.
"""

from __future__ import annotations

import json
import random
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

from ..core import ConfigError, ValidationError
from ..resources import data_path

SLOT_RE = re.compile(r"\{([A-Za-z]+)\}")
RANGE_RE = re.compile(r"\{n(\d+)\}")

SLOT_TYPES = {
    "PERSON": "PERSON_NAME",
    "ROLE": "ROLE_TITLE",
    "DEVICE": "DEVICE_ID",
    "IP": "IP_ADDRESS",
    "MAC": "MAC_ADDRESS",
    "NODE": "NETWORK_NODE",
    "LOC": "LOCATION",
    "ORG": "ORG_NAME",
    "TIME": "TIMESTAMP",
    "MS": "NUMERIC_MEASUREMENT",
    "PCT": "NUMERIC_MEASUREMENT",
    "MBPS": "NUMERIC_MEASUREMENT",
}
PLAIN_SLOTS = {"device"}

FIRST_NAMES = ("John", "Maria", "Ahmed", "Li", "Sofia", "James", "Fatima", "Carlos", "Emma", "Noah")
SURNAMES = ("Smith", "Ramirez", "Chen", "Okafor", "Novak", "Tanaka", "Garcia", "Muller", "Haddad", "Silva")
TITLES = ("Dr.", "Prof.", "Nurse", "Eng.", "Mr.", "Ms.")
NODE_KINDS = ("gNB-{n}", "cell {n}", "AMF-{n}", "UPF-{n}")


@dataclass
class Scenario:
    id: str
    query: str
    intent: str
    vertical: str
    entities: list[dict] = field(default_factory=list)
    seed: int = 0
    placeholders: list[str] = field(default_factory=list)

    def __post_init__(self):
        last = 0
        for e in sorted(self.entities, key=lambda e: e["start"]):
            if not (last <= e["start"] < e["end"] <= len(self.query)):
                raise ValidationError(f"scenario {self.id}: gold span {e['start']}..{e['end']} is invalid or overlapping")
            last = e["end"]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "Scenario":
        return cls(
            id=str(d["id"]),
            query=str(d["query"]),
            intent=str(d["intent"]),
            vertical=str(d["vertical"]),
            entities=[dict(e) for e in d.get("entities", [])],
            seed=int(d.get("seed", 0)),
            placeholders=[str(p) for p in d.get("placeholders", [])],
        )

    @property
    def gold(self) -> list[tuple[int, int, str]]:
        return [(e["start"], e["end"], e["type"]) for e in self.entities]


@dataclass(frozen=True)
class TemplateSet:
    templates: tuple[tuple[str, str], ...]
    verticals: Mapping[str, Mapping]
    intent_weights: Mapping[str, float]
    vertical_weights: Mapping[str, float]

    @classmethod
    def load(cls, path: Optional[str | Path] = None) -> "TemplateSet":
        raw = json.loads(Path(path or data_path("scenarios/templates.json")).read_text(encoding="utf-8"))
        templates = tuple((t["intent"], t["text"]) for t in raw["templates"])
        ts = cls(templates, raw["verticals"], raw["intent_weights"], raw["vertical_weights"])
        ts.validate()
        return ts

    def validate(self) -> None:
        for intent, text in self.templates:
            if intent not in self.intent_weights:
                raise ConfigError("templates", f"template intent {intent!r} has no weight")
            for slot in SLOT_RE.findall(text):
                if slot not in SLOT_TYPES and slot not in PLAIN_SLOTS:
                    raise ConfigError("templates", f"unknown slot {{{slot}}} in template {text!r}")
            if SLOT_RE.findall(text).count("LOC") > 1:
                raise ConfigError("templates", "templates may contain at most one location")
        for intent, w in self.intent_weights.items():
            if w <= 0 or not any(i == intent for i, _ in self.templates):
                raise ConfigError("templates", f"intent {intent!r} needs a positive weight and a template")
        for v in self.vertical_weights:
            if v not in self.verticals:
                raise ConfigError("templates", f"weighted vertical {v!r} has no vocabulary")


def _pick(rng: random.Random, weights: Mapping[str, float]) -> str:
    keys = sorted(weights)
    return rng.choices(keys, weights=[weights[k] for k in keys], k=1)[0]


def _expand_range(rng: random.Random, text: str) -> str:
    return RANGE_RE.sub(lambda m: str(rng.randint(1, int(m.group(1)))), text)


def _slot_value(slot: str, rng: random.Random, vocab: Mapping, device: tuple[str, str]) -> str:
    if slot == "PERSON":
        return f"{rng.choice(FIRST_NAMES)} {rng.choice(SURNAMES)}"
    if slot == "ROLE":
        return f"{rng.choice(TITLES)} {rng.choice(SURNAMES)}"
    if slot == "DEVICE":
        return f"{device[1]}-{rng.randint(10, 99)}{rng.choice('ABCDEFGH')}-{rng.randint(1, 99):02d}"
    if slot == "IP":
        return f"10.{rng.randint(0, 255)}.{rng.randint(0, 255)}.{rng.randint(1, 254)}"
    if slot == "MAC":
        return ":".join(f"{rng.randint(0, 255):02X}" for _ in range(6))
    if slot == "NODE":
        return rng.choice(NODE_KINDS).format(n=rng.randint(1, 999))
    if slot == "LOC":
        return _expand_range(rng, rng.choice(vocab["locations"]))
    if slot == "ORG":
        return rng.choice(vocab["orgs"])
    if slot == "TIME":
        h, m = rng.randint(0, 23), rng.randint(0, 59)
        forms = (f"{h:02d}:{m:02d}", f"2024-{rng.randint(1, 12):02d}-{rng.randint(1, 28):02d}",
                 f"2024-{rng.randint(1, 12):02d}-{rng.randint(1, 28):02d} {h:02d}:{m:02d}", f"{rng.randint(1, 12)}am")
        return rng.choice(forms)
    if slot == "MS":
        return f"{rng.randint(20, 900)} ms"
    if slot == "PCT":
        return f"{rng.randint(1, 60)}.{rng.randint(0, 9)}%"
    if slot == "MBPS":
        return f"{rng.randint(1, 50)}.{rng.randint(0, 9)} Mbps"
    raise ConfigError("templates", f"no generator for slot {slot!r}")


def render(template: str, rng: random.Random, vocab: Mapping) -> tuple[str, list[dict]]:
    """Fill slots left to right, recording gold offsets of every entity slot."""
    device = tuple(rng.choice(vocab["devices"]))
    out: list[str] = []
    entities: list[dict] = []
    pos = 0
    length = 0
    for m in SLOT_RE.finditer(template):
        lit = template[pos:m.start()]
        out.append(lit)
        length += len(lit)
        slot = m.group(1)
        value = device[0] if slot in PLAIN_SLOTS else _slot_value(slot, rng, vocab, device)
        if slot in SLOT_TYPES:
            entities.append({"start": length, "end": length + len(value), "type": SLOT_TYPES[slot], "surface": value})
        out.append(value)
        length += len(value)
        pos = m.end()
    out.append(template[pos:])
    return "".join(out), entities


def generate_scenarios(count: int, seed: int = 0, templates: Optional[TemplateSet] = None) -> list[Scenario]:
    if count < 0:
        raise ValueError("count must be non-negative")
    ts = templates or TemplateSet.load()
    rng = random.Random(seed)
    by_intent: dict[str, list[str]] = {}
    for intent, text in ts.templates:
        by_intent.setdefault(intent, []).append(text)
    scenarios = []
    for i in range(count):
        intent = _pick(rng, ts.intent_weights)
        vertical = _pick(rng, ts.vertical_weights)
        query, entities = render(rng.choice(by_intent[intent]), rng, ts.verticals[vertical])
        scenarios.append(Scenario(f"scn-{seed}-{i:05d}", query, intent, vertical, entities, seed))
    return scenarios


def save_scenarios(scenarios: Iterable[Scenario], path: str | Path) -> None:
    lines = [json.dumps(s.to_dict(), sort_keys=True) for s in scenarios]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def load_scenarios(path: str | Path) -> list[Scenario]:
    text = Path(path).read_text(encoding="utf-8")
    return [Scenario.from_dict(json.loads(line)) for line in text.splitlines() if line.strip()]


def intent_frequencies(scenarios: Sequence[Scenario]) -> dict[str, float]:
    counts: dict[str, int] = {}
    for s in scenarios:
        counts[s.intent] = counts.get(s.intent, 0) + 1
    n = len(scenarios) or 1
    return {k: v / n for k, v in sorted(counts.items())}
