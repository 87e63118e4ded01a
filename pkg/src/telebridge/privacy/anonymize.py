"""Tiered anonymization: pseudonymize, generalize, or redact each entity.

Placeholder grammar: ``[TYPE]``, ``[TYPE_QUALIFIER]`` or either with a
``_n`` counter suffix, all uppercase, e.g. ``[IP_PATIENT]``,
``[IP_PATIENT_2]``, ``[REDACTED_LOC]``.
"""

from __future__ import annotations

import enum
import json
import random
import re
import uuid
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional

from ..core import TelebridgeError
from ..domain_aware import DomainAssignment
from .detection import MEASURE_RE, DetectedEntity, Detector, EntityType, default_detector, default_hierarchy
from .hierarchy import Generalization, GeneralizationHierarchy, laplace_scale, sample_laplace

PLACEHOLDER_RE = re.compile(r"\[[A-Z]+(?:_[A-Z]+)?(?:_[0-9]+)?\]")
_BRACKET_RE = re.compile(r"\[[^\[\]\n]*\]")
REDACTED = "[REDACTED]"


def bracket_tokens(text: str) -> list[str]:
    return _BRACKET_RE.findall(text)


class Criticality(str, enum.Enum):
    HIGH = "HIGH"
    MEDIUM = "MEDIUM"
    LOW = "LOW"


CRITICALITY_TABLE = {
    EntityType.IP_ADDRESS: Criticality.HIGH,
    EntityType.MAC_ADDRESS: Criticality.HIGH,
    EntityType.DEVICE_ID: Criticality.HIGH,
    EntityType.NETWORK_NODE: Criticality.HIGH,
    EntityType.LOCATION: Criticality.MEDIUM,
    EntityType.ORG_NAME: Criticality.MEDIUM,
    EntityType.TIMESTAMP: Criticality.MEDIUM,
    EntityType.NUMERIC_MEASUREMENT: Criticality.MEDIUM,
    EntityType.ROLE_TITLE: Criticality.MEDIUM,
    EntityType.PERSON_NAME: Criticality.LOW,
}

TYPE_TOKEN = {
    EntityType.IP_ADDRESS: "IP",
    EntityType.MAC_ADDRESS: "MAC",
    EntityType.DEVICE_ID: "DEVICE",
    EntityType.NETWORK_NODE: "NODE",
}

# context words -> qualifier, in priority order per placeholder type
_DEVICE_WORDS = [
    ("wearable", "WEARABLE"), ("monitor", "MONITOR"), ("pump", "PUMP"), ("sensor", "SENSOR"), ("camera", "CAMERA"),
    ("robot", "ROBOT"), ("plc", "PLC"), ("controller", "CONTROLLER"), ("agv", "AGV"), ("vehicle", "VEHICLE"),
    ("car", "VEHICLE"), ("truck", "TRUCK"), ("meter", "METER"), ("drill", "DRILL"), ("tablet", "TABLET"),
    ("router", "ROUTER"), ("gateway", "GATEWAY"), ("thermostat", "THERMOSTAT"),
]
_OWNER_WORDS = [
    ("patient", "PATIENT"), ("vehicle", "VEHICLE"), ("car", "VEHICLE"), ("truck", "TRUCK"), ("robot", "ROBOT"),
    ("camera", "CAMERA"), ("sensor", "SENSOR"), ("meter", "METER"), ("plc", "PLC"), ("controller", "CONTROLLER"),
    ("server", "SERVER"), ("gateway", "GATEWAY"), ("router", "ROUTER"), ("tablet", "TABLET"), ("drill", "DRILL"),
]
QUALIFIER_WORDS = {"DEVICE": _DEVICE_WORDS, "MAC": _DEVICE_WORDS, "IP": _OWNER_WORDS}
VERTICAL_QUALIFIER = {
    "healthcare_telemetry": "MEDICAL",
    "factory_automation": "FACTORY",
    "v2x": "VEHICLE",
    "mining_operations": "MINE",
    "smart_grid": "GRID",
    "smart_buildings": "BUILDING",
}
_SENTENCE_END = re.compile(r"[.!?](?:\s|$)")


def assess_criticality(e: DetectedEntity, q: str = "", assign: Optional[DomainAssignment] = None) -> Criticality:
    return CRITICALITY_TABLE[e.etype]


def _sentence_of(q: str, e: DetectedEntity) -> str:
    start = 0
    for m in _SENTENCE_END.finditer(q, 0, e.start):
        start = m.end()
    m = _SENTENCE_END.search(q, e.end)
    return q[start : m.start() if m else len(q)]


def qualifier_for(e: DetectedEntity, q: str, assign: Optional[DomainAssignment] = None) -> str:
    token = TYPE_TOKEN[e.etype]
    if token == "NODE":
        kind = re.match(r"[A-Za-z]+", e.surface).group(0)
        return kind.upper()
    sentence = _sentence_of(q, e).lower()
    for word, qual in QUALIFIER_WORDS.get(token, ()):
        if re.search(rf"\b{word}s?\b", sentence):
            return qual
    if assign is not None:
        return VERTICAL_QUALIFIER.get(assign.top_vertical, "")
    return ""


class PlaceholderCollision(TelebridgeError):
    pass


class PseudonymMap:
    """Bijective placeholder <-> surface mapping for one session."""

    def __init__(self, session_id: Optional[str] = None):
        self.session_id = session_id or uuid.uuid4().hex
        self.forward: dict[str, str] = {}
        self.reverse: dict[str, str] = {}
        self.counters: dict[str, int] = {}

    def __len__(self) -> int:
        return len(self.forward)

    def placeholder_for(self, surface: str, type_token: str, qualifier: str = "") -> str:
        if surface in self.reverse:
            return self.reverse[surface]
        n = self.counters.get(type_token, 0) + 1
        parts = [type_token] + ([qualifier] if qualifier else []) + ([str(n)] if n > 1 else [])
        ph = "[" + "_".join(parts) + "]"
        if ph in self.forward or not PLACEHOLDER_RE.fullmatch(ph):
            raise PlaceholderCollision(f"placeholder {ph} already bound or malformed")
        self.counters[type_token] = n
        self.forward[ph] = surface
        self.reverse[surface] = ph
        return ph

    def to_dict(self) -> dict:
        return {"session_id": self.session_id, "forward": dict(self.forward), "counters": dict(self.counters)}

    @classmethod
    def from_dict(cls, d: dict) -> "PseudonymMap":
        m = cls(d["session_id"])
        m.forward = dict(d["forward"])
        m.reverse = {v: k for k, v in m.forward.items()}
        m.counters = dict(d.get("counters", {}))
        return m

    @staticmethod
    def new_key() -> bytes:
        from cryptography.fernet import Fernet

        return Fernet.generate_key()

    def save_encrypted(self, path: str | Path, key: bytes) -> None:
        from cryptography.fernet import Fernet

        token = Fernet(key).encrypt(json.dumps(self.to_dict()).encode("utf-8"))
        Path(path).write_bytes(token)

    @classmethod
    def load_encrypted(cls, path: str | Path, key: bytes) -> "PseudonymMap":
        from cryptography.fernet import Fernet

        return cls.from_dict(json.loads(Fernet(key).decrypt(Path(path).read_bytes())))


@dataclass(frozen=True)
class PrivacyParams:
    epsilon: float = 1.0
    k_anon: int = 5
    seed: int = 0
    sensitivity: Optional[Mapping[str, float]] = None

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon > 0")
        if self.k_anon < 2:
            raise ValueError("k_anon >= 2")
        for v in (self.sensitivity or {}).values():
            if not v > 0:
                raise ValueError("sensitivity > 0")


# --------------------------------------------------------------------------- generalization

_PARTS_OF_DAY = ((5, "morning"), (12, "afternoon"), (17, "evening"), (21, "night"))


def _part_of_day(hour: int) -> str:
    label = "night"
    for start, name in _PARTS_OF_DAY:
        if hour >= start:
            label = name
    return label


def generalize_timestamp(surface: str) -> str:
    date = re.match(r"(\d{4})-(\d{2})-\d{2}", surface)
    clock = re.search(r"(?<!\d)(\d{1,2})(?::(\d{2}))?\s?([AaPp][Mm])?(?::\d{2})?Z?$", surface)
    out = []
    if date:
        out.append(f"{date.group(1)}-{date.group(2)}")
    if clock and (not date or len(surface) > 10):
        hour = int(clock.group(1)) % 24
        ampm = (clock.group(3) or "").lower()
        if ampm == "pm" and hour < 12:
            hour += 12
        if ampm == "am" and hour == 12:
            hour = 0
        out.append(_part_of_day(hour))
    return " ".join(out) or "[REDACTED_TIME]"


def generalize_entity(
    e: DetectedEntity,
    h: GeneralizationHierarchy,
    params: PrivacyParams,
    rng: random.Random,
) -> Generalization:
    if e.etype is EntityType.NUMERIC_MEASUREMENT:
        return noise_measurement(e.surface, h, params, rng)
    if e.etype is EntityType.TIMESTAMP:
        return Generalization(generalize_timestamp(e.surface))
    if e.etype is EntityType.ROLE_TITLE:
        title = e.surface.split()[0]
        return h.generalize_category("ROLE_TITLE", title, params.k_anon)
    return h.generalize_category(e.etype.value, e.surface, params.k_anon)


def generalize(e: DetectedEntity, h: GeneralizationHierarchy, params: PrivacyParams, rng: random.Random) -> str:
    return generalize_entity(e, h, params, rng).text


def noise_measurement(surface: str, h: GeneralizationHierarchy, params: PrivacyParams, rng: random.Random) -> Generalization:
    m = MEASURE_RE.fullmatch(surface)
    if m is None:
        return Generalization(surface, flags=["unparsed_measurement"])
    sep, unit = m.group(1), m.group(2)
    value = float(surface[: m.start(1)])
    cls = h.numeric.get(unit)
    sens = (params.sensitivity or {}).get(unit, cls.sensitivity if cls else 1.0)
    scale = laplace_scale(sens, params.epsilon)
    if scale == 0:
        return Generalization(surface, flags=["zero_noise"])
    noisy = value + sample_laplace(rng, scale)
    if cls is None or cls.nonnegative:
        noisy = max(0.0, noisy)
    precision = cls.precision if cls else 0
    noisy = round(noisy, precision)
    text = f"{noisy:.{precision}f}{sep}{unit}"
    return Generalization(text, flags=[f"laplace_b={scale:g}"])


# --------------------------------------------------------------------------- anonymize


@dataclass
class EntityDecision:
    etype: str
    start: int
    end: int
    detector: str
    criticality: str
    action: str
    replacement: str
    population: Optional[int] = None
    flags: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class AnonymizationResult:
    text: str
    mapping: PseudonymMap
    report: list[EntityDecision]
    entities: list[DetectedEntity]

    @property
    def placeholders(self) -> list[str]:
        return list(self.mapping.forward)


def anonymize(
    q: str,
    assign: Optional[DomainAssignment] = None,
    params: PrivacyParams = PrivacyParams(),
    hierarchy: Optional[GeneralizationHierarchy] = None,
    detector: Optional[Detector] = None,
    mapping: Optional[PseudonymMap] = None,
) -> AnonymizationResult:
    hierarchy = hierarchy or default_hierarchy()
    entities = (detector or default_detector()).detect(q)
    mapping = mapping if mapping is not None else PseudonymMap()
    rng = random.Random(params.seed)
    report = []
    for e in entities:
        level = assess_criticality(e, q, assign)
        if level is Criticality.HIGH:
            repl = mapping.placeholder_for(e.surface, TYPE_TOKEN[e.etype], qualifier_for(e, q, assign))
            dec = EntityDecision(e.etype.value, e.start, e.end, e.detector, level.value, "pseudonymize", repl)
        elif level is Criticality.MEDIUM:
            g = generalize_entity(e, hierarchy, params, rng)
            dec = EntityDecision(e.etype.value, e.start, e.end, e.detector, level.value, "generalize", g.text, g.population or None, g.flags)
        else:
            dec = EntityDecision(e.etype.value, e.start, e.end, e.detector, level.value, "redact", REDACTED)
        report.append(dec)
    out = q
    for dec in sorted(report, key=lambda d: d.start, reverse=True):
        out = out[: dec.start] + dec.replacement + out[dec.end :]
    return AnonymizationResult(out, mapping, report, entities)


def deanonymize(text: str, mapping: PseudonymMap) -> str:
    return PLACEHOLDER_RE.sub(lambda m: mapping.forward.get(m.group(0), m.group(0)), text)
