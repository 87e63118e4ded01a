"""Rule and gazetteer entity detection.

Rules run in a fixed order; overlapping candidates resolve to the longest
span, then the earlier rule, then the earlier position.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Optional, Sequence

from ..resources import data_path
from .hierarchy import GeneralizationHierarchy


class EntityType(str, enum.Enum):
    PERSON_NAME = "PERSON_NAME"
    ROLE_TITLE = "ROLE_TITLE"
    DEVICE_ID = "DEVICE_ID"
    IP_ADDRESS = "IP_ADDRESS"
    MAC_ADDRESS = "MAC_ADDRESS"
    LOCATION = "LOCATION"
    ORG_NAME = "ORG_NAME"
    NUMERIC_MEASUREMENT = "NUMERIC_MEASUREMENT"
    TIMESTAMP = "TIMESTAMP"
    NETWORK_NODE = "NETWORK_NODE"


@dataclass(frozen=True)
class DetectedEntity:
    surface: str
    start: int
    end: int
    etype: EntityType
    detector: str

    @property
    def span(self) -> tuple[int, int]:
        return (self.start, self.end)

    def to_dict(self, with_surface: bool = False) -> dict:
        d = {"start": self.start, "end": self.end, "type": self.etype.value, "detector": self.detector}
        if with_surface:
            d["surface"] = self.surface
        return d


_OCTET = r"(?:25[0-5]|2[0-4]\d|1\d\d|[1-9]?\d)"
IP_RE = re.compile(rf"(?<![\w.]){_OCTET}(?:\.{_OCTET}){{3}}(?!\.?\d)(?!\w)")
MAC_RE = re.compile(r"(?<![0-9A-Fa-f:-])(?:[0-9A-Fa-f]{2}([:-]))(?:[0-9A-Fa-f]{2}\1){4}[0-9A-Fa-f]{2}(?![0-9A-Fa-f:-])")
DEVICE_RE = re.compile(r"(?<![\w-])[A-Z]{2,4}-(?=[A-Z0-9]*\d)[A-Z0-9]{2,6}(?:-[A-Z0-9]{1,6})+(?![\w-])")
NODE_RE = re.compile(r"(?<![\w-])(?:gNodeB|eNodeB|gNB|eNB|AMF|SMF|UPF|MME|[Cc]ell)[-_ ]?\d{1,6}(?![\w-])")
TIMESTAMP_RES = (
    re.compile(r"(?<![\w-])\d{4}-\d{2}-\d{2}(?:[T ](?:[01]\d|2[0-3]):[0-5]\d(?::[0-5]\d)?Z?)?(?![\w-])"),
    re.compile(r"(?<![\w:])(?:[01]?\d|2[0-3]):[0-5]\d(?:\s?[AaPp][Mm])?(?![\w:])"),
    re.compile(r"(?<![\w:])(?:1[0-2]|0?[1-9])\s?[AaPp][Mm](?!\w)"),
)
UNITS = ("Mbps", "Gbps", "kbps", "dBm", "MHz", "GHz", "bpm", "ms", "dB", "%", "s")
MEASURE_RE = re.compile(r"(?<![\w.-])\d+(?:\.\d+)?(\s?)(" + "|".join(re.escape(u) for u in UNITS) + r")(?![\w%])")

# patterns whose presence after anonymization means an identifier leaked
RESIDUAL_PATTERNS = {
    "IP_ADDRESS": IP_RE,
    "MAC_ADDRESS": MAC_RE,
    "DEVICE_ID": DEVICE_RE,
    "NETWORK_NODE": NODE_RE,
}


def find_residual_identifiers(text: str) -> list[str]:
    return [etype for etype, rx in RESIDUAL_PATTERNS.items() for _ in rx.finditer(text)]


def read_gazetteer(path: str | Path) -> dict[str, float]:
    """One term per line, optional tab- or comma-separated weight; ``#`` comments."""
    terms: dict[str, float] = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = re.split(r"\t|,(?=\s*[0-9.]+\s*$)", line)
        terms[parts[0].strip()] = float(parts[1]) if len(parts) > 1 else 1.0
    return terms


def _alternation(terms: Iterable[str]) -> str:
    return "|".join(re.escape(t) for t in sorted(terms, key=len, reverse=True))


class Detector:
    """Fixed-order detection rules over one query string."""

    def __init__(self, first_names: Sequence[str], titles: Sequence[str], locations: Sequence[str], orgs: Sequence[str]):
        surname = r"[A-Z][a-z]+(?:-[A-Z][a-z]+)?"
        rules: list[tuple[str, EntityType, re.Pattern]] = [
            ("ip_v4", EntityType.IP_ADDRESS, IP_RE),
            ("mac", EntityType.MAC_ADDRESS, MAC_RE),
            ("device_id", EntityType.DEVICE_ID, DEVICE_RE),
            ("network_node", EntityType.NETWORK_NODE, NODE_RE),
        ]
        rules += [(f"timestamp_{i}", EntityType.TIMESTAMP, rx) for i, rx in enumerate(TIMESTAMP_RES)]
        rules.append(("measurement", EntityType.NUMERIC_MEASUREMENT, MEASURE_RE))
        if titles:
            rules.append(("title_surname", EntityType.ROLE_TITLE, re.compile(rf"(?<![\w.])(?:{_alternation(titles)})\s+{surname}\b")))
        if first_names:
            rules.append(("first_last", EntityType.PERSON_NAME, re.compile(rf"\b(?:{_alternation(first_names)})\s+{surname}\b")))
        if locations:
            rules.append(("location_gazetteer", EntityType.LOCATION, re.compile(rf"(?<![\w-])(?:{_alternation(locations)})(?![\w-])")))
        if orgs:
            rules.append(("org_gazetteer", EntityType.ORG_NAME, re.compile(rf"(?<![\w-])(?:{_alternation(orgs)})(?![\w-])")))
        self.rules = rules

    @classmethod
    def from_resources(cls, hierarchy: GeneralizationHierarchy, gazetteer_dir: Optional[Path] = None) -> "Detector":
        gdir = Path(gazetteer_dir) if gazetteer_dir else data_path("gazetteers")
        first = list(read_gazetteer(gdir / "first_names.txt"))
        titles = list(read_gazetteer(gdir / "titles.txt"))
        locs: list[str] = []
        orgs: list[str] = []
        if "LOCATION" in hierarchy.categorical:
            t = hierarchy.categorical["LOCATION"]
            locs = [n for n in t.nodes() if n != t.root]
        if "ORG_NAME" in hierarchy.categorical:
            orgs = hierarchy.categorical["ORG_NAME"].leaves()
        for extra, target in (("locations.txt", locs), ("organizations.txt", orgs)):
            if (gdir / extra).exists():
                target.extend(t for t in read_gazetteer(gdir / extra) if t not in target)
        return cls(first, titles, locs, orgs)

    def detect(self, text: str) -> list[DetectedEntity]:
        candidates = []
        for order, (rule_id, etype, rx) in enumerate(self.rules):
            for m in rx.finditer(text):
                if m.end() > m.start():
                    candidates.append((m.start(), m.end(), order, rule_id, etype))
        candidates.sort(key=lambda c: (-(c[1] - c[0]), c[2], c[0]))
        taken: list[tuple[int, int]] = []
        chosen = []
        for start, end, _, rule_id, etype in candidates:
            if any(start < e and s < end for s, e in taken):
                continue
            taken.append((start, end))
            chosen.append(DetectedEntity(text[start:end], start, end, etype, rule_id))
        return sorted(chosen, key=lambda e: e.start)


@lru_cache(maxsize=1)
def default_hierarchy() -> GeneralizationHierarchy:
    return GeneralizationHierarchy.load(data_path("hierarchy.json"))


@lru_cache(maxsize=1)
def default_detector() -> Detector:
    return Detector.from_resources(default_hierarchy())


def detect_entities(q: str, detector: Optional[Detector] = None) -> list[DetectedEntity]:
    return (detector or default_detector()).detect(q)
