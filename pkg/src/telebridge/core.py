"""Shared data model: queries, pipeline configuration and per-request traces."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import uuid
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Optional

STAGE_ORDER = ("domain_aware", "classify", "privacy", "translate", "expert", "simplify")

CLARIFY_MESSAGE = "Need more info — please clarify"


class TelebridgeError(Exception):
    """Base class for all package errors."""


class ConfigError(TelebridgeError):
    """A config file could not be parsed."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


class ValidationError(TelebridgeError):
    """A value violates a documented invariant."""

    def __init__(self, constraint: str):
        super().__init__(f"constraint violated: {constraint}")
        self.constraint = constraint


@dataclass(frozen=True)
class UserQuery:
    text: str
    vertical_hint: Optional[str] = None
    request_id: str = field(default_factory=lambda: uuid.uuid4().hex)
    received_at: datetime = field(default_factory=lambda: datetime.now(timezone.utc))

    def __post_init__(self):
        if not isinstance(self.text, str) or not self.text.strip():
            raise ValidationError("query text is non-empty")


@dataclass(frozen=True)
class ClarificationRequest:
    request_id: str
    message: str
    originating_stage: str

    def __post_init__(self):
        if not self.message:
            raise ValidationError("clarification message is non-empty")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


# dotted config key -> PipelineConfig field
CONFIG_KEYS = {
    "routing.theta_high": "theta_high",
    "routing.theta_low": "theta_low",
    "routing.clarify_band_low": "clarify_band_low",
    "routing.clarify_band_high": "clarify_band_high",
    "classifier.temperature": "classifier_temperature",
    "classifier.exemplar_k": "exemplar_k",
    "privacy.epsilon": "epsilon",
    "privacy.k_anon": "k_anon",
    "privacy.seed": "seed",
    "simplify.theta_verify": "theta_verify",
    "simplify.fre_min": "fre_min",
    "simplify.fre_max": "fre_max",
    "reflection.max_rounds": "max_reflection_rounds",
}


@dataclass(frozen=True)
class PipelineConfig:
    theta_high: float = 0.85
    theta_low: float = 0.65
    clarify_band_low: float = 0.4
    clarify_band_high: float = 0.6
    classifier_temperature: float = 0.1
    exemplar_k: int = 5
    epsilon: float = 1.0
    k_anon: int = 5
    seed: int = 0
    theta_verify: float = 0.7
    fre_min: float = 55.0
    fre_max: float = 100.0
    max_reflection_rounds: int = 3

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for name in ("theta_high", "theta_low", "clarify_band_low", "clarify_band_high", "theta_verify"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValidationError(f"0 <= {name} <= 1")
        if not self.theta_low < self.theta_high:
            raise ValidationError("theta_low < theta_high")
        if not self.clarify_band_low < self.clarify_band_high:
            raise ValidationError("clarify_band_low < clarify_band_high")
        if not self.epsilon > 0:
            raise ValidationError("epsilon > 0")
        if self.k_anon < 2:
            raise ValidationError("k_anon >= 2")
        if not self.fre_min < self.fre_max:
            raise ValidationError("fre_min < fre_max")
        if self.exemplar_k < 1:
            raise ValidationError("exemplar_k >= 1")
        if self.max_reflection_rounds < 1:
            raise ValidationError("max_reflection_rounds >= 1")
        if not self.classifier_temperature > 0:
            raise ValidationError("classifier_temperature > 0")

    def replace(self, **changes) -> "PipelineConfig":
        return dataclasses.replace(self, **changes)


def _coerce(key: str, name: str, raw: str) -> Any:
    target = type(getattr(PipelineConfig(), name))
    try:
        if target is int:
            return int(raw)
        if raw.lower() in ("inf", "infinity"):
            return float("inf")
        return float(raw)
    except ValueError:
        raise ConfigError(key, f"expected {target.__name__}, got {raw!r}") from None


def parse_config(text: str) -> PipelineConfig:
    """Parse the flat ``key = value`` format; ``#`` starts a comment.

    Keys may be given dotted (``routing.theta_high``) or as the bare field name.
    """
    by_field = {v: v for v in CONFIG_KEYS.values()}
    values: dict[str, Any] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(line, f"line {lineno} is not `key = value`")
        key, raw = (s.strip() for s in line.split("=", 1))
        name = CONFIG_KEYS.get(key) or by_field.get(key)
        if name is None:
            raise ConfigError(key, "unknown config key")
        if not raw:
            raise ConfigError(key, "missing value")
        values[name] = _coerce(key, name, raw)
    return PipelineConfig(**values)


def load_config(path: str | Path) -> PipelineConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))


def digest(text: str, preview: bool = True) -> dict:
    """Content hash plus a 120-character preview, for trace records.

    Pass ``preview=False`` for text that may still hold raw identifiers.
    """
    d = {"sha256": hashlib.sha256(text.encode("utf-8")).hexdigest()}
    if preview:
        d["preview"] = text[:120]
    return d


@dataclass
class StageRecord:
    stage: str
    input_digest: dict
    output_digest: dict
    decision: str
    reflection: Optional[dict] = None
    duration_ms: float = 0.0
    details: dict = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "StageRecord":
        return cls(**d)


@dataclass
class PipelineTrace:
    request_id: str
    stages: list[StageRecord] = field(default_factory=list)

    def add(self, record: StageRecord) -> None:
        names = [s.stage for s in self.stages] + [record.stage]
        if tuple(names) != STAGE_ORDER[: len(names)]:
            raise ValidationError(f"stage order is a prefix of {STAGE_ORDER}")
        self.stages.append(record)

    @property
    def stage_names(self) -> list[str]:
        return [s.stage for s in self.stages]

    def to_dict(self) -> dict:
        return {"request_id": self.request_id, "stages": [s.to_dict() for s in self.stages]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineTrace":
        return cls(request_id=d["request_id"], stages=[StageRecord.from_dict(s) for s in d["stages"]])

    @classmethod
    def from_json(cls, s: str) -> "PipelineTrace":
        return cls.from_dict(json.loads(s))
