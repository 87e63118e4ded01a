"""Suite runner: every scenario through the gateway, metrics aggregated as means."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional, Sequence

from ..core import PipelineConfig, UserQuery
from ..gateway import Resources, handle_query
from ..privacy.anonymize import PrivacyParams, anonymize
from .metrics import pii_metrics, preservation_score, token_retention, translation_metrics
from .scenarios import Scenario

NO_DATA = "no data"
_EPOCH = datetime(1970, 1, 1, tzinfo=timezone.utc)
ROW_FIELDS = (
    "id", "outcome", "intent_gold", "intent", "vertical_gold", "vertical",
    "pii_recall", "pii_precision", "pii_f1", "token_retention", "preservation",
    "overlap", "coverage", "similarity", "hallucination", "fre", "error",
)
MEAN_FIELDS = ROW_FIELDS[6:16]


@dataclass
class MetricsReport:
    pii_recall: Optional[float] = None
    pii_precision: Optional[float] = None
    pii_f1: Optional[float] = None
    token_retention: Optional[float] = None
    preservation: Optional[float] = None
    overlap: Optional[float] = None
    coverage: Optional[float] = None
    similarity: Optional[float] = None
    hallucination: Optional[float] = None
    fre_mean: Optional[float] = None
    fre_min: Optional[float] = None
    fre_max: Optional[float] = None
    n_scenarios: int = 0
    n_answered: int = 0
    n_clarified: int = 0
    n_errored: int = 0
    status: str = NO_DATA
    rows: list[dict] = field(default_factory=list)

    def to_dict(self, include_rows: bool = True) -> dict:
        d = asdict(self)
        if not include_rows:
            d.pop("rows")
        return d

    def to_json(self, include_rows: bool = True) -> str:
        return json.dumps(self.to_dict(include_rows), sort_keys=True, indent=2)

    def to_tsv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=ROW_FIELDS, delimiter="\t", lineterminator="\n")
        w.writeheader()
        for row in self.rows:
            w.writerow({k: ("" if row.get(k) is None else row[k]) for k in ROW_FIELDS})
        return buf.getvalue()

    def write(self, json_path: str | Path, tsv_path: Optional[str | Path] = None) -> None:
        Path(json_path).write_text(self.to_json() + "\n", encoding="utf-8")
        if tsv_path:
            Path(tsv_path).write_text(self.to_tsv(), encoding="utf-8")


def _mean(values: list[float]) -> Optional[float]:
    return math.fsum(values) / len(values) if values else None


def score_scenario(s: Scenario, res: Resources, cfg: PipelineConfig = PipelineConfig()) -> dict:
    row: dict = {k: None for k in ROW_FIELDS}
    row.update(id=s.id, intent_gold=s.intent, vertical_gold=s.vertical)
    try:
        q = UserQuery(s.query, request_id=s.id, received_at=_EPOCH)
        resp = handle_query(q, res, cfg, clock=lambda: 0.0)
    except Exception as exc:  # a malformed scenario is an errored row, not a crashed suite
        row.update(outcome="error", error=f"{type(exc).__name__}: {exc}")
        return row
    row["outcome"] = resp.outcome
    if resp.outcome == "error":
        row["error"] = f"{resp.error['stage']}: {resp.error['message']}"
        return row
    art = resp.artifacts
    if "assign" in art:
        row["vertical"] = art["assign"].top_vertical
    cls = art.get("classification")
    if cls is not None and cls.classification is not None:
        row["intent"] = cls.classification.intent
    anon = art.get("anonymization")
    if anon is None:
        params = PrivacyParams(cfg.epsilon, cfg.k_anon, cfg.seed)
        anon = anonymize(s.query, art.get("assign"), params, res.hierarchy, res.detector)
    recall, precision, f1 = pii_metrics(anon.entities, s.entities)
    row.update(
        pii_recall=recall,
        pii_precision=precision,
        pii_f1=f1,
        token_retention=token_retention(s.query, anon.text, s.entities),
        preservation=preservation_score(s.query, anon.text, res.embedder),
    )
    q_tech = art.get("technical_query")
    if q_tech is not None:
        tm = translation_metrics(anon.text, q_tech, res.ontology, row["vertical"], row["intent"], res.embedder)
        row.update(asdict(tm))
    if "simplified" in art:
        row["fre"] = art["simplified"].fre
    return row


def aggregate(rows: Sequence[dict]) -> MetricsReport:
    rep = MetricsReport(rows=list(rows), n_scenarios=len(rows))
    rep.n_answered = sum(r["outcome"] == "answered" for r in rows)
    rep.n_clarified = sum(r["outcome"] == "clarification" for r in rows)
    rep.n_errored = sum(r["outcome"] == "error" for r in rows)
    ok = [r for r in rows if r["outcome"] != "error"]
    if not ok:
        return rep
    rep.status = "ok"
    for k in MEAN_FIELDS:
        vals = [r[k] for r in ok if r[k] is not None]
        if k == "fre":
            rep.fre_mean = _mean(vals)
            rep.fre_min = min(vals) if vals else None
            rep.fre_max = max(vals) if vals else None
        else:
            setattr(rep, k, _mean(vals))
    return rep


def run_suite(scenarios: Sequence[Scenario], res: Resources, cfg: PipelineConfig = PipelineConfig()) -> MetricsReport:
    """Rows keep scenario order; means are order-independent."""
    return aggregate([score_scenario(s, res, cfg) for s in scenarios])
