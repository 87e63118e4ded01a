from .metrics import (
    TranslationMetrics,
    expected_attributes,
    hallucination_rate,
    pii_metrics,
    preservation_score,
    spans_match,
    token_retention,
    translation_metrics,
)
from .report import NO_DATA, MetricsReport, aggregate, run_suite, score_scenario
from .scenarios import Scenario, TemplateSet, generate_scenarios, intent_frequencies, load_scenarios, save_scenarios

__all__ = [
    "NO_DATA",
    "MetricsReport",
    "Scenario",
    "TemplateSet",
    "TranslationMetrics",
    "aggregate",
    "expected_attributes",
    "generate_scenarios",
    "hallucination_rate",
    "intent_frequencies",
    "load_scenarios",
    "pii_metrics",
    "preservation_score",
    "run_suite",
    "save_scenarios",
    "score_scenario",
    "spans_match",
    "token_retention",
    "translation_metrics",
]
