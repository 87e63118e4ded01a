from .anonymize import (
    PLACEHOLDER_RE,
    REDACTED,
    AnonymizationResult,
    Criticality,
    EntityDecision,
    PrivacyParams,
    PseudonymMap,
    anonymize,
    assess_criticality,
    deanonymize,
    generalize,
    generalize_entity,
)
from .detection import DetectedEntity, Detector, EntityType, default_detector, default_hierarchy, detect_entities
from .hierarchy import CategoryTree, GeneralizationHierarchy, laplace_noise, laplace_scale, sample_laplace

__all__ = [
    "PLACEHOLDER_RE",
    "REDACTED",
    "AnonymizationResult",
    "CategoryTree",
    "Criticality",
    "DetectedEntity",
    "Detector",
    "EntityDecision",
    "EntityType",
    "GeneralizationHierarchy",
    "PrivacyParams",
    "PseudonymMap",
    "anonymize",
    "assess_criticality",
    "deanonymize",
    "default_detector",
    "default_hierarchy",
    "detect_entities",
    "generalize",
    "generalize_entity",
    "laplace_noise",
    "laplace_scale",
    "sample_laplace",
]
