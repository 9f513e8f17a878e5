"""Semantic middleware for drought early warning.

Heterogeneous sensor and indigenous-knowledge readings are parsed,
annotated against a unified ontology, streamed through a rule-driven
event-processing engine, and condensed into a drought vulnerability index
that a small service API and plain-text bulletins disseminate.
"""

from .model import (
    Band,
    Contribution,
    DolceCategory,
    DroughtVulnerabilityIndex,
    MiddlewareError,
    ObservationRecord,
    SemanticObservation,
    Severity,
    SourceFormat,
    TermId,
    parse_term,
    render_term,
)
from .units import UnitTable, builtin_table, convert_unit
from .ontology import OntologyStore, Triple, default_ontology, load_ontology
from .ingest import annotate, annotate_batch, fetch_batch, BatchCursor
from .cep import CepEngine, EventRecord, Rule, RuleSet, parse_rules
from .dvi import IndicatorSpec, IndicatorScore, compute_dvi, parse_indicator_specs
from .pipeline import Pipeline
from .service import Bulletin, Notifier, Service, Subscription
from .scenario import GroundTruth, RunReport, ScenarioConfig, generate, lead_time, replay

__version__ = "0.1.0"

__all__ = [
    "Band",
    "BatchCursor",
    "Bulletin",
    "CepEngine",
    "Contribution",
    "DolceCategory",
    "DroughtVulnerabilityIndex",
    "EventRecord",
    "GroundTruth",
    "IndicatorScore",
    "IndicatorSpec",
    "MiddlewareError",
    "Notifier",
    "ObservationRecord",
    "OntologyStore",
    "Pipeline",
    "Rule",
    "RuleSet",
    "RunReport",
    "ScenarioConfig",
    "SemanticObservation",
    "Service",
    "Severity",
    "SourceFormat",
    "Subscription",
    "TermId",
    "Triple",
    "UnitTable",
    "annotate",
    "annotate_batch",
    "builtin_table",
    "compute_dvi",
    "convert_unit",
    "default_ontology",
    "fetch_batch",
    "generate",
    "lead_time",
    "load_ontology",
    "parse_indicator_specs",
    "parse_rules",
    "parse_term",
    "render_term",
    "replay",
]
