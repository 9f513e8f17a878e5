"""Shared domain types for the drought early-warning middleware.

Everything here is an immutable value object: safe to share across threads
and to use as dict keys. Construction validates invariants and raises a
typed ``MiddlewareError`` subclass on violation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum, IntEnum

WEIGHT_SUM_TOLERANCE = 1e-9


class MiddlewareError(Exception):
    """Base class for every typed error raised by this package."""

    @property
    def code(self) -> str:
        """Stable reason code used in quarantine reports and logs."""
        return type(self).__name__


class MalformedTerm(MiddlewareError):
    pass


class NegativeTimestamp(MiddlewareError):
    pass


class InvalidRecord(MiddlewareError):
    pass


@dataclass(frozen=True)
class TermId:
    """Namespaced identifier, rendered ``namespace:local``.

    Both parts are ASCII without whitespace; ':' may appear in neither part
    so the rendered form always splits unambiguously.
    """

    namespace: str
    local: str

    def __post_init__(self) -> None:
        for part, name in ((self.namespace, "namespace"), (self.local, "local")):
            if not part:
                raise MalformedTerm(f"empty {name} part")
            if not part.isascii():
                raise MalformedTerm(f"non-ASCII {name} part: {part!r}")
            if any(c.isspace() for c in part):
                raise MalformedTerm(f"whitespace in {name} part: {part!r}")
            if ":" in part:
                raise MalformedTerm(f"':' in {name} part: {part!r}")

    def __str__(self) -> str:
        return f"{self.namespace}:{self.local}"

    def __lt__(self, other: "TermId") -> bool:
        return (self.namespace, self.local) < (other.namespace, other.local)


def render_term(term: TermId) -> str:
    return str(term)


def parse_term(text: str) -> TermId:
    """Inverse of :func:`render_term`; requires exactly one ':' separator."""
    if text.count(":") != 1:
        raise MalformedTerm(f"expected exactly one ':' in {text!r}")
    namespace, local = text.split(":")
    return TermId(namespace, local)


class SourceFormat(str, Enum):
    """Wire/file format a raw observation arrived in."""

    TEXT_CSV = "text-csv"
    STRUCTURED = "structured"
    MOTE_FRAME = "mote-frame"
    IK_REPORT = "ik-report"


@dataclass(frozen=True)
class ObservationRecord:
    """One parsed reading, before any ontology semantics are attached.

    ``native_property`` keeps the verbatim property name from the source
    (for example "Hoehe" from a German-labelled station). An empty ``unit``
    marks a categorical code: ``value`` must then be a small non-negative
    integer on the indicator's declared scale.
    """

    node_id: str
    native_property: str
    value: float
    unit: str
    timestamp: int
    source_format: SourceFormat

    def __post_init__(self) -> None:
        if self.timestamp < 0:
            raise NegativeTimestamp(f"timestamp {self.timestamp} < 0")
        if not math.isfinite(self.value):
            raise InvalidRecord(f"non-finite value {self.value!r}")
        if self.is_categorical:
            if self.value < 0 or self.value != int(self.value):
                raise InvalidRecord(
                    f"categorical code must be a non-negative integer, got {self.value!r}"
                )

    @property
    def is_categorical(self) -> bool:
        return self.unit == ""

    @property
    def code(self) -> int:
        if not self.is_categorical:
            raise InvalidRecord("record is numeric, not categorical")
        return int(self.value)


class DolceCategory(str, Enum):
    """Upper-ontology category a vocabulary term classifies under."""

    ENDURANT = "endurant"
    PERDURANT = "perdurant"
    QUALITY = "quality"


@dataclass(frozen=True)
class SemanticObservation:
    """An observation bound to its canonical term, category, and unit."""

    base: ObservationRecord
    canonical_term: TermId
    dolce_category: DolceCategory
    canonical_value: float
    canonical_unit: TermId

    def __post_init__(self) -> None:
        if not math.isfinite(self.canonical_value):
            raise InvalidRecord(f"non-finite canonical value {self.canonical_value!r}")


class Severity(int):
    """Event severity, 1 (mild) through 5 (most severe)."""

    MIN = 1
    MAX = 5

    def __new__(cls, level: int) -> "Severity":
        level = int(level)
        if not cls.MIN <= level <= cls.MAX:
            raise InvalidRecord(f"severity {level} outside {cls.MIN}..{cls.MAX}")
        return super().__new__(cls, level)


class Band(IntEnum):
    """Severity band of the vulnerability index; ordering follows urgency."""

    NORMAL = 0
    WATCH = 1
    WARNING = 2
    EMERGENCY = 3

    @classmethod
    def from_value(cls, value: float) -> "Band":
        """Deterministic banding with half-open quartile boundaries."""
        if not 0.0 <= value <= 1.0:
            raise InvalidRecord(f"index value {value!r} outside [0, 1]")
        if value < 0.25:
            return cls.NORMAL
        if value < 0.5:
            return cls.WATCH
        if value < 0.75:
            return cls.WARNING
        return cls.EMERGENCY

    @classmethod
    def parse(cls, name: str) -> "Band":
        try:
            return cls[name.upper()]
        except KeyError:
            raise InvalidRecord(f"unknown band {name!r}") from None

    def __str__(self) -> str:
        return self.name.lower()


@dataclass(frozen=True)
class Contribution:
    """One indicator's share of a vulnerability index."""

    indicator: TermId
    score: float
    weight: float
    insufficient_data: bool = False

    def __post_init__(self) -> None:
        if not 0.0 <= self.score <= 1.0:
            raise InvalidRecord(f"score {self.score!r} outside [0, 1]")
        if not 0.0 <= self.weight <= 1.0:
            raise InvalidRecord(f"weight {self.weight!r} outside [0, 1]")


@dataclass(frozen=True)
class DroughtVulnerabilityIndex:
    """Composite [0, 1] drought vulnerability score with its severity band."""

    value: float
    band: Band
    computed_at: int
    contributing: tuple[Contribution, ...]

    def __post_init__(self) -> None:
        if not 0.0 <= self.value <= 1.0:
            raise InvalidRecord(f"index value {self.value!r} outside [0, 1]")
        if self.band is not Band.from_value(self.value):
            raise InvalidRecord(f"band {self.band} inconsistent with value {self.value!r}")
        total = sum(c.weight for c in self.contributing)
        if self.contributing and abs(total - 1.0) > WEIGHT_SUM_TOLERANCE:
            raise InvalidRecord(f"contribution weights sum to {total!r}, expected 1")
