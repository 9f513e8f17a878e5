"""Indicator scoring and the composite drought vulnerability index.

Each loaded indicator is either event-sourced (detected events decay
exponentially by half-life) or aggregate-sourced (a window aggregate mapped
through a monotone piecewise-linear curve into [0, 1]). The index is the
weighted sum of indicator scores; weights are validated to sum to 1.

Indicator spec files are UTF-8 lines::

    indicator <TAB> term <TAB> weight <TAB> source-descriptor

with descriptors ``event <term> half_life=<dur>`` or
``agg <fn>(<term>, window=<dur>) map=<x>:<y>,<x>:<y>,...``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from importlib import resources
from typing import Iterable, Sequence, Union

from .cep import (
    AGG_FUNCTIONS,
    DAY,
    HOUR,
    EventRecord,
    WindowState,
    resolve_quality_term,
    aggregate,
)
from .model import (
    Band,
    Contribution,
    DroughtVulnerabilityIndex,
    MalformedTerm,
    MiddlewareError,
    TermId,
    WEIGHT_SUM_TOLERANCE,
    parse_term,
)
from .ontology import OntologyStore


class IndicatorSpecError(MiddlewareError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class WeightMismatch(MiddlewareError):
    pass


@dataclass(frozen=True)
class EventSource:
    event_term: TermId
    half_life: int  # seconds, > 0


@dataclass(frozen=True)
class AggregateSource:
    fn: str
    term: TermId
    window: int
    breakpoints: tuple[tuple[float, float], ...]  # (aggregate value, score), x ascending


Source = Union[EventSource, AggregateSource]


@dataclass(frozen=True)
class IndicatorSpec:
    indicator: TermId
    weight: float
    source: Source


@dataclass(frozen=True)
class IndicatorScore:
    indicator: TermId
    score: float
    as_of: int
    insufficient_data: bool = False


def piecewise_score(breakpoints: Sequence[tuple[float, float]], x: float) -> float:
    """Monotone piecewise-linear mapping, clamped at the outer breakpoints."""
    if x <= breakpoints[0][0]:
        return breakpoints[0][1]
    if x >= breakpoints[-1][0]:
        return breakpoints[-1][1]
    for (x0, y0), (x1, y1) in zip(breakpoints, breakpoints[1:]):
        if x <= x1:
            return y0 + (y1 - y0) * (x - x0) / (x1 - x0)
    return breakpoints[-1][1]


def score_event_indicator(
    events: Iterable[EventRecord], spec: IndicatorSpec, now: int
) -> IndicatorScore:
    """Decayed sum of matching event contributions, capped at 1.

    Contribution of one event: weight * severity/5 * 2 ** (-age / half_life).
    Events dated after ``now`` are ignored.
    """
    source = spec.source
    assert isinstance(source, EventSource)
    total = 0.0
    for event in events:
        if event.term != source.event_term or event.fired_at > now:
            continue
        age = now - event.fired_at
        total += event.weight * (int(event.severity) / 5.0) * 2.0 ** (-age / source.half_life)
    return IndicatorScore(spec.indicator, min(1.0, total), as_of=now)


def score_aggregate_indicator(
    state: WindowState, spec: IndicatorSpec, now: int
) -> IndicatorScore:
    """Window aggregate mapped through the spec's breakpoints.

    An empty (or undefined) aggregate yields score 0 flagged as
    insufficient data, never an error.
    """
    source = spec.source
    assert isinstance(source, AggregateSource)
    value = aggregate(source.fn, state.window(source.term, now, source.window))
    if value is None:
        return IndicatorScore(spec.indicator, 0.0, as_of=now, insufficient_data=True)
    return IndicatorScore(spec.indicator, piecewise_score(source.breakpoints, value), as_of=now)


def score_indicators(
    specs: Sequence[IndicatorSpec],
    state: WindowState,
    events: Sequence[EventRecord],
    now: int,
) -> list[IndicatorScore]:
    scores = []
    for spec in specs:
        if isinstance(spec.source, EventSource):
            scores.append(score_event_indicator(events, spec, now))
        else:
            scores.append(score_aggregate_indicator(state, spec, now))
    return scores


def compute_dvi(
    scores: Sequence[IndicatorScore],
    specs: Sequence[IndicatorSpec],
    computed_at: int,
) -> DroughtVulnerabilityIndex:
    """Weighted sum of one score per loaded indicator.

    Summation runs in sorted-indicator order so the result is invariant
    under permutation of the inputs.
    """
    by_indicator = {s.indicator: s for s in scores}
    spec_terms = {s.indicator for s in specs}
    if set(by_indicator) != spec_terms or len(scores) != len(specs):
        raise WeightMismatch(
            f"scores cover {sorted(map(str, by_indicator))}, spec needs {sorted(map(str, spec_terms))}"
        )
    ordered = sorted(specs, key=lambda s: str(s.indicator))
    value = 0.0
    contributing = []
    for spec in ordered:
        score = by_indicator[spec.indicator]
        value += spec.weight * score.score
        contributing.append(
            Contribution(
                indicator=spec.indicator,
                score=score.score,
                weight=spec.weight,
                insufficient_data=score.insufficient_data,
            )
        )
    value = min(1.0, max(0.0, value))
    return DroughtVulnerabilityIndex(
        value=value,
        band=Band.from_value(value),
        computed_at=computed_at,
        contributing=tuple(contributing),
    )


# -- spec file parsing ---------------------------------------------------------

_DUR_RE = re.compile(r"^(\d+)([hd])$")
_AGG_RE = re.compile(
    r"^agg\s+(\w+)\(\s*([^,()\s]+)\s*(?:,\s*window=(\S+)\s*)?\)\s+map=(\S+)$"
)
_EVENT_RE = re.compile(r"^event\s+(\S+)\s+half_life=(\S+)$")


def _parse_duration(text: str, lineno: int) -> int:
    m = _DUR_RE.match(text)
    if not m:
        raise IndicatorSpecError(lineno, f"bad duration {text!r} (want e.g. 12h or 14d)")
    seconds = int(m.group(1)) * (DAY if m.group(2) == "d" else HOUR)
    if seconds <= 0:
        raise IndicatorSpecError(lineno, f"non-positive duration {text!r}")
    return seconds


def _parse_term_checked(text: str, lineno: int) -> TermId:
    try:
        return parse_term(text)
    except MalformedTerm as exc:
        raise IndicatorSpecError(lineno, str(exc)) from None


def _parse_breakpoints(text: str, lineno: int) -> tuple[tuple[float, float], ...]:
    points = []
    for chunk in text.split(","):
        if ":" not in chunk:
            raise IndicatorSpecError(lineno, f"bad breakpoint {chunk!r} (want x:y)")
        x_s, y_s = chunk.split(":", 1)
        try:
            points.append((float(x_s), float(y_s)))
        except ValueError:
            raise IndicatorSpecError(lineno, f"bad breakpoint numbers {chunk!r}") from None
    if len(points) < 2:
        raise IndicatorSpecError(lineno, "need at least two breakpoints")
    points.sort(key=lambda p: p[0])
    xs = [p[0] for p in points]
    if len(set(xs)) != len(xs):
        raise IndicatorSpecError(lineno, "duplicate breakpoint x values")
    ys = [p[1] for p in points]
    ascending = all(a <= b for a, b in zip(ys, ys[1:]))
    descending = all(a >= b for a, b in zip(ys, ys[1:]))
    if not (ascending or descending):
        raise IndicatorSpecError(lineno, "breakpoint mapping must be monotone")
    if any(not 0.0 <= y <= 1.0 for y in ys):
        raise IndicatorSpecError(lineno, "breakpoint scores must lie in [0, 1]")
    return tuple(points)


def parse_indicator_specs(text: str, onto: OntologyStore | None = None) -> tuple[IndicatorSpec, ...]:
    """Parse and validate an indicator spec document.

    With an ontology, aggregate terms must resolve to quality terms and
    event terms must be known; without one, terms are taken as written.
    """
    specs: list[IndicatorSpec] = []
    seen: set[TermId] = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 4 or parts[0] != "indicator":
            raise IndicatorSpecError(lineno, "expected: indicator <TAB> term <TAB> weight <TAB> source")
        _tag, term_s, weight_s, descriptor = parts
        indicator = _parse_term_checked(term_s.strip(), lineno)
        if indicator in seen:
            raise IndicatorSpecError(lineno, f"duplicate indicator {indicator}")
        seen.add(indicator)
        try:
            weight = float(weight_s)
        except ValueError:
            raise IndicatorSpecError(lineno, f"bad weight {weight_s!r}") from None
        if not 0.0 <= weight <= 1.0:
            raise IndicatorSpecError(lineno, f"weight {weight} outside [0, 1]")

        descriptor = descriptor.strip()
        m = _EVENT_RE.match(descriptor)
        if m:
            event_term = _parse_term_checked(m.group(1), lineno)
            if onto is not None:
                if not onto.knows(event_term):
                    raise IndicatorSpecError(lineno, f"event term {event_term} unknown")
                event_term = onto.canonical_of(event_term)
            half_life = _parse_duration(m.group(2), lineno)
            specs.append(IndicatorSpec(indicator, weight, EventSource(event_term, half_life)))
            continue
        m = _AGG_RE.match(descriptor)
        if m:
            fn, term_text, window_text, map_text = m.groups()
            if fn not in AGG_FUNCTIONS:
                raise IndicatorSpecError(lineno, f"unknown aggregate {fn!r}")
            term = _parse_term_checked(term_text, lineno)
            if onto is not None:
                try:
                    term = resolve_quality_term(term, onto)
                except MiddlewareError as exc:
                    raise IndicatorSpecError(lineno, str(exc)) from None
            window = _parse_duration(window_text, lineno) if window_text else 7 * DAY
            breakpoints = _parse_breakpoints(map_text, lineno)
            specs.append(
                IndicatorSpec(indicator, weight, AggregateSource(fn, term, window, breakpoints))
            )
            continue
        raise IndicatorSpecError(lineno, f"unrecognized source descriptor {descriptor!r}")

    if specs:
        total = sum(s.weight for s in specs)
        if abs(total - 1.0) > WEIGHT_SUM_TOLERANCE:
            raise IndicatorSpecError(0, f"indicator weights sum to {total!r}, expected 1")
    return tuple(specs)


def max_aggregate_window(specs: Sequence[IndicatorSpec]) -> int:
    windows = [s.source.window for s in specs if isinstance(s.source, AggregateSource)]
    return max(windows, default=0)


def default_indicator_specs(onto: OntologyStore | None = None) -> tuple[IndicatorSpec, ...]:
    text = resources.files("semdews").joinpath("assets/indicators.tsv").read_text("utf-8")
    return parse_indicator_specs(text, onto)
