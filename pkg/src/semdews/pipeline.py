"""Event-time pipeline tying annotation, detection, and forecasting together.

The pipeline is clocked purely by observation timestamps: a tick fires at
every ``tick_seconds`` boundary the ingested stream crosses, evaluating the
rule set and recomputing the vulnerability index. Records are pushed before
the tick that covers their timestamp, so replaying the same stream always
yields the same tick series.

All mutations run under one lock (the "single queue"); configuration
uploads are staged and only become active at the next tick, atomically.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

from . import dvi as dvi_mod
from .cep import CepEngine, EventRecord, RuleSet, write_event_log
from .ingest import AdapterSuite, DEFAULT_SUITE, Quarantined, annotate
from .model import (
    DroughtVulnerabilityIndex,
    MiddlewareError,
    ObservationRecord,
)
from .ontology import OntologyStore
from .units import UnitTable, builtin_table


@dataclass
class BatchReport:
    """Outcome of one submitted batch."""

    accepted: int = 0
    quarantined: list[Quarantined] = field(default_factory=list)
    ticks_fired: int = 0

    @property
    def reasons(self) -> list[str]:
        return [q.reason for q in self.quarantined]


@dataclass(frozen=True)
class TickRow:
    tick: int
    dvi: DroughtVulnerabilityIndex
    events_fired: int


class Pipeline:
    """Single-owner pipeline over one ontology, rule set, and indicator set."""

    def __init__(
        self,
        ontology: OntologyStore,
        ruleset: RuleSet,
        indicators: tuple[dvi_mod.IndicatorSpec, ...],
        tick_seconds: int = 3600,
        suite: AdapterSuite = DEFAULT_SUITE,
        unit_table: UnitTable | None = None,
        event_log_path=None,
        deadletter_path=None,
    ):
        if tick_seconds <= 0:
            raise MiddlewareError(f"tick_seconds must be positive, got {tick_seconds}")
        self.ontology = ontology
        self.tick_seconds = tick_seconds
        self.suite = suite
        self.unit_table = unit_table or builtin_table()
        self.event_log_path = event_log_path
        self.deadletter_path = deadletter_path

        self.ruleset = ruleset
        self.indicators = indicators
        self._staged_ruleset: RuleSet | None = None
        self._staged_indicators: tuple[dvi_mod.IndicatorSpec, ...] | None = None

        self.engine = CepEngine(ruleset, extra_horizon=dvi_mod.max_aggregate_window(indicators))
        self.events: list[EventRecord] = []
        self.ticks: list[TickRow] = []
        self.latest_dvi: DroughtVulnerabilityIndex | None = None
        self.next_tick: int | None = None
        self.max_seen_ts: int | None = None
        self.accepted_total = 0
        self.quarantined_total = 0
        self.config_version = 1

        self.lock = threading.RLock()
        self.tick_listeners: list = []  # callables (dvi, events) -> None

    # -- configuration -----------------------------------------------------

    def stage_ruleset(self, ruleset: RuleSet) -> int | None:
        """Stage a validated rule set; active from the next tick on."""
        with self.lock:
            self._staged_ruleset = ruleset
            return self.next_tick

    def stage_indicators(self, indicators: tuple[dvi_mod.IndicatorSpec, ...]) -> int | None:
        with self.lock:
            self._staged_indicators = indicators
            return self.next_tick

    def _apply_staged(self) -> None:
        if self._staged_ruleset is not None:
            self.ruleset = self._staged_ruleset
            self.engine.swap_ruleset(self._staged_ruleset)
            self._staged_ruleset = None
            self.config_version += 1
        if self._staged_indicators is not None:
            self.indicators = self._staged_indicators
            self.engine.state.extend_horizon(dvi_mod.max_aggregate_window(self.indicators))
            self._staged_indicators = None
            self.config_version += 1

    # -- ingestion ----------------------------------------------------------

    def _quarantine(self, report: BatchReport, item: Quarantined) -> None:
        report.quarantined.append(item)
        self.quarantined_total += 1
        if self.deadletter_path is not None:
            record = item.record
            fields = (
                item.reason,
                record.source_format.value if record else "-",
                record.node_id if record else "-",
                record.native_property if record else "-",
                str(record.timestamp) if record else "-",
                item.detail.replace("\t", " ").replace("\n", " "),
            )
            with open(self.deadletter_path, "a", encoding="utf-8") as fh:
                fh.write("\t".join(fields) + "\n")

    def submit(self, records: list[ObservationRecord]) -> BatchReport:
        """Annotate and push a batch, firing any ticks the stream crosses.

        Records are processed in (timestamp, node, property) order so that
        identical batches always replay identically.
        """
        report = BatchReport()
        ordered = sorted(records, key=lambda r: (r.timestamp, r.node_id, r.native_property))
        with self.lock:
            for record in ordered:
                report.ticks_fired += self._fire_due(record.timestamp)
                try:
                    sobs = annotate(record, self.ontology, self.unit_table)
                    self.engine.push(sobs)
                except MiddlewareError as exc:
                    self._quarantine(
                        report, Quarantined(reason=exc.code, detail=str(exc), record=record)
                    )
                    continue
                report.accepted += 1
                self.accepted_total += 1
                if self.max_seen_ts is None or record.timestamp > self.max_seen_ts:
                    self.max_seen_ts = record.timestamp
                if self.next_tick is None:
                    self.next_tick = -(-record.timestamp // self.tick_seconds) * self.tick_seconds
        return report

    def quarantine_raw(self, reason: str, detail: str, payload: str = "") -> None:
        """Record a parse-stage rejection (no record object exists yet)."""
        with self.lock:
            self._quarantine(
                BatchReport(), Quarantined(reason=reason, detail=detail, payload=payload)
            )

    # -- ticking -------------------------------------------------------------

    def _fire_due(self, upto_ts: int) -> int:
        fired = 0
        while self.next_tick is not None and self.next_tick < upto_ts:
            self._tick(self.next_tick)
            fired += 1
        return fired

    def _tick(self, now: int) -> None:
        self._apply_staged()
        events = self.engine.evaluate(now)
        self.events.extend(events)
        if self.event_log_path is not None and events:
            write_event_log(events, self.event_log_path)
        scores = dvi_mod.score_indicators(self.indicators, self.engine.state, self.events, now)
        index = dvi_mod.compute_dvi(scores, self.indicators, now)
        self.latest_dvi = index
        self.ticks.append(TickRow(tick=now, dvi=index, events_fired=len(events)))
        self.next_tick = now + self.tick_seconds
        for listener in self.tick_listeners:
            listener(index, events)

    def flush(self) -> int:
        """Fire the remaining ticks through the boundary covering the last
        observation; call once at end of a replayed stream."""
        with self.lock:
            if self.next_tick is None or self.max_seen_ts is None:
                return 0
            final = -(-self.max_seen_ts // self.tick_seconds) * self.tick_seconds
            fired = 0
            while self.next_tick <= final:
                self._tick(self.next_tick)
                fired += 1
            return fired

    # -- queries ---------------------------------------------------------------

    def events_since(self, since: int) -> list[EventRecord]:
        with self.lock:
            hits = [e for e in self.events if e.fired_at >= since]
        return sorted(hits, key=lambda e: (e.fired_at, e.rule_name))
