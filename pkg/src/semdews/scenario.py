"""Deterministic sensor-network scenario simulator and replay driver.

``generate`` writes a directory store (``store/<day>/<node>.<ext>``) in all
four ingestion formats plus a per-day ground-truth intensity series.
``replay`` feeds a store through a full pipeline with event-time ticks and
produces a run report. Identical configurations produce byte-identical
stores and reports; all randomness comes from the package's fixed 64-bit
generator, never a platform RNG.

Signal model (per day ``d`` with ground-truth intensity ``g``):

    value = base + swing * g + noise_amp * noise * uniform(-1, 1)

Ground truth ramps linearly from 0 at an episode's start up to its
configured intensity on the episode's last day and is 0 elsewhere.
Indigenous-knowledge codes step with intensity: they stay at 0 until
``g > 0.5`` and rise to their scale maximum near the peak.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

from .cep import EventRecord, RuleSet
from .ingest import (
    AdapterSuite,
    DEFAULT_SUITE,
    BatchCursor,
    Quarantined,
    encode_mote_frame,
    fetch_batch,
    parse_entry,
    round_to_f32,
)
from .model import (
    Band,
    MiddlewareError,
    ObservationRecord,
    SourceFormat,
)
from .ontology import OntologyStore
from .pipeline import Pipeline, TickRow
from .rng import SplitMix64
from .units import builtin_table
from . import dvi as dvi_mod

DAY = 86400


class ConfigError(MiddlewareError):
    pass


class NoDetection(MiddlewareError):
    pass


@dataclass(frozen=True)
class QuantityModel:
    canonical_unit: str
    base: float
    swing: float
    noise_amp: float
    floor: float | None = None


QUANTITIES: dict[str, QuantityModel] = {
    "soil-moisture": QuantityModel("m3/m3", base=0.30, swing=-0.25, noise_amp=0.01, floor=0.0),
    "air-temperature": QuantityModel("K", base=290.0, swing=8.0, noise_amp=0.3),
    "precipitation": QuantityModel("mm", base=5.0, swing=-5.0, noise_amp=0.8, floor=0.0),
    "water-level": QuantityModel("m", base=3.2, swing=-1.5, noise_amp=0.02, floor=0.0),
}

IK_QUANTITIES = ("ik-sifennefene", "ik-mutiga")


def ik_code(quantity: str, intensity: float) -> int:
    """Deterministic indicator code; correlates with intensity above 0.5."""
    if quantity == "ik-sifennefene":
        if intensity <= 0.5:
            return 0
        return 2 if intensity <= 0.8 else 3
    if quantity == "ik-mutiga":
        if intensity <= 0.5:
            return 0
        return 1 if intensity <= 0.75 else 2
    raise ConfigError(f"unknown ik quantity {quantity!r}")


@dataclass(frozen=True)
class Episode:
    start_day: int
    length_days: int
    intensity: float


@dataclass(frozen=True)
class NodeSpec:
    node_id: str
    format: SourceFormat
    quantity: str
    native_property: str
    unit: str
    interval_hours: int
    vocabulary: str = "canonical"


@dataclass(frozen=True)
class ScenarioConfig:
    seed: int
    duration_days: int
    nodes: tuple[NodeSpec, ...]
    episodes: tuple[Episode, ...] = ()
    noise: float = 1.0

    def validate(self) -> None:
        if self.duration_days <= 0:
            raise ConfigError(f"duration_days must be positive, got {self.duration_days}")
        if not self.nodes:
            raise ConfigError("scenario needs at least one node")
        ids = [n.node_id for n in self.nodes]
        if len(set(ids)) != len(ids):
            raise ConfigError("node ids must be unique")
        for node in self.nodes:
            if node.interval_hours <= 0 or node.interval_hours > 24:
                raise ConfigError(f"{node.node_id}: interval_hours must be in 1..24")
            if node.format is SourceFormat.IK_REPORT:
                if node.quantity not in IK_QUANTITIES:
                    raise ConfigError(f"{node.node_id}: unknown ik quantity {node.quantity!r}")
            elif node.quantity not in QUANTITIES:
                raise ConfigError(f"{node.node_id}: unknown quantity {node.quantity!r}")
        ordered = sorted(self.episodes, key=lambda e: e.start_day)
        for ep in ordered:
            if ep.start_day < 0 or ep.length_days <= 0:
                raise ConfigError(f"bad episode bounds {ep}")
            if not 0.0 < ep.intensity <= 1.0:
                raise ConfigError(f"episode intensity {ep.intensity} outside (0, 1]")
            if ep.start_day + ep.length_days > self.duration_days:
                raise ConfigError(f"episode {ep} extends past day {self.duration_days}")
        for a, b in zip(ordered, ordered[1:]):
            if b.start_day < a.start_day + a.length_days:
                raise ConfigError(f"episodes overlap: {a} and {b}")
        formats = {n.format for n in self.nodes}
        if formats != set(SourceFormat):
            missing = sorted(f.value for f in set(SourceFormat) - formats)
            raise ConfigError(f"scenario must exercise all four formats; missing {missing}")
        vocabularies = {n.vocabulary for n in self.nodes}
        if len(vocabularies) < 2:
            raise ConfigError("scenario must mix at least two native vocabularies")

    def without_episodes(self) -> "ScenarioConfig":
        return replace(self, episodes=())


def parse_scenario_config(text: str) -> ScenarioConfig:
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"bad scenario JSON at offset {exc.pos}: {exc.msg}") from None
    try:
        nodes = tuple(
            NodeSpec(
                node_id=n["id"],
                format=SourceFormat(n["format"]),
                quantity=n["quantity"],
                native_property=n["property"],
                unit=n.get("unit", ""),
                interval_hours=int(n["interval_hours"]),
                vocabulary=n.get("vocabulary", "canonical"),
            )
            for n in payload["nodes"]
        )
        episodes = tuple(
            Episode(int(e["start_day"]), int(e["length_days"]), float(e["intensity"]))
            for e in payload.get("episodes", [])
        )
        config = ScenarioConfig(
            seed=int(payload["seed"]),
            duration_days=int(payload["duration_days"]),
            nodes=nodes,
            episodes=episodes,
            noise=float(payload.get("noise", 1.0)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad scenario config: {exc}") from None
    config.validate()
    return config


def default_scenario_config() -> ScenarioConfig:
    text = resources.files("semdews").joinpath("assets/demo-scenario.json").read_text("utf-8")
    return parse_scenario_config(text)


@dataclass(frozen=True)
class GroundTruth:
    """Per-day drought intensity derived from the configured episodes."""

    intensities: tuple[float, ...]

    @classmethod
    def from_config(cls, config: ScenarioConfig) -> "GroundTruth":
        days = [0.0] * config.duration_days
        for ep in config.episodes:
            for offset in range(ep.length_days):
                days[ep.start_day + offset] = ep.intensity * (offset + 1) / ep.length_days
        return cls(tuple(days))

    @property
    def has_episode(self) -> bool:
        return any(v > 0.0 for v in self.intensities)

    @property
    def peak_day(self) -> int:
        """1-based day number whose end-of-day tick covers the peak."""
        if not self.has_episode:
            raise NoDetection("ground truth has no episode")
        peak = max(self.intensities)
        return self.intensities.index(peak) + 1

    def to_tsv(self) -> str:
        lines = ["# day\tintensity"]
        for day, value in enumerate(self.intensities):
            lines.append(f"{day}\t{value!r}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_tsv(cls, text: str) -> "GroundTruth":
        values = []
        for raw in text.splitlines():
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            _day, value = line.split("\t")
            values.append(float(value))
        return cls(tuple(values))


def _render_value(node: NodeSpec, value: float, timestamp: int) -> str:
    if node.format is SourceFormat.TEXT_CSV:
        return f"{node.node_id},{node.native_property},{value!r},{node.unit},{timestamp}"
    if node.format is SourceFormat.STRUCTURED:
        return json.dumps(
            {
                "node": node.node_id,
                "prop": node.native_property,
                "val": value,
                "unit": node.unit,
                "ts": timestamp,
            },
            sort_keys=True,
        )
    record = ObservationRecord(
        node_id=node.node_id,
        native_property=node.native_property,
        value=value,
        unit=node.unit,
        timestamp=timestamp,
        source_format=SourceFormat.MOTE_FRAME,
    )
    return encode_mote_frame(record).hex()


def generate(config: ScenarioConfig, out_dir: str | Path) -> GroundTruth:
    """Write the scenario store and ground truth under ``out_dir``.

    Layout: ``out_dir/store/<day>/<node>.<ext>`` plus ``out_dir/truth.tsv``.
    Identical configs produce byte-identical trees.
    """
    config.validate()
    truth = GroundTruth.from_config(config)
    table = builtin_table()
    root = Path(out_dir)
    store = root / "store"
    store.mkdir(parents=True, exist_ok=True)

    extensions = {
        SourceFormat.TEXT_CSV: "csv",
        SourceFormat.STRUCTURED: "sjson",
        SourceFormat.MOTE_FRAME: "frame",
        SourceFormat.IK_REPORT: "ik",
    }
    streams = {node.node_id: SplitMix64(config.seed).substream(node.node_id) for node in config.nodes}

    for day in range(config.duration_days):
        intensity = truth.intensities[day]
        day_dir = store / f"{day:03d}"
        day_dir.mkdir(exist_ok=True)
        for node in config.nodes:
            lines = []
            interval = node.interval_hours * 3600
            for offset in range(0, DAY, interval):
                timestamp = day * DAY + offset
                if node.format is SourceFormat.IK_REPORT:
                    code = ik_code(node.quantity, intensity)
                    lines.append(
                        f"ik-report\t{node.node_id}\t{node.native_property}\t{code}\t{timestamp}"
                    )
                    continue
                model = QUANTITIES[node.quantity]
                noise = streams[node.node_id].next_symmetric() * model.noise_amp * config.noise
                value = model.base + model.swing * intensity + noise
                if model.floor is not None:
                    value = max(model.floor, value)
                value = table.convert(value, model.canonical_unit, node.unit)
                if node.format is SourceFormat.MOTE_FRAME:
                    value = round_to_f32(value)
                lines.append(_render_value(node, value, timestamp))
            path = day_dir / f"{node.node_id}.{extensions[node.format]}"
            path.write_text("\n".join(lines) + "\n", encoding="utf-8")

    (root / "truth.tsv").write_text(truth.to_tsv(), encoding="utf-8")
    return truth


# -- replay --------------------------------------------------------------------------

@dataclass
class RunReport:
    """Everything a replay produced, plus conservation counters."""

    store_uri: str
    ticks: list[TickRow] = field(default_factory=list)
    events: list[EventRecord] = field(default_factory=list)
    entries_fetched: int = 0
    records_parsed: int = 0
    accepted: int = 0
    quarantined: list[Quarantined] = field(default_factory=list)

    @property
    def quarantined_count(self) -> int:
        return len(self.quarantined)

    def report_tsv(self) -> str:
        lines = ["# tick\tdvi\tband\tevents"]
        for row in self.ticks:
            lines.append(f"{row.tick}\t{row.dvi.value!r}\t{row.dvi.band}\t{row.events_fired}")
        return "\n".join(lines) + "\n"

    def first_tick_at_or_above(self, band: Band) -> TickRow | None:
        for row in self.ticks:
            if row.dvi.band >= band:
                return row
        return None

    def write(self, out_dir: str | Path) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.tsv").write_text(self.report_tsv(), encoding="utf-8")


def replay(
    store_uri: str,
    ontology: OntologyStore,
    ruleset: RuleSet,
    indicators: tuple[dvi_mod.IndicatorSpec, ...],
    tick_seconds: int = DAY,
    out_dir: str | Path | None = None,
    suite: AdapterSuite = DEFAULT_SUITE,
    batch_size: int = 500,
) -> RunReport:
    """Run a store through the pipeline with event-time ticks.

    Batches are fetched in store order (already chronological by day);
    parse failures are quarantined with their reason codes rather than
    aborting the run.
    """
    out = Path(out_dir) if out_dir is not None else None
    event_log = deadletter = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        event_log = out / "events.log"
        deadletter = out / "deadletter.tsv"
        for path in (event_log, deadletter):
            if path.exists():
                path.unlink()

    pipeline = Pipeline(
        ontology,
        ruleset,
        indicators,
        tick_seconds=tick_seconds,
        suite=suite,
        event_log_path=event_log,
        deadletter_path=deadletter,
    )
    report = RunReport(store_uri=store_uri)
    cursor = BatchCursor(store_uri)
    while True:
        entries, cursor = fetch_batch(cursor, batch_size)
        if not entries:
            break
        report.entries_fetched += len(entries)
        records: list[ObservationRecord] = []
        for entry in entries:
            try:
                records.extend(parse_entry(entry, ontology, suite))
            except MiddlewareError as exc:
                item = Quarantined(reason=exc.code, detail=str(exc), payload=entry.payload)
                report.quarantined.append(item)
                pipeline.quarantine_raw(item.reason, item.detail, item.payload)
        report.records_parsed += len(records)
        batch_report = pipeline.submit(records)
        report.accepted += batch_report.accepted
        report.quarantined.extend(batch_report.quarantined)
    pipeline.flush()
    report.ticks = list(pipeline.ticks)
    report.events = list(pipeline.events)
    if out is not None:
        report.write(out)
        if pipeline.latest_dvi is not None:
            from .service import Bulletin

            bulletin = Bulletin.from_state(pipeline.latest_dvi, pipeline.events)
            (out / "bulletin.txt").write_text(bulletin.render(), encoding="utf-8")
    return report


def lead_time(report: RunReport, truth: GroundTruth) -> int:
    """Days between the first watch-band tick and the ground-truth peak.

    Positive means the pipeline warned before the drought peaked. Raises
    ``NoDetection`` when the index never leaves the normal band (or the
    scenario has no episode at all, where lead time is not applicable).
    """
    peak_day = truth.peak_day  # raises NoDetection when episode-free
    row = report.first_tick_at_or_above(Band.WATCH)
    if row is None:
        raise NoDetection("index never reached the watch band")
    detection_day = row.tick // DAY
    return peak_day - detection_day
