"""Interface-protocol layer: store fetch, format parsers, and annotation.

Four heterogeneous source formats are supported:

  text-csv    comma-separated, no quoting, '#' comment lines
  structured  JSON objects/arrays with configurable key names
  mote-frame  14-byte big-endian binary frame (hex-encoded in store files)
  ik-report   tab-separated categorical indicator sightings

Parsers are total: they return a valid ``ObservationRecord`` or raise a
typed ``MiddlewareError``. Semantic failures (unknown property, bad unit)
surface at annotation time so they can be quarantined instead of killing
a whole batch.
"""

from __future__ import annotations

import functools
import json
import math
import operator
import struct
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

from .model import (
    MalformedTerm,
    MiddlewareError,
    ObservationRecord,
    SemanticObservation,
    SourceFormat,
    TermId,
)
from .ontology import OntologyStore, Unclassified, Unresolvable
from .units import UnitTable, builtin_table

FRAME_LENGTH = 14
FRAME_MAGIC = 0xA5
FRAME_VERSION = 0x01
_FRAME_STRUCT = struct.Struct(">BBHBIfB")

CATEGORICAL_UNIT = TermId("unit", "code")

RECORD_FIELDS = ("node_id", "native_property", "value", "unit", "timestamp")

_EXTENSION_FORMATS = {
    ".csv": SourceFormat.TEXT_CSV,
    ".sjson": SourceFormat.STRUCTURED,
    ".frame": SourceFormat.MOTE_FRAME,
    ".ik": SourceFormat.IK_REPORT,
}


class InvalidAdapterConfig(MiddlewareError):
    pass


class FieldCountMismatch(MiddlewareError):
    pass


class NumericParseError(MiddlewareError):
    def __init__(self, where: int | str, detail: str = ""):
        super().__init__(f"bad numeric value at {where}" + (f": {detail}" if detail else ""))
        self.where = where


class StructuredSyntaxError(MiddlewareError):
    def __init__(self, position: int, detail: str = ""):
        super().__init__(f"syntax error at offset {position}" + (f": {detail}" if detail else ""))
        self.position = position


class MissingField(MiddlewareError):
    def __init__(self, key: str):
        super().__init__(key)
        self.key = key


class BadMagic(MiddlewareError):
    pass


class BadLength(MiddlewareError):
    pass


class ChecksumMismatch(MiddlewareError):
    pass


class UnknownPropertyCode(MiddlewareError):
    pass


class UnencodableRecord(MiddlewareError):
    pass


class MalformedIkReport(MiddlewareError):
    pass


class UnknownIndicator(MiddlewareError):
    pass


class CodeOutOfScale(MiddlewareError):
    pass


class UnresolvableProperty(MiddlewareError):
    pass


class StoreUnreachable(MiddlewareError):
    pass


class CorruptStoreEntry(MiddlewareError):
    def __init__(self, offset: int, detail: str = ""):
        super().__init__(f"corrupt store entry at offset {offset}" + (f": {detail}" if detail else ""))
        self.offset = offset


@dataclass(frozen=True)
class AdapterConfig:
    """Per-format mapping of wire positions/keys to record fields.

    ``columns`` maps record fields to CSV column indexes, ``keys`` maps them
    to structured-document key names, and ``property_codes`` maps mote frame
    property codes to (native property, unit) pairs.
    """

    format: SourceFormat
    columns: Mapping[str, int] = field(default_factory=dict)
    keys: Mapping[str, str] = field(default_factory=dict)
    property_codes: Mapping[int, tuple[str, str]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.format is SourceFormat.TEXT_CSV:
            missing = set(RECORD_FIELDS) - set(self.columns)
            if missing:
                raise InvalidAdapterConfig(f"unmapped fields: {sorted(missing)}")
            indexes = list(self.columns.values())
            if len(set(indexes)) != len(indexes) or min(indexes) < 0:
                raise InvalidAdapterConfig("column indexes must be distinct and non-negative")
        elif self.format is SourceFormat.STRUCTURED:
            missing = set(RECORD_FIELDS) - set(self.keys)
            if missing:
                raise InvalidAdapterConfig(f"unmapped fields: {sorted(missing)}")
            names = list(self.keys.values())
            if len(set(names)) != len(names):
                raise InvalidAdapterConfig("key names must be distinct")
        elif self.format is SourceFormat.MOTE_FRAME:
            props = [p for p, _u in self.property_codes.values()]
            if len(set(props)) != len(props):
                raise InvalidAdapterConfig("property code map must be injective")

    @property
    def column_count(self) -> int:
        return max(self.columns.values()) + 1


DEFAULT_CSV_CONFIG = AdapterConfig(
    format=SourceFormat.TEXT_CSV,
    columns={"node_id": 0, "native_property": 1, "value": 2, "unit": 3, "timestamp": 4},
)

DEFAULT_STRUCTURED_CONFIG = AdapterConfig(
    format=SourceFormat.STRUCTURED,
    keys={"node_id": "node", "native_property": "prop", "value": "val", "unit": "unit", "timestamp": "ts"},
)

DEFAULT_MOTE_CONFIG = AdapterConfig(
    format=SourceFormat.MOTE_FRAME,
    property_codes={
        0x01: ("soilMoist", "m3/m3"),
        0x02: ("airTemp", "K"),
        0x03: ("precip", "mm"),
        0x04: ("waterLvl", "m"),
    },
)


@dataclass(frozen=True)
class AdapterSuite:
    """The adapter configuration bundle one pipeline runs with."""

    csv: AdapterConfig = DEFAULT_CSV_CONFIG
    structured: AdapterConfig = DEFAULT_STRUCTURED_CONFIG
    mote: AdapterConfig = DEFAULT_MOTE_CONFIG


DEFAULT_SUITE = AdapterSuite()


# -- text-csv ---------------------------------------------------------------

def parse_csv(line: str, cfg: AdapterConfig = DEFAULT_CSV_CONFIG) -> ObservationRecord:
    """Parse one CSV data line; comment/blank filtering is the caller's job."""
    fields = line.rstrip("\n").split(",")
    if len(fields) != cfg.column_count:
        raise FieldCountMismatch(f"expected {cfg.column_count} columns, got {len(fields)}")
    col = cfg.columns

    def numeric(index: int, caster):
        try:
            value = caster(fields[index])
        except ValueError:
            raise NumericParseError(index, fields[index]) from None
        return value

    value = numeric(col["value"], float)
    if not math.isfinite(value):
        raise NumericParseError(col["value"], "non-finite")
    timestamp = numeric(col["timestamp"], int)
    return ObservationRecord(
        node_id=fields[col["node_id"]],
        native_property=fields[col["native_property"]],
        value=value,
        unit=fields[col["unit"]],
        timestamp=timestamp,
        source_format=SourceFormat.TEXT_CSV,
    )


# -- structured (JSON) --------------------------------------------------------

def record_from_object(obj, cfg: AdapterConfig) -> ObservationRecord:
    if not isinstance(obj, dict):
        raise StructuredSyntaxError(0, "observation entries must be objects")
    keys = cfg.keys

    def fetch(field_name: str):
        key = keys[field_name]
        if key not in obj:
            raise MissingField(key)
        return obj[key]

    # probe in record-field order so the first omission is the one reported
    node = fetch("node_id")
    prop = fetch("native_property")
    raw_value = fetch("value")
    unit = fetch("unit")
    raw_ts = fetch("timestamp")
    if isinstance(raw_value, bool) or not isinstance(raw_value, (int, float)):
        raise NumericParseError(keys["value"], repr(raw_value))
    if isinstance(raw_ts, bool) or not isinstance(raw_ts, (int, float)):
        raise NumericParseError(keys["timestamp"], repr(raw_ts))
    if isinstance(raw_ts, float):
        if not raw_ts.is_integer():
            raise NumericParseError(keys["timestamp"], "timestamp must be whole seconds")
        raw_ts = int(raw_ts)
    if not isinstance(node, str) or not isinstance(prop, str) or not isinstance(unit, str):
        raise StructuredSyntaxError(0, "node/prop/unit must be strings")
    return ObservationRecord(
        node_id=node,
        native_property=prop,
        value=float(raw_value),
        unit=unit,
        timestamp=raw_ts,
        source_format=SourceFormat.STRUCTURED,
    )


def parse_structured(
    document: str, cfg: AdapterConfig = DEFAULT_STRUCTURED_CONFIG
) -> list[ObservationRecord]:
    """Parse a JSON object or array of objects into records.

    Unknown keys are ignored; a missing mapped key raises ``MissingField``
    for the first offending object.
    """
    try:
        payload = json.loads(document)
    except json.JSONDecodeError as exc:
        raise StructuredSyntaxError(exc.pos, exc.msg) from None
    if isinstance(payload, dict):
        payload = [payload]
    if not isinstance(payload, list):
        raise StructuredSyntaxError(0, "expected an object or an array of objects")
    return [record_from_object(obj, cfg) for obj in payload]


# -- mote frame ----------------------------------------------------------------

def frame_checksum(data: bytes) -> int:
    """XOR of the 13 payload bytes."""
    return functools.reduce(operator.xor, data[:FRAME_LENGTH - 1], 0)


def parse_mote_frame(data: bytes, cfg: AdapterConfig = DEFAULT_MOTE_CONFIG) -> ObservationRecord:
    """Decode one 14-byte frame; the checksum is verified before any field."""
    if len(data) != FRAME_LENGTH:
        raise BadLength(f"expected {FRAME_LENGTH} bytes, got {len(data)}")
    if frame_checksum(data) != data[FRAME_LENGTH - 1]:
        raise ChecksumMismatch(
            f"checksum {data[FRAME_LENGTH - 1]:#04x} != computed {frame_checksum(data):#04x}"
        )
    magic, version, node, code, timestamp, value, _csum = _FRAME_STRUCT.unpack(data)
    if magic != FRAME_MAGIC or version != FRAME_VERSION:
        raise BadMagic(f"header {magic:#04x}/{version:#04x}")
    try:
        prop, unit = cfg.property_codes[code]
    except KeyError:
        raise UnknownPropertyCode(f"{code:#04x}") from None
    return ObservationRecord(
        node_id=str(node),
        native_property=prop,
        value=value,
        unit=unit,
        timestamp=timestamp,
        source_format=SourceFormat.MOTE_FRAME,
    )


def round_to_f32(value: float) -> float:
    """Nearest IEEE-754 binary32 value, as a Python float."""
    return struct.unpack(">f", struct.pack(">f", value))[0]


def encode_mote_frame(record: ObservationRecord, cfg: AdapterConfig = DEFAULT_MOTE_CONFIG) -> bytes:
    """Inverse of ``parse_mote_frame``; refuses values a frame cannot hold."""
    inverse = {prop: (code, unit) for code, (prop, unit) in cfg.property_codes.items()}
    if record.native_property not in inverse:
        raise UnknownPropertyCode(record.native_property)
    code, unit = inverse[record.native_property]
    if record.unit != unit:
        raise UnencodableRecord(f"unit {record.unit!r} does not match code unit {unit!r}")
    try:
        node = int(record.node_id)
    except ValueError:
        raise UnencodableRecord(f"node id {record.node_id!r} is not numeric") from None
    if not 0 <= node <= 0xFFFF:
        raise UnencodableRecord(f"node id {node} outside u16")
    if not 0 <= record.timestamp <= 0xFFFFFFFF:
        raise UnencodableRecord(f"timestamp {record.timestamp} outside u32")
    if round_to_f32(record.value) != record.value:
        raise UnencodableRecord(f"value {record.value!r} is not binary32-exact")
    body = _FRAME_STRUCT.pack(
        FRAME_MAGIC, FRAME_VERSION, node, code, record.timestamp, record.value, 0
    )
    return body[:-1] + bytes([frame_checksum(body)])


# -- ik report -------------------------------------------------------------------

def parse_ik_report(line: str, onto: OntologyStore) -> ObservationRecord:
    """Parse ``ik-report <TAB> reporter <TAB> term <TAB> code <TAB> ts``."""
    fields = line.rstrip("\n").split("\t")
    if len(fields) != 5 or fields[0] != "ik-report":
        raise MalformedIkReport(line)
    _tag, reporter, term_text, code_text, ts_text = fields
    try:
        indicator = onto.resolve_term(term_text)
    except (Unresolvable, MalformedTerm) as exc:
        raise UnknownIndicator(f"{term_text}: {exc}") from None
    try:
        max_code = onto.get_scale(indicator)
    except MiddlewareError as exc:
        raise UnknownIndicator(f"{term_text}: {exc}") from None
    try:
        code = int(code_text)
        timestamp = int(ts_text)
    except ValueError:
        raise NumericParseError("code/ts", line) from None
    if not 0 <= code <= max_code:
        raise CodeOutOfScale(f"code {code} outside 0..{max_code} for {indicator}")
    return ObservationRecord(
        node_id=reporter,
        native_property=term_text,
        value=float(code),
        unit="",
        timestamp=timestamp,
        source_format=SourceFormat.IK_REPORT,
    )


# -- annotation -------------------------------------------------------------------

def annotate(
    record: ObservationRecord,
    onto: OntologyStore,
    table: UnitTable | None = None,
) -> SemanticObservation:
    """Bind a record to its canonical term, category, and canonical unit.

    Categorical codes bypass unit conversion and keep their integer value
    under the pseudo-unit ``unit:code``.
    """
    table = table or builtin_table()
    try:
        canonical = onto.resolve_term(record.native_property)
    except Unresolvable as exc:
        raise UnresolvableProperty(str(exc)) from None
    try:
        category = onto.classify(canonical)
    except Unclassified as exc:
        raise UnresolvableProperty(f"{record.native_property}: {exc}") from None
    if record.is_categorical:
        return SemanticObservation(
            base=record,
            canonical_term=canonical,
            dolce_category=category,
            canonical_value=record.value,
            canonical_unit=CATEGORICAL_UNIT,
        )
    target = onto.canonical_unit_of(canonical)
    if target is None:
        target = TermId("unit", table.canonical_unit(table.dimension_of(record.unit)))
    value = table.convert(record.value, record.unit, target.local)
    return SemanticObservation(
        base=record,
        canonical_term=canonical,
        dolce_category=category,
        canonical_value=value,
        canonical_unit=target,
    )


@dataclass(frozen=True)
class Quarantined:
    """A record (or raw payload) rejected with a stable reason code."""

    reason: str
    detail: str
    record: ObservationRecord | None = None
    payload: str = ""


def annotate_batch(
    records: Iterable[ObservationRecord], onto: OntologyStore, table: UnitTable | None = None
) -> tuple[list[SemanticObservation], list[Quarantined]]:
    """Annotate records, quarantining failures instead of dropping them."""
    annotated: list[SemanticObservation] = []
    quarantined: list[Quarantined] = []
    for record in records:
        try:
            annotated.append(annotate(record, onto, table))
        except MiddlewareError as exc:
            quarantined.append(Quarantined(reason=exc.code, detail=str(exc), record=record))
    return annotated, quarantined


# -- store fetch --------------------------------------------------------------------

@dataclass(frozen=True)
class RawEntry:
    """One store entry: a source format tag plus its payload line."""

    format: SourceFormat
    payload: str

    def as_wire_line(self) -> str:
        return f"{self.format.value}\t{self.payload}"

    @classmethod
    def from_wire_line(cls, line: str, offset: int) -> "RawEntry":
        tag, sep, payload = line.partition("\t")
        if not sep:
            raise CorruptStoreEntry(offset, f"missing format tag: {line!r}")
        try:
            fmt = SourceFormat(tag)
        except ValueError:
            raise CorruptStoreEntry(offset, f"unknown format tag {tag!r}") from None
        return cls(fmt, payload)


@dataclass(frozen=True)
class BatchCursor:
    """Monotone position into a store's stable entry order."""

    store_uri: str
    position: int = 0

    def __post_init__(self) -> None:
        if self.position < 0:
            raise MiddlewareError(f"negative cursor position {self.position}")


def _enumerate_directory(root: Path) -> list[RawEntry]:
    if not root.is_dir():
        raise StoreUnreachable(str(root))
    entries: list[RawEntry] = []
    days = sorted((d for d in root.iterdir() if d.is_dir() and d.name.isdigit()),
                  key=lambda d: int(d.name))
    for day in days:
        for path in sorted(day.iterdir(), key=lambda p: p.name):
            if not path.is_file():
                continue
            fmt = _EXTENSION_FORMATS.get(path.suffix)
            if fmt is None:
                raise CorruptStoreEntry(len(entries), f"unknown store file type {path.name!r}")
            try:
                text = path.read_text("utf-8")
            except UnicodeDecodeError as exc:
                raise CorruptStoreEntry(len(entries), f"{path.name}: {exc}") from None
            for raw in text.splitlines():
                line = raw.strip()
                if not line or line.startswith("#"):
                    continue
                entries.append(RawEntry(fmt, line))
    return entries


def _fetch_remote(uri: str, position: int, max_items: int) -> tuple[list[RawEntry], int]:
    url = f"{uri.rstrip('/')}/batch?from={position}&max={max_items}"
    try:
        with urllib.request.urlopen(url, timeout=10) as resp:
            body = resp.read().decode("utf-8")
            next_position = int(resp.headers.get("X-Next-Position", position))
    except (urllib.error.URLError, OSError, ValueError) as exc:
        raise StoreUnreachable(f"{uri}: {exc}") from None
    entries = []
    for i, line in enumerate(body.splitlines()):
        if not line:
            continue
        entries.append(RawEntry.from_wire_line(line, position + i))
    return entries, next_position


def fetch_batch(cursor: BatchCursor, max_items: int) -> tuple[list[RawEntry], BatchCursor]:
    """Pull up to ``max_items`` entries at the cursor; idempotent per cursor.

    ``store_uri`` is either a local directory or an ``http(s)://`` endpoint
    implementing ``GET <uri>/batch?from=<position>&max=<n>``.
    """
    if max_items < 0:
        raise MiddlewareError(f"negative max_items {max_items}")
    if cursor.store_uri.startswith(("http://", "https://")):
        entries, next_position = _fetch_remote(cursor.store_uri, cursor.position, max_items)
        next_position = max(next_position, cursor.position)
        return entries, BatchCursor(cursor.store_uri, next_position)
    all_entries = _enumerate_directory(Path(cursor.store_uri))
    window = all_entries[cursor.position:cursor.position + max_items]
    return window, BatchCursor(cursor.store_uri, cursor.position + len(window))


def parse_entry(
    entry: RawEntry, onto: OntologyStore, suite: AdapterSuite = DEFAULT_SUITE
) -> list[ObservationRecord]:
    """Dispatch a raw entry to its format parser."""
    if entry.format is SourceFormat.TEXT_CSV:
        return [parse_csv(entry.payload, suite.csv)]
    if entry.format is SourceFormat.STRUCTURED:
        return parse_structured(entry.payload, suite.structured)
    if entry.format is SourceFormat.MOTE_FRAME:
        try:
            data = bytes.fromhex(entry.payload)
        except ValueError:
            raise BadLength(f"frame payload is not hex: {entry.payload!r}") from None
        return [parse_mote_frame(data, suite.mote)]
    return [parse_ik_report(entry.payload, onto)]


# -- reference pull-protocol server ---------------------------------------------------

def make_store_server(directory: str, host: str = "127.0.0.1", port: int = 0):
    """HTTP server exposing a directory store over the pull protocol.

    Returns an ``http.server.ThreadingHTTPServer``; callers drive
    ``serve_forever`` on a thread and ``shutdown`` when done.
    """
    from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
    from urllib.parse import parse_qs, urlparse

    root = Path(directory)

    class Handler(BaseHTTPRequestHandler):
        def log_message(self, *args):  # keep tests quiet
            pass

        def do_GET(self):
            parsed = urlparse(self.path)
            if parsed.path != "/batch":
                self.send_error(404)
                return
            params = parse_qs(parsed.query)
            try:
                position = int(params.get("from", ["0"])[0])
                max_items = int(params.get("max", ["100"])[0])
            except ValueError:
                self.send_error(400, "bad from/max")
                return
            try:
                entries = _enumerate_directory(root)
            except MiddlewareError as exc:
                self.send_error(500, str(exc))
                return
            window = entries[position:position + max_items]
            body = "".join(e.as_wire_line() + "\n" for e in window).encode("utf-8")
            self.send_response(200)
            self.send_header("Content-Type", "text/plain; charset=utf-8")
            self.send_header("Content-Length", str(len(body)))
            self.send_header("X-Next-Position", str(position + len(window)))
            self.end_headers()
            self.wfile.write(body)

    return ThreadingHTTPServer((host, port), Handler)
