"""Application-layer service: observations in, forecasts and bulletins out.

The core is transport-independent: ``Service.handle`` maps
(method, path, query, body) to (status, payload) and is exercised directly
by tests; ``make_http_server`` adapts it onto a threading HTTP server for
live use. Configuration uploads are staged and swapped atomically at the
next pipeline tick; queries never observe a partially applied rule set.

Notifications go through a delivery queue with bounded retry and an
idempotency key per (subscription, forecast), so receivers can deduplicate
at-least-once deliveries. Failed deliveries land in a dead-letter list and
never stall the pipeline.
"""

from __future__ import annotations

import json
import queue
import threading
import time
import urllib.error
import urllib.request
from dataclasses import dataclass
from datetime import datetime, timezone
from typing import Callable

from .cep import EventRecord, parse_rules
from .dvi import parse_indicator_specs
from .ingest import Quarantined, record_from_object
from .model import Band, DroughtVulnerabilityIndex, MiddlewareError
from .pipeline import Pipeline

DEFAULT_RETRY_DELAYS = (0.05, 0.2, 0.8)


def _iso(ts: int) -> str:
    return datetime.fromtimestamp(ts, tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


# -- bulletins -----------------------------------------------------------------

@dataclass(frozen=True)
class Bulletin:
    """Renderable forecast snapshot; rendering is pure and byte-stable."""

    computed_at: int
    value: float
    band: Band
    top_indicators: tuple  # (term, score, weight, insufficient)
    recent_events: tuple   # EventRecord

    @classmethod
    def from_state(
        cls, dvi: DroughtVulnerabilityIndex, events: list[EventRecord]
    ) -> "Bulletin":
        top = sorted(
            dvi.contributing,
            key=lambda c: (-(c.score * c.weight), str(c.indicator)),
        )[:5]
        recent = sorted(events, key=lambda e: (e.fired_at, e.rule_name))[-10:]
        return cls(
            computed_at=dvi.computed_at,
            value=dvi.value,
            band=dvi.band,
            top_indicators=tuple(
                (c.indicator, c.score, c.weight, c.insufficient_data) for c in top
            ),
            recent_events=tuple(recent),
        )

    def render(self) -> str:
        lines = [
            "DROUGHT VULNERABILITY BULLETIN",
            f"issued: {_iso(self.computed_at)}",
            f"index:  {self.value:.4f}  band: {str(self.band).upper()}",
            "",
            "top indicators:",
        ]
        if self.top_indicators:
            for term, score, weight, insufficient in self.top_indicators:
                flag = "  [insufficient data]" if insufficient else ""
                lines.append(f"  {term}  score={score:.4f}  weight={weight:.2f}{flag}")
        else:
            lines.append("  (none)")
        lines.append("")
        lines.append("recent events:")
        if self.recent_events:
            for ev in self.recent_events:
                lines.append(
                    f"  {_iso(ev.fired_at)}  {ev.rule_name}  {ev.term}"
                    f"  severity={int(ev.severity)}  weight={ev.weight:g}"
                )
        else:
            lines.append("  (none)")
        lines.append("")
        return "\n".join(lines)


# -- subscriptions and delivery ---------------------------------------------------

@dataclass
class Subscription:
    id: str
    target: str  # http(s) URL or filesystem path for an append sink
    min_band: Band
    active: bool = True


@dataclass(frozen=True)
class Delivery:
    key: tuple[str, int]
    subscription_id: str
    target: str
    attempts: int
    ok: bool
    error: str = ""


class Notifier:
    """Delivers bulletins to due subscriptions with bounded retry.

    ``sender`` is injectable for tests; the default posts to http(s)
    targets and appends to file targets. In async mode a worker thread
    drains a queue so delivery never blocks pipeline ticks.
    """

    def __init__(
        self,
        sender: Callable[[str, str, str], None] | None = None,
        retry_delays: tuple[float, ...] = DEFAULT_RETRY_DELAYS,
        asynchronous: bool = False,
    ):
        self.subscriptions: dict[str, Subscription] = {}
        self.deliveries: list[Delivery] = []
        self.dead_letters: list[Delivery] = []
        self.retry_delays = retry_delays
        self.sender = sender or self._default_sender
        self.lock = threading.Lock()
        self._counter = 0
        self._queue: queue.Queue | None = None
        self._worker: threading.Thread | None = None
        if asynchronous:
            self._queue = queue.Queue()
            self._worker = threading.Thread(target=self._drain, daemon=True)
            self._worker.start()

    @staticmethod
    def _default_sender(target: str, body: str, idempotency_key: str) -> None:
        if target.startswith(("http://", "https://")):
            request = urllib.request.Request(
                target,
                data=body.encode("utf-8"),
                headers={
                    "Content-Type": "text/plain; charset=utf-8",
                    "X-Idempotency-Key": idempotency_key,
                },
                method="POST",
            )
            with urllib.request.urlopen(request, timeout=10):
                pass
        else:
            with open(target, "a", encoding="utf-8") as fh:
                fh.write(f"# idempotency-key: {idempotency_key}\n{body}\n")

    def subscribe(self, target: str, min_band: Band) -> Subscription:
        with self.lock:
            self._counter += 1
            sub = Subscription(id=f"sub-{self._counter}", target=target, min_band=min_band)
            self.subscriptions[sub.id] = sub
            return sub

    def unsubscribe(self, sub_id: str) -> bool:
        with self.lock:
            sub = self.subscriptions.get(sub_id)
            if sub is None:
                return False
            sub.active = False
            return True

    def list_subscriptions(self) -> list[Subscription]:
        with self.lock:
            return sorted(self.subscriptions.values(), key=lambda s: s.id)

    def notify(self, dvi: DroughtVulnerabilityIndex, events: list[EventRecord]) -> None:
        """Queue (or directly run) deliveries for every due subscription."""
        bulletin = Bulletin.from_state(dvi, events)
        body = bulletin.render()
        with self.lock:
            due = [
                s for s in sorted(self.subscriptions.values(), key=lambda s: s.id)
                if s.active and dvi.band >= s.min_band
            ]
        for sub in due:
            item = (sub, body, (sub.id, dvi.computed_at))
            if self._queue is not None:
                self._queue.put(item)
            else:
                self._deliver(*item)

    def _drain(self) -> None:
        assert self._queue is not None
        while True:
            item = self._queue.get()
            if item is None:
                return
            self._deliver(*item)

    def _deliver(self, sub: Subscription, body: str, key: tuple[str, int]) -> None:
        key_text = f"{key[0]}:{key[1]}"
        error = ""
        for attempt, delay in enumerate(self.retry_delays, start=1):
            try:
                self.sender(sub.target, body, key_text)
                with self.lock:
                    self.deliveries.append(
                        Delivery(key, sub.id, sub.target, attempts=attempt, ok=True)
                    )
                return
            except Exception as exc:  # noqa: BLE001 - delivery must never crash the pipeline
                error = str(exc)
                if attempt < len(self.retry_delays):
                    time.sleep(delay)
        failed = Delivery(
            key, sub.id, sub.target, attempts=len(self.retry_delays), ok=False, error=error
        )
        with self.lock:
            self.deliveries.append(failed)
            self.dead_letters.append(failed)

    def close(self) -> None:
        if self._queue is not None:
            self._queue.put(None)
            if self._worker is not None:
                self._worker.join(timeout=5)

    def drain_pending(self, timeout: float = 5.0) -> None:
        """Wait for queued deliveries to finish (test helper)."""
        if self._queue is None:
            return
        deadline = time.monotonic() + timeout
        while not self._queue.empty() and time.monotonic() < deadline:
            time.sleep(0.01)


# -- service core --------------------------------------------------------------------

def _dvi_payload(dvi: DroughtVulnerabilityIndex) -> dict:
    return {
        "value": dvi.value,
        "band": str(dvi.band),
        "computed_at": dvi.computed_at,
        "contributing": [
            {
                "indicator": str(c.indicator),
                "score": c.score,
                "weight": c.weight,
                "insufficient_data": c.insufficient_data,
            }
            for c in dvi.contributing
        ],
    }


def _event_payload(event: EventRecord) -> dict:
    return {
        "fired_at": event.fired_at,
        "rule": event.rule_name,
        "term": str(event.term),
        "severity": int(event.severity),
        "weight": event.weight,
    }


class Service:
    """Routes the HTTP-style API onto a pipeline and a notifier."""

    def __init__(self, pipeline: Pipeline, notifier: Notifier | None = None):
        self.pipeline = pipeline
        self.notifier = notifier or Notifier()
        self.pipeline.tick_listeners.append(self._on_tick)

    def _on_tick(self, dvi: DroughtVulnerabilityIndex, _events: list[EventRecord]) -> None:
        self.notifier.notify(dvi, self.pipeline.events)

    # -- handlers -------------------------------------------------------------

    def handle(
        self, method: str, path: str, query: dict[str, str] | None = None, body: bytes | str = b""
    ) -> tuple[int, dict | str]:
        """Dispatch one request; returns (status, JSON-able payload or text)."""
        query = query or {}
        if isinstance(body, bytes):
            try:
                body = body.decode("utf-8")
            except UnicodeDecodeError:
                return 400, {"error": "body is not valid UTF-8"}
        route = (method.upper(), path.rstrip("/") or "/")
        if route == ("POST", "/observations"):
            return self._post_observations(body)
        if route == ("GET", "/dvi/latest"):
            return self._get_dvi()
        if route == ("GET", "/bulletin/latest"):
            return self._get_bulletin()
        if route == ("GET", "/events"):
            return self._get_events(query)
        if route == ("POST", "/rules"):
            return self._post_rules(body)
        if route == ("GET", "/rules"):
            return self._get_rules()
        if route == ("POST", "/indicators"):
            return self._post_indicators(body)
        if route == ("GET", "/indicators"):
            return self._get_indicators()
        if route == ("POST", "/subscriptions"):
            return self._post_subscriptions(body)
        if route == ("GET", "/subscriptions"):
            return self._get_subscriptions()
        if method.upper() == "DELETE" and path.startswith("/subscriptions/"):
            return self._delete_subscription(path.rsplit("/", 1)[1])
        return 404, {"error": f"no route for {method} {path}"}

    def _post_observations(self, body: str) -> tuple[int, dict]:
        try:
            payload = json.loads(body)
        except json.JSONDecodeError as exc:
            return 400, {"error": f"syntax error at offset {exc.pos}: {exc.msg}"}
        if isinstance(payload, dict):
            payload = [payload]
        if not isinstance(payload, list):
            return 400, {"error": "expected an object or an array of objects"}
        records = []
        pre_quarantined: list[Quarantined] = []
        for obj in payload:
            try:
                records.append(record_from_object(obj, self.pipeline.suite.structured))
            except MiddlewareError as exc:
                pre_quarantined.append(
                    Quarantined(reason=exc.code, detail=str(exc), payload=json.dumps(obj))
                )
        report = self.pipeline.submit(records)
        for q in pre_quarantined:
            self.pipeline.quarantine_raw(q.reason, q.detail, q.payload)
        quarantined = pre_quarantined + report.quarantined
        return 200, {
            "accepted": report.accepted,
            "quarantined": len(quarantined),
            "reasons": [q.reason for q in quarantined],
            "ticks_fired": report.ticks_fired,
        }

    def _get_dvi(self) -> tuple[int, dict]:
        dvi = self.pipeline.latest_dvi
        if dvi is None:
            return 404, {"error": "no-forecast-yet"}
        return 200, _dvi_payload(dvi)

    def _get_bulletin(self) -> tuple[int, dict | str]:
        dvi = self.pipeline.latest_dvi
        if dvi is None:
            return 404, {"error": "no-forecast-yet"}
        return 200, Bulletin.from_state(dvi, self.pipeline.events).render()

    def _get_events(self, query: dict[str, str]) -> tuple[int, dict | list]:
        since_text = query.get("since", "0")
        try:
            since = int(since_text)
        except ValueError:
            return 400, {"error": f"bad timestamp {since_text!r}"}
        events = self.pipeline.events_since(since)
        return 200, [_event_payload(e) for e in events]

    def _post_rules(self, body: str) -> tuple[int, dict]:
        try:
            ruleset = parse_rules(body, self.pipeline.ontology)
        except MiddlewareError as exc:
            return 422, {"error": exc.code, "detail": str(exc)}
        effective_at = self.pipeline.stage_ruleset(ruleset)
        return 200, {
            "loaded": len(ruleset.rules),
            "digest": ruleset.digest,
            "effective_at": effective_at,
        }

    def _get_rules(self) -> tuple[int, dict]:
        with self.pipeline.lock:
            ruleset = self.pipeline.ruleset
            version = self.pipeline.config_version
        return 200, {
            "names": ruleset.names,
            "digest": ruleset.digest,
            "config_version": version,
        }

    def _post_indicators(self, body: str) -> tuple[int, dict]:
        try:
            specs = parse_indicator_specs(body, self.pipeline.ontology)
        except MiddlewareError as exc:
            return 422, {"error": exc.code, "detail": str(exc)}
        effective_at = self.pipeline.stage_indicators(specs)
        return 200, {"loaded": len(specs), "effective_at": effective_at}

    def _get_indicators(self) -> tuple[int, dict]:
        with self.pipeline.lock:
            specs = self.pipeline.indicators
            version = self.pipeline.config_version
        return 200, {
            "indicators": [
                {"term": str(s.indicator), "weight": s.weight} for s in specs
            ],
            "config_version": version,
        }

    def _post_subscriptions(self, body: str) -> tuple[int, dict]:
        try:
            payload = json.loads(body)
            target = payload["target"]
            min_band = Band.parse(payload.get("min_band", "watch"))
        except (json.JSONDecodeError, KeyError, TypeError, MiddlewareError) as exc:
            return 400, {"error": f"bad subscription request: {exc}"}
        sub = self.notifier.subscribe(target, min_band)
        return 200, {"id": sub.id, "target": sub.target, "min_band": str(sub.min_band)}

    def _get_subscriptions(self) -> tuple[int, list]:
        return 200, [
            {
                "id": s.id,
                "target": s.target,
                "min_band": str(s.min_band),
                "active": s.active,
            }
            for s in self.notifier.list_subscriptions()
        ]

    def _delete_subscription(self, sub_id: str) -> tuple[int, dict]:
        if self.notifier.unsubscribe(sub_id):
            return 200, {"id": sub_id, "active": False}
        return 404, {"error": f"unknown subscription {sub_id!r}"}


# -- HTTP adapter ----------------------------------------------------------------------

def make_http_server(service: Service, host: str = "127.0.0.1", port: int = 0):
    """Wrap a Service in a ThreadingHTTPServer."""
    from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
    from urllib.parse import parse_qs, urlparse

    class Handler(BaseHTTPRequestHandler):
        def log_message(self, *args):
            pass

        def _run(self, method: str) -> None:
            parsed = urlparse(self.path)
            query = {k: v[0] for k, v in parse_qs(parsed.query).items()}
            length = int(self.headers.get("Content-Length", "0") or "0")
            body = self.rfile.read(length) if length else b""
            status, payload = service.handle(method, parsed.path, query, body)
            if isinstance(payload, str):
                data = payload.encode("utf-8")
                content_type = "text/plain; charset=utf-8"
            else:
                data = json.dumps(payload, sort_keys=True).encode("utf-8")
                content_type = "application/json"
            self.send_response(status)
            self.send_header("Content-Type", content_type)
            self.send_header("Content-Length", str(len(data)))
            self.end_headers()
            self.wfile.write(data)

        def do_GET(self):
            self._run("GET")

        def do_POST(self):
            self._run("POST")

        def do_DELETE(self):
            self._run("DELETE")

    return ThreadingHTTPServer((host, port), Handler)
