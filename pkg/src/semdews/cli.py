"""Command-line front end: gen, replay, serve, query, validate."""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from importlib import resources
from pathlib import Path

from . import dvi as dvi_mod
from . import scenario
from .cep import parse_rules
from .ingest import BatchCursor, fetch_batch, parse_entry
from .model import MiddlewareError, TermId, parse_term
from .ontology import (
    ONTOLOGY_ASSETS,
    OntologyStore,
    default_ontology,
    load_ontology,
    render_node,
)
from .pipeline import Pipeline
from .service import Notifier, Service, make_http_server
from .units import UnitTable


def _asset_text(name: str) -> str:
    return resources.files("semdews").joinpath(f"assets/{name}").read_text("utf-8")


def _load_ontology(paths: list[str] | None) -> OntologyStore:
    if not paths:
        return default_ontology()
    return load_ontology(Path(p).read_text("utf-8") for p in paths)


def _load_rules(path: str | None, onto: OntologyStore):
    text = Path(path).read_text("utf-8") if path else _asset_text("ik-rules.rules")
    return parse_rules(text, onto)


def _load_indicators(path: str | None, onto: OntologyStore):
    text = Path(path).read_text("utf-8") if path else _asset_text("indicators.tsv")
    return dvi_mod.parse_indicator_specs(text, onto)


def _parse_tick(text: str) -> int:
    if text.endswith("d"):
        return int(text[:-1]) * 86400
    if text.endswith("h"):
        return int(text[:-1]) * 3600
    return int(text)


def cmd_gen(args) -> int:
    if args.config:
        config = scenario.parse_scenario_config(Path(args.config).read_text("utf-8"))
    else:
        config = scenario.default_scenario_config()
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    if args.no_episodes:
        config = config.without_episodes()
    truth = scenario.generate(config, args.out)
    days = len(truth.intensities)
    peak = max(truth.intensities) if truth.has_episode else 0.0
    print(f"wrote {days}-day store to {args.out}/store (peak intensity {peak:g})")
    return 0


def cmd_replay(args) -> int:
    onto = _load_ontology(args.ontology)
    ruleset = _load_rules(args.rules, onto)
    indicators = _load_indicators(args.indicators, onto)
    report = scenario.replay(
        args.store,
        onto,
        ruleset,
        indicators,
        tick_seconds=_parse_tick(args.tick),
        out_dir=args.out,
    )
    print(
        f"entries={report.entries_fetched} accepted={report.accepted} "
        f"quarantined={report.quarantined_count} ticks={len(report.ticks)} "
        f"events={len(report.events)}"
    )
    if report.ticks:
        last = report.ticks[-1]
        print(f"final dvi={last.dvi.value:.4f} band={last.dvi.band}")
    if args.truth:
        truth = scenario.GroundTruth.from_tsv(Path(args.truth).read_text("utf-8"))
        try:
            lead = scenario.lead_time(report, truth)
            print(f"lead time: {lead} days before ground-truth peak")
        except scenario.NoDetection as exc:
            print(f"lead time: not applicable ({exc})")
    if args.out:
        print(f"report written to {args.out}/report.tsv")
    return 0


def cmd_serve(args) -> int:
    onto = _load_ontology(args.ontology)
    ruleset = _load_rules(args.rules, onto)
    indicators = _load_indicators(args.indicators, onto)
    pipeline = Pipeline(onto, ruleset, indicators, tick_seconds=_parse_tick(args.tick))
    service = Service(pipeline, Notifier(asynchronous=True))
    if args.store:
        cursor = BatchCursor(args.store)
        while True:
            entries, cursor = fetch_batch(cursor, 500)
            if not entries:
                break
            records = []
            for entry in entries:
                try:
                    records.extend(parse_entry(entry, onto))
                except MiddlewareError as exc:
                    pipeline.quarantine_raw(exc.code, str(exc), entry.payload)
            pipeline.submit(records)
        pipeline.flush()
        print(f"preloaded store {args.store}: {pipeline.accepted_total} records")
    server = make_http_server(service, args.host, args.port)
    host, port = server.server_address[:2]
    print(f"listening on http://{host}:{port}")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.shutdown()
    return 0


def _pattern_part(text: str) -> TermId | None:
    if text == "?" or text.startswith("?"):
        return None
    return parse_term(text)


def cmd_query(args) -> int:
    onto = _load_ontology(args.ontology)
    try:
        subject = _pattern_part(args.subject)
        predicate = _pattern_part(args.predicate)
        obj = _pattern_part(args.object)
    except MiddlewareError as exc:
        print(f"bad pattern: {exc}", file=sys.stderr)
        return 2
    for triple in onto.query(subject, predicate, obj):
        print(f"{triple.subject} {triple.predicate} {render_node(triple.obj)}")
    return 0


def cmd_validate(args) -> int:
    """Check every configured document; exit 0 only if all are clean."""
    failures = 0

    def check(label: str, fn) -> None:
        nonlocal failures
        try:
            fn()
            print(f"OK    {label}")
        except MiddlewareError as exc:
            failures += 1
            print(f"ERROR {label}: {exc}")

    unit_text = (
        Path(args.units).read_text("utf-8") if args.units else _asset_text("units.tsv")
    )
    check("unit table", lambda: UnitTable.parse(unit_text))

    onto_holder: dict[str, OntologyStore] = {}

    def load_onto():
        onto_holder["store"] = _load_ontology(args.ontology)
        for cls in onto_holder["store"].alignment_classes():
            canonicals = {
                onto_holder["store"].canonical_of(member) for member in cls
            }
            if len(canonicals) != 1:
                raise MiddlewareError(
                    f"alignment class {sorted(map(str, cls))} lacks a unique canonical"
                )

    ontology_label = ", ".join(args.ontology) if args.ontology else ", ".join(ONTOLOGY_ASSETS)
    check(f"ontology ({ontology_label})", load_onto)
    if "store" not in onto_holder:
        print("(skipping rule/indicator checks: no ontology)")
        return 1
    onto = onto_holder["store"]
    check("rules", lambda: _load_rules(args.rules, onto))
    check("indicators", lambda: _load_indicators(args.indicators, onto))
    if args.scenario:
        check(
            f"scenario {args.scenario}",
            lambda: scenario.parse_scenario_config(Path(args.scenario).read_text("utf-8")),
        )
    else:
        check("demo scenario", scenario.default_scenario_config)
    return 0 if failures == 0 else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="semdews",
        description="Semantic drought early-warning middleware",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    common_assets = argparse.ArgumentParser(add_help=False)
    common_assets.add_argument(
        "--ontology", action="append",
        help="ontology document path (repeatable; default: shipped assets)",
    )
    common_assets.add_argument("--rules", help="rule file (default: shipped pack)")
    common_assets.add_argument("--indicators", help="indicator spec file (default: shipped)")

    p = sub.add_parser("gen", help="generate a scenario store")
    p.add_argument("--config", help="scenario config JSON (default: shipped demo)")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--no-episodes", action="store_true", help="drop drought episodes")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(fn=cmd_gen)

    p = sub.add_parser("replay", parents=[common_assets], help="replay a store through the pipeline")
    p.add_argument("--store", required=True, help="store directory or pull-protocol URL")
    p.add_argument("--out", help="directory for report.tsv, events.log, deadletter.tsv")
    p.add_argument("--tick", default="1d", help="tick interval, e.g. 1d or 6h (default 1d)")
    p.add_argument("--truth", help="truth.tsv for a lead-time summary")
    p.set_defaults(fn=cmd_replay)

    p = sub.add_parser("serve", parents=[common_assets], help="run the dissemination service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8080)
    p.add_argument("--tick", default="1h", help="simulated tick interval (default 1h)")
    p.add_argument("--store", help="optional store to preload before serving")
    p.set_defaults(fn=cmd_serve)

    p = sub.add_parser("query", help="run a triple pattern against the ontology")
    p.add_argument("--ontology", action="append", help="ontology document path (repeatable)")
    p.add_argument("subject", help="prefix:local or ? wildcard")
    p.add_argument("predicate", help="prefix:local or ? wildcard")
    p.add_argument("object", help="prefix:local or ? wildcard")
    p.set_defaults(fn=cmd_query)

    p = sub.add_parser("validate", parents=[common_assets], help="validate documents; exit 0 iff clean")
    p.add_argument("--units", help="unit table path (default: shipped)")
    p.add_argument("--scenario", help="scenario config path (default: shipped demo)")
    p.set_defaults(fn=cmd_validate)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except MiddlewareError as exc:
        print(f"error [{exc.code}]: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
