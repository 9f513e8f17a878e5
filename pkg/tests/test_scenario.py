import filecmp
import json
from pathlib import Path

import pytest

from semdews.cep import parse_rules
from semdews.dvi import default_indicator_specs
from semdews.model import Band, SourceFormat
from semdews.rng import SplitMix64, fnv1a64
from semdews.scenario import (
    ConfigError,
    Episode,
    GroundTruth,
    NodeSpec,
    NoDetection,
    QUANTITIES,
    RunReport,
    ScenarioConfig,
    default_scenario_config,
    generate,
    ik_code,
    lead_time,
    parse_scenario_config,
    replay,
)
from semdews import cli

DAY = 86400


def mini_nodes(interval=24):
    """Smallest config that satisfies the four-format/two-vocabulary check."""
    return (
        NodeSpec("n1", SourceFormat.TEXT_CSV, "soil-moisture", "soilMoisture", "m3/m3", interval),
        NodeSpec("n2", SourceFormat.STRUCTURED, "water-level", "Stav", "cm", interval, "cz"),
        NodeSpec("5", SourceFormat.MOTE_FRAME, "air-temperature", "airTemp", "K", interval, "mote"),
        NodeSpec("r1", SourceFormat.IK_REPORT, "ik-sifennefene", "ik:sifennefeneAbundance", "", interval, "ik"),
    )


def mini_config(**overrides):
    defaults = dict(seed=42, duration_days=10, nodes=mini_nodes(), episodes=(), noise=1.0)
    defaults.update(overrides)
    return ScenarioConfig(**defaults)


class TestConfigValidation:
    def test_zero_nodes(self):
        with pytest.raises(ConfigError):
            ScenarioConfig(seed=1, duration_days=5, nodes=()).validate()

    def test_overlapping_episodes(self):
        config = mini_config(
            duration_days=30,
            episodes=(Episode(0, 10, 0.5), Episode(5, 10, 0.5)),
        )
        with pytest.raises(ConfigError):
            config.validate()

    def test_intensity_bounds(self):
        with pytest.raises(ConfigError):
            mini_config(duration_days=30, episodes=(Episode(0, 5, 1.5),)).validate()

    def test_episode_past_end(self):
        with pytest.raises(ConfigError):
            mini_config(duration_days=10, episodes=(Episode(8, 5, 0.5),)).validate()

    def test_missing_format_coverage(self):
        nodes = mini_nodes()[:3]
        with pytest.raises(ConfigError, match="all four formats"):
            mini_config(nodes=nodes).validate()

    def test_single_vocabulary_rejected(self):
        nodes = tuple(
            NodeSpec(f"n{i}", fmt, "soil-moisture" if fmt is not SourceFormat.IK_REPORT else "ik-sifennefene",
                     "soilMoisture" if fmt is not SourceFormat.IK_REPORT else "ik:sifennefeneAbundance",
                     "m3/m3" if fmt is not SourceFormat.IK_REPORT else "", 24, "same")
            for i, fmt in enumerate(SourceFormat)
        )
        with pytest.raises(ConfigError, match="vocabularies"):
            mini_config(nodes=nodes).validate()

    def test_shipped_demo_config_is_valid(self):
        config = default_scenario_config()
        assert config.duration_days == 90
        assert len(config.episodes) == 1
        assert config.episodes[0].intensity == 0.9

    def test_json_parsing_errors(self):
        with pytest.raises(ConfigError):
            parse_scenario_config("{not json")
        with pytest.raises(ConfigError):
            parse_scenario_config('{"seed": 1}')


class TestGroundTruth:
    def test_flat_without_episodes(self):
        truth = GroundTruth.from_config(mini_config())
        assert truth.intensities == (0.0,) * 10
        assert not truth.has_episode

    def test_linear_ramp_to_peak(self):
        config = mini_config(duration_days=20, episodes=(Episode(5, 4, 0.8),))
        truth = GroundTruth.from_config(config)
        assert truth.intensities[4] == 0.0
        assert truth.intensities[5] == pytest.approx(0.2)
        assert truth.intensities[8] == pytest.approx(0.8)
        assert truth.intensities[9] == 0.0
        assert truth.peak_day == 9  # 1-based day covering the peak

    def test_tsv_round_trip(self):
        truth = GroundTruth.from_config(mini_config(duration_days=12, episodes=(Episode(2, 3, 0.5),)))
        assert GroundTruth.from_tsv(truth.to_tsv()) == truth


class TestRng:
    def test_splitmix64_reference_vectors(self):
        # first outputs of the published SplitMix64 sequence for seed 0
        g = SplitMix64(0)
        assert [g.next_u64() for _ in range(3)] == [
            0xE220A8397B1DCDAF,
            0x6E789E6AA1B965F4,
            0x06C45D188009454F,
        ]

    def test_seeded_sequence_is_stable(self):
        g = SplitMix64(1234567)
        assert [g.next_u64() for _ in range(3)] == [
            0x599ED017FB08FC85,
            0x2C73F08458540FA5,
            0x883EBCE5A3F27C77,
        ]

    def test_float_range(self):
        g = SplitMix64(99)
        for _ in range(1000):
            assert 0.0 <= g.next_float() < 1.0

    def test_substreams_differ(self):
        base = SplitMix64(7)
        assert base.substream("n1").next_u64() != base.substream("n2").next_u64()

    def test_fnv1a64_known_value(self):
        # FNV-1a 64-bit of empty string is the offset basis
        assert fnv1a64("") == 0xCBF29CE484222325
        assert fnv1a64("a") == 0xAF63DC4C8601EC8C


class TestGenerate:
    def test_flat_baseline_zero_noise(self, tmp_path):
        config = mini_config(noise=0.0)
        generate(config, tmp_path)
        csv_day0 = (tmp_path / "store/000/n1.csv").read_text().splitlines()
        values = {line.split(",")[2] for line in csv_day0}
        assert values == {repr(QUANTITIES["soil-moisture"].base)}
        ik_day0 = (tmp_path / "store/000/r1.ik").read_text().splitlines()
        assert all(line.split("\t")[3] == "0" for line in ik_day0)

    def test_same_seed_byte_identical(self, tmp_path):
        config = mini_config()
        generate(config, tmp_path / "a")
        generate(config, tmp_path / "b")
        cmp = filecmp.dircmp(tmp_path / "a", tmp_path / "b")

        def assert_equal(d):
            assert not d.diff_files and not d.left_only and not d.right_only
            for sub in d.subdirs.values():
                assert_equal(sub)

        assert_equal(cmp)

    def test_different_seed_differs(self, tmp_path):
        generate(mini_config(seed=1), tmp_path / "a")
        generate(mini_config(seed=2), tmp_path / "b")
        a = (tmp_path / "a/store/000/n1.csv").read_text()
        b = (tmp_path / "b/store/000/n1.csv").read_text()
        assert a != b

    def test_full_intensity_reaches_floor(self, tmp_path):
        config = mini_config(
            duration_days=10, noise=0.0, episodes=(Episode(0, 10, 1.0),)
        )
        generate(config, tmp_path)
        # peak day: soil moisture must equal base + swing = configured floor
        model = QUANTITIES["soil-moisture"]
        expected = model.base + model.swing * 1.0
        last_day = (tmp_path / "store/009/n1.csv").read_text().splitlines()
        assert float(last_day[0].split(",")[2]) == pytest.approx(expected, abs=1e-12)

    def test_ik_codes_correlate_with_intensity(self):
        assert ik_code("ik-sifennefene", 0.2) == 0
        assert ik_code("ik-sifennefene", 0.6) == 2
        assert ik_code("ik-sifennefene", 0.95) == 3
        assert ik_code("ik-mutiga", 0.4) == 0
        assert ik_code("ik-mutiga", 0.9) == 2

    def test_store_layout(self, tmp_path):
        generate(mini_config(duration_days=3), tmp_path)
        days = sorted(p.name for p in (tmp_path / "store").iterdir())
        assert days == ["000", "001", "002"]
        files = sorted(p.name for p in (tmp_path / "store/000").iterdir())
        assert files == ["5.frame", "n1.csv", "n2.sjson", "r1.ik"]
        assert (tmp_path / "truth.tsv").exists()


@pytest.fixture(scope="module")
def demo_assets(onto_module, tmp_path_factory):
    root = tmp_path_factory.mktemp("demo")
    config = default_scenario_config()
    truth = generate(config, root)
    return root, truth


@pytest.fixture(scope="module")
def onto_module():
    from semdews.ontology import default_ontology

    return default_ontology()


@pytest.fixture(scope="module")
def pipeline_parts(onto_module):
    from importlib import resources

    rules_text = resources.files("semdews").joinpath("assets/ik-rules.rules").read_text("utf-8")
    ruleset = parse_rules(rules_text, onto_module)
    indicators = default_indicator_specs(onto_module)
    return ruleset, indicators


class TestReplay:
    def test_empty_store(self, tmp_path, onto_module, pipeline_parts):
        (tmp_path / "000").mkdir()
        ruleset, indicators = pipeline_parts
        report = replay(str(tmp_path), onto_module, ruleset, indicators)
        assert report.ticks == [] and report.events == []

    def test_conservation(self, demo_assets, onto_module, pipeline_parts):
        root, _truth = demo_assets
        ruleset, indicators = pipeline_parts
        report = replay(str(root / "store"), onto_module, ruleset, indicators)
        assert report.entries_fetched == report.accepted + report.quarantined_count
        assert report.quarantined_count == 0

    def test_deterministic_report(self, demo_assets, onto_module, pipeline_parts, tmp_path):
        root, _truth = demo_assets
        ruleset, indicators = pipeline_parts
        r1 = replay(str(root / "store"), onto_module, ruleset, indicators, out_dir=tmp_path / "a")
        r2 = replay(str(root / "store"), onto_module, ruleset, indicators, out_dir=tmp_path / "b")
        assert (tmp_path / "a/report.tsv").read_bytes() == (tmp_path / "b/report.tsv").read_bytes()
        assert (tmp_path / "a/events.log").read_bytes() == (tmp_path / "b/events.log").read_bytes()
        assert r1.report_tsv() == r2.report_tsv()

    def test_flat_baseline_stays_normal(self, onto_module, pipeline_parts, tmp_path):
        config = default_scenario_config().without_episodes()
        generate(config, tmp_path)
        ruleset, indicators = pipeline_parts
        report = replay(str(tmp_path / "store"), onto_module, ruleset, indicators)
        assert report.events == []
        assert all(row.dvi.band is Band.NORMAL for row in report.ticks)

    def test_drought_crosses_watch_before_peak(self, demo_assets, onto_module, pipeline_parts):
        root, truth = demo_assets
        ruleset, indicators = pipeline_parts
        report = replay(str(root / "store"), onto_module, ruleset, indicators)
        first_watch = report.first_tick_at_or_above(Band.WATCH)
        assert first_watch is not None
        assert first_watch.tick // DAY < truth.peak_day
        assert lead_time(report, truth) > 0

    def test_report_matches_golden(self, demo_assets, onto_module, pipeline_parts):
        root, _truth = demo_assets
        ruleset, indicators = pipeline_parts
        report = replay(str(root / "store"), onto_module, ruleset, indicators)
        golden = Path(__file__).parent / "golden" / "demo-report.tsv"
        assert report.report_tsv() == golden.read_text()

    def test_replay_over_pull_protocol_matches_local(
        self, demo_assets, onto_module, pipeline_parts
    ):
        import threading

        from semdews.ingest import make_store_server

        root, _truth = demo_assets
        ruleset, indicators = pipeline_parts
        server = make_store_server(str(root / "store"))
        thread = threading.Thread(target=server.serve_forever, daemon=True)
        thread.start()
        try:
            host, port = server.server_address[:2]
            remote = replay(f"http://{host}:{port}", onto_module, ruleset, indicators)
        finally:
            server.shutdown()
        local = replay(str(root / "store"), onto_module, ruleset, indicators)
        assert remote.report_tsv() == local.report_tsv()
        assert remote.accepted == local.accepted
        assert remote.entries_fetched == local.entries_fetched


class TestCrossProcessDeterminism:
    """Generation and replay must not depend on interpreter hash seeds."""

    SCRIPT = r"""
import hashlib, json, pathlib, sys, tempfile
from importlib import resources
from semdews.ontology import default_ontology
from semdews.cep import parse_rules
from semdews.dvi import default_indicator_specs
from semdews import scenario

config = scenario.parse_scenario_config(pathlib.Path(sys.argv[1]).read_text())
onto = default_ontology()
rules = parse_rules(
    resources.files("semdews").joinpath("assets/ik-rules.rules").read_text("utf-8"), onto
)
specs = default_indicator_specs(onto)
with tempfile.TemporaryDirectory() as tmp:
    scenario.generate(config, tmp)
    digest = hashlib.sha256()
    for p in sorted(pathlib.Path(tmp, "store").rglob("*")):
        if p.is_file():
            digest.update(p.name.encode() + p.read_bytes())
    report = scenario.replay(f"{tmp}/store", onto, rules, specs)
    digest.update(report.report_tsv().encode())
print(digest.hexdigest())
"""

    def test_hash_seed_independence(self, tmp_path):
        import os
        import subprocess
        import sys

        config = {
            "seed": 31337,
            "duration_days": 8,
            "episodes": [{"start_day": 2, "length_days": 4, "intensity": 0.8}],
            "nodes": [
                {"id": "n1", "format": "text-csv", "quantity": "soil-moisture",
                 "property": "soilMoisture", "unit": "m3/m3", "interval_hours": 6},
                {"id": "n2", "format": "structured", "quantity": "water-level",
                 "property": "Stav", "unit": "cm", "interval_hours": 12, "vocabulary": "cz"},
                {"id": "5", "format": "mote-frame", "quantity": "air-temperature",
                 "property": "airTemp", "unit": "K", "interval_hours": 6, "vocabulary": "mote"},
                {"id": "r1", "format": "ik-report", "quantity": "ik-sifennefene",
                 "property": "ik:sifennefeneAbundance", "interval_hours": 24, "vocabulary": "ik"},
            ],
        }
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps(config))
        digests = set()
        for seed in ("0", "1", "31337"):
            env = dict(os.environ, PYTHONHASHSEED=seed)
            out = subprocess.run(
                [sys.executable, "-c", self.SCRIPT, str(cfg)],
                capture_output=True, text=True, env=env, check=True,
            )
            digests.add(out.stdout.strip())
        assert len(digests) == 1


class TestLeadTime:
    def make_report(self, values):
        from semdews.model import DroughtVulnerabilityIndex
        from semdews.pipeline import TickRow

        report = RunReport(store_uri="x")
        for day, value in enumerate(values, start=1):
            dvi = DroughtVulnerabilityIndex(value, Band.from_value(value), day * DAY, ())
            report.ticks.append(TickRow(tick=day * DAY, dvi=dvi, events_fired=0))
        return report

    def test_detection_day_10_peak_25(self):
        values = [0.0] * 9 + [0.3] * 20
        report = self.make_report(values)
        truth = GroundTruth(tuple([0.1] * 24 + [1.0] + [0.0] * 4))
        assert lead_time(report, truth) == 15

    def test_no_detection(self):
        report = self.make_report([0.0] * 20)
        truth = GroundTruth(tuple([0.5] * 20))
        with pytest.raises(NoDetection):
            lead_time(report, truth)

    def test_no_episode_not_applicable(self):
        report = self.make_report([0.3] * 5)
        truth = GroundTruth((0.0,) * 5)
        with pytest.raises(NoDetection):
            lead_time(report, truth)


class TestCli:
    def test_validate_shipped_assets(self, capsys):
        assert cli.main(["validate"]) == 0
        out = capsys.readouterr().out
        assert out.count("OK") == 5

    def test_validate_rejects_bad_rules(self, tmp_path, capsys):
        bad = tmp_path / "bad.rules"
        bad.write_text("RULE broken WHEN 42\n")
        assert cli.main(["validate", "--rules", str(bad)]) == 1
        assert "ERROR" in capsys.readouterr().out

    def test_gen_twice_identical(self, tmp_path, capsys):
        config = {
            "seed": 7,
            "duration_days": 4,
            "nodes": [
                {"id": "n1", "format": "text-csv", "quantity": "soil-moisture",
                 "property": "soilMoisture", "unit": "m3/m3", "interval_hours": 12},
                {"id": "n2", "format": "structured", "quantity": "water-level",
                 "property": "Stav", "unit": "cm", "interval_hours": 12, "vocabulary": "cz"},
                {"id": "5", "format": "mote-frame", "quantity": "air-temperature",
                 "property": "airTemp", "unit": "K", "interval_hours": 12, "vocabulary": "mote"},
                {"id": "r1", "format": "ik-report", "quantity": "ik-sifennefene",
                 "property": "ik:sifennefeneAbundance", "interval_hours": 24, "vocabulary": "ik"},
            ],
        }
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps(config))
        assert cli.main(["gen", "--config", str(cfg), "--out", str(tmp_path / "a")]) == 0
        assert cli.main(["gen", "--config", str(cfg), "--out", str(tmp_path / "b")]) == 0
        for day in range(4):
            for name in ("n1.csv", "n2.sjson", "5.frame", "r1.ik"):
                a = (tmp_path / f"a/store/{day:03d}/{name}").read_bytes()
                b = (tmp_path / f"b/store/{day:03d}/{name}").read_bytes()
                assert a == b

    def test_replay_cli(self, demo_assets, tmp_path, capsys):
        root, _ = demo_assets
        code = cli.main(
            [
                "replay",
                "--store", str(root / "store"),
                "--truth", str(root / "truth.tsv"),
                "--out", str(tmp_path / "run"),
            ]
        )
        assert code == 0
        out = capsys.readouterr().out
        assert "lead time:" in out
        assert (tmp_path / "run/report.tsv").exists()
        assert "DROUGHT VULNERABILITY BULLETIN" in (tmp_path / "run/bulletin.txt").read_text()

    def test_gen_no_episodes_flag(self, tmp_path, capsys):
        assert cli.main(["gen", "--no-episodes", "--out", str(tmp_path / "ctl")]) == 0
        truth = GroundTruth.from_tsv((tmp_path / "ctl/truth.tsv").read_text())
        assert not truth.has_episode

    def test_query_cli(self, capsys):
        assert cli.main(["query", "?", "rdfs:subClassOf", "dolce:Quality"]) == 0
        out = capsys.readouterr().out
        assert "env:waterLevel rdfs:subClassOf dolce:Quality" in out

    def test_unknown_store_fails_cleanly(self, tmp_path, capsys):
        assert cli.main(["replay", "--store", str(tmp_path / "missing")]) == 1
        assert "StoreUnreachable" in capsys.readouterr().err
