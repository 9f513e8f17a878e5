import pytest
from hypothesis import given, strategies as st

from semdews.model import (
    Band,
    Contribution,
    DroughtVulnerabilityIndex,
    InvalidRecord,
    MalformedTerm,
    NegativeTimestamp,
    ObservationRecord,
    Severity,
    SourceFormat,
    TermId,
    parse_term,
    render_term,
)

term_part = st.text(
    alphabet=st.characters(min_codepoint=33, max_codepoint=126, exclude_characters=":"),
    min_size=1,
    max_size=12,
)


class TestTermId:
    def test_render(self):
        assert render_term(TermId("env", "soilMoisture")) == "env:soilMoisture"

    def test_parse(self):
        assert parse_term("ik:sifennefeneAbundance") == TermId("ik", "sifennefeneAbundance")

    @pytest.mark.parametrize("bad", ["nocolon", "a:b:c", ":", "a:", ":b", ""])
    def test_malformed(self, bad):
        with pytest.raises(MalformedTerm):
            parse_term(bad)

    @pytest.mark.parametrize(
        "namespace,local",
        [("a b", "c"), ("a", "b c"), ("ä", "x"), ("a", "ü"), ("", "x"), ("x", "")],
    )
    def test_invalid_parts(self, namespace, local):
        with pytest.raises(MalformedTerm):
            TermId(namespace, local)

    @given(namespace=term_part, local=term_part)
    def test_round_trip(self, namespace, local):
        term = TermId(namespace, local)
        assert parse_term(render_term(term)) == term

    def test_ordering_is_lexicographic(self):
        terms = [TermId("b", "x"), TermId("a", "y"), TermId("a", "x")]
        assert sorted(terms) == [TermId("a", "x"), TermId("a", "y"), TermId("b", "x")]


class TestObservationRecord:
    def test_numeric_record(self):
        rec = ObservationRecord("n1", "temp", 3.5, "K", 10, SourceFormat.TEXT_CSV)
        assert not rec.is_categorical

    def test_categorical_record(self):
        rec = ObservationRecord("r1", "ik:x", 3.0, "", 0, SourceFormat.IK_REPORT)
        assert rec.is_categorical and rec.code == 3

    def test_negative_timestamp(self):
        with pytest.raises(NegativeTimestamp):
            ObservationRecord("n1", "temp", 1.0, "K", -1, SourceFormat.TEXT_CSV)

    def test_non_finite_value(self):
        with pytest.raises(InvalidRecord):
            ObservationRecord("n1", "temp", float("nan"), "K", 0, SourceFormat.TEXT_CSV)

    def test_categorical_must_be_non_negative_integer(self):
        with pytest.raises(InvalidRecord):
            ObservationRecord("r1", "ik:x", 2.5, "", 0, SourceFormat.IK_REPORT)
        with pytest.raises(InvalidRecord):
            ObservationRecord("r1", "ik:x", -1.0, "", 0, SourceFormat.IK_REPORT)

    def test_code_on_numeric_record_rejected(self):
        rec = ObservationRecord("n1", "temp", 1.0, "K", 0, SourceFormat.TEXT_CSV)
        with pytest.raises(InvalidRecord):
            rec.code


class TestSeverity:
    def test_bounds(self):
        assert Severity(1) < Severity(5)
        for bad in (0, 6, -2):
            with pytest.raises(InvalidRecord):
                Severity(bad)


class TestBand:
    @pytest.mark.parametrize(
        "value,band",
        [
            (0.0, Band.NORMAL),
            (0.2499999, Band.NORMAL),
            (0.25, Band.WATCH),
            (0.4999999, Band.WATCH),
            (0.5, Band.WARNING),
            (0.7499999, Band.WARNING),
            (0.75, Band.EMERGENCY),
            (1.0, Band.EMERGENCY),
        ],
    )
    def test_boundaries_half_open(self, value, band):
        assert Band.from_value(value) is band

    def test_out_of_range(self):
        with pytest.raises(InvalidRecord):
            Band.from_value(1.1)

    def test_ordering(self):
        assert Band.NORMAL < Band.WATCH < Band.WARNING < Band.EMERGENCY

    def test_parse(self):
        assert Band.parse("warning") is Band.WARNING
        with pytest.raises(InvalidRecord):
            Band.parse("panic")


class TestDvi:
    def test_weights_must_sum_to_one(self):
        contrib = (
            Contribution(TermId("env", "a"), 0.5, 0.5),
            Contribution(TermId("env", "b"), 0.5, 0.2),
        )
        with pytest.raises(InvalidRecord):
            DroughtVulnerabilityIndex(0.35, Band.WATCH, 0, contrib)

    def test_band_must_match_value(self):
        with pytest.raises(InvalidRecord):
            DroughtVulnerabilityIndex(0.1, Band.EMERGENCY, 0, ())
