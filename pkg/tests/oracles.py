"""Independent brute-force oracles used to cross-check the fast paths.

Everything here recomputes results from first principles (full rescans,
repeat-until-no-change fixpoints) and deliberately shares no state or
helper code with the package implementations it checks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from semdews.cep import AggClause, BoolNode, RuleSet, SeqClause
from semdews.model import TermId
from semdews.ontology import (
    ALIGNED_WITH,
    DISJOINT_WITH,
    RDF_TYPE,
    RDFS_DOMAIN,
    RDFS_RANGE,
    RDFS_SUBCLASS,
    Triple,
)

DAY = 86400


# -- reasoner oracle -----------------------------------------------------------

def naive_closure(triples: set[Triple], max_passes: int = 500) -> set[Triple]:
    """Apply all five inference rules to a whole triple set until nothing
    new appears. Each pass recomputes every join from scratch."""
    current = set(triples)
    for _ in range(max_passes):
        new: set[Triple] = set()
        subclass: dict[TermId, list[TermId]] = {}
        types: list[tuple[TermId, TermId]] = []
        domains: list[tuple[TermId, TermId]] = []
        ranges: list[tuple[TermId, TermId]] = []
        aligned: dict[TermId, list[TermId]] = {}
        for t in current:
            if isinstance(t.obj, TermId):
                if t.predicate == RDFS_SUBCLASS:
                    subclass.setdefault(t.subject, []).append(t.obj)
                elif t.predicate == RDF_TYPE:
                    types.append((t.subject, t.obj))
                elif t.predicate == RDFS_DOMAIN:
                    domains.append((t.subject, t.obj))
                elif t.predicate == RDFS_RANGE:
                    ranges.append((t.subject, t.obj))
                elif t.predicate == ALIGNED_WITH:
                    aligned.setdefault(t.subject, []).append(t.obj)
        # R1: subclass transitivity
        for a, supers in subclass.items():
            for b in supers:
                for c in subclass.get(b, ()):
                    new.add(Triple(a, RDFS_SUBCLASS, c))
        # R2: type propagation through subclass
        for x, a in types:
            for b in subclass.get(a, ()):
                new.add(Triple(x, RDF_TYPE, b))
        # R3 / R4: domain and range typing over every use of the predicate
        for t in current:
            for p, d in domains:
                if t.predicate == p:
                    new.add(Triple(t.subject, RDF_TYPE, d))
            for p, r in ranges:
                if t.predicate == p and isinstance(t.obj, TermId):
                    new.add(Triple(t.obj, RDF_TYPE, r))
        # R5: alignedWith symmetric-transitive closure
        for a, partners in aligned.items():
            for b in partners:
                new.add(Triple(b, ALIGNED_WITH, a))
                for c in aligned.get(b, ()):
                    new.add(Triple(a, ALIGNED_WITH, c))
        if new <= current:
            return current
        current |= new
    raise AssertionError("fixpoint did not converge")


def naive_inconsistent_terms(closure: set[Triple]) -> list[TermId]:
    """Terms that are subclasses of two disjoint classes, sorted."""
    disjoint = set()
    for t in closure:
        if t.predicate == DISJOINT_WITH and isinstance(t.obj, TermId):
            disjoint.add((t.subject, t.obj))
            disjoint.add((t.obj, t.subject))
    supers: dict[TermId, set[TermId]] = {}
    for t in closure:
        if t.predicate == RDFS_SUBCLASS and isinstance(t.obj, TermId):
            supers.setdefault(t.subject, set()).add(t.obj)
    bad = []
    for term, sup in supers.items():
        if any(a in sup and b in sup for a, b in disjoint):
            bad.append(term)
    return sorted(bad, key=str)


# -- CEP oracle -----------------------------------------------------------------

def oracle_aggregate(fn: str, entries: list[tuple[int, str, float]]) -> float | None:
    """Full-scan aggregate over (ts, node, value) entries already sorted by
    (ts, node); None when the window is empty or the statistic undefined."""
    if not entries:
        return None
    values = [value for _ts, _node, value in entries]
    if fn == "avg":
        return sum(values) / len(values)
    if fn == "min":
        return min(values)
    if fn == "max":
        return max(values)
    if fn == "count":
        return float(len(values))
    if fn == "sum":
        return sum(values)
    if fn == "last":
        return values[-1]
    if fn == "slope":
        if len(values) < 2:
            return None
        xs = [ts / DAY for ts, _node, _value in entries]
        mean_x = sum(xs) / len(xs)
        mean_y = sum(values) / len(values)
        sxx = sum((x - mean_x) ** 2 for x in xs)
        if sxx == 0.0:
            return None
        sxy = sum((x - mean_x) * (y - mean_y) for x, y in zip(xs, values))
        return sxy / sxx
    raise AssertionError(f"unknown aggregate {fn}")


def oracle_compare(value: float, cmp: str, threshold: float) -> bool:
    return {
        "<": value < threshold,
        "<=": value <= threshold,
        ">": value > threshold,
        ">=": value >= threshold,
        "==": value == threshold,
    }[cmp]


@dataclass
class OracleFiring:
    rule_name: str
    term: TermId
    severity: int
    weight: float
    fired_at: int
    evidence: list[float | None]


@dataclass
class CepOracle:
    """Mirror evaluator: keeps the raw accepted stream and recomputes
    retention, windows, aggregates, and sequence matches per tick by full
    scan."""

    ruleset: RuleSet
    horizon: int
    accepted: dict[TermId, list[tuple[int, str, float]]] = field(default_factory=dict)
    events: list[tuple[int, TermId]] = field(default_factory=list)

    def record_push(self, term: TermId, node: str, ts: int, value: float) -> None:
        self.accepted.setdefault(term, []).append((ts, node, value))

    def record_injected(self, term: TermId, ts: int) -> None:
        self.events.append((ts, term))

    def _retained(self, term: TermId) -> list[tuple[int, str, float]]:
        entries = sorted(self.accepted.get(term, []), key=lambda e: (e[0], e[1]))
        if not entries:
            return []
        newest = entries[-1][0]
        return [e for e in entries if e[0] >= newest - self.horizon]

    def _window(self, term: TermId, now: int, window: int) -> list[tuple[int, str, float]]:
        return [e for e in self._retained(term) if now - window < e[0] <= now]

    def _seq_holds(self, clause: SeqClause, now: int) -> bool:
        horizon = self.ruleset.event_horizon
        visible = [(ts, t) for ts, t in self.events if now - horizon <= ts <= now]
        return any(
            0 < tb - ta <= clause.within
            for ta, term_a in visible
            if term_a == clause.first
            for tb, term_b in visible
            if term_b == clause.second
        )

    def _eval(self, cond, now: int, evidence: list[float | None]) -> bool:
        if isinstance(cond, BoolNode):
            left = self._eval(cond.left, now, evidence)
            right = self._eval(cond.right, now, evidence)
            return (left and right) if cond.op == "AND" else (left or right)
        if isinstance(cond, AggClause):
            value = oracle_aggregate(cond.fn, self._window(cond.term, now, cond.window))
            evidence.append(value)
            if value is None:
                return False
            return oracle_compare(value, cond.cmp, cond.threshold)
        holds = self._seq_holds(cond, now)
        evidence.append(1.0 if holds else 0.0)
        return holds

    def evaluate(self, now: int) -> list[OracleFiring]:
        horizon = self.ruleset.event_horizon
        self.events = [(ts, t) for ts, t in self.events if ts >= now - horizon]
        fired: list[OracleFiring] = []
        for rule in sorted(self.ruleset.rules, key=lambda r: r.name):
            evidence: list[float | None] = []
            if self._eval(rule.condition, now, evidence):
                fired.append(
                    OracleFiring(
                        rule.name, rule.event_term, int(rule.severity), rule.weight, now, evidence
                    )
                )
        for f in fired:
            self.events.append((f.fired_at, f.term))
        return fired


# -- numeric oracles ---------------------------------------------------------------

def oracle_decayed_event_sum(
    events: list[tuple[float, int, int]], half_life: float, now: int
) -> float:
    """Direct recomputation of the decayed event score: events are
    (weight, severity, fired_at)."""
    total = 0.0
    for weight, severity, fired_at in events:
        if fired_at > now:
            continue
        total += weight * (severity / 5.0) * 2.0 ** (-(now - fired_at) / half_life)
    return min(1.0, total)


def oracle_interpolate(points: list[tuple[float, float]], x: float) -> float:
    """Linear interpolation between sorted breakpoints, clamped outside."""
    pts = sorted(points)
    if x <= pts[0][0]:
        return pts[0][1]
    if x >= pts[-1][0]:
        return pts[-1][1]
    for (x0, y0), (x1, y1) in zip(pts, pts[1:]):
        if x0 <= x <= x1:
            span = x1 - x0
            return y0 * (x1 - x) / span + y1 * (x - x0) / span
    raise AssertionError("unreachable")


def oracle_weighted_sum(pairs: list[tuple[float, float]]) -> float:
    """Weighted sum ordered independently of the implementation's order."""
    total = 0.0
    for weight, score in pairs:
        total = math.fsum([total, weight * score])
    return min(1.0, max(0.0, total))


def xor_checksum(data: bytes) -> int:
    """Byte-wise XOR, written out longhand."""
    acc = 0
    for b in data:
        acc ^= b
    return acc
