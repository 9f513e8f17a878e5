"""Detection-oriented complex-event-processing engine.

Rules come from a small text DSL::

    RULE soil-drying WHEN avg(env:soilMoisture, window=14d) < 0.12
        EMIT EVENT(env:droughtWatch, severity=2, weight=0.4)

A condition is a left-associative AND/OR tree (AND binds tighter) over two
clause kinds: aggregate comparisons and SEQ(first, second, within=d)
sequence checks. Aggregates are avg, min, max, count, sum, last, and slope
(least-squares slope per day). All evaluation windows are half-open
``(now - window, now]``; clauses over empty windows are false, never errors.

The engine keeps one sliding buffer per canonical term, pooling all nodes,
and evaluates only when explicitly clocked, so identical inputs always
reproduce identical event lists.
"""

from __future__ import annotations

import hashlib
import re
from bisect import bisect_right, insort
from dataclasses import dataclass
from typing import Iterable, Union

from .model import (
    DolceCategory,
    MalformedTerm,
    MiddlewareError,
    SemanticObservation,
    Severity,
    TermId,
    parse_term,
)
from .ontology import OntologyStore, Unclassified, Unresolvable

HOUR = 3600
DAY = 86400
DEFAULT_WINDOW = 7 * DAY
DEFAULT_WEIGHT = 1.0
MIN_HORIZON = 7 * DAY

AGG_FUNCTIONS = ("avg", "min", "max", "count", "sum", "last", "slope")
COMPARATORS = ("<=", ">=", "==", "<", ">")


class RuleSyntaxError(MiddlewareError):
    def __init__(self, line: int, col: int, message: str):
        super().__init__(f"line {line}, col {col}: {message}")
        self.line = line
        self.col = col


class UnknownTerm(MiddlewareError):
    pass


class UnknownEventTerm(MiddlewareError):
    pass


class DuplicateRule(MiddlewareError):
    pass


class BadWindow(MiddlewareError):
    pass


class DuplicateTimestamp(MiddlewareError):
    pass


class TooLate(MiddlewareError):
    pass


# -- rule AST -----------------------------------------------------------------

@dataclass(frozen=True)
class AggClause:
    fn: str
    term: TermId
    window: int
    cmp: str
    threshold: float

    def render(self) -> str:
        return f"{self.fn}({self.term}, window={self.window}s) {self.cmp} {self.threshold!r}"


@dataclass(frozen=True)
class SeqClause:
    first: TermId
    second: TermId
    within: int

    def render(self) -> str:
        return f"SEQ({self.first}, {self.second}, within={self.within}s)"


Clause = Union[AggClause, SeqClause]


@dataclass(frozen=True)
class BoolNode:
    op: str  # "AND" | "OR"
    left: "Condition"
    right: "Condition"


Condition = Union[AggClause, SeqClause, BoolNode]


def condition_clauses(cond: Condition) -> list[Clause]:
    """Clauses of a condition tree, in source order."""
    if isinstance(cond, BoolNode):
        return condition_clauses(cond.left) + condition_clauses(cond.right)
    return [cond]


@dataclass(frozen=True)
class Rule:
    name: str
    condition: Condition
    event_term: TermId
    severity: Severity
    weight: float

    @property
    def clauses(self) -> list[Clause]:
        return condition_clauses(self.condition)


@dataclass(frozen=True)
class RuleSet:
    rules: tuple[Rule, ...]
    source: str = ""

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.source.encode("utf-8")).hexdigest()[:16]

    @property
    def horizon(self) -> int:
        """Largest aggregate window any rule needs."""
        windows = [c.window for r in self.rules for c in r.clauses if isinstance(c, AggClause)]
        return max(windows, default=0)

    @property
    def event_horizon(self) -> int:
        withins = [c.within for r in self.rules for c in r.clauses if isinstance(c, SeqClause)]
        return max(withins, default=0)

    @property
    def names(self) -> list[str]:
        return [r.name for r in self.rules]


EMPTY_RULESET = RuleSet(rules=())


@dataclass(frozen=True)
class EventRecord:
    """One detected pattern occurrence."""

    rule_name: str
    term: TermId
    severity: Severity
    weight: float
    fired_at: int
    evidence: tuple[tuple[str, float | None], ...]

    def log_line(self) -> str:
        return f"{self.fired_at}\t{self.rule_name}\t{self.term}\t{int(self.severity)}\t{self.weight!r}"


# -- tokenizer ------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<comment>\#[^\n]*)
  | (?P<dur>\d+[hd]\b)
  | (?P<number>-?\d+(?:\.\d+)?)
  | (?P<term>[A-Za-z_][\w./-]*:[\w./-]+)
  | (?P<ident>[A-Za-z_][\w-]*)
  | (?P<cmp><=|>=|==|<|>)
  | (?P<punct>[(),=])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class _Token:
    kind: str
    text: str
    line: int
    col: int


def _tokenize(text: str) -> list[_Token]:
    tokens: list[_Token] = []
    line, col = 1, 1
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if not m:
            raise RuleSyntaxError(line, col, f"unexpected character {text[pos]!r}")
        kind = m.lastgroup or ""
        chunk = m.group()
        if kind not in ("ws", "comment"):
            tokens.append(_Token(kind, chunk, line, col))
        newlines = chunk.count("\n")
        if newlines:
            line += newlines
            col = len(chunk) - chunk.rfind("\n")
        else:
            col += len(chunk)
        pos = m.end()
    tokens.append(_Token("eof", "", line, col))
    return tokens


class _Parser:
    """Recursive-descent parser for the rule grammar."""

    def __init__(self, tokens: list[_Token], onto: OntologyStore | None):
        self.tokens = tokens
        self.i = 0
        self.onto = onto

    def peek(self) -> _Token:
        return self.tokens[self.i]

    def next(self) -> _Token:
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def fail(self, message: str) -> "RuleSyntaxError":
        tok = self.peek()
        return RuleSyntaxError(tok.line, tok.col, message)

    def expect(self, kind: str, text: str | None = None) -> _Token:
        tok = self.peek()
        if tok.kind != kind or (text is not None and tok.text != text):
            want = text or kind
            raise self.fail(f"expected {want!r}, found {tok.text!r}")
        return self.next()

    def expect_keyword(self, word: str) -> None:
        tok = self.peek()
        if tok.kind != "ident" or tok.text != word:
            raise self.fail(f"expected {word!r}, found {tok.text!r}")
        self.next()

    # grammar ------------------------------------------------------------

    def ruleset(self) -> list[Rule]:
        rules = []
        while self.peek().kind != "eof":
            rules.append(self.rule())
        return rules

    def rule(self) -> Rule:
        self.expect_keyword("RULE")
        name_tok = self.peek()
        if name_tok.kind != "ident":
            raise self.fail(f"expected rule name, found {name_tok.text!r}")
        self.next()
        self.expect_keyword("WHEN")
        condition = self.expr()
        self.expect_keyword("EMIT")
        self.expect_keyword("EVENT")
        self.expect("punct", "(")
        term = self.term_token()
        self.expect("punct", ",")
        sev_tok = self.peek()
        self.expect_keyword("severity")
        self.expect("punct", "=")
        severity_value = self.int_number()
        if not Severity.MIN <= severity_value <= Severity.MAX:
            raise RuleSyntaxError(
                sev_tok.line, sev_tok.col,
                f"severity {severity_value} outside {Severity.MIN}..{Severity.MAX}",
            )
        weight = DEFAULT_WEIGHT
        if self.peek().text == ",":
            self.next()
            w_tok = self.peek()
            self.expect_keyword("weight")
            self.expect("punct", "=")
            weight = self.number()
            if not 0.0 <= weight <= 1.0:
                raise RuleSyntaxError(w_tok.line, w_tok.col, f"weight {weight} outside [0, 1]")
        self.expect("punct", ")")
        return Rule(
            name=name_tok.text,
            condition=condition,
            event_term=term,
            severity=Severity(severity_value),
            weight=weight,
        )

    def expr(self) -> Condition:
        node = self.and_expr()
        while self.peek().kind == "ident" and self.peek().text == "OR":
            self.next()
            node = BoolNode("OR", node, self.and_expr())
        return node

    def and_expr(self) -> Condition:
        node = self.clause()
        while self.peek().kind == "ident" and self.peek().text == "AND":
            self.next()
            node = BoolNode("AND", node, self.clause())
        return node

    def clause(self) -> Clause:
        tok = self.peek()
        if tok.kind == "ident" and tok.text == "SEQ":
            self.next()
            self.expect("punct", "(")
            first = self.term_token()
            self.expect("punct", ",")
            second = self.term_token()
            self.expect("punct", ",")
            self.expect_keyword("within")
            self.expect("punct", "=")
            within = self.duration()
            self.expect("punct", ")")
            return SeqClause(first, second, within)
        if tok.kind == "ident" and tok.text in AGG_FUNCTIONS:
            fn = self.next().text
            self.expect("punct", "(")
            term = self.term_token()
            window = DEFAULT_WINDOW
            if self.peek().text == ",":
                self.next()
                self.expect_keyword("window")
                self.expect("punct", "=")
                window = self.duration()
            self.expect("punct", ")")
            cmp_tok = self.peek()
            if cmp_tok.kind != "cmp":
                raise self.fail(f"expected comparator, found {cmp_tok.text!r}")
            self.next()
            threshold = self.number()
            return AggClause(fn, term, window, cmp_tok.text, threshold)
        raise self.fail(f"expected aggregate or SEQ clause, found {tok.text!r}")

    def term_token(self) -> TermId:
        tok = self.peek()
        if tok.kind != "term":
            raise self.fail(f"expected prefix:local term, found {tok.text!r}")
        self.next()
        try:
            return parse_term(tok.text)
        except MalformedTerm as exc:
            raise RuleSyntaxError(tok.line, tok.col, str(exc)) from None

    def number(self) -> float:
        tok = self.peek()
        if tok.kind != "number":
            raise self.fail(f"expected number, found {tok.text!r}")
        self.next()
        return float(tok.text)

    def int_number(self) -> int:
        tok = self.peek()
        if tok.kind != "number" or "." in tok.text:
            raise self.fail(f"expected integer, found {tok.text!r}")
        self.next()
        return int(tok.text)

    def duration(self) -> int:
        tok = self.peek()
        if tok.kind != "dur":
            raise self.fail(f"expected duration like 12h or 14d, found {tok.text!r}")
        self.next()
        scale = DAY if tok.text.endswith("d") else HOUR
        seconds = int(tok.text[:-1]) * scale
        if seconds <= 0:
            raise BadWindow(tok.text)
        return seconds


def resolve_quality_term(term: TermId, onto: OntologyStore) -> TermId:
    try:
        canonical = onto.resolve_term(str(term))
    except Unresolvable:
        raise UnknownTerm(str(term)) from None
    try:
        category = onto.classify(canonical)
    except Unclassified:
        raise UnknownTerm(f"{term}: unclassified") from None
    if category is not DolceCategory.QUALITY:
        raise UnknownTerm(f"{term}: not a quality term ({category.value})")
    return canonical


def parse_rules(text: str, onto: OntologyStore) -> RuleSet:
    """Parse and validate a rule document against the ontology.

    All terms are canonicalized at load time: aggregate terms must resolve
    to quality terms, emitted event terms must exist in the ontology, and
    SEQ terms must be known or emitted by the same rule set.
    """
    raw_rules = _Parser(_tokenize(text), onto).ruleset()
    seen: set[str] = set()
    for rule in raw_rules:
        if rule.name in seen:
            raise DuplicateRule(rule.name)
        seen.add(rule.name)

    emitted: set[TermId] = set()
    for rule in raw_rules:
        if not onto.knows(rule.event_term):
            raise UnknownTerm(f"emit term {rule.event_term} unknown to the ontology")
        emitted.add(onto.canonical_of(rule.event_term))

    def rewrite(cond: Condition) -> Condition:
        if isinstance(cond, BoolNode):
            return BoolNode(cond.op, rewrite(cond.left), rewrite(cond.right))
        if isinstance(cond, AggClause):
            canonical = resolve_quality_term(cond.term, onto)
            return AggClause(cond.fn, canonical, cond.window, cond.cmp, cond.threshold)
        first = onto.canonical_of(cond.first)
        second = onto.canonical_of(cond.second)
        for term in (first, second):
            if not onto.knows(term) and term not in emitted:
                raise UnknownEventTerm(str(term))
        return SeqClause(first, second, cond.within)

    rules = tuple(
        Rule(r.name, rewrite(r.condition), onto.canonical_of(r.event_term), r.severity, r.weight)
        for r in raw_rules
    )
    return RuleSet(rules=rules, source=text)


# -- sliding windows --------------------------------------------------------------

Entry = tuple[int, str, float]  # (timestamp, node_id, value), sorted by (ts, node)


class WindowState:
    """Per-term ring of (timestamp, node, value), pooled across nodes.

    Entries older than ``horizon`` behind a ring's newest timestamp are
    evicted on push. Out-of-order pushes are tolerated up to the horizon;
    anything later raises ``TooLate`` and duplicate (term, node, timestamp)
    pushes raise ``DuplicateTimestamp``.
    """

    def __init__(self, horizon: int):
        self.horizon = max(int(horizon), MIN_HORIZON)
        self.rings: dict[TermId, list[Entry]] = {}
        self._node_newest: dict[tuple[TermId, str], int] = {}

    def extend_horizon(self, horizon: int) -> None:
        self.horizon = max(self.horizon, int(horizon))

    def push(self, term: TermId, node: str, timestamp: int, value: float) -> None:
        ring = self.rings.setdefault(term, [])
        cutoff = ring[-1][0] - self.horizon if ring else None
        newest = self._node_newest.get((term, node))
        if newest is not None and (cutoff is None or newest >= cutoff):
            if timestamp < newest - self.horizon:
                raise TooLate(f"{term} @ {timestamp} older than {newest} - {self.horizon}")
        idx = bisect_right(ring, (timestamp, node), key=lambda e: (e[0], e[1]))
        if idx > 0 and ring[idx - 1][0] == timestamp and ring[idx - 1][1] == node:
            raise DuplicateTimestamp(f"{term} {node} @ {timestamp}")
        insort(ring, (timestamp, node, value), key=lambda e: (e[0], e[1]))
        if newest is None or timestamp > newest:
            self._node_newest[(term, node)] = timestamp
        evict_before = ring[-1][0] - self.horizon
        drop = 0
        while drop < len(ring) and ring[drop][0] < evict_before:
            drop += 1
        if drop:
            del ring[:drop]

    def window(self, term: TermId, now: int, window: int) -> list[Entry]:
        """Entries with ``now - window < ts <= now``, ascending (ts, node)."""
        ring = self.rings.get(term, [])
        lo = bisect_right(ring, now - window, key=lambda e: e[0])
        hi = bisect_right(ring, now, key=lambda e: e[0])
        return ring[lo:hi]

    def retained(self, term: TermId) -> list[Entry]:
        return list(self.rings.get(term, []))


def aggregate(fn: str, entries: list[Entry]) -> float | None:
    """Apply an aggregate over window entries; ``None`` when empty/undefined."""
    if not entries:
        return None
    values = [e[2] for e in entries]
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
        return entries[-1][2]
    if fn == "slope":
        if len(entries) < 2:
            return None
        xs = [e[0] / DAY for e in entries]
        mean_x = sum(xs) / len(xs)
        mean_y = sum(values) / len(values)
        sxx = sum((x - mean_x) ** 2 for x in xs)
        if sxx == 0.0:
            return None
        sxy = sum((x - mean_x) * (y - mean_y) for x, y in zip(xs, values))
        return sxy / sxx
    raise MiddlewareError(f"unknown aggregate {fn!r}")


def _compare(value: float, cmp: str, threshold: float) -> bool:
    if cmp == "<":
        return value < threshold
    if cmp == "<=":
        return value <= threshold
    if cmp == ">":
        return value > threshold
    if cmp == ">=":
        return value >= threshold
    return value == threshold


# -- engine ------------------------------------------------------------------------

class CepEngine:
    """One evaluator owning a window state and an event history.

    Pushes may be produced concurrently upstream but must be applied through
    one serialized caller. Rule sets are immutable; ``swap_ruleset``
    replaces the whole set atomically between evaluations.
    """

    def __init__(self, ruleset: RuleSet = EMPTY_RULESET, extra_horizon: int = 0):
        self.ruleset = ruleset
        self.state = WindowState(max(ruleset.horizon, extra_horizon))
        self.seq_events: list[tuple[int, TermId]] = []

    def swap_ruleset(self, ruleset: RuleSet) -> None:
        self.ruleset = ruleset
        self.state.extend_horizon(ruleset.horizon)

    def push(self, obs: SemanticObservation) -> None:
        self.state.push(
            obs.canonical_term, obs.base.node_id, obs.base.timestamp, obs.canonical_value
        )

    def push_event(self, term: TermId, timestamp: int) -> None:
        """Inject an externally observed event occurrence (for SEQ matching)."""
        self.seq_events.append((timestamp, term))
        self.seq_events.sort(key=lambda e: (e[0], str(e[1])))

    def _seq_satisfied(self, clause: SeqClause, now: int) -> bool:
        horizon = self.ruleset.event_horizon
        window = [
            (ts, term) for ts, term in self.seq_events
            if now - horizon <= ts <= now
        ]
        firsts = [ts for ts, term in window if term == clause.first]
        seconds = [ts for ts, term in window if term == clause.second]
        for ta in firsts:
            for tb in seconds:
                if 0 < tb - ta <= clause.within:
                    return True
        return False

    def _eval_clause(self, clause: Clause, now: int) -> tuple[bool, float | None]:
        if isinstance(clause, AggClause):
            value = aggregate(clause.fn, self.state.window(clause.term, now, clause.window))
            if value is None:
                return False, None
            return _compare(value, clause.cmp, clause.threshold), value
        satisfied = self._seq_satisfied(clause, now)
        return satisfied, 1.0 if satisfied else 0.0

    def _eval_condition(
        self, cond: Condition, now: int, evidence: list[tuple[str, float | None]]
    ) -> bool:
        if isinstance(cond, BoolNode):
            left = self._eval_condition(cond.left, now, evidence)
            right = self._eval_condition(cond.right, now, evidence)
            return (left and right) if cond.op == "AND" else (left or right)
        ok, value = self._eval_clause(cond, now)
        evidence.append((cond.render(), value))
        return ok

    def evaluate(self, now: int) -> list[EventRecord]:
        """Fire every rule whose condition holds over windows ending at now.

        Events emitted at this very evaluation do not feed its own SEQ
        clauses; they become visible at the next tick. Output is ordered by
        rule name and a rule fires at most once per call.
        """
        horizon = self.ruleset.event_horizon
        self.seq_events = [
            (ts, term) for ts, term in self.seq_events if ts >= now - horizon
        ]
        fired: list[EventRecord] = []
        for rule in sorted(self.ruleset.rules, key=lambda r: r.name):
            evidence: list[tuple[str, float | None]] = []
            if self._eval_condition(rule.condition, now, evidence):
                fired.append(
                    EventRecord(
                        rule_name=rule.name,
                        term=rule.event_term,
                        severity=rule.severity,
                        weight=rule.weight,
                        fired_at=now,
                        evidence=tuple(evidence),
                    )
                )
        for event in fired:
            self.seq_events.append((event.fired_at, event.term))
        self.seq_events.sort(key=lambda e: (e[0], str(e[1])))
        return fired


def write_event_log(events: Iterable[EventRecord], path) -> None:
    """Append events to a newline-delimited tab-separated log file."""
    with open(path, "a", encoding="utf-8") as fh:
        for event in events:
            fh.write(event.log_line() + "\n")
