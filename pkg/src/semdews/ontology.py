"""In-memory triple store with a forward-chaining RDFS-lite reasoner.

The store holds a small upper-ontology fragment (three pairwise-disjoint
roots: endurant, perdurant, quality), an environmental vocabulary, and a
multilingual alignment table. Closure materializes the fixpoint of five
rules:

  R1  subClassOf transitivity
  R2  type propagation through subClassOf
  R3  predicate domain typing
  R4  predicate range typing (skipped for literal objects)
  R5  alignedWith symmetric-transitive closure

After closure the store answers term resolution ("Hoehe" -> env:waterLevel),
category classification, pattern queries, and categorical-scale lookups.
Documents use a line-oriented syntax: ``subject <SP> predicate <SP> object``
with '#' comment lines, double-quoted string literals, bare numeric
literals, and optional ``@prefix p = <base>`` declarations.
"""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from typing import Iterable, Union

from .model import DolceCategory, MalformedTerm, MiddlewareError, TermId, parse_term

Literal = Union[str, int, float]
Node = Union[TermId, str, int, float]

RDF_TYPE = TermId("rdf", "type")
RDFS_SUBCLASS = TermId("rdfs", "subClassOf")
RDFS_DOMAIN = TermId("rdfs", "domain")
RDFS_RANGE = TermId("rdfs", "range")
RDFS_LABEL = TermId("rdfs", "label")
ALIGNED_WITH = TermId("align", "alignedWith")
CANONICAL_FLAG = TermId("align", "canonical")
DISJOINT_WITH = TermId("dolce", "disjointWith")
CANONICAL_UNIT = TermId("env", "canonicalUnit")
CODE_SCALE_MAX = TermId("env", "codeScaleMax")

DOLCE_ROOTS: dict[TermId, DolceCategory] = {
    TermId("dolce", "Endurant"): DolceCategory.ENDURANT,
    TermId("dolce", "Perdurant"): DolceCategory.PERDURANT,
    TermId("dolce", "Quality"): DolceCategory.QUALITY,
}

ONTOLOGY_ASSETS = ("dolce-lite.onto", "env-vocab.onto", "alignments.onto")


class OntologyParseError(MiddlewareError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class DuplicateCanonical(MiddlewareError):
    pass


class Unresolvable(MiddlewareError):
    pass


class Unclassified(MiddlewareError):
    pass


class InconsistentCategory(MiddlewareError):
    pass


class UndeclaredScale(MiddlewareError):
    pass


class StoreNotClosed(MiddlewareError):
    pass


@dataclass(frozen=True)
class Triple:
    subject: TermId
    predicate: TermId
    obj: Node

    def __post_init__(self) -> None:
        if not isinstance(self.subject, TermId):
            raise OntologyParseError(0, "literals never appear in subject position")
        if not isinstance(self.predicate, TermId):
            raise OntologyParseError(0, "predicate must be a term")


def render_node(node: Node) -> str:
    if isinstance(node, TermId):
        return str(node)
    if isinstance(node, str):
        escaped = node.replace("\\", "\\\\").replace('"', '\\"')
        return f'"{escaped}"'
    return repr(node)


def _node_sort_key(node: Node) -> tuple[str, str]:
    if isinstance(node, TermId):
        return ("t", str(node))
    if isinstance(node, str):
        return ("s", node)
    return ("n", repr(float(node)))


def triple_sort_key(t: Triple) -> tuple:
    return (str(t.subject), str(t.predicate), _node_sort_key(t.obj))


def _parse_object(token: str, lineno: int) -> Node:
    if token.startswith('"'):
        if len(token) < 2 or not token.endswith('"'):
            raise OntologyParseError(lineno, f"unterminated string literal {token!r}")
        body = token[1:-1]
        return body.replace('\\"', '"').replace("\\\\", "\\")
    try:
        if any(c in token for c in ".eE") and not token.startswith("0x"):
            return float(token)
        return int(token)
    except ValueError:
        pass
    try:
        return parse_term(token)
    except MalformedTerm as exc:
        raise OntologyParseError(lineno, f"bad object token {token!r}: {exc}") from None


def parse_document(text: str) -> tuple[list[Triple], dict[str, str]]:
    """Parse a triple document into (triples, prefix declarations)."""
    triples: list[Triple] = []
    prefixes: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("@prefix"):
            rest = line[len("@prefix"):].strip()
            if "=" not in rest:
                raise OntologyParseError(lineno, f"bad prefix declaration {line!r}")
            name, base = (p.strip() for p in rest.split("=", 1))
            if not (base.startswith("<") and base.endswith(">")):
                raise OntologyParseError(lineno, f"prefix base must be <...> in {line!r}")
            prefixes[name] = base[1:-1]
            continue
        parts = line.split(None, 2)
        if len(parts) != 3:
            raise OntologyParseError(lineno, f"expected 3 fields, got {len(parts)}: {line!r}")
        s_tok, p_tok, o_tok = parts
        try:
            subject = parse_term(s_tok)
            predicate = parse_term(p_tok)
        except MalformedTerm as exc:
            raise OntologyParseError(lineno, str(exc)) from None
        triples.append(Triple(subject, predicate, _parse_object(o_tok, lineno)))
    return triples, prefixes


def bootstrap_triples() -> list[Triple]:
    """Disjointness markers for the three upper-ontology roots."""
    roots = sorted(DOLCE_ROOTS, key=str)
    out = []
    for i, a in enumerate(roots):
        for b in roots[i + 1:]:
            out.append(Triple(a, DISJOINT_WITH, b))
    return out


class OntologyStore:
    """Mutable-until-closed triple store.

    Mutations (``bulk_load``, ``declare_scale``) and ``infer_closure`` are
    meant to be serialized by the caller; every reader works against the
    closed snapshot. ``version`` bumps on each mutation batch so consumers
    can detect swaps.
    """

    def __init__(self) -> None:
        self.asserted: set[Triple] = set()
        self.inferred: set[Triple] = set()
        self.prefixes: dict[str, str] = {}
        self.version = 0
        self.closed = False
        self._canonical_of: dict[TermId, TermId] = {}
        self._alignment_classes: list[frozenset[TermId]] = []
        self._alias_exact: dict[str, set[TermId]] = {}
        self._alias_folded: dict[str, set[TermId]] = {}
        self._categories: dict[TermId, DolceCategory] = {}
        self._scales: dict[TermId, int] = {}
        self._canonical_units: dict[TermId, TermId] = {}
        self._terms: set[TermId] = set()
        for t in bootstrap_triples():
            self.asserted.add(t)

    # -- loading ----------------------------------------------------------

    def bulk_load(self, text: str) -> "OntologyStore":
        """Add all triples of a document; closure must be recomputed after."""
        triples, prefixes = parse_document(text)
        self.asserted.update(triples)
        self.prefixes.update(prefixes)
        self._check_canonical_flags(self.asserted)
        self.inferred.clear()
        self.closed = False
        self.version += 1
        return self

    @staticmethod
    def _components(aligned_pairs: Iterable[tuple[TermId, TermId]]) -> list[set[TermId]]:
        parent: dict[TermId, TermId] = {}

        def find(x: TermId) -> TermId:
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        for a, b in aligned_pairs:
            parent.setdefault(a, a)
            parent.setdefault(b, b)
            ra, rb = find(a), find(b)
            if ra != rb:
                parent[ra] = rb
        groups: dict[TermId, set[TermId]] = {}
        for x in parent:
            groups.setdefault(find(x), set()).add(x)
        return list(groups.values())

    def _check_canonical_flags(self, triples: set[Triple]) -> None:
        flagged = {t.subject for t in triples if t.predicate == CANONICAL_FLAG}
        pairs = [
            (t.subject, t.obj)
            for t in triples
            if t.predicate == ALIGNED_WITH and isinstance(t.obj, TermId)
        ]
        for component in self._components(pairs):
            canon = sorted(component & flagged, key=str)
            if len(canon) > 1:
                raise DuplicateCanonical(
                    f"{canon[0]} and {canon[1]} both flagged canonical in one alignment class"
                )

    # -- closure ----------------------------------------------------------

    def infer_closure(self) -> "OntologyStore":
        """Materialize the R1-R5 fixpoint, then index alignment and categories.

        Raises ``InconsistentCategory`` if any term ends up a subclass of two
        disjoint roots (the lexicographically first offender is reported).
        """
        sub: dict[TermId, set[TermId]] = {}
        rsub: dict[TermId, set[TermId]] = {}
        inst: dict[TermId, set[TermId]] = {}
        dom: dict[TermId, set[TermId]] = {}
        rng: dict[TermId, set[TermId]] = {}
        uses: dict[TermId, set[tuple[TermId, Node]]] = {}
        aligned: dict[TermId, set[TermId]] = {}

        known: set[Triple] = set(self.asserted)
        queue: list[Triple] = list(self.asserted)
        derived: set[Triple] = set()

        def emit(s: TermId, p: TermId, o: Node) -> None:
            t = Triple(s, p, o)
            if t not in known:
                known.add(t)
                derived.add(t)
                queue.append(t)

        while queue:
            t = queue.pop()
            s, p, o = t.subject, t.predicate, t.obj
            uses.setdefault(p, set()).add((s, o))
            for d in dom.get(p, ()):
                emit(s, RDF_TYPE, d)
            if isinstance(o, TermId):
                for r in rng.get(p, ()):
                    emit(o, RDF_TYPE, r)

            if p == RDFS_SUBCLASS and isinstance(o, TermId):
                sub.setdefault(s, set()).add(o)
                rsub.setdefault(o, set()).add(s)
                for c in sub.get(o, ()):
                    emit(s, RDFS_SUBCLASS, c)
                for a in rsub.get(s, ()):
                    emit(a, RDFS_SUBCLASS, o)
                for x in inst.get(s, ()):
                    emit(x, RDF_TYPE, o)
            elif p == RDF_TYPE and isinstance(o, TermId):
                inst.setdefault(o, set()).add(s)
                for c in sub.get(o, ()):
                    emit(s, RDF_TYPE, c)
            elif p == RDFS_DOMAIN and isinstance(o, TermId):
                dom.setdefault(s, set()).add(o)
                for (x, _y) in uses.get(s, ()):
                    emit(x, RDF_TYPE, o)
            elif p == RDFS_RANGE and isinstance(o, TermId):
                rng.setdefault(s, set()).add(o)
                for (_x, y) in uses.get(s, ()):
                    if isinstance(y, TermId):
                        emit(y, RDF_TYPE, o)
            elif p == ALIGNED_WITH and isinstance(o, TermId):
                aligned.setdefault(s, set()).add(o)
                emit(o, ALIGNED_WITH, s)
                for c in aligned.get(o, ()):
                    emit(s, ALIGNED_WITH, c)
                for z in aligned.get(s, ()):
                    emit(o, ALIGNED_WITH, z)

        self.inferred = derived
        self._index_closure(known, sub)
        self.closed = True
        self.version += 1
        return self

    def _index_closure(self, known: set[Triple], sub: dict[TermId, set[TermId]]) -> None:
        disjoint: set[tuple[TermId, TermId]] = set()
        for t in known:
            if t.predicate == DISJOINT_WITH and isinstance(t.obj, TermId):
                disjoint.add((t.subject, t.obj))
                disjoint.add((t.obj, t.subject))
        offenders = []
        for term in sub:
            supers = sub[term]
            for a, b in disjoint:
                if a in supers and b in supers:
                    offenders.append(term)
                    break
        if offenders:
            worst = min(offenders, key=str)
            raise InconsistentCategory(f"{worst} is a subclass of two disjoint roots")

        self._categories = {}
        for term, supers in sub.items():
            roots = [root for root in DOLCE_ROOTS if root in supers]
            if len(roots) == 1:
                self._categories[term] = DOLCE_ROOTS[roots[0]]

        aligned_pairs = [
            (t.subject, t.obj)
            for t in known
            if t.predicate == ALIGNED_WITH and isinstance(t.obj, TermId)
        ]
        flagged = {t.subject for t in known if t.predicate == CANONICAL_FLAG}
        self._alignment_classes = []
        self._canonical_of = {}
        for component in self._components(aligned_pairs):
            canon = sorted(component & flagged, key=str)
            self._alignment_classes.append(frozenset(component))
            if len(canon) == 1:
                for member in component:
                    self._canonical_of[member] = canon[0]

        self._terms = set()
        for t in known:
            self._terms.add(t.subject)
            self._terms.add(t.predicate)
            if isinstance(t.obj, TermId):
                self._terms.add(t.obj)

        labels: list[tuple[str, TermId]] = []
        for t in sorted(known, key=triple_sort_key):
            if t.predicate == RDFS_LABEL and isinstance(t.obj, str):
                labels.append((t.obj, t.subject))
        self._alias_exact = {}
        self._alias_folded = {}

        def add_alias(alias: str, term: TermId) -> None:
            canonical = self._canonical_of.get(term, term)
            self._alias_exact.setdefault(alias, set()).add(canonical)
            self._alias_folded.setdefault(alias.lower(), set()).add(canonical)

        for alias, term in labels:
            add_alias(alias, term)
        nameable = set(self._categories) | {
            m for cls in self._alignment_classes for m in cls
        }
        for term in sorted(nameable, key=str):
            add_alias(term.local, term)
            add_alias(str(term), term)

        self._scales = {}
        for t in known:
            if t.predicate == CODE_SCALE_MAX and isinstance(t.obj, int) and not isinstance(t.obj, bool):
                self._scales[t.subject] = t.obj
        self._canonical_units = {}
        for t in known:
            if t.predicate == CANONICAL_UNIT and isinstance(t.obj, TermId):
                self._canonical_units[t.subject] = t.obj

    # -- queries ----------------------------------------------------------

    def _require_closed(self) -> None:
        if not self.closed:
            raise StoreNotClosed("closure not computed; call infer_closure() first")

    def resolve_term(self, native: str) -> TermId:
        """Map a native property name to its canonical term.

        Exact label/alias match wins; a case-insensitive match is tried
        second. Ambiguous matches are reported as unresolvable rather than
        guessed.
        """
        self._require_closed()
        for index, key in ((self._alias_exact, native), (self._alias_folded, native.lower())):
            hits = index.get(key)
            if hits:
                if len(hits) > 1:
                    raise Unresolvable(f"{native!r} is ambiguous: {sorted(map(str, hits))}")
                return next(iter(hits))
        raise Unresolvable(native)

    def canonical_of(self, term: TermId) -> TermId:
        self._require_closed()
        return self._canonical_of.get(term, term)

    def classify(self, term: TermId) -> DolceCategory:
        self._require_closed()
        try:
            return self._categories[term]
        except KeyError:
            raise Unclassified(str(term)) from None

    def knows(self, term: TermId) -> bool:
        self._require_closed()
        return term in self._terms

    def query(
        self,
        subject: TermId | None = None,
        predicate: TermId | None = None,
        obj: Node | None = None,
    ) -> list[Triple]:
        """Match a (s?, p?, o?) pattern over asserted plus inferred triples.

        ``None`` is a wildcard. Results come back in deterministic
        (subject, predicate, object) lexicographic order.
        """
        self._require_closed()
        out = []
        for t in self.asserted | self.inferred:
            if subject is not None and t.subject != subject:
                continue
            if predicate is not None and t.predicate != predicate:
                continue
            if obj is not None and t.obj != obj:
                continue
            out.append(t)
        out.sort(key=triple_sort_key)
        return out

    def triples(self) -> set[Triple]:
        return self.asserted | self.inferred

    # -- categorical scales and units -------------------------------------

    def declare_scale(self, term: TermId, max_code: int) -> None:
        """Declare codes 0..=max_code valid for a quality term."""
        if max_code < 0:
            raise UndeclaredScale(f"negative max_code {max_code}")
        if self.classify(term) is not DolceCategory.QUALITY:
            raise Unclassified(f"{term} is not a quality term")
        self.asserted.add(Triple(term, CODE_SCALE_MAX, max_code))
        self._scales[term] = max_code
        self.version += 1

    def get_scale(self, term: TermId) -> int:
        self._require_closed()
        try:
            return self._scales[term]
        except KeyError:
            raise UndeclaredScale(str(term)) from None

    def canonical_unit_of(self, term: TermId) -> TermId | None:
        self._require_closed()
        return self._canonical_units.get(term)

    def alignment_classes(self) -> list[frozenset[TermId]]:
        self._require_closed()
        return list(self._alignment_classes)


def load_ontology(texts: Iterable[str]) -> OntologyStore:
    """Build and close a store from document texts, in order."""
    store = OntologyStore()
    for text in texts:
        store.bulk_load(text)
    return store.infer_closure()


def default_ontology() -> OntologyStore:
    """The shipped upper ontology, environmental vocabulary, and alignments."""
    texts = [
        resources.files("semdews").joinpath(f"assets/{name}").read_text("utf-8")
        for name in ONTOLOGY_ASSETS
    ]
    return load_ontology(texts)
