"""Parsers for the n-triples subset and rule files, plus the frequency filter.

Accepted triple grammar, one statement per line (UTF-8, LF or CRLF):

    <full-iri> <full-iri> <full-iri> .
    prefix:name prefix:name prefix:name .

Blank lines and `#` comments are skipped. Literals, blank nodes, and
anything else are reported as diagnostics; parsing is fail-soft unless
strict mode is requested. Rule files hold one rule per line:

    subClassOf Woman Human
    transitive ancestorOf

with keywords subClassOf, disjointWith, domain, range, subPropertyOf,
inverseOf, symmetric, transitive.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import IO, Iterable, Union

from .okb import ClassFact, OkbGraph, OkbSchema, RelationFact

TYPE_PREDICATE = "rdf:type"

RULE_KEYWORDS = {
    "subClassOf": 2,
    "disjointWith": 2,
    "domain": 2,
    "range": 2,
    "subPropertyOf": 2,
    "inverseOf": 2,
    "symmetric": 1,
    "transitive": 1,
}


class ParseError(Exception):
    """Raised in strict mode on the first malformed line."""


@dataclass(frozen=True)
class Diagnostic:
    line: int  # 1-based
    message: str

    def __str__(self) -> str:
        return f"line {self.line}: {self.message}"


@dataclass(frozen=True)
class Triple:
    subject: str
    predicate: str
    object: str


@dataclass
class TripleDoc:
    triples: list[Triple] = field(default_factory=list)
    diagnostics: list[Diagnostic] = field(default_factory=list)


@dataclass(frozen=True)
class Rule:
    kind: str
    args: tuple[str, ...]

    def __post_init__(self) -> None:
        if self.kind not in RULE_KEYWORDS:
            raise ValueError(f"unknown rule keyword: {self.kind}")
        if len(self.args) != RULE_KEYWORDS[self.kind]:
            raise ValueError(
                f"{self.kind} takes {RULE_KEYWORDS[self.kind]} arguments, "
                f"got {len(self.args)}"
            )


@dataclass
class RuleSet:
    rules: tuple[Rule, ...] = ()

    def of_kind(self, kind: str) -> list[Rule]:
        return [r for r in self.rules if r.kind == kind]


@dataclass
class RuleDoc:
    ruleset: RuleSet
    diagnostics: list[Diagnostic] = field(default_factory=list)


def _lines(text: Union[str, IO[str]]) -> Iterable[str]:
    if isinstance(text, str):
        return text.splitlines()
    return (line.rstrip("\n").rstrip("\r") for line in text)


def _parse_term(token: str) -> str:
    """Return the canonical name for one term token, or raise ValueError."""
    if token.startswith("<"):
        if not token.endswith(">") or len(token) < 3:
            raise ValueError(f"malformed IRI: {token}")
        inner = token[1:-1]
        if any(ch.isspace() for ch in inner) or "<" in inner or ">" in inner:
            raise ValueError(f"malformed IRI: {token}")
        return inner
    if token.startswith('"'):
        raise ValueError("literals are not supported")
    if token.startswith("_:"):
        raise ValueError("blank nodes are not supported")
    if ":" not in token:
        raise ValueError(f"not an IRI or prefixed name: {token}")
    return token


def parse_ntriples(text: Union[str, IO[str]], strict: bool = False) -> TripleDoc:
    """Parse the n-triples subset; malformed lines become diagnostics."""
    doc = TripleDoc()
    for lineno, raw in enumerate(_lines(text), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        try:
            if not line.endswith("."):
                raise ValueError("missing terminating '.'")
            body = line[:-1].strip()
            tokens = body.split()
            if len(tokens) != 3:
                raise ValueError(f"expected 3 terms before '.', got {len(tokens)}")
            s, p, o = (_parse_term(tok) for tok in tokens)
        except ValueError as exc:
            if strict:
                raise ParseError(f"line {lineno}: {exc}") from None
            doc.diagnostics.append(Diagnostic(lineno, str(exc)))
            continue
        doc.triples.append(Triple(s, p, o))
    return doc


def _serialize_term(name: str) -> str:
    bare_ok = (
        ":" in name
        and not name.startswith("<")
        and not name.startswith('"')
        and not name.startswith("_:")
        and "<" not in name
        and ">" not in name
        and not any(ch.isspace() for ch in name)
    )
    return name if bare_ok else f"<{name}>"


def serialize_ntriples(doc: Union[TripleDoc, Iterable[Triple]]) -> str:
    """Canonical one-triple-per-line form; parse(serialize(x)) is a fixpoint."""
    triples = doc.triples if isinstance(doc, TripleDoc) else doc
    lines = [
        f"{_serialize_term(t.subject)} {_serialize_term(t.predicate)} "
        f"{_serialize_term(t.object)} ."
        for t in triples
    ]
    return "\n".join(lines) + ("\n" if lines else "")


def parse_rules(text: Union[str, IO[str]]) -> RuleDoc:
    """Parse a rule file; unknown keywords and bad arities become diagnostics."""
    rules: list[Rule] = []
    diagnostics: list[Diagnostic] = []
    for lineno, raw in enumerate(_lines(text), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        tokens = line.split()
        kind, args = tokens[0], tokens[1:]
        if kind not in RULE_KEYWORDS:
            diagnostics.append(Diagnostic(lineno, f"unknown rule keyword: {kind}"))
            continue
        if len(args) != RULE_KEYWORDS[kind]:
            diagnostics.append(
                Diagnostic(
                    lineno,
                    f"{kind} takes {RULE_KEYWORDS[kind]} arguments, got {len(args)}",
                )
            )
            continue
        rules.append(Rule(kind, tuple(args)))
    return RuleDoc(RuleSet(tuple(rules)), diagnostics)


def serialize_rules(ruleset: RuleSet) -> str:
    lines = [" ".join((r.kind,) + r.args) for r in ruleset.rules]
    return "\n".join(lines) + ("\n" if lines else "")


# -- graph construction ------------------------------------------------------

# Which rule argument positions name classes vs. relations.
_CLASS_ARGS = {"subClassOf": (0, 1), "disjointWith": (0, 1), "domain": (1,), "range": (1,)}
_RELATION_ARGS = {
    "domain": (0,),
    "range": (0,),
    "subPropertyOf": (0, 1),
    "inverseOf": (0, 1),
    "symmetric": (0,),
    "transitive": (0,),
}


def schema_from(doc: TripleDoc, rules: RuleSet) -> OkbSchema:
    """Class/relation names in first-seen order: document first, then rules."""
    classes: dict[str, None] = {}
    relations: dict[str, None] = {}
    for t in doc.triples:
        if t.predicate == TYPE_PREDICATE:
            classes.setdefault(t.object)
        else:
            relations.setdefault(t.predicate)
    for rule in rules.rules:
        for pos in _CLASS_ARGS.get(rule.kind, ()):
            classes.setdefault(rule.args[pos])
        for pos in _RELATION_ARGS.get(rule.kind, ()):
            relations.setdefault(rule.args[pos])
    return OkbSchema(tuple(classes), tuple(relations))


def build_graph(doc: TripleDoc, rules: RuleSet = RuleSet()) -> OkbGraph:
    """Intern individuals and store the document's facts as positives."""
    schema = schema_from(doc, rules)
    graph = OkbGraph(schema)
    for t in doc.triples:
        if t.predicate == TYPE_PREDICATE:
            i = graph.intern(t.subject)
            graph.add_fact(ClassFact(i, schema.class_index(t.object), 1))
        else:
            s = graph.intern(t.subject)
            o = graph.intern(t.object)
            graph.add_fact(RelationFact(s, schema.relation_index(t.predicate), o, 1))
    return graph


def document_from_graph(graph: OkbGraph) -> TripleDoc:
    """Positive facts as triples (negative labels have no n-triples form)."""
    doc = TripleDoc()
    for fact in graph.iter_class_facts():
        if fact.value == 1:
            doc.triples.append(
                Triple(
                    graph.name_of(fact.individual),
                    TYPE_PREDICATE,
                    graph.schema.classes[fact.class_index],
                )
            )
    for s, r, t, sign in graph.edges:
        if sign == 1:
            doc.triples.append(
                Triple(graph.name_of(s), graph.schema.relations[r], graph.name_of(t))
            )
    return doc


# -- frequency filter ---------------------------------------------------------


def frequency_filter(graph: OkbGraph, threshold: float) -> OkbSchema:
    """Schema reduced to predicates asserted for >= threshold of individuals.

    A class counts the individuals with a non-zero label; a relation counts
    the distinct individuals incident to at least one of its edges.
    """
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold must be in [0, 1], got {threshold}")
    n = graph.n_individuals
    class_counts = [0] * graph.schema.n_classes
    for (_, c), _v in graph.class_labels.items():
        class_counts[c] += 1
    rel_members: list[set[int]] = [set() for _ in range(graph.schema.n_relations)]
    for s, r, t, _sign in graph.edges:
        rel_members[r].add(s)
        rel_members[r].add(t)

    def keeps(count: int) -> bool:
        if n == 0:
            return True
        return count / n >= threshold

    classes = [
        name for c, name in enumerate(graph.schema.classes) if keeps(class_counts[c])
    ]
    relations = [
        name
        for r, name in enumerate(graph.schema.relations)
        if keeps(len(rel_members[r]))
    ]
    return OkbSchema(tuple(classes), tuple(relations))


def project(graph: OkbGraph, schema: OkbSchema) -> OkbGraph:
    """Re-index the graph onto a reduced schema, keeping ids stable."""
    out = OkbGraph(schema)
    for i in graph.individuals():
        out.intern(graph.name_of(i))
    for (i, c), v in graph.class_labels.items():
        name = graph.schema.classes[c]
        if schema.has_class(name):
            out.add_fact(ClassFact(i, schema.class_index(name), v))
    for s, r, t, sign in graph.edges:
        name = graph.schema.relations[r]
        if schema.has_relation(name):
            out.add_fact(RelationFact(s, schema.relation_index(name), t, sign))
    return out


def load_okb(facts_path: str, rules_path: str | None = None, strict: bool = False):
    """Convenience loader: returns (graph, ruleset, doc, rule diagnostics)."""
    with io.open(facts_path, "r", encoding="utf-8") as fh:
        doc = parse_ntriples(fh, strict=strict)
    ruledoc = RuleDoc(RuleSet())
    if rules_path is not None:
        with io.open(rules_path, "r", encoding="utf-8") as fh:
            ruledoc = parse_rules(fh)
    graph = build_graph(doc, ruledoc.ruleset)
    return graph, ruledoc.ruleset, doc, ruledoc.diagnostics
