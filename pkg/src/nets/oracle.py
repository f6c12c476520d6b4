"""Ground-truth reasoner: forward-chaining fixpoint over the rule fragment.

Also provides the holdout-split protocol and corruption-based negative
sampling used to build training and evaluation data. Disjointness is the
only rule form that derives negative (−1) class labels; every other rule
derives positives.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from .ingest import RuleSet
from .okb import ClassFact, ContradictionError, OkbError, OkbGraph, RelationFact


class InconsistencyError(OkbError):
    """The fixpoint derived both 1 and −1 for one cell."""


@dataclass
class Closure:
    graph: OkbGraph
    derivation_count: int


@dataclass(frozen=True)
class ClassQuery:
    individual: int
    class_index: int
    label: int  # 1, 0, or -1


@dataclass(frozen=True)
class RelationQuery:
    source: int
    relation_index: int
    target: int
    label: int


LabeledQuery = Union[ClassQuery, RelationQuery]


@dataclass
class Split:
    train: OkbGraph
    validation: list[LabeledQuery]
    test: list[LabeledQuery]
    closed: OkbGraph
    test_individuals: frozenset[int] = field(default_factory=frozenset)
    validation_individuals: frozenset[int] = field(default_factory=frozenset)


def closure(graph: OkbGraph, rules: RuleSet) -> Closure:
    """Least fixpoint of the rules over the graph's facts (semi-naive).

    Every fact is enqueued exactly once and fires only against the store
    built so far, so each rule instantiation is considered once.
    """
    g = graph.copy()
    schema = g.schema

    sub_of: dict[int, list[int]] = {}
    disjoint: dict[int, list[int]] = {}
    domain_of: dict[int, list[int]] = {}
    range_of: dict[int, list[int]] = {}
    super_props: dict[int, list[int]] = {}
    inverses: dict[int, list[int]] = {}
    symmetric: set[int] = set()
    transitive: set[int] = set()

    for rule in rules.rules:
        if rule.kind == "subClassOf":
            c, d = (schema.class_index(a) for a in rule.args)
            sub_of.setdefault(c, []).append(d)
        elif rule.kind == "disjointWith":
            c, d = (schema.class_index(a) for a in rule.args)
            disjoint.setdefault(c, []).append(d)
            disjoint.setdefault(d, []).append(c)
        elif rule.kind == "domain":
            r = schema.relation_index(rule.args[0])
            domain_of.setdefault(r, []).append(schema.class_index(rule.args[1]))
        elif rule.kind == "range":
            r = schema.relation_index(rule.args[0])
            range_of.setdefault(r, []).append(schema.class_index(rule.args[1]))
        elif rule.kind == "subPropertyOf":
            r, q = (schema.relation_index(a) for a in rule.args)
            super_props.setdefault(r, []).append(q)
        elif rule.kind == "inverseOf":
            r, q = (schema.relation_index(a) for a in rule.args)
            inverses.setdefault(r, []).append(q)
            inverses.setdefault(q, []).append(r)
        elif rule.kind == "symmetric":
            symmetric.add(schema.relation_index(rule.args[0]))
        elif rule.kind == "transitive":
            transitive.add(schema.relation_index(rule.args[0]))

    # out/in successor indexes, needed only for transitive join steps
    rel_out: dict[int, dict[int, set[int]]] = {r: {} for r in transitive}
    rel_in: dict[int, dict[int, set[int]]] = {r: {} for r in transitive}

    queue: deque = deque()
    derived = 0

    def push_class(i: int, c: int, value: int) -> None:
        nonlocal derived
        existing = g.class_value(i, c)
        if existing == value:
            return
        if existing == -value:
            raise InconsistencyError(
                f"closure derived both 1 and -1 for class cell "
                f"({g.name_of(i)}, {schema.classes[c]})"
            )
        g.add_fact(ClassFact(i, c, value))
        derived += 1
        queue.append(("c", i, c, value))

    def push_edge(s: int, r: int, t: int) -> None:
        nonlocal derived
        existing = g.edge_value(s, r, t)
        if existing == 1:
            return
        if existing == -1:
            raise InconsistencyError(
                f"closure derived a positive edge where a negative one is stored: "
                f"({g.name_of(s)}, {schema.relations[r]}, {g.name_of(t)})"
            )
        g.add_fact(RelationFact(s, r, t, 1))
        derived += 1
        _index_edge(s, r, t)
        queue.append(("r", s, r, t))

    def _index_edge(s: int, r: int, t: int) -> None:
        if r in transitive:
            rel_out[r].setdefault(s, set()).add(t)
            rel_in[r].setdefault(t, set()).add(s)

    # seed with the input facts
    for (i, c), v in list(g.class_labels.items()):
        queue.append(("c", i, c, v))
    for s, r, t, sign in list(g.edges):
        if sign == 1:
            _index_edge(s, r, t)
            queue.append(("r", s, r, t))

    while queue:
        item = queue.popleft()
        if item[0] == "c":
            _, i, c, value = item
            if value != 1:
                continue  # negative labels fire no rule
            for d in sub_of.get(c, ()):
                push_class(i, d, 1)
            for d in disjoint.get(c, ()):
                push_class(i, d, -1)
        else:
            _, s, r, t = item
            for c in domain_of.get(r, ()):
                push_class(s, c, 1)
            for c in range_of.get(r, ()):
                push_class(t, c, 1)
            for q in super_props.get(r, ()):
                push_edge(s, q, t)
            for q in inverses.get(r, ()):
                push_edge(t, q, s)
            if r in symmetric:
                push_edge(t, r, s)
            if r in transitive:
                # join the delta edge against everything indexed so far
                for u in list(rel_out[r].get(t, ())):
                    push_edge(s, r, u)
                for u in list(rel_in[r].get(s, ())):
                    push_edge(u, r, t)

    return Closure(g, derived)


# -- holdout protocol ----------------------------------------------------------

_REJECTION_CAP = 100


def _as_graph(closed: Union[Closure, OkbGraph]) -> OkbGraph:
    return closed.graph if isinstance(closed, Closure) else closed


def holdout_split(
    closed: Union[Closure, OkbGraph],
    n_test: int,
    n_valid: int,
    seed: Union[int, np.random.Generator],
) -> Split:
    """Remove two disjoint individual samples and turn their facts into queries.

    Every fact touching a sampled individual leaves the training graph and
    becomes a labeled query of that individual's set, joined by an equal
    number of unknown-labeled cells sampled near the removed facts.
    """
    graph = _as_graph(closed)
    n = graph.n_individuals
    if n_test + n_valid >= n:
        raise ValueError(
            f"cannot hold out {n_test}+{n_valid} individuals from {n}"
        )
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)

    chosen = rng.choice(n, size=n_test + n_valid, replace=False) if n_test + n_valid else []
    test_ids = frozenset(int(i) for i in chosen[:n_test])
    valid_ids = frozenset(int(i) for i in chosen[n_test:])
    held = test_ids | valid_ids

    train = OkbGraph(graph.schema)
    for i in graph.individuals():
        train.intern(graph.name_of(i))

    test: list[LabeledQuery] = []
    valid: list[LabeledQuery] = []

    def bucket_for(i: int) -> list[LabeledQuery]:
        return test if i in test_ids else valid

    removed_class: list[ClassQuery] = []
    for (i, c), v in graph.class_labels.items():
        if i in held:
            q = ClassQuery(i, c, v)
            removed_class.append(q)
            bucket_for(i).append(q)
        else:
            train.add_fact(ClassFact(i, c, v))

    removed_rel: list[RelationQuery] = []
    for s, r, t, sign in graph.edges:
        if s in held or t in held:
            owner = s if s in held else t
            q = RelationQuery(s, r, t, sign)
            removed_rel.append(q)
            bucket_for(owner).append(q)
        else:
            train.add_fact(RelationFact(s, r, t, sign))

    # one unknown-labeled cell per removed fact, anchored at the held individual
    taken: set[tuple] = set()
    n_classes = graph.schema.n_classes
    for q in removed_class:
        owner = q.individual
        for _ in range(_REJECTION_CAP):
            c = int(rng.integers(n_classes))
            if graph.class_value(owner, c) == 0 and ("c", owner, c) not in taken:
                taken.add(("c", owner, c))
                bucket_for(owner).append(ClassQuery(owner, c, 0))
                break
    for q in removed_rel:
        owner = q.source if q.source in held else q.target
        corrupt_source = q.source != owner
        for _ in range(_REJECTION_CAP):
            other = int(rng.integers(n))
            s, t = (other, q.target) if corrupt_source else (q.source, other)
            key = ("r", s, q.relation_index, t)
            if graph.edge_value(s, q.relation_index, t) == 0 and key not in taken:
                taken.add(key)
                bucket_for(owner).append(RelationQuery(s, q.relation_index, t, 0))
                break

    return Split(
        train=train,
        validation=valid,
        test=test,
        closed=graph,
        test_individuals=test_ids,
        validation_individuals=valid_ids,
    )


def sample_negatives(
    graph: OkbGraph,
    positives: Sequence[Union[RelationFact, tuple[int, int, int]]],
    ratio: float,
    seed: Union[int, np.random.Generator],
) -> list[RelationQuery]:
    """Corrupt one endpoint of each positive, rejecting closure positives.

    Emits ceil(ratio) corruptions per positive, labeled −1 for training
    purposes; a slot that fails rejection sampling 100 times is dropped.
    """
    if ratio < 0:
        raise ValueError(f"ratio must be >= 0, got {ratio}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    per_positive = math.ceil(ratio)
    n = graph.n_individuals
    out: list[RelationQuery] = []
    if per_positive == 0 or n == 0:
        return out
    for pos in positives:
        if isinstance(pos, RelationFact):
            s, r, t = pos.source, pos.relation_index, pos.target
        else:
            s, r, t = pos
        for _ in range(per_positive):
            for _ in range(_REJECTION_CAP):
                corrupt_source = bool(rng.integers(2))
                other = int(rng.integers(n))
                cs, ct = (other, t) if corrupt_source else (s, other)
                if graph.edge_value(cs, r, ct) != 1:
                    out.append(RelationQuery(cs, r, ct, -1))
                    break
    return out


def cell_key(query: LabeledQuery) -> tuple:
    """Hashable identity of the cell a labeled query addresses."""
    if isinstance(query, ClassQuery):
        return ("class", query.class_index, query.individual)
    return ("rel", query.relation_index, query.source, query.target)


def cell_value(graph: OkbGraph, query: LabeledQuery) -> int:
    """Stored truth value of the query's cell in `graph` (0 when absent)."""
    if isinstance(query, ClassQuery):
        return graph.class_value(query.individual, query.class_index)
    return graph.edge_value(query.source, query.relation_index, query.target)
