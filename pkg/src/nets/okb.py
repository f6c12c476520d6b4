"""Labeled directed multigraph representation of an ontological knowledge base.

Individuals are interned to dense integer ids starting at 0. Class membership
is stored as three-valued labels (1 true, -1 false, absence means unknown
under the open-world assumption). Binary predicates are signed directed
edges; several relations between the same pair are kept, exact duplicates
are not.

Construction is single-writer; after that a graph may be read from any
number of threads.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from enum import IntEnum
from typing import Iterable, Sequence, Union

import numpy as np


class OkbError(Exception):
    """Base class for knowledge-base errors."""


class InvalidNameError(OkbError):
    """Raised when interning an empty or whitespace-only name."""


class NotFoundError(OkbError):
    """Raised when an individual, class, or relation is unknown."""


class ContradictionError(OkbError):
    """Raised when a fact conflicts with a previously stored one."""


class SchemaError(OkbError):
    """Raised on malformed schemas or out-of-bounds predicate indices."""


class Direction(IntEnum):
    """Which end of an edge an individual occupies."""

    SOURCE = 0
    TARGET = 1


class OkbSchema:
    """Ordered class and relation names.

    The ordering is fixed after construction: it defines the component
    positions of incidence vectors and prediction rows.
    """

    def __init__(self, classes: Sequence[str], relations: Sequence[str]):
        self.classes: tuple[str, ...] = tuple(classes)
        self.relations: tuple[str, ...] = tuple(relations)
        if len(set(self.classes)) != len(self.classes):
            raise SchemaError("duplicate class names in schema")
        if len(set(self.relations)) != len(self.relations):
            raise SchemaError("duplicate relation names in schema")
        self._class_index = {name: i for i, name in enumerate(self.classes)}
        self._relation_index = {name: i for i, name in enumerate(self.relations)}

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    @property
    def n_relations(self) -> int:
        return len(self.relations)

    def class_index(self, name: str) -> int:
        try:
            return self._class_index[name]
        except KeyError:
            raise NotFoundError(f"unknown class: {name}") from None

    def relation_index(self, name: str) -> int:
        try:
            return self._relation_index[name]
        except KeyError:
            raise NotFoundError(f"unknown relation: {name}") from None

    def has_class(self, name: str) -> bool:
        return name in self._class_index

    def has_relation(self, name: str) -> bool:
        return name in self._relation_index

    def digest(self) -> bytes:
        """32-byte fingerprint of the schema; equal iff names and order are equal."""
        h = hashlib.sha256()
        for group in (self.classes, self.relations):
            h.update(len(group).to_bytes(4, "little"))
            for name in group:
                raw = name.encode("utf-8")
                h.update(len(raw).to_bytes(4, "little"))
                h.update(raw)
        return h.digest()

    def __eq__(self, other: object) -> bool:
        return (
            isinstance(other, OkbSchema)
            and self.classes == other.classes
            and self.relations == other.relations
        )

    def __repr__(self) -> str:
        return f"OkbSchema({self.n_classes} classes, {self.n_relations} relations)"


@dataclass(frozen=True)
class ClassFact:
    """Three-valued class assertion; value must be +1 or -1 (never 0)."""

    individual: int
    class_index: int
    value: int


@dataclass(frozen=True)
class RelationFact:
    """Signed directed edge; value must be +1 or -1 (never 0)."""

    source: int
    relation_index: int
    target: int
    value: int = 1


Fact = Union[ClassFact, RelationFact]

# An adjacency entry: (relation index, side this individual is on, counterpart id).
Incidence = tuple[int, Direction, int]


class OkbGraph:
    """Interned individuals, class labels, and a signed edge multiset."""

    def __init__(self, schema: OkbSchema):
        self.schema = schema
        self._names: list[str] = []
        self._ids: dict[str, int] = {}
        # (individual, class index) -> +1 / -1
        self.class_labels: dict[tuple[int, int], int] = {}
        # (source, relation index, target, sign), in insertion order
        self.edges: list[tuple[int, int, int, int]] = []
        self._edge_signs: dict[tuple[int, int, int], int] = {}
        self._adjacency: list[list[Incidence]] = []

    # -- individuals -------------------------------------------------------

    def intern(self, name: str) -> int:
        """Return the id for `name`, assigning the next dense id if new."""
        if not name or not name.strip():
            raise InvalidNameError("individual name is empty")
        existing = self._ids.get(name)
        if existing is not None:
            return existing
        new_id = len(self._names)
        self._ids[name] = new_id
        self._names.append(name)
        self._adjacency.append([])
        return new_id

    def lookup(self, name: str) -> int:
        try:
            return self._ids[name]
        except KeyError:
            raise NotFoundError(f"unknown individual: {name}") from None

    def name_of(self, individual: int) -> str:
        self._check_individual(individual)
        return self._names[individual]

    @property
    def n_individuals(self) -> int:
        return len(self._names)

    def individuals(self) -> range:
        return range(len(self._names))

    def _check_individual(self, individual: int) -> None:
        if not 0 <= individual < len(self._names):
            raise NotFoundError(f"unknown individual id: {individual}")

    # -- facts --------------------------------------------------------------

    def add_fact(self, fact: Fact) -> None:
        if isinstance(fact, ClassFact):
            self._add_class_fact(fact)
        elif isinstance(fact, RelationFact):
            self._add_relation_fact(fact)
        else:
            raise TypeError(f"not a fact: {fact!r}")

    def _add_class_fact(self, fact: ClassFact) -> None:
        if fact.value not in (1, -1):
            raise SchemaError(f"stored class value must be +1 or -1, got {fact.value}")
        if not 0 <= fact.class_index < self.schema.n_classes:
            raise SchemaError(f"class index {fact.class_index} out of bounds")
        self._check_individual(fact.individual)
        key = (fact.individual, fact.class_index)
        existing = self.class_labels.get(key)
        if existing is not None and existing != fact.value:
            raise ContradictionError(
                f"contradictory class assertion for "
                f"{self._names[fact.individual]} / {self.schema.classes[fact.class_index]}"
            )
        self.class_labels[key] = fact.value

    def _add_relation_fact(self, fact: RelationFact) -> None:
        if fact.value not in (1, -1):
            raise SchemaError(f"stored edge sign must be +1 or -1, got {fact.value}")
        if not 0 <= fact.relation_index < self.schema.n_relations:
            raise SchemaError(f"relation index {fact.relation_index} out of bounds")
        self._check_individual(fact.source)
        self._check_individual(fact.target)
        key = (fact.source, fact.relation_index, fact.target)
        existing = self._edge_signs.get(key)
        if existing is not None:
            if existing != fact.value:
                raise ContradictionError(
                    f"contradictory edge sign for "
                    f"{self._names[fact.source]} "
                    f"-{self.schema.relations[fact.relation_index]}-> "
                    f"{self._names[fact.target]}"
                )
            return  # duplicate, deduplicated
        self._edge_signs[key] = fact.value
        self.edges.append((fact.source, fact.relation_index, fact.target, fact.value))
        self._adjacency[fact.source].append(
            (fact.relation_index, Direction.SOURCE, fact.target)
        )
        self._adjacency[fact.target].append(
            (fact.relation_index, Direction.TARGET, fact.source)
        )

    # -- reads ---------------------------------------------------------------

    def class_value(self, individual: int, class_index: int) -> int:
        """Stored label for one cell, 0 when unknown."""
        return self.class_labels.get((individual, class_index), 0)

    def edge_value(self, source: int, relation_index: int, target: int) -> int:
        """Stored sign for one directed edge, 0 when absent."""
        return self._edge_signs.get((source, relation_index, target), 0)

    def incidence_vector(self, individual: int) -> np.ndarray:
        """Three-valued class membership row of length n_classes."""
        self._check_individual(individual)
        vec = np.zeros(self.schema.n_classes, dtype=np.int64)
        for c in range(self.schema.n_classes):
            vec[c] = self.class_labels.get((individual, c), 0)
        return vec

    def neighbors(self, individual: int) -> list[Incidence]:
        """All incident edges of `individual`, in insertion order."""
        self._check_individual(individual)
        return list(self._adjacency[individual])

    def positive_edges(self) -> list[tuple[int, int, int]]:
        """(source, relation, target) triples of the positively signed edges."""
        return [(s, r, t) for s, r, t, sign in self.edges if sign == 1]

    def iter_class_facts(self) -> Iterable[ClassFact]:
        for (i, c), v in self.class_labels.items():
            yield ClassFact(i, c, v)

    def iter_relation_facts(self) -> Iterable[RelationFact]:
        for s, r, t, sign in self.edges:
            yield RelationFact(s, r, t, sign)

    def copy(self) -> "OkbGraph":
        """Independent copy sharing only the (immutable) schema."""
        g = OkbGraph(self.schema)
        g._names = list(self._names)
        g._ids = dict(self._ids)
        g.class_labels = dict(self.class_labels)
        g.edges = list(self.edges)
        g._edge_signs = dict(self._edge_signs)
        g._adjacency = [list(entries) for entries in self._adjacency]
        return g

    def __repr__(self) -> str:
        return (
            f"OkbGraph({self.n_individuals} individuals, "
            f"{len(self.class_labels)} labels, {len(self.edges)} edges)"
        )
