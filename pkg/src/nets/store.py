"""Store lifecycle: materialization, bit-exact persistence, query evaluation.

Weights (`.rtnw`) and embeddings (`.rtne`) are written as little-endian
binary: 4 magic bytes, a 4-byte format version, a 32-byte schema digest, a
shape header, then raw float64 payloads. Loading refuses files whose
magic, version, or digest do not match and reports truncation separately.

Queries are conjunctions of atoms over one of two backends: `learned`
answers from the prediction heads over materialized embeddings, `oracle`
answers from stored facts (intended for a closure graph), which makes the
join machinery exactly testable.
"""

from __future__ import annotations

import logging
import struct
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Optional, Union

import numpy as np

from .model import (
    EmbeddingTable,
    RtnConfig,
    RtnParameters,
    apply_update,
    decide,
    init_embeddings,
    predict_classes,
    predict_relations,
)
from .okb import Direction, NotFoundError, OkbGraph, OkbSchema
from .tensor import TensorLayerWeights, UpdateWeights

logger = logging.getLogger(__name__)

WEIGHTS_MAGIC = b"RTNW"
EMBEDDINGS_MAGIC = b"RTNE"
FORMAT_VERSION = 1


class StoreFileError(Exception):
    """Base class for persistence failures."""


class FormatRefusedError(StoreFileError):
    """Bad magic bytes or unsupported format version."""


class SchemaMismatchError(StoreFileError):
    """The file's schema digest does not match the current schema."""


class CorruptFileError(StoreFileError):
    """The file ended early or carries trailing bytes."""


# -- materialization -----------------------------------------------------------


def materialize(
    graph: OkbGraph,
    params: RtnParameters,
    rounds: int,
    seed: Union[int, np.random.Generator],
) -> EmbeddingTable:
    """Feature-initialize embeddings, then sweep all edges `rounds` times.

    Each round visits every positive edge once in seeded-random order and
    updates a coin-chosen endpoint. Isolated individuals keep their
    initial vectors.
    """
    if params.schema.digest() != graph.schema.digest():
        raise SchemaMismatchError(
            "parameters were trained for a different schema than this graph"
        )
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng([seed, 2])
    table = init_embeddings(graph, params)
    edges = graph.positive_edges()
    for _ in range(rounds):
        order = rng.permutation(len(edges))
        coins = rng.integers(2, size=len(edges))
        for pos, coin in zip(order, coins):
            endpoint = Direction.SOURCE if coin == 0 else Direction.TARGET
            apply_update(params, table, edges[int(pos)], endpoint)
    return table


# -- binary persistence ----------------------------------------------------------


def _write_array(fh, a: np.ndarray) -> None:
    fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def _read_exact(fh, count: int) -> bytes:
    data = fh.read(count)
    if len(data) != count:
        raise CorruptFileError(f"file truncated: wanted {count} bytes, got {len(data)}")
    return data


def _read_array(fh, shape: tuple[int, ...]) -> np.ndarray:
    count = int(np.prod(shape)) if shape else 1
    raw = _read_exact(fh, 8 * count)
    return np.frombuffer(raw, dtype="<f8").reshape(shape).astype(np.float64)


def _check_header(fh, magic: bytes, schema: OkbSchema) -> None:
    got = _read_exact(fh, 4)
    if got != magic:
        raise FormatRefusedError(f"bad magic bytes: expected {magic!r}, got {got!r}")
    (version,) = struct.unpack("<I", _read_exact(fh, 4))
    if version != FORMAT_VERSION:
        raise FormatRefusedError(f"unsupported format version {version}")
    digest = _read_exact(fh, 32)
    if digest != schema.digest():
        raise SchemaMismatchError("schema digest in file does not match current schema")


def _expect_eof(fh) -> None:
    if fh.read(1):
        raise CorruptFileError("trailing bytes after payload")


def save_weights(params: RtnParameters, path: str) -> None:
    cfg = params.config
    with open(path, "wb") as fh:
        fh.write(WEIGHTS_MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(params.schema.digest())
        fh.write(
            struct.pack(
                "<IIIII",
                cfg.d,
                cfg.k_slices,
                cfg.truncation_horizon,
                params.schema.n_classes,
                params.schema.n_relations,
            )
        )
        fh.write(struct.pack("<d", cfg.init_scale))
        fh.write(struct.pack("<q", cfg.seed))
        fh.write(struct.pack("<B", 0 if params.projection is None else 1))
        for a in params.arrays():
            _write_array(fh, a)


def load_weights(path: str, schema: OkbSchema) -> RtnParameters:
    """Bit-exact inverse of save_weights; validates magic, version, digest."""
    with open(path, "rb") as fh:
        _check_header(fh, WEIGHTS_MAGIC, schema)
        d, k, horizon, n_classes, n_relations = struct.unpack(
            "<IIIII", _read_exact(fh, 20)
        )
        (init_scale,) = struct.unpack("<d", _read_exact(fh, 8))
        (seed,) = struct.unpack("<q", _read_exact(fh, 8))
        (has_projection,) = struct.unpack("<B", _read_exact(fh, 1))
        if n_classes != schema.n_classes or n_relations != schema.n_relations:
            raise SchemaMismatchError(
                "shape header disagrees with the schema despite matching digest"
            )
        config = RtnConfig(
            d=d,
            k_slices=k,
            truncation_horizon=horizon,
            init_scale=init_scale,
            seed=seed,
        )
        update_weights = [
            [
                UpdateWeights(
                    _read_array(fh, (d, k)),
                    _read_array(fh, (k, d, d)),
                    _read_array(fh, (k, d)),
                )
                for _ in range(2)
            ]
            for _ in range(n_relations)
        ]
        class_head = _read_array(fh, (n_classes, 3, d))
        pair_weights = TensorLayerWeights(
            _read_array(fh, (d, k)),
            _read_array(fh, (k, d, d)),
            _read_array(fh, (k, 2 * d)),
            _read_array(fh, (k,)),
        )
        relation_head = _read_array(fh, (n_relations, 3, d))
        projection = _read_array(fh, (d, n_classes)) if has_projection else None
        _expect_eof(fh)
    return RtnParameters(
        schema, config, update_weights, class_head, pair_weights, relation_head,
        projection,
    )


def save_embeddings(table: EmbeddingTable, path: str, schema: OkbSchema) -> None:
    n, d = table.vectors.shape
    with open(path, "wb") as fh:
        fh.write(EMBEDDINGS_MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(schema.digest())
        fh.write(struct.pack("<II", n, d))
        _write_array(fh, table.vectors)
        fh.write(np.ascontiguousarray(table.dirty, dtype=np.uint8).tobytes())


def load_embeddings(
    path: str, schema: OkbSchema, expected_individuals: Optional[int] = None
) -> EmbeddingTable:
    with open(path, "rb") as fh:
        _check_header(fh, EMBEDDINGS_MAGIC, schema)
        n, d = struct.unpack("<II", _read_exact(fh, 8))
        if expected_individuals is not None and n != expected_individuals:
            raise SchemaMismatchError(
                f"file holds {n} individuals, graph has {expected_individuals}"
            )
        vectors = _read_array(fh, (n, d))
        dirty = np.frombuffer(_read_exact(fh, n), dtype=np.uint8).astype(bool)
        _expect_eof(fh)
    return EmbeddingTable(vectors, dirty)


# -- queries ----------------------------------------------------------------------


class QueryError(Exception):
    """Malformed query (arity, unknown predicate handled via NotFoundError)."""


@dataclass(frozen=True)
class Var:
    name: str  # "?X"-style


Term = Union[Var, str]


@dataclass(frozen=True)
class Atom:
    predicate: str
    args: tuple[Term, ...]


@dataclass(frozen=True)
class Query:
    atoms: tuple[Atom, ...]

    def __post_init__(self) -> None:
        if not self.atoms:
            raise QueryError("a query needs at least one atom")

    def variables(self) -> tuple[str, ...]:
        """Variable names in first-appearance order."""
        seen: dict[str, None] = {}
        for atom in self.atoms:
            for arg in atom.args:
                if isinstance(arg, Var):
                    seen.setdefault(arg.name)
        return tuple(seen)


@dataclass
class BindingTable:
    variables: tuple[str, ...]
    rows: list[tuple[int, ...]]


@dataclass
class StoreState:
    """An answerable store: a graph plus either embeddings or stored facts."""

    graph: OkbGraph
    backend: str = "learned"  # or "oracle"
    params: Optional[RtnParameters] = None
    table: Optional[EmbeddingTable] = None
    hop_limit: int = 2
    full_scan: bool = False
    _class_rows: dict[int, np.ndarray] = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        if self.backend not in ("learned", "oracle"):
            raise ValueError(f"unknown backend: {self.backend}")

    @property
    def materialized(self) -> bool:
        if self.backend == "oracle":
            return True
        return self.params is not None and self.table is not None

    # prediction under the decision rule (argmax over {1, 0, −1}, ties -> 0)

    def class_truth(self, individual: int, class_index: int) -> int:
        if self.backend == "oracle":
            return self.graph.class_value(individual, class_index)
        rows = self._class_rows.get(individual)
        if rows is None:
            rows = predict_classes(self.params, self.table.vectors[individual])
            self._class_rows[individual] = rows
        return decide(rows[class_index])

    def relation_truth(self, source: int, relation_index: int, target: int) -> int:
        if self.backend == "oracle":
            return self.graph.edge_value(source, relation_index, target)
        rows = predict_relations(
            self.params, self.table.vectors[source], self.table.vectors[target]
        )
        return decide(rows[relation_index])


def _require_materialized(state: StoreState) -> None:
    if not state.materialized:
        raise QueryError("store is not materialized; load or compute embeddings first")


def _resolve_term(state: StoreState, term: Term) -> Union[Var, int]:
    if isinstance(term, Var):
        return term
    return state.graph.lookup(term)


def _hop_candidates(graph: OkbGraph, start: int, hops: int) -> list[int]:
    """Individuals within `hops` undirected steps of `start`, itself included."""
    seen = {start}
    frontier = deque([(start, 0)])
    while frontier:
        node, depth = frontier.popleft()
        if depth == hops:
            continue
        for _rel, _side, other in graph.neighbors(node):
            if other not in seen:
                seen.add(other)
                frontier.append((other, depth + 1))
    return sorted(seen)


def eval_atom(state: StoreState, atom: Atom) -> BindingTable:
    """Bindings satisfying one atom under the store's decision rule."""
    _require_materialized(state)
    graph = state.graph
    schema = graph.schema
    if schema.has_class(atom.predicate):
        if len(atom.args) != 1:
            raise QueryError(f"class atom {atom.predicate} takes exactly one argument")
        return _eval_class_atom(state, schema.class_index(atom.predicate), atom.args[0])
    if schema.has_relation(atom.predicate):
        if len(atom.args) != 2:
            raise QueryError(
                f"relation atom {atom.predicate} takes exactly two arguments"
            )
        return _eval_relation_atom(
            state, schema.relation_index(atom.predicate), atom.args[0], atom.args[1]
        )
    raise NotFoundError(f"unknown predicate: {atom.predicate}")


def _eval_class_atom(state: StoreState, class_index: int, term: Term) -> BindingTable:
    resolved = _resolve_term(state, term)
    if isinstance(resolved, int):
        ok = state.class_truth(resolved, class_index) == 1
        return BindingTable((), [()] if ok else [])
    rows = [
        (i,)
        for i in state.graph.individuals()
        if state.class_truth(i, class_index) == 1
    ]
    return BindingTable((resolved.name,), rows)


def _relation_candidates(
    state: StoreState, relation_index: int, a, b
) -> Iterable[tuple[int, int]]:
    """Ordered candidate pairs for a relation atom, before truth filtering."""
    graph = state.graph
    n = graph.n_individuals
    if state.backend == "oracle":
        if isinstance(a, int) and isinstance(b, int):
            return [(a, b)]
        # walk stored edges of this relation; constants filter
        out = []
        for s, r, t, sign in graph.edges:
            if r != relation_index or sign != 1:
                continue
            if isinstance(a, int) and s != a:
                continue
            if isinstance(b, int) and t != b:
                continue
            out.append((s, t))
        return out
    # learned backend: score candidate pairs
    if isinstance(a, int) and isinstance(b, int):
        return [(a, b)]
    if isinstance(a, int):
        pool = range(n) if state.full_scan else _hop_candidates(graph, a, state.hop_limit)
        return [(a, j) for j in pool]
    if isinstance(b, int):
        pool = range(n) if state.full_scan else _hop_candidates(graph, b, state.hop_limit)
        return [(i, b) for i in pool]
    pairs = []
    for i in range(n):
        pool = range(n) if state.full_scan else _hop_candidates(graph, i, state.hop_limit)
        pairs.extend((i, j) for j in pool)
    return pairs


def _eval_relation_atom(
    state: StoreState, relation_index: int, term_a: Term, term_b: Term
) -> BindingTable:
    a = _resolve_term(state, term_a)
    b = _resolve_term(state, term_b)
    same_var = isinstance(a, Var) and isinstance(b, Var) and a.name == b.name

    variables: tuple[str, ...]
    if isinstance(a, Var) and isinstance(b, Var):
        variables = (a.name,) if same_var else (a.name, b.name)
    elif isinstance(a, Var):
        variables = (a.name,)
    elif isinstance(b, Var):
        variables = (b.name,)
    else:
        variables = ()

    rows: set[tuple[int, ...]] = set()
    for s, t in _relation_candidates(state, relation_index, a, b):
        if same_var and s != t:
            continue
        if state.relation_truth(s, relation_index, t) != 1:
            continue
        if isinstance(a, Var) and isinstance(b, Var):
            rows.add((s,) if same_var else (s, t))
        elif isinstance(a, Var):
            rows.add((s,))
        elif isinstance(b, Var):
            rows.add((t,))
        else:
            rows.add(())
    return BindingTable(variables, sorted(rows))


def _hash_join(left: BindingTable, right: BindingTable) -> BindingTable:
    shared = [v for v in right.variables if v in left.variables]
    left_pos = {v: i for i, v in enumerate(left.variables)}
    right_pos = {v: i for i, v in enumerate(right.variables)}
    right_extra = [v for v in right.variables if v not in left.variables]

    index: dict[tuple[int, ...], list[tuple[int, ...]]] = {}
    for row in right.rows:
        key = tuple(row[right_pos[v]] for v in shared)
        index.setdefault(key, []).append(tuple(row[right_pos[v]] for v in right_extra))

    out_rows: list[tuple[int, ...]] = []
    for row in left.rows:
        key = tuple(row[left_pos[v]] for v in shared)
        for extra in index.get(key, ()):
            out_rows.append(row + extra)
    return BindingTable(left.variables + tuple(right_extra), out_rows)


def _atoms_connected(query: Query) -> bool:
    if len(query.atoms) < 2:
        return True
    terms = [set(a.args) for a in query.atoms]
    linked = {0}
    changed = True
    while changed:
        changed = False
        for i, t in enumerate(terms):
            if i in linked:
                continue
            if any(t & terms[j] for j in linked):
                linked.add(i)
                changed = True
    return len(linked) == len(query.atoms)


def eval_conjunctive(state: StoreState, query: Query) -> BindingTable:
    """Hash-join the atom tables, cheapest first; rows come out sorted."""
    _require_materialized(state)
    if not _atoms_connected(query):
        logger.warning("query atoms share no terms; result is a cross product")

    cache: dict[Atom, BindingTable] = {}
    for atom in query.atoms:
        if atom not in cache:
            cache[atom] = eval_atom(state, atom)

    ordered = sorted(query.atoms, key=lambda a: (len(cache[a].rows), query.atoms.index(a)))
    result = cache[ordered[0]]
    result = BindingTable(result.variables, list(dict.fromkeys(result.rows)))
    for atom in ordered[1:]:
        result = _hash_join(result, cache[atom])

    # project columns into first-appearance order and dedup
    want = query.variables()
    pos = {v: i for i, v in enumerate(result.variables)}
    rows = sorted({tuple(row[pos[v]] for v in want) for row in result.rows})
    return BindingTable(want, rows)
