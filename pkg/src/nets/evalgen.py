"""Synthetic OKB generator and the scoring kernel shared by training and CLI.

Two fixed rule templates are provided. `family` samples gendered
individuals and acyclic parentOf edges; subclass, disjointness,
subproperty, inverse, and transitivity rules then make the closure
strictly larger than the input whenever edges exist. `university`
samples role-typed individuals and advisor/teaches/enrolledIn edges with
domain/range rules, leaving some role assertions implicit so the reasoner
has work to do.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .ingest import Rule, RuleSet, Triple, TripleDoc, TYPE_PREDICATE
from .okb import OkbSchema

FAMILY_RULES = RuleSet(
    (
        Rule("subClassOf", ("fam:Woman", "fam:Human")),
        Rule("subClassOf", ("fam:Man", "fam:Human")),
        Rule("disjointWith", ("fam:Woman", "fam:Man")),
        Rule("subPropertyOf", ("fam:parentOf", "fam:ancestorOf")),
        Rule("transitive", ("fam:ancestorOf",)),
        Rule("inverseOf", ("fam:parentOf", "fam:childOf")),
    )
)

UNIVERSITY_RULES = RuleSet(
    (
        Rule("domain", ("uni:advisor", "uni:Student")),
        Rule("range", ("uni:advisor", "uni:Professor")),
        Rule("domain", ("uni:teaches", "uni:Professor")),
        Rule("range", ("uni:teaches", "uni:Course")),
        Rule("domain", ("uni:enrolledIn", "uni:Student")),
        Rule("range", ("uni:enrolledIn", "uni:Course")),
    )
)

_FAMILY_CLASSES = (("fam:Woman", 0.45), ("fam:Man", 0.45))
_FAMILY_RELATIONS = (("fam:parentOf", 2.0),)
_UNIVERSITY_CLASSES = (("uni:Student", 0.55), ("uni:Professor", 0.15), ("uni:Course", 0.30))
_UNIVERSITY_RELATIONS = (("uni:advisor", 0.8), ("uni:teaches", 1.2), ("uni:enrolledIn", 2.0))


def default_relations(template: str) -> tuple[tuple[str, float], ...]:
    """The template's base relation profile (name, mean degree)."""
    return _FAMILY_RELATIONS if template == "family" else _UNIVERSITY_RELATIONS


@dataclass(frozen=True)
class GenConfig:
    n_individuals: int
    template: str = "family"
    classes: Optional[tuple[tuple[str, float], ...]] = None
    relations: Optional[tuple[tuple[str, float], ...]] = None
    seed: int = 0

    def __post_init__(self) -> None:
        if self.template not in ("family", "university"):
            raise ValueError(f"unknown template: {self.template}")
        for _, rate in self.classes or ():
            if not 0.0 <= rate <= 1.0:
                raise ValueError("class base rates must be in [0, 1]")
        for _, deg in self.relations or ():
            if deg < 0.0:
                raise ValueError("mean degrees must be >= 0")


def generate(config: GenConfig) -> tuple[TripleDoc, RuleSet]:
    """Sample a document of base facts plus the template's rule set."""
    if config.template == "family":
        return _generate_family(config), FAMILY_RULES
    return _generate_university(config), UNIVERSITY_RULES


def _individual_names(prefix: str, n: int) -> list[str]:
    width = max(4, len(str(max(n - 1, 0))))
    return [f"{prefix}:i{idx:0{width}d}" for idx in range(n)]


def _sample_acyclic_edges(
    rng: np.random.Generator, n: int, count: int
) -> list[tuple[int, int]]:
    """Distinct ordered pairs oriented along a hidden permutation (no cycles)."""
    if n < 2 or count <= 0:
        return []
    rank = np.empty(n, dtype=np.int64)
    rank[rng.permutation(n)] = np.arange(n)
    edges: dict[tuple[int, int], None] = {}
    attempts = 0
    while len(edges) < count and attempts < 20 * count + 100:
        attempts += 1
        a = int(rng.integers(n))
        b = int(rng.integers(n))
        if a == b:
            continue
        pair = (a, b) if rank[a] < rank[b] else (b, a)
        edges.setdefault(pair)
    return list(edges)


def _generate_family(config: GenConfig) -> TripleDoc:
    rng = np.random.default_rng([config.seed, 5])
    n = config.n_individuals
    names = _individual_names("fam", n)
    classes = config.classes or _FAMILY_CLASSES
    relations = config.relations or _FAMILY_RELATIONS
    doc = TripleDoc()
    draws = rng.random(n)
    for i in range(n):
        edge = 0.0
        for cls, rate in classes:
            if edge <= draws[i] < edge + rate:
                doc.triples.append(Triple(names[i], TYPE_PREDICATE, cls))
                break
            edge += rate
    for rel, mean_degree in relations:
        count = int(round(mean_degree * n / 2))
        for a, b in _sample_acyclic_edges(rng, n, count):
            doc.triples.append(Triple(names[a], rel, names[b]))
    return doc


def _generate_university(config: GenConfig) -> TripleDoc:
    rng = np.random.default_rng([config.seed, 6])
    n = config.n_individuals
    names = _individual_names("uni", n)
    classes = config.classes or _UNIVERSITY_CLASSES
    relations = config.relations or _UNIVERSITY_RELATIONS
    doc = TripleDoc()
    if n == 0:
        return doc

    roles = np.zeros(n, dtype=np.int64)  # index into `classes`
    draws = rng.random(n)
    for i in range(n):
        edge = 0.0
        for role, (_, rate) in enumerate(classes):
            edge += rate
            if draws[i] < edge:
                roles[i] = role
                break
        else:
            roles[i] = len(classes) - 1
    groups = [np.flatnonzero(roles == role) for role in range(len(classes))]

    # role of (source, target) for each template relation
    ends = {"uni:advisor": (0, 1), "uni:teaches": (1, 2), "uni:enrolledIn": (0, 2)}
    typed = set(np.flatnonzero(rng.random(n) < 0.75))
    edge_list: list[tuple[str, int, int]] = []
    for rel, mean_degree in relations:
        src_role, tgt_role = ends.get(rel, (0, min(1, len(classes) - 1)))
        src_pool, tgt_pool = groups[src_role], groups[tgt_role]
        if len(src_pool) == 0 or len(tgt_pool) == 0:
            continue
        count = int(round(mean_degree * n / 2))
        seen: set[tuple[str, int, int]] = set()
        attempts = 0
        while len(seen) < count and attempts < 20 * count + 100:
            attempts += 1
            a = int(src_pool[int(rng.integers(len(src_pool)))])
            b = int(tgt_pool[int(rng.integers(len(tgt_pool)))])
            if a == b:
                continue
            key = (rel, a, b)
            if key not in seen:
                seen.add(key)
                edge_list.append(key)
    if edge_list:
        typed.discard(edge_list[0][1])  # guarantee at least one derivable role
    for i in sorted(typed):
        doc.triples.append(Triple(names[i], TYPE_PREDICATE, classes[roles[i]][0]))
    for rel, a, b in edge_list:
        doc.triples.append(Triple(names[a], rel, names[b]))
    return doc


# -- metrics -------------------------------------------------------------------


@dataclass(frozen=True)
class PredicateMetrics:
    accuracy: float
    precision: float
    recall: float
    f1: float
    n_cells: int
    n_gold_positive: int


@dataclass
class Metrics:
    per_predicate: dict[str, PredicateMetrics] = field(default_factory=dict)
    macro_accuracy: float = 0.0
    macro_f1: float = 0.0


def score(
    predictions: Mapping[tuple, int],
    gold: Mapping[tuple, int],
    schema: OkbSchema,
) -> Metrics:
    """Per-predicate accuracy over {1,0,−1} plus positive-class P/R/F1.

    Cell keys are ("class", class_index, individual) or
    ("rel", relation_index, source, target). Macro accuracy averages over
    predicates with at least one gold cell; macro F1 averages over
    predicates with at least one gold positive (F1 is 0 when P+R = 0).
    """
    if set(predictions.keys()) != set(gold.keys()):
        raise ValueError("prediction and gold cell sets differ")
    groups: dict[tuple[str, int], list[tuple]] = {}
    for key in gold:
        groups.setdefault((key[0], key[1]), []).append(key)

    metrics = Metrics()
    accuracies: list[float] = []
    f1s: list[float] = []
    for (kind, idx), keys in sorted(groups.items()):
        name = schema.classes[idx] if kind == "class" else schema.relations[idx]
        correct = sum(1 for k in keys if predictions[k] == gold[k])
        tp = sum(1 for k in keys if gold[k] == 1 and predictions[k] == 1)
        fp = sum(1 for k in keys if gold[k] != 1 and predictions[k] == 1)
        fn = sum(1 for k in keys if gold[k] == 1 and predictions[k] != 1)
        n_pos = sum(1 for k in keys if gold[k] == 1)
        accuracy = correct / len(keys)
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        metrics.per_predicate[name] = PredicateMetrics(
            accuracy, precision, recall, f1, len(keys), n_pos
        )
        accuracies.append(accuracy)
        if n_pos > 0:
            f1s.append(f1)
    metrics.macro_accuracy = sum(accuracies) / len(accuracies) if accuracies else 0.0
    metrics.macro_f1 = sum(f1s) / len(f1s) if f1s else 0.0
    return metrics
