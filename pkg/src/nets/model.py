"""The relational tensor network: per-relation update layers plus two heads.

Each relation owns two update-layer weight sets, one applied when the
individual being updated is the edge's source and one when it is the
target. Class membership is read from an embedding by a per-class
three-way softmax; relation existence is scored for an ordered pair of
embeddings by one shared pair layer followed by per-relation three-way
softmaxes. Truth values map to softmax categories as 1 -> 0, 0 -> 1,
-1 -> 2.

Gradients flow from the losses through the heads and then backwards
through each involved individual's most recent update applications, up to
the configured truncation horizon; anything older is treated as constant.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .okb import Direction, OkbGraph, OkbSchema
from .oracle import ClassQuery, LabeledQuery, RelationQuery
from .tensor import (
    TensorLayerWeights,
    UpdateWeights,
    residual_update,
    residual_update_backward,
    softmax_rows,
    tensor_layer,
    tensor_layer_backward,
)

TRUTH_VALUES = (1, 0, -1)  # category order of every three-way head
_CATEGORY_OF = {1: 0, 0: 1, -1: 2}


def category_of(value: int) -> int:
    return _CATEGORY_OF[value]


@dataclass(frozen=True)
class RtnConfig:
    """Model hyperparameters; d defaults to the class count at init time."""

    d: int
    k_slices: int = 4
    truncation_horizon: int = 2
    init_scale: float = 0.05
    seed: int = 0

    def __post_init__(self) -> None:
        if self.d < 1 or self.k_slices < 1 or self.truncation_horizon < 1:
            raise ValueError("d, k_slices, and truncation_horizon must be >= 1")


class RtnParameters:
    """All learned weights plus the fixed feature projection, if any."""

    def __init__(
        self,
        schema: OkbSchema,
        config: RtnConfig,
        update_weights: list[list[UpdateWeights]],
        class_head: np.ndarray,
        pair_weights: TensorLayerWeights,
        relation_head: np.ndarray,
        projection: Optional[np.ndarray],
    ):
        self.schema = schema
        self.config = config
        self.update_weights = update_weights  # [relation][direction]
        self.class_head = class_head  # (n_classes, 3, d)
        self.pair_weights = pair_weights  # shared across relations
        self.relation_head = relation_head  # (n_relations, 3, d)
        self.projection = projection  # (d, n_classes) or None when d == n_classes

    def arrays(self) -> list[np.ndarray]:
        """Canonical flat enumeration of every weight array (projection last)."""
        out: list[np.ndarray] = []
        for pair in self.update_weights:
            for wts in pair:
                out.extend((wts.u, wts.w, wts.v))
        out.append(self.class_head)
        out.extend(
            (self.pair_weights.u, self.pair_weights.w, self.pair_weights.v,
             self.pair_weights.b)
        )
        out.append(self.relation_head)
        if self.projection is not None:
            out.append(self.projection)
        return out

    def copy(self) -> "RtnParameters":
        return RtnParameters(
            self.schema,
            self.config,
            [
                [UpdateWeights(w.u.copy(), w.w.copy(), w.v.copy()) for w in pair]
                for pair in self.update_weights
            ],
            self.class_head.copy(),
            TensorLayerWeights(
                self.pair_weights.u.copy(),
                self.pair_weights.w.copy(),
                self.pair_weights.v.copy(),
                self.pair_weights.b.copy(),
            ),
            self.relation_head.copy(),
            None if self.projection is None else self.projection.copy(),
        )


@dataclass
class ParamGradients:
    """Gradient accumulators matching RtnParameters (projection is fixed)."""

    update_weights: list[list[UpdateWeights]]
    class_head: np.ndarray
    pair_weights: TensorLayerWeights
    relation_head: np.ndarray

    @classmethod
    def zeros(cls, params: RtnParameters) -> "ParamGradients":
        return cls(
            [
                [
                    UpdateWeights(
                        np.zeros_like(w.u), np.zeros_like(w.w), np.zeros_like(w.v)
                    )
                    for w in pair
                ]
                for pair in params.update_weights
            ],
            np.zeros_like(params.class_head),
            TensorLayerWeights(
                np.zeros_like(params.pair_weights.u),
                np.zeros_like(params.pair_weights.w),
                np.zeros_like(params.pair_weights.v),
                np.zeros_like(params.pair_weights.b),
            ),
            np.zeros_like(params.relation_head),
        )

    def arrays(self) -> list[np.ndarray]:
        out: list[np.ndarray] = []
        for pair in self.update_weights:
            for wts in pair:
                out.extend((wts.u, wts.w, wts.v))
        out.append(self.class_head)
        out.extend(
            (self.pair_weights.u, self.pair_weights.w, self.pair_weights.v,
             self.pair_weights.b)
        )
        out.append(self.relation_head)
        return out


def apply_sgd(params: RtnParameters, grads: ParamGradients, learning_rate: float) -> None:
    """In-place plain SGD step over every trainable array."""
    trainable = params.arrays()
    if params.projection is not None:
        trainable = trainable[:-1]
    for a, g in zip(trainable, grads.arrays()):
        a -= learning_rate * g


def init_params(schema: OkbSchema, config: RtnConfig) -> RtnParameters:
    """Uniform [-init_scale, +init_scale] weights from the seeded generator."""
    if schema.n_classes == 0 and schema.n_relations == 0:
        raise ValueError("cannot initialize parameters for an empty schema")
    rng = np.random.default_rng(config.seed)
    d, k = config.d, config.k_slices
    s = config.init_scale

    def draw(*shape: int) -> np.ndarray:
        return rng.uniform(-s, s, size=shape)

    update_weights = [
        [UpdateWeights(draw(d, k), draw(k, d, d), draw(k, d)) for _ in range(2)]
        for _ in range(schema.n_relations)
    ]
    class_head = draw(schema.n_classes, 3, d)
    pair_weights = TensorLayerWeights(draw(d, k), draw(k, d, d), draw(k, 2 * d), draw(k))
    relation_head = draw(schema.n_relations, 3, d)
    projection = None if d == schema.n_classes else draw(d, schema.n_classes)
    return RtnParameters(
        schema, config, update_weights, class_head, pair_weights, relation_head,
        projection,
    )


# -- embeddings -----------------------------------------------------------------


@dataclass
class EmbeddingTable:
    """One float64 vector per individual plus an updated-at-least-once flag."""

    vectors: np.ndarray  # (n, d)
    dirty: np.ndarray  # (n,) bool

    def copy(self) -> "EmbeddingTable":
        return EmbeddingTable(self.vectors.copy(), self.dirty.copy())


def init_embeddings(graph: OkbGraph, params: RtnParameters) -> EmbeddingTable:
    """Start every individual from its class-membership features.

    With d == n_classes the embedding is the incidence vector itself;
    otherwise it is the fixed projection stored with the parameters applied
    to that vector.
    """
    n = graph.n_individuals
    inc = np.zeros((n, graph.schema.n_classes), dtype=np.float64)
    for (i, c), v in graph.class_labels.items():
        inc[i, c] = v
    if params.projection is None:
        vectors = inc
    else:
        vectors = inc @ params.projection.T
    return EmbeddingTable(vectors, np.zeros(n, dtype=bool))


@dataclass(frozen=True)
class UpdateRecord:
    """One applied update: who changed, from whom, and the inputs used."""

    individual: int
    version: int  # version produced; versions count from 1
    relation: int
    direction: Direction
    counterpart: int
    counterpart_version: int
    x: np.ndarray  # embedding of `individual` before the update
    y: np.ndarray  # embedding of `counterpart` at update time


class UpdateLog:
    """Append-only history of update applications with per-individual versions."""

    def __init__(self) -> None:
        self.records: list[UpdateRecord] = []
        self.versions: dict[int, int] = {}

    def record(
        self,
        individual: int,
        relation: int,
        direction: Direction,
        counterpart: int,
        x: np.ndarray,
        y: np.ndarray,
    ) -> None:
        version = self.versions.get(individual, 0) + 1
        self.versions[individual] = version
        self.records.append(
            UpdateRecord(
                individual,
                version,
                relation,
                direction,
                counterpart,
                self.versions.get(counterpart, 0),
                x,
                y,
            )
        )


def apply_update(
    params: RtnParameters,
    table: EmbeddingTable,
    edge: tuple[int, int, int],
    endpoint: Direction,
    log: Optional[UpdateLog] = None,
) -> None:
    """Update one endpoint of `edge` in place with that relation's weights."""
    s, r, t = edge
    if endpoint == Direction.SOURCE:
        i, j = s, t
    else:
        i, j = t, s
    weights = params.update_weights[r][int(endpoint)]
    x = table.vectors[i].copy()
    y = table.vectors[j].copy()
    table.vectors[i] = residual_update(x, y, weights)
    table.dirty[i] = True
    if log is not None:
        log.record(i, r, endpoint, j, x, y)


# -- prediction heads --------------------------------------------------------------


def class_logits(params: RtnParameters, embedding: np.ndarray) -> np.ndarray:
    return np.einsum("mcd,d->mc", params.class_head, embedding)


def predict_classes(params: RtnParameters, embedding: np.ndarray) -> np.ndarray:
    """(n_classes, 3) probability rows over truth values (1, 0, −1)."""
    if embedding.shape != (params.config.d,):
        raise ValueError(
            f"embedding shape {embedding.shape} != ({params.config.d},)"
        )
    return softmax_rows(class_logits(params, embedding))


def predict_relations(
    params: RtnParameters, emb_i: np.ndarray, emb_j: np.ndarray
) -> np.ndarray:
    """(n_relations, 3) probability rows for the ordered pair (i, j)."""
    h = tensor_layer(emb_i, emb_j, params.pair_weights)
    logits = np.einsum("mch,h->mc", params.relation_head, h)
    return softmax_rows(logits)


def decide(probs_row: np.ndarray) -> int:
    """Argmax truth value of one probability row; exact ties resolve to 0."""
    top = probs_row.max()
    winners = np.flatnonzero(probs_row == top)
    if winners.shape[0] > 1:
        return 0
    return TRUTH_VALUES[int(winners[0])]


def predict_query_value(
    params: RtnParameters, table: EmbeddingTable, query: LabeledQuery
) -> int:
    """Decision-rule truth value for one labeled query's cell."""
    if isinstance(query, ClassQuery):
        row = predict_classes(params, table.vectors[query.individual])[
            query.class_index
        ]
    else:
        row = predict_relations(
            params, table.vectors[query.source], table.vectors[query.target]
        )[query.relation_index]
    return decide(row)


# -- joint loss and truncated backpropagation through the update history -----------


@dataclass(frozen=True)
class ClassItem:
    """One class-prediction training item: full three-valued target row."""

    individual: int
    targets: np.ndarray  # (n_classes,) values in {1, 0, -1}
    mask: Optional[np.ndarray] = None  # bool row; None means all cells count


@dataclass(frozen=True)
class RelationItem:
    """One pair-prediction training item for the ordered pair (source, target)."""

    source: int
    target: int
    targets: np.ndarray  # (n_relations,) values in {1, 0, -1}
    mask: Optional[np.ndarray] = None


def backward_pass(
    params: RtnParameters,
    table: EmbeddingTable,
    log: UpdateLog,
    class_items: Sequence[ClassItem],
    relation_items: Sequence[RelationItem],
    horizon: Optional[int] = None,
) -> tuple[float, ParamGradients]:
    """Joint loss and its gradients for a prediction batch.

    The loss is the mean cross-entropy over unmasked class cells plus the
    mean over unmasked relation cells. Gradients reach the heads directly
    and the update weights through each involved individual's recorded
    update history, truncated at `horizon` applications per individual.
    """
    if horizon is None:
        horizon = params.config.truncation_horizon
    grads = ParamGradients.zeros(params)
    emb_grads: dict[int, np.ndarray] = {}
    d = params.config.d

    def seed_grad(individual: int, g: np.ndarray) -> None:
        acc = emb_grads.get(individual)
        if acc is None:
            emb_grads[individual] = g.copy()
        else:
            acc += g

    n_class_cells = sum(
        int(item.targets.shape[0]) if item.mask is None else int(item.mask.sum())
        for item in class_items
    )
    n_rel_cells = sum(
        int(item.targets.shape[0]) if item.mask is None else int(item.mask.sum())
        for item in relation_items
    )
    if n_class_cells == 0 and n_rel_cells == 0:
        raise ValueError("batch has no unmasked cells")

    total = 0.0

    for item in class_items:
        if n_class_cells == 0:
            break
        emb = table.vectors[item.individual]
        logits = class_logits(params, emb)
        probs = softmax_rows(logits)
        mask = (
            np.ones(item.targets.shape[0], dtype=bool) if item.mask is None else item.mask
        )
        dlogits = np.zeros_like(logits)
        for m in np.flatnonzero(mask):
            cat = category_of(int(item.targets[m]))
            total += -np.log(probs[m, cat]) / n_class_cells
            dlogits[m] = probs[m]
            dlogits[m, cat] -= 1.0
        dlogits /= n_class_cells
        grads.class_head += np.einsum("mc,d->mcd", dlogits, emb)
        seed_grad(item.individual, np.einsum("mcd,mc->d", params.class_head, dlogits))

    for item in relation_items:
        if n_rel_cells == 0:
            break
        ei = table.vectors[item.source]
        ej = table.vectors[item.target]
        h = tensor_layer(ei, ej, params.pair_weights)
        logits = np.einsum("mch,h->mc", params.relation_head, h)
        probs = softmax_rows(logits)
        mask = (
            np.ones(item.targets.shape[0], dtype=bool) if item.mask is None else item.mask
        )
        dlogits = np.zeros_like(logits)
        for m in np.flatnonzero(mask):
            cat = category_of(int(item.targets[m]))
            total += -np.log(probs[m, cat]) / n_rel_cells
            dlogits[m] = probs[m]
            dlogits[m, cat] -= 1.0
        dlogits /= n_rel_cells
        grads.relation_head += np.einsum("mc,h->mch", dlogits, h)
        dh = np.einsum("mch,mc->h", params.relation_head, dlogits)
        gx, gy, layer_grads = tensor_layer_backward(ei, ej, params.pair_weights, dh)
        grads.pair_weights.u += layer_grads.u
        grads.pair_weights.w += layer_grads.w
        grads.pair_weights.v += layer_grads.v
        grads.pair_weights.b += layer_grads.b
        seed_grad(item.source, gx)
        seed_grad(item.target, gy)

    _history_backward(params, log, emb_grads, grads, horizon, d)
    return total, grads


def _history_backward(
    params: RtnParameters,
    log: UpdateLog,
    emb_grads: dict[int, np.ndarray],
    grads: ParamGradients,
    horizon: int,
    d: int,
) -> None:
    """Reverse sweep of the update log, dropping out-of-horizon gradients."""
    final = log.versions
    bucket: dict[tuple[int, int], np.ndarray] = {}
    for individual, g in emb_grads.items():
        version = final.get(individual, 0)
        if version > 0:
            bucket[(individual, version)] = g

    for rec in reversed(log.records):
        g = bucket.pop((rec.individual, rec.version), None)
        if g is None:
            continue
        if final[rec.individual] - rec.version >= horizon:
            continue  # older than the horizon: treat the embedding as constant
        weights = params.update_weights[rec.relation][int(rec.direction)]
        gx, gy, wgrads = residual_update_backward(rec.x, rec.y, weights, g)
        acc = grads.update_weights[rec.relation][int(rec.direction)]
        acc.u += wgrads.u
        acc.w += wgrads.w
        acc.v += wgrads.v
        if rec.version - 1 > 0:
            _bucket_add(bucket, (rec.individual, rec.version - 1), gx)
        if rec.counterpart_version > 0:
            _bucket_add(bucket, (rec.counterpart, rec.counterpart_version), gy)

    if bucket:
        key = next(iter(bucket))
        raise RuntimeError(
            f"update history is missing an entry for individual {key[0]} "
            f"version {key[1]}"
        )


def _bucket_add(
    bucket: dict[tuple[int, int], np.ndarray], key: tuple[int, int], g: np.ndarray
) -> None:
    acc = bucket.get(key)
    if acc is None:
        bucket[key] = g.copy()
    else:
        acc += g
