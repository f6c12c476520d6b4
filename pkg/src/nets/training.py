"""Two-phase training: embedding-update rounds alternating with prediction steps.

Each epoch restarts the embeddings from the feature vectors, runs a round
of sampled edge updates, and then takes joint class/relation prediction
steps on batches balanced between updated and untouched individuals until
every individual updated this round has appeared in a batch at least once.
Optimization is plain SGD. Parameters from the epoch with the best
validation macro-F1 are returned.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from . import evalgen
from .model import (
    ClassItem,
    EmbeddingTable,
    ParamGradients,
    RelationItem,
    RtnConfig,
    RtnParameters,
    UpdateLog,
    apply_sgd,
    apply_update,
    backward_pass,
    init_embeddings,
    init_params,
    predict_query_value,
)
from .okb import Direction, OkbGraph
from .oracle import Split, cell_key, sample_negatives

logger = logging.getLogger(__name__)


class TrainingDivergedError(RuntimeError):
    """Raised when the loss stops being finite."""


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 64
    balanced_fraction: float = 0.5
    learning_rate: float = 0.02
    negative_ratio: float = 1.0
    phase1_batches: Optional[int] = None  # default targets ~2 updates per individual
    validation_rounds: int = 2  # materialization passes for per-epoch validation
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.balanced_fraction <= 1.0:
            raise ValueError("balanced_fraction must be in [0, 1]")
        if self.learning_rate <= 0.0:
            raise ValueError("learning_rate must be positive")


@dataclass
class EpochStats:
    epoch: int
    mean_loss: float
    val_f1_classes: float
    val_f1_relations: float
    seconds: float


@dataclass
class TrainReport:
    epochs: list[EpochStats] = field(default_factory=list)
    best_epoch: int = -1

    def to_text(self) -> str:
        lines = [
            f"{'epoch':>5}  {'mean loss':>10}  {'val F1 (classes)':>17}  "
            f"{'val F1 (relations)':>19}  {'seconds':>8}"
        ]
        for e in self.epochs:
            lines.append(
                f"{e.epoch:>5}  {e.mean_loss:>10.4f}  {e.val_f1_classes:>17.4f}  "
                f"{e.val_f1_relations:>19.4f}  {e.seconds:>8.2f}"
            )
        if self.best_epoch >= 0:
            lines.append(f"best epoch: {self.best_epoch}")
        return "\n".join(lines)

    def to_csv(self) -> str:
        lines = ["epoch,mean_loss,val_f1_classes,val_f1_relations,seconds"]
        for e in self.epochs:
            lines.append(
                f"{e.epoch},{e.mean_loss:.6f},{e.val_f1_classes:.6f},"
                f"{e.val_f1_relations:.6f},{e.seconds:.3f}"
            )
        return "\n".join(lines) + "\n"


def default_phase1_batches(graph: OkbGraph, batch_size: int) -> int:
    """Enough edge batches for roughly two updates per individual."""
    return max(1, math.ceil(2 * graph.n_individuals / batch_size))


def phase1_update_round(
    graph: OkbGraph,
    params: RtnParameters,
    table: EmbeddingTable,
    config: TrainConfig,
    rng: np.random.Generator,
    log: Optional[UpdateLog] = None,
) -> set[int]:
    """Sample edge batches with replacement and update a coin-chosen endpoint."""
    edges = graph.positive_edges()
    if not edges:
        return set()
    n_batches = (
        config.phase1_batches
        if config.phase1_batches is not None
        else default_phase1_batches(graph, config.batch_size)
    )
    updated: set[int] = set()
    for _ in range(n_batches):
        picks = rng.integers(len(edges), size=config.batch_size)
        coins = rng.integers(2, size=config.batch_size)
        for pick, coin in zip(picks, coins):
            edge = edges[int(pick)]
            endpoint = Direction.SOURCE if coin == 0 else Direction.TARGET
            apply_update(params, table, edge, endpoint, log)
            updated.add(edge[0] if endpoint == Direction.SOURCE else edge[2])
    return updated


def _relation_target_row(graph: OkbGraph, source: int, target: int) -> np.ndarray:
    row = np.zeros(graph.schema.n_relations, dtype=np.int64)
    for r in range(graph.schema.n_relations):
        row[r] = graph.edge_value(source, r, target)
    return row


def phase2_step(
    graph: OkbGraph,
    params: RtnParameters,
    table: EmbeddingTable,
    updated: set[int],
    config: TrainConfig,
    rng: np.random.Generator,
    log: UpdateLog,
    pending: Optional[set[int]] = None,
) -> tuple[float, ParamGradients, list[int]]:
    """One balanced prediction batch: joint loss, gradients, batch members.

    The updated half of the batch prefers individuals from `pending` (not
    yet sampled this round) so the phase-2 loop always makes progress.
    """
    n = graph.n_individuals
    if n == 0:
        raise ValueError("cannot build a batch over an empty graph")
    n_updated_slots = math.ceil(config.balanced_fraction * config.batch_size)
    n_pristine_slots = config.batch_size - n_updated_slots

    updated_pool = sorted(updated)
    pristine_pool = np.flatnonzero(~table.dirty)

    batch: list[int] = []
    if updated_pool:
        fresh = sorted(pending) if pending else []
        take = min(n_updated_slots, len(fresh))
        if take:
            picked = rng.choice(len(fresh), size=take, replace=False)
            batch.extend(fresh[int(i)] for i in picked)
        for _ in range(n_updated_slots - take):
            batch.append(updated_pool[int(rng.integers(len(updated_pool)))])
    else:
        logger.warning("no updated individuals available; batch falls back to pristine")
        n_pristine_slots = config.batch_size

    if len(pristine_pool) > 0:
        for _ in range(n_pristine_slots):
            batch.append(int(pristine_pool[int(rng.integers(len(pristine_pool)))]))
    elif updated_pool:
        logger.warning("no pristine individuals available; batch uses updated ones")
        for _ in range(n_pristine_slots):
            batch.append(updated_pool[int(rng.integers(len(updated_pool)))])

    if not batch:
        raise ValueError("empty phase-2 batch")

    class_items: list[ClassItem] = []
    relation_items: list[RelationItem] = []
    for i in batch:
        class_items.append(ClassItem(i, graph.incidence_vector(i)))
        incident = [
            (i, rel, counterpart) if side == Direction.SOURCE else (counterpart, rel, i)
            for rel, side, counterpart in graph.neighbors(i)
            if graph.edge_value(
                *(
                    (i, rel, counterpart)
                    if side == Direction.SOURCE
                    else (counterpart, rel, i)
                )
            )
            == 1
        ]
        if not incident:
            continue
        s, r, t = incident[int(rng.integers(len(incident)))]
        relation_items.append(RelationItem(s, t, _relation_target_row(graph, s, t)))
        for neg in sample_negatives(graph, [(s, r, t)], config.negative_ratio, rng):
            row = _relation_target_row(graph, neg.source, neg.target)
            row[neg.relation_index] = -1
            relation_items.append(RelationItem(neg.source, neg.target, row))

    loss, grads = backward_pass(params, table, log, class_items, relation_items)
    return loss, grads, batch


def joint_loss(
    class_probs: Optional[np.ndarray],
    class_targets: Optional[np.ndarray],
    relation_probs: Optional[np.ndarray],
    relation_targets: Optional[np.ndarray],
    class_mask: Optional[np.ndarray] = None,
    relation_mask: Optional[np.ndarray] = None,
) -> float:
    """Mean −log p(target) over unmasked cells, class and relation terms summed.

    Probability arrays have shape (items, predicates, 3) with the category
    order (1, 0, −1); target arrays hold truth values in {1, 0, −1}.
    """

    def term(probs, targets, mask) -> tuple[float, int]:
        if probs is None or probs.size == 0:
            return 0.0, 0
        if mask is None:
            mask = np.ones(targets.shape, dtype=bool)
        cells = int(mask.sum())
        if cells == 0:
            return 0.0, 0
        total = 0.0
        for idx in np.argwhere(mask):
            a, m = (int(v) for v in idx)
            cat = {1: 0, 0: 1, -1: 2}[int(targets[a, m])]
            total += -math.log(probs[a, m, cat])
        return total / cells, cells

    class_term, n_c = term(class_probs, class_targets, class_mask)
    rel_term, n_r = term(relation_probs, relation_targets, relation_mask)
    if n_c == 0 and n_r == 0:
        raise ValueError("all cells are masked")
    return class_term + rel_term


def validation_scores(
    params: RtnParameters, split: Split, rounds: int, seed: int
) -> tuple[float, float]:
    """Macro-F1 for classes and relations on the validation queries.

    Embeddings are freshly materialized over the full closed graph, so
    held-out individuals are embedded from their own facts while the
    weights remain untouched by them.
    """
    from .store import materialize

    table = materialize(split.closed, params, rounds=rounds, seed=seed)
    gold_c, pred_c, gold_r, pred_r = {}, {}, {}, {}
    for q in split.validation:
        key = cell_key(q)
        value = predict_query_value(params, table, q)
        if key[0] == "class":
            gold_c[key], pred_c[key] = q.label, value
        else:
            gold_r[key], pred_r[key] = q.label, value
    f1_c = evalgen.score(pred_c, gold_c, split.closed.schema).macro_f1 if gold_c else float("nan")
    f1_r = evalgen.score(pred_r, gold_r, split.closed.schema).macro_f1 if gold_r else float("nan")
    return f1_c, f1_r


def train(
    split: Split,
    config: TrainConfig,
    model_config: Optional[RtnConfig] = None,
) -> tuple[RtnParameters, TrainReport]:
    """Full training loop; returns the best-validation parameters and report."""
    graph = split.train
    if model_config is None:
        model_config = RtnConfig(d=max(1, graph.schema.n_classes), seed=config.seed)
    params = init_params(graph.schema, model_config)
    rng = np.random.default_rng([config.seed, 1])
    report = TrainReport()
    best_params = params.copy()
    best_score = -math.inf
    has_validation = bool(split.validation)

    for epoch in range(config.epochs):
        started = time.perf_counter()
        table = init_embeddings(graph, params)
        log = UpdateLog()
        updated = phase1_update_round(graph, params, table, config, rng, log)
        pending = set(updated)
        losses: list[float] = []
        step = 0
        while True:
            loss, grads, batch = phase2_step(
                graph, params, table, updated, config, rng, log, pending
            )
            if not math.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch}, phase-2 step {step}"
                )
            apply_sgd(params, grads, config.learning_rate)
            losses.append(loss)
            pending -= set(batch)
            step += 1
            if not pending:
                break

        f1_c, f1_r = validation_scores(
            params, split, config.validation_rounds, seed=_epoch_seed(config.seed, epoch)
        )
        elapsed = time.perf_counter() - started
        report.epochs.append(
            EpochStats(epoch, float(np.mean(losses)) if losses else math.nan,
                       f1_c, f1_r, elapsed)
        )
        if has_validation:
            parts = [v for v in (f1_c, f1_r) if not math.isnan(v)]
            combined = sum(parts) / len(parts) if parts else -math.inf
        else:
            combined = float(epoch)  # no validation: keep the latest epoch
        if combined > best_score:
            best_score = combined
            best_params = params.copy()
            report.best_epoch = epoch

    return best_params, report


def _epoch_seed(seed: int, epoch: int) -> int:
    return (seed * 1_000_003 + epoch) % (2**63)
