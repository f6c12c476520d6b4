"""Command-line interface: generate, reason, split, train, materialize, eval, query.

Every subcommand is a pure function of its input files, flags, and seed;
repeated invocations produce byte-identical outputs. Exit codes: 0 on
success, 1 on user error, 2 on internal error. NETS_SEED provides the
default seed.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from typing import Sequence

from . import evalgen, ingest, oracle, store, training
from .ingest import ParseError
from .model import RtnConfig, predict_query_value
from .okb import OkbError, OkbGraph
from .oracle import Split
from .store import Atom, Query, StoreFileError, StoreState, Var

PROMPT = "nets> "


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # exit 1 instead of argparse's 2
        raise UsageError(message)


def _default_seed() -> int:
    raw = os.environ.get("NETS_SEED", "0")
    try:
        return int(raw)
    except ValueError:
        return 0


def _build_parser() -> _Parser:
    parser = _Parser(prog="nets", description="neural triple store")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: _Parser) -> None:
        p.add_argument("--seed", type=int, default=_default_seed())

    p = sub.add_parser("generate", help="write a synthetic OKB", parents=[])
    p.add_argument("--template", choices=("family", "university"), default="family")
    p.add_argument("--individuals", type=int, required=True)
    p.add_argument("--mean-degree", type=float, default=None,
                   help="override the template's first relation degree")
    p.add_argument("--out-facts", required=True)
    p.add_argument("--out-rules", required=True)
    common(p)

    p = sub.add_parser("reason", help="compute the rule closure of a fact file")
    p.add_argument("--facts", required=True)
    p.add_argument("--rules", required=True)
    p.add_argument("--out", default=None, help="write positive closure facts here")
    common(p)

    p = sub.add_parser("split", help="hold out individuals and write query files")
    p.add_argument("--facts", required=True)
    p.add_argument("--rules", required=True)
    p.add_argument("--test", type=int, default=0)
    p.add_argument("--valid", type=int, default=0)
    p.add_argument("--out-test", default=None)
    p.add_argument("--out-valid", default=None)
    p.add_argument("--min-frequency", type=float, default=0.05)
    common(p)

    p = sub.add_parser("train", help="train weights on a fact+rule file")
    p.add_argument("--facts", required=True)
    p.add_argument("--rules", required=True)
    p.add_argument("--out", required=True, help="weights file (.rtnw)")
    p.add_argument("--test", type=int, default=0)
    p.add_argument("--valid", type=int, default=0)
    p.add_argument("--min-frequency", type=float, default=0.05)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--learning-rate", type=float, default=0.02)
    p.add_argument("--balanced-fraction", type=float, default=0.5)
    p.add_argument("--negative-ratio", type=float, default=1.0)
    p.add_argument("--phase1-batches", type=int, default=None)
    p.add_argument("--d", type=int, default=None, help="embedding dimension")
    p.add_argument("--k-slices", type=int, default=4)
    p.add_argument("--horizon", type=int, default=2)
    p.add_argument("--init-scale", type=float, default=0.05)
    p.add_argument("--report", default=None, help="write the per-epoch CSV here")
    common(p)

    p = sub.add_parser("materialize", help="compute and save embeddings")
    p.add_argument("--facts", required=True)
    p.add_argument("--rules", required=True)
    p.add_argument("--weights", required=True)
    p.add_argument("--out", required=True, help="embeddings file (.rtne)")
    p.add_argument("--rounds", type=int, default=2)
    p.add_argument("--min-frequency", type=float, default=0.05)
    common(p)

    p = sub.add_parser("eval", help="score test queries and print the report")
    p.add_argument("--facts", required=True)
    p.add_argument("--rules", required=True)
    p.add_argument("--weights", required=True)
    p.add_argument("--test", type=int, required=True)
    p.add_argument("--valid", type=int, default=0)
    p.add_argument("--rounds", type=int, default=2)
    p.add_argument("--min-frequency", type=float, default=0.05)
    p.add_argument("--out-csv", default=None)
    common(p)

    p = sub.add_parser("query", help="interactive query shell")
    p.add_argument("--facts", required=True)
    p.add_argument("--rules", required=True)
    p.add_argument("--backend", choices=("learned", "oracle"), default="oracle")
    p.add_argument("--weights", default=None)
    p.add_argument("--embeddings", default=None)
    p.add_argument("--rounds", type=int, default=2)
    p.add_argument("--hops", type=int, default=2)
    p.add_argument("--full-scan", action="store_true")
    p.add_argument("--parallel-atoms", action="store_true")
    p.add_argument("--min-frequency", type=float, default=0.0)
    common(p)

    return parser


def run(argv: Sequence[str]) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(list(argv))
    except UsageError as exc:
        print(parser.format_usage(), end="", file=sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    try:
        handler = {
            "generate": _cmd_generate,
            "reason": _cmd_reason,
            "split": _cmd_split,
            "train": _cmd_train,
            "materialize": _cmd_materialize,
            "eval": _cmd_eval,
            "query": _cmd_query,
        }[args.command]
        return handler(args)
    except (OkbError, StoreFileError, ParseError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - deliberate catch-all boundary
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run(sys.argv[1:]))


# -- shared pipeline pieces -----------------------------------------------------


def _load_and_close(args) -> tuple[OkbGraph, OkbGraph, float]:
    """Parse, build, close, and frequency-filter; returns (input, closed, import_s)."""
    started = time.perf_counter()
    graph, rules, _doc, rule_diags = ingest.load_okb(args.facts, args.rules)
    import_seconds = time.perf_counter() - started
    for diag in rule_diags:
        print(f"warning: rules {diag}", file=sys.stderr)
    closed = oracle.closure(graph, rules).graph
    min_frequency = getattr(args, "min_frequency", 0.0)
    if min_frequency > 0.0:
        schema = ingest.frequency_filter(closed, min_frequency)
        closed = ingest.project(closed, schema)
        graph = ingest.project(graph, schema)
    return graph, closed, import_seconds


def _split_from(closed: OkbGraph, args) -> Split:
    return oracle.holdout_split(closed, args.test, args.valid, seed=args.seed)


# -- subcommands -------------------------------------------------------------------


def _cmd_generate(args) -> int:
    relations = None
    if args.mean_degree is not None:
        base = evalgen.default_relations(args.template)
        relations = ((base[0][0], args.mean_degree),) + tuple(base[1:])
    config = evalgen.GenConfig(
        n_individuals=args.individuals,
        template=args.template,
        relations=relations,
        seed=args.seed,
    )
    doc, rules = evalgen.generate(config)
    with open(args.out_facts, "w", encoding="utf-8") as fh:
        fh.write(ingest.serialize_ntriples(doc))
    with open(args.out_rules, "w", encoding="utf-8") as fh:
        fh.write(ingest.serialize_rules(rules))
    print(f"wrote {len(doc.triples)} facts to {args.out_facts}")
    print(f"wrote {len(rules.rules)} rules to {args.out_rules}")
    return 0


def _cmd_reason(args) -> int:
    started = time.perf_counter()
    graph, rules, _doc, _diags = ingest.load_okb(args.facts, args.rules)
    import_seconds = time.perf_counter() - started
    closed = oracle.closure(graph, rules)
    negatives = sum(1 for v in closed.graph.class_labels.values() if v == -1)
    print(f"import time: {import_seconds:.3f} s")
    print(f"derived {closed.derivation_count} facts "
          f"({negatives} negative class labels)")
    if args.out:
        doc = ingest.document_from_graph(closed.graph)
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(ingest.serialize_ntriples(doc))
        print(f"wrote {len(doc.triples)} positive facts to {args.out}")
    return 0


def _query_line(graph: OkbGraph, q) -> str:
    if isinstance(q, oracle.ClassQuery):
        return (
            f"class\t{graph.name_of(q.individual)}\t"
            f"{graph.schema.classes[q.class_index]}\t{q.label}"
        )
    return (
        f"rel\t{graph.name_of(q.source)}\t{graph.schema.relations[q.relation_index]}\t"
        f"{graph.name_of(q.target)}\t{q.label}"
    )


def _cmd_split(args) -> int:
    _graph, closed, _secs = _load_and_close(args)
    split = _split_from(closed, args)
    print(
        f"train: {len(split.train.class_labels)} labels, "
        f"{len(split.train.edges)} edges; "
        f"test queries: {len(split.test)}; validation queries: {len(split.validation)}"
    )
    for path, queries in ((args.out_test, split.test), (args.out_valid, split.validation)):
        if path:
            with open(path, "w", encoding="utf-8") as fh:
                for q in queries:
                    fh.write(_query_line(closed, q) + "\n")
            print(f"wrote {len(queries)} queries to {path}")
    return 0


def _train_configs(args, schema) -> tuple[training.TrainConfig, RtnConfig]:
    train_config = training.TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        balanced_fraction=args.balanced_fraction,
        learning_rate=args.learning_rate,
        negative_ratio=args.negative_ratio,
        phase1_batches=args.phase1_batches,
        seed=args.seed,
    )
    d = args.d if args.d is not None else max(1, schema.n_classes)
    model_config = RtnConfig(
        d=d,
        k_slices=args.k_slices,
        truncation_horizon=args.horizon,
        init_scale=args.init_scale,
        seed=args.seed,
    )
    return train_config, model_config


def _cmd_train(args) -> int:
    _graph, closed, import_seconds = _load_and_close(args)
    print(f"import time: {import_seconds:.3f} s")
    split = _split_from(closed, args)
    train_config, model_config = _train_configs(args, closed.schema)
    params, report = training.train(split, train_config, model_config)
    store.save_weights(params, args.out)
    print(report.to_text())
    print(f"wrote weights to {args.out}")
    if args.report:
        with open(args.report, "w", encoding="utf-8") as fh:
            fh.write(report.to_csv())
        print(f"wrote report to {args.report}")
    return 0


def _cmd_materialize(args) -> int:
    _graph, closed, import_seconds = _load_and_close(args)
    params = store.load_weights(args.weights, closed.schema)
    started = time.perf_counter()
    table = store.materialize(closed, params, rounds=args.rounds, seed=args.seed)
    materialize_seconds = time.perf_counter() - started
    store.save_embeddings(table, args.out, closed.schema)
    print(f"import time: {import_seconds:.3f} s")
    print(f"materialization time: {materialize_seconds:.3f} s")
    print(f"wrote embeddings for {table.vectors.shape[0]} individuals to {args.out}")
    return 0


def eval_report(state: StoreState, queries) -> tuple[str, str, dict]:
    """Per-predicate accuracy/F1 text and CSV for a labeled query set."""
    gold_c, pred_c, gold_r, pred_r = {}, {}, {}, {}
    for q in queries:
        key = oracle.cell_key(q)
        if state.backend == "oracle":
            value = oracle.cell_value(state.graph, q)
        else:
            value = predict_query_value(state.params, state.table, q)
        if key[0] == "class":
            gold_c[key], pred_c[key] = q.label, value
        else:
            gold_r[key], pred_r[key] = q.label, value
    if not gold_c and not gold_r:
        raise ValueError("empty test set")
    schema = state.graph.schema
    class_metrics = evalgen.score(pred_c, gold_c, schema) if gold_c else None
    rel_metrics = evalgen.score(pred_r, gold_r, schema) if gold_r else None

    width = max(
        [len("macro (relations)")]
        + [len(n) for m in (class_metrics, rel_metrics) if m for n in m.per_predicate]
    )
    lines = [f"{'predicate':<{width}}  {'kind':<8}  {'accuracy':>8}  "
             f"{'precision':>9}  {'recall':>6}  {'f1':>6}"]
    csv_lines = ["predicate,kind,cells,accuracy,precision,recall,f1"]
    for kind, metrics in (("class", class_metrics), ("relation", rel_metrics)):
        if metrics is None:
            continue
        for name, pm in metrics.per_predicate.items():
            lines.append(
                f"{name:<{width}}  {kind:<8}  {pm.accuracy:>8.3f}  "
                f"{pm.precision:>9.3f}  {pm.recall:>6.3f}  {pm.f1:>6.3f}"
            )
            csv_lines.append(
                f"{name},{kind},{pm.n_cells},{pm.accuracy:.6f},"
                f"{pm.precision:.6f},{pm.recall:.6f},{pm.f1:.6f}"
            )
    for label, metrics in (("macro (classes)", class_metrics),
                           ("macro (relations)", rel_metrics)):
        if metrics is None:
            continue
        lines.append(
            f"{label:<{width}}  {'':<8}  {metrics.macro_accuracy:>8.3f}  "
            f"{'':>9}  {'':>6}  {metrics.macro_f1:>6.3f}"
        )
        csv_lines.append(
            f"{label},,{sum(p.n_cells for p in metrics.per_predicate.values())},"
            f"{metrics.macro_accuracy:.6f},,,{metrics.macro_f1:.6f}"
        )
    summary = {
        "class_accuracy": class_metrics.macro_accuracy if class_metrics else None,
        "class_f1": class_metrics.macro_f1 if class_metrics else None,
        "relation_accuracy": rel_metrics.macro_accuracy if rel_metrics else None,
        "relation_f1": rel_metrics.macro_f1 if rel_metrics else None,
    }
    return "\n".join(lines), "\n".join(csv_lines) + "\n", summary


def _cmd_eval(args) -> int:
    _graph, closed, _secs = _load_and_close(args)
    split = _split_from(closed, args)
    params = store.load_weights(args.weights, closed.schema)
    table = store.materialize(closed, params, rounds=args.rounds, seed=args.seed)
    state = StoreState(graph=closed, backend="learned", params=params, table=table)
    text, csv_text, _summary = eval_report(state, split.test)
    print(text)
    if args.out_csv:
        with open(args.out_csv, "w", encoding="utf-8") as fh:
            fh.write(csv_text)
        print(f"wrote metrics to {args.out_csv}")
    return 0


# -- the shell ------------------------------------------------------------------------


class QuerySyntaxError(Exception):
    pass


def parse_query(line: str) -> Query:
    """Parse `Pred(arg,...)` atoms separated by commas; `?`-names are variables."""
    atoms: list[Atom] = []
    i, n = 0, len(line)
    while i < n:
        while i < n and line[i] in " \t,":
            i += 1
        if i >= n:
            break
        start = i
        while i < n and line[i] != "(":
            i += 1
        if i >= n:
            raise QuerySyntaxError(f"expected '(' after predicate near: {line[start:]}")
        predicate = line[start:i].strip()
        if not predicate:
            raise QuerySyntaxError("missing predicate name")
        i += 1  # consume '('
        depth = 1
        arg_start = i
        args: list[str] = []
        while i < n and depth > 0:
            ch = line[i]
            if ch == "(":
                depth += 1
            elif ch == ")":
                depth -= 1
                if depth == 0:
                    args.append(line[arg_start:i].strip())
                    break
            elif ch == "," and depth == 1:
                args.append(line[arg_start:i].strip())
                arg_start = i + 1
            i += 1
        if depth != 0:
            raise QuerySyntaxError("unbalanced parentheses")
        i += 1  # consume ')'
        terms: list = []
        for raw in args:
            if not raw:
                raise QuerySyntaxError(f"empty argument in {predicate}(...)")
            terms.append(Var(raw) if raw.startswith("?") else raw)
        atoms.append(Atom(predicate, tuple(terms)))
    if not atoms:
        raise QuerySyntaxError("empty query")
    return Query(tuple(atoms))


def format_bindings(graph: OkbGraph, table: store.BindingTable) -> str:
    """Monospaced result table: headers, `===` separators, then rows.

    Column width is the longest cell in that column; columns are joined by
    two spaces and lines carry no trailing whitespace. A query without
    variables prints `true` or `false`.
    """
    if not table.variables:
        return "true" if table.rows else "false"
    names = [[graph.name_of(i) for i in row] for row in table.rows]
    widths = [
        max(len(var), *(len(r[c]) for r in names)) if names else len(var)
        for c, var in enumerate(table.variables)
    ]
    def fmt(cells: Sequence[str]) -> str:
        return "  ".join(cell.ljust(w) for cell, w in zip(cells, widths)).rstrip()
    lines = [fmt(table.variables), fmt(["=" * w for w in widths])]
    lines.extend(fmt(row) for row in names)
    return "\n".join(lines)


def shell_eval(state: StoreState, line: str, parallel: bool = False) -> str:
    """Evaluate one shell line and return the formatted result table."""
    query = parse_query(line)
    if parallel and len(query.atoms) > 1:
        with ThreadPoolExecutor(max_workers=min(4, len(query.atoms))) as pool:
            list(pool.map(lambda a: store.eval_atom(state, a), query.atoms))
    result = store.eval_conjunctive(state, query)
    return format_bindings(state.graph, result)


def run_shell(state: StoreState, stdin=None, stdout=None, parallel: bool = False) -> None:
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    while True:
        stdout.write(PROMPT)
        stdout.flush()
        line = stdin.readline()
        if not line:
            stdout.write("\n")
            return
        line = line.strip()
        if not line:
            continue
        if line == ":quit":
            return
        try:
            stdout.write(shell_eval(state, line, parallel=parallel) + "\n")
        except (QuerySyntaxError, OkbError, store.QueryError) as exc:
            stdout.write(f"error: {exc}\n")


def _cmd_query(args) -> int:
    _graph, closed, import_seconds = _load_and_close(args)
    print(f"import time: {import_seconds:.3f} s")
    if args.backend == "oracle":
        state = StoreState(
            graph=closed, backend="oracle", hop_limit=args.hops,
            full_scan=args.full_scan,
        )
    else:
        if not args.weights:
            raise ValueError("--weights is required for the learned backend")
        params = store.load_weights(args.weights, closed.schema)
        table = None
        if args.embeddings and os.path.exists(args.embeddings):
            table = store.load_embeddings(
                args.embeddings, closed.schema, closed.n_individuals
            )
            print(f"loaded embeddings from {args.embeddings}; skipping materialization")
        if table is None:
            started = time.perf_counter()
            table = store.materialize(closed, params, rounds=args.rounds, seed=args.seed)
            print(f"materialization time: {time.perf_counter() - started:.3f} s")
            if args.embeddings:
                store.save_embeddings(table, args.embeddings, closed.schema)
                print(f"wrote embeddings to {args.embeddings}")
        state = StoreState(
            graph=closed, backend="learned", params=params, table=table,
            hop_limit=args.hops, full_scan=args.full_scan,
        )
    run_shell(state, parallel=args.parallel_atoms)
    return 0
