"""Batch command-line front end: scenesense <subcommand> [flags].

Commands chain the library end to end and emit machine-readable artifacts.
All outputs are written atomically (temp file + rename), so a failed run
never leaves a truncated artifact behind. Exit codes are a stable
contract: 0 success, 1 internal error, 2 input/config error, 3 I/O error,
4 backend error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import cooccurrence as co
from . import evaluation as ev
from .classifiers import (
    EmbeddingRoomClassifier,
    StatisticalRoomClassifier,
    ZeroShotRoomClassifier,
    results_to_jsonl,
)
from .config import RunConfig
from .errors import BackendError, ConfigError, InputError, SceneSenseError
from .lm_backend import (
    HashEmbedder,
    HashScorer,
    HttpEmbedder,
    HttpScorer,
    mock_scorer_from_conditionals,
)
from .mlp import head_document, load_head, train_classifier  # noqa: F401 (re-export convenience)
from .query import bootstrap_queries, dump_bootstrap_rows, dump_structured_rows, load_bootstrap_rows, render_structured
from .scene_graph import LabelSpace, load_scene_graph, preprocess
from .classifiers import train_embedding_head

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_INPUT = 2
EXIT_IO = 3
EXIT_BACKEND = 4


def atomic_write_text(path: str | Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _require_file(path: str | None, what: str) -> Path:
    if not path:
        raise ConfigError(f"{what} is required")
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"input not found: {p} ({what})")
    return p


def _load_space(path: str | None) -> LabelSpace:
    return LabelSpace.from_file(_require_file(path, "--label-space"))


def _load_graphs(paths: list[str], space: LabelSpace):
    graphs = []
    for p in paths:
        graph, _ = load_scene_graph(_require_file(p, "scene graph"), space)
        graphs.append(graph)
    return graphs


def _all_views(graphs) -> list:
    views = []
    for g in graphs:
        views.extend(g.room_views())
    return views


def _labeled_views(graphs) -> list:
    views = [v for v in _all_views(graphs) if v.label is not None]
    if not views:
        raise ConfigError("no labeled rooms in the given scene graphs")
    return views


def _make_scorer(cfg: RunConfig, table=None):
    if cfg.backend == "http":
        if not cfg.endpoint:
            raise ConfigError("http backend needs --endpoint")
        return HttpScorer(cfg.endpoint, cfg.model, **cfg.http_kwargs())
    if table is not None:
        return mock_scorer_from_conditionals(table)
    return HashScorer(seed=cfg.seed)


def _make_embedder(cfg: RunConfig):
    if cfg.backend == "http":
        if not cfg.endpoint:
            raise ConfigError("http backend needs --endpoint")
        return HttpEmbedder(cfg.endpoint, cfg.model, **cfg.http_kwargs())
    return HashEmbedder(dimension=cfg.embed_dimension, seed=cfg.seed)


def _resolve_config(args) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if getattr(args, "config", None) else RunConfig()
    overrides = {}
    for flag in (
        "seed",
        "backend",
        "endpoint",
        "model",
        "k",
        "alpha",
        "mode",
        "include_positions",
        "include_room_size",
        "max_objects",
        "decimals",
        "count_mode",
        "epochs",
        "batch_size",
        "learning_rate",
        "embed_dimension",
    ):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[flag] = value
    return cfg.override(**overrides)


def _load_index_artifact(args, space: LabelSpace, cfg: RunConfig):
    """Informativeness index from --index, or derived from --table."""
    if getattr(args, "index", None):
        return co.load_index(_require_file(args.index, "--index"), space)
    if getattr(args, "table", None):
        table = co.load_table(_require_file(args.table, "--table"), space)
        return co.build_index(table)
    raise ConfigError("this command needs --index (or --table to derive one)")


# ---------------------------------------------------------------------------
# Subcommands


def cmd_preprocess(args) -> int:
    cfg = _resolve_config(args)
    space = _load_space(args.label_space)
    graph, load_report = load_scene_graph(_require_file(args.graph, "--graph"), space)
    target = LabelSpace.from_file(_require_file(args.target_space, "--target-space")) if args.target_space else None
    processed, report = preprocess(graph, target)

    out = Path(args.out)
    atomic_write_text(out, json.dumps(processed.to_document(), indent=2, sort_keys=True) + "\n")

    lines = [
        f"input rooms: {load_report.n_rooms}, objects: {load_report.n_objects}",
        f"alias corrections: {load_report.alias_corrections}",
        f"unknown object labels: {dict(sorted(load_report.unknown_object_labels.items()))}",
        f"rejected objects: {report['filter']['n_rejected_objects']}"
        f" {report['filter']['rejected_objects']}",
        f"removed rooms: {report['filter']['removed_rooms']}",
        f"objects dropped with rooms: {report['filter']['objects_dropped_with_rooms']}",
        f"reassigned objects: {len(report['reassign']['moved'])} {report['reassign']['moved']}",
        f"objects outside every room: {report['reassign']['unplaced']}",
    ]
    if "remap" in report:
        lines.append(f"remapped objects: {report['remap']['remapped']}")
        lines.append(f"unmapped labels: {report['remap']['unmapped']}")
        lines.append(f"dropped (mapped to rejected): {report['remap']['dropped_rejected']}")
    lines.append(f"final rooms: {report['final']['n_rooms']}, objects: {report['final']['n_objects']}")
    report_doc = {"load": load_report.to_dict(), "preprocess": report, "config": cfg.to_dict()}
    atomic_write_text(Path(str(out) + ".report.txt"), "\n".join(lines) + "\n")
    atomic_write_text(Path(str(out) + ".report.json"), json.dumps(report_doc, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_cooccur(args) -> int:
    cfg = _resolve_config(args)
    space = _load_space(args.label_space)
    graphs = _load_graphs(args.graphs, space)

    if cfg.mode == "gt":
        views = _labeled_views(graphs)
        table = co.count_cooccurrences(views, space, mode=cfg.count_mode, alpha=cfg.alpha)
    else:
        scorer = _make_scorer(cfg)
        table = co.build_proxy_table(scorer, space)
    index = co.build_index(table)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out / "cooccurrence.csv", co.table_csv_text(table))
    atomic_write_text(
        out / "cooccurrence.csv.json",
        json.dumps({**co.table_sidecar(table), "config": cfg.to_dict()}, indent=2, sort_keys=True) + "\n",
    )
    atomic_write_text(out / "informativeness.csv", index.to_csv())
    return EXIT_OK


def cmd_bootstrap(args) -> int:
    cfg = _resolve_config(args)
    space = _load_space(args.label_space)
    graphs = _load_graphs(args.graphs, space)
    index = _load_index_artifact(args, space, cfg)
    rows = []
    for view in _labeled_views(graphs):
        rows.extend(bootstrap_queries(view, index, cfg.bootstrap_schedule, cfg.tie_break))
    atomic_write_text(args.out, dump_bootstrap_rows(rows))
    return EXIT_OK


def cmd_export_structured(args) -> int:
    cfg = _resolve_config(args)
    space = _load_space(args.label_space)
    graphs = _load_graphs(args.graphs, space)
    structured_cfg = cfg.structured()
    rendered = []
    for graph in graphs:
        for room_id, room in graph.rooms.items():
            bundle = render_structured(room, graph.objects_in(room_id), structured_cfg)
            rendered.append((bundle, room.label))
    atomic_write_text(args.out, dump_structured_rows(rendered))
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _resolve_config(args)
    space = _load_space(args.label_space)
    rows = load_bootstrap_rows(_require_file(args.rows, "--rows"))
    val_rows = load_bootstrap_rows(_require_file(args.val_rows, "--val-rows")) if args.val_rows else None
    embedder = _make_embedder(cfg)
    head, curve = train_embedding_head(
        rows,
        embedder,
        space.room_labels,
        cfg=cfg.train_config(),
        hidden_sizes=cfg.hidden_sizes,
        val_rows=val_rows,
    )
    dimension = embedder.dimension if embedder.dimension is not None else head.input_dim
    doc = head_document(head, space.room_labels, embedder.metadata.name, dimension)
    atomic_write_text(args.out, json.dumps(doc, sort_keys=True) + "\n")
    if args.curve:
        curve_doc = {"curve": curve.to_dict(), "config": cfg.to_dict()}
        atomic_write_text(args.curve, json.dumps(curve_doc, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def _build_estimator(args, cfg: RunConfig, space: LabelSpace):
    method = args.method
    if method == "statistical":
        if not getattr(args, "table", None):
            raise ConfigError("statistical method needs --table (co-occurrence CSV)")
        table = co.load_table(_require_file(args.table, "--table"), space)
        return StatisticalRoomClassifier.from_table(table, count_mode=cfg.count_mode, tie_break=cfg.tie_break)
    if method == "zeroshot":
        index = _load_index_artifact(args, space, cfg)
        table = None
        if cfg.backend == "mock" and getattr(args, "table", None):
            table = co.load_table(_require_file(args.table, "--table"), space)
        scorer = _make_scorer(cfg, table=table)
        return ZeroShotRoomClassifier(
            scorer=scorer, index=index, label_space=space, k=cfg.k, tie_break=cfg.tie_break
        ).fit()
    if method == "embedding":
        if not getattr(args, "head", None):
            raise ConfigError("embedding method needs --head (trained classifier head)")
        head, label_order, embedder_meta = load_head(_require_file(args.head, "--head"))
        if list(label_order) != list(space.room_labels):
            raise ConfigError(
                f"head was trained for labels {label_order[:3]}..., which differ from {space.name!r}"
            )
        index = _load_index_artifact(args, space, cfg)
        embedder = _make_embedder(cfg)
        if embedder.dimension is not None and embedder.dimension != head.input_dim:
            raise ConfigError(
                f"embedder dimension {embedder.dimension} does not match head input {head.input_dim}"
            )
        est = EmbeddingRoomClassifier(
            embedder=embedder, index=index, label_space=space, k=cfg.k, tie_break=cfg.tie_break
        )
        est.head_ = head
        est.classes_ = list(label_order)
        return est
    raise ConfigError(f"unknown method {method!r}")


def cmd_classify(args) -> int:
    cfg = _resolve_config(args)
    space = _load_space(args.label_space)
    graphs = _load_graphs(args.graphs, space)
    estimator = _build_estimator(args, cfg, space)
    results = estimator.classify_all(_all_views(graphs))
    atomic_write_text(args.out, results_to_jsonl(results))
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _resolve_config(args)
    space = _load_space(args.label_space)
    graphs = _load_graphs(args.graphs, space)
    views = _labeled_views(graphs)
    out = Path(args.out)

    if args.holdout:
        report = _eval_holdout(args, cfg, space, views)
        _write_report_files(out, report.overall, extra={"holdout": report.to_dict()})
        return EXIT_OK
    if args.transfer_graphs:
        report = _eval_transfer(args, cfg, space, views)
        _write_report_files(out, report)
        return EXIT_OK

    if args.full_dataset:
        if args.method == "embedding":
            raise ConfigError("--full-dataset applies only to training-free methods")
        split = None
        train_views = eval_views = views
        base_config = {"config": cfg.to_dict(), "split": None, "full_dataset": True}
    else:
        split = ev.split_rooms(views, cfg.split_spec())
        train_views, eval_views = split.train, split.test
        base_config = {"config": cfg.to_dict(), "split": split.to_dict(), "full_dataset": False}

    if args.method == "statistical":
        table = co.count_cooccurrences(train_views, space, mode=cfg.count_mode, alpha=cfg.alpha)
        est = StatisticalRoomClassifier.from_table(table, count_mode=cfg.count_mode, tie_break=cfg.tie_break)
        report = ev.evaluate(est, eval_views, method="statistical", config=base_config)
    elif args.method == "zeroshot":
        if cfg.mode == "gt":
            table = co.count_cooccurrences(train_views, space, mode=cfg.count_mode, alpha=cfg.alpha)
        else:
            table = co.build_proxy_table(_make_scorer(cfg), space)
        index = co.build_index(table)
        scorer = _make_scorer(cfg, table=table if cfg.backend == "mock" else None)
        est = ZeroShotRoomClassifier(
            scorer=scorer, index=index, label_space=space, k=cfg.k, tie_break=cfg.tie_break
        ).fit()
        report = ev.evaluate(est, eval_views, method="zeroshot", config=base_config)
    elif args.method == "embedding":
        index = _train_side_index(cfg, space, split.train)
        est = _embedding_estimator(cfg, space, index)
        est.fit(split.train, val_views=split.val or None)
        report = ev.evaluate(est, split.test, method="embedding", config=base_config)
    else:
        raise ConfigError(f"unknown method {args.method!r}")

    _write_report_files(out, report)
    return EXIT_OK


def _train_side_index(cfg: RunConfig, space: LabelSpace, train_views):
    if cfg.mode == "gt":
        table = co.count_cooccurrences(train_views, space, mode=cfg.count_mode, alpha=cfg.alpha)
    else:
        table = co.build_proxy_table(_make_scorer(cfg), space)
    return co.build_index(table)


def _embedding_estimator(cfg: RunConfig, space: LabelSpace, index):
    return EmbeddingRoomClassifier(
        embedder=_make_embedder(cfg),
        index=index,
        label_space=space,
        k=cfg.k,
        tie_break=cfg.tie_break,
        hidden_sizes=cfg.hidden_sizes,
        train_config=cfg.train_config(),
        bootstrap_schedule=cfg.bootstrap_schedule,
    )


def _eval_holdout(args, cfg: RunConfig, space: LabelSpace, views):
    if args.method != "embedding":
        raise ConfigError("--holdout applies to the embedding method")
    holdout = [h.strip() for h in args.holdout.split(",") if h.strip()]
    index = _train_side_index(cfg, space, views)
    est = _embedding_estimator(cfg, space, index)
    return ev.holdout_experiment(views, holdout, est, config={"config": cfg.to_dict()})


def _eval_transfer(args, cfg: RunConfig, space: LabelSpace, views):
    if args.method != "embedding":
        raise ConfigError("transfer mode applies to the embedding method")
    test_space = LabelSpace.from_file(_require_file(args.transfer_space, "--transfer-space"))
    test_graphs = _load_graphs(args.transfer_graphs, test_space)
    test_views = [v for g in test_graphs for v in g.room_views() if v.label is not None]
    test_index = co.load_index(_require_file(args.transfer_index, "--transfer-index"), test_space)
    train_index = _train_side_index(cfg, space, views)
    est = _embedding_estimator(cfg, space, train_index)
    spec = ev.SplitSpec(ratios=(0.4, 0.6, 0.0), unit=cfg.split_unit, seed=cfg.seed)
    return ev.transfer_experiment(
        views, test_views, est, test_space, test_index, split_spec=spec,
        config={"config": cfg.to_dict()},
    )


def _write_report_files(out_dir: Path, report: ev.EvalReport, extra: dict | None = None) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out_dir / "report.json", report.to_json())
    atomic_write_text(out_dir / "confusion.csv", report.confusion_csv())
    atomic_write_text(out_dir / "per_label.csv", report.per_label_csv())
    if extra:
        for name, doc in extra.items():
            atomic_write_text(out_dir / f"{name}.json", json.dumps(doc, indent=2, sort_keys=True) + "\n")


def cmd_report(args) -> int:
    path = _require_file(args.report, "--report")
    try:
        doc = json.loads(path.read_text())
        room_labels = doc["room_labels"]
        per_label = doc["per_label"]
    except (json.JSONDecodeError, KeyError) as exc:
        raise ConfigError(f"not an evaluation report: {path} ({exc})") from exc
    lines = ["room_label,correct,total,accuracy"]
    for label in room_labels:
        entry = per_label[label]
        acc = "" if entry["accuracy"] is None else repr(entry["accuracy"])
        lines.append(f"{label},{entry['correct']},{entry['total']},{acc}")
    atomic_write_text(args.out, "\n".join(lines) + "\n")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="scenesense", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file; flags override its values")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--backend", choices=["mock", "http"], default=None)
    common.add_argument("--endpoint", default=None, help="inference service base URL")
    common.add_argument("--model", default=None, help="model name sent to the service")
    common.add_argument("--label-space", dest="label_space", required=True)
    common.add_argument("--out", required=True)

    selection = argparse.ArgumentParser(add_help=False)
    selection.add_argument("--k", type=int, default=None, help="objects per query")
    selection.add_argument("--alpha", type=float, default=None, help="smoothing pseudo-count")
    selection.add_argument("--mode", choices=["gt", "proxy"], default=None, help="co-occurrence source")
    selection.add_argument("--count-mode", dest="count_mode", choices=["presence", "multiplicity"], default=None)

    p = sub.add_parser("preprocess", parents=[common], help="load, filter, and repair a scene graph")
    p.add_argument("--graph", required=True)
    p.add_argument("--target-space", dest="target_space", default=None)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("cooccur", parents=[common, selection], help="build co-occurrence table and entropy index")
    p.add_argument("--graphs", nargs="+", required=True)
    p.set_defaults(func=cmd_cooccur)

    p = sub.add_parser("bootstrap", parents=[common, selection], help="generate permutation training rows")
    p.add_argument("--graphs", nargs="+", required=True)
    p.add_argument("--index", default=None)
    p.add_argument("--table", default=None)
    p.set_defaults(func=cmd_bootstrap)

    p = sub.add_parser("export-structured", parents=[common], help="export structured room strings")
    p.add_argument("--graphs", nargs="+", required=True)
    p.add_argument("--no-positions", dest="include_positions", action="store_const", const=False, default=None)
    p.add_argument("--no-room-size", dest="include_room_size", action="store_const", const=False, default=None)
    p.add_argument("--max-objects", dest="max_objects", type=int, default=None)
    p.add_argument("--decimals", type=int, default=None)
    p.set_defaults(func=cmd_export_structured)

    p = sub.add_parser("train", parents=[common], help="train the embedding head on bootstrap rows")
    p.add_argument("--rows", required=True)
    p.add_argument("--val-rows", dest="val_rows", default=None)
    p.add_argument("--curve", default=None, help="where to write the training curve JSON")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    p.add_argument("--learning-rate", dest="learning_rate", type=float, default=None)
    p.add_argument("--embed-dim", dest="embed_dimension", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("classify", parents=[common, selection], help="classify every room in the graphs")
    p.add_argument("--graphs", nargs="+", required=True)
    p.add_argument("--method", choices=["zeroshot", "statistical", "embedding"], required=True)
    p.add_argument("--table", default=None)
    p.add_argument("--index", default=None)
    p.add_argument("--head", default=None)
    p.add_argument("--embed-dim", dest="embed_dimension", type=int, default=None)
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("eval", parents=[common, selection], help="run an evaluation protocol")
    p.add_argument("--graphs", nargs="+", required=True)
    p.add_argument("--method", choices=["zeroshot", "statistical", "embedding"], required=True)
    p.add_argument("--full-dataset", dest="full_dataset", action="store_true")
    p.add_argument("--holdout", default=None, help="comma-separated object labels to hold out")
    p.add_argument("--transfer-graphs", dest="transfer_graphs", nargs="+", default=None)
    p.add_argument("--transfer-space", dest="transfer_space", default=None)
    p.add_argument("--transfer-index", dest="transfer_index", default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    p.add_argument("--learning-rate", dest="learning_rate", type=float, default=None)
    p.add_argument("--embed-dim", dest="embed_dimension", type=int, default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="emit per-label accuracy CSV from a report")
    p.add_argument("--report", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except BackendError as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except SceneSenseError as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
