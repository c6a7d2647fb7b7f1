"""Command-line interface.

Verbs: synth, inject, train, score, eval, sweep, correlation-sweep.
Global flags --seed, --threads and --config (a JSON file whose keys fill in
unset options). Exit codes: 0 success, 2 invalid input, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import dataio, figures, injection, metrics, sweeps
from .graph import GraphError
from .nn import NumericsError, load_checkpoint, save_checkpoint
from .encoders import ModelState
from .training import ScoreTable, TrainConfig, infer_scores, train
from .views import build_view_pair

log = logging.getLogger("ugad")

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_NUMERIC = 3


def _load_config_file(path):
    if not path:
        return {}
    with open(path) as fh:
        payload = json.load(fh)
    if not isinstance(payload, dict):
        raise dataio.DataError("--config must contain a JSON object")
    return payload


def _train_config(args, overrides: dict) -> TrainConfig:
    """CLI flags beat config-file values beat defaults."""
    allowed = {f.name for f in fields(TrainConfig)}
    unknown = set(overrides) - allowed
    if unknown:
        raise dataio.DataError(f"unknown config keys: {sorted(unknown)}")
    merged = dict(overrides)
    for name in allowed:
        value = getattr(args, name, None)
        if value is not None:
            merged[name] = value
    if args.seed is not None:
        merged["seed"] = args.seed
    return TrainConfig(**merged)


def _add_train_flags(parser):
    parser.add_argument("--batch-size", dest="batch_size", type=int)
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--learning-rate", dest="learning_rate", type=float)
    parser.add_argument("--tau", type=float)
    parser.add_argument("--hops", type=int)
    parser.add_argument("--subgraph-size", dest="subgraph_size", type=int)
    parser.add_argument("--hidden-dim", dest="hidden_dim", type=int)
    parser.add_argument("--eval-rounds", dest="eval_rounds", type=int)
    parser.add_argument("--alpha", type=float)
    parser.add_argument("--beta", type=float)
    parser.add_argument("--feature-mask-prob", dest="feature_mask_prob", type=float)
    parser.add_argument("--hyperedge-drop-prob", dest="hyperedge_drop_prob", type=float)
    parser.add_argument("--predictor-hidden", dest="predictor_hidden", type=int)
    parser.add_argument(
        "--symmetric-roles", dest="symmetric_roles", action="store_const", const=True
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ugad",
        description="Unified node and edge anomaly detection on attributed graphs.",
    )
    parser.add_argument("--seed", type=int, default=None, help="global random seed")
    parser.add_argument("--threads", type=int, default=1, help="worker threads for scoring")
    parser.add_argument("--config", default=None, help="JSON file with option defaults")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("synth", help="generate a seeded random graph dataset")
    p.add_argument("--nodes", type=int, required=True)
    p.add_argument("--edge-prob", type=float, required=True)
    p.add_argument("--features", type=int, required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("inject", help="plant labeled anomalies into a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--clique-size", type=int, default=15)
    p.add_argument("--cliques", type=int, default=1)
    p.add_argument("--candidate-pool", type=int, default=50)
    p.add_argument("--attr-edges", type=int, default=2)
    p.add_argument(
        "--mode",
        choices=["both", "structural", "attributive"],
        default="both",
    )

    p = sub.add_parser("train", help="train a model on a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--log", default=None, help="JSON-lines training log path")
    p.add_argument("--dump-views", default=None, help="write one sampled view pair as CSVs")
    _add_train_flags(p)

    p = sub.add_parser("score", help="score nodes and edges with a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--rounds", type=int, default=None)
    p.add_argument("--out", required=True)
    _add_train_flags(p)

    p = sub.add_parser("eval", help="evaluate scores against dataset labels")
    p.add_argument("--scores", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--task", choices=["node", "edge"], required=True)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--out", required=True, help="EvalReport JSON path")
    p.add_argument("--roc-csv", default=None, help="ROC points CSV (default: <out>.roc.csv)")
    p.add_argument("--no-figures", action="store_true")

    p = sub.add_parser("sweep", help="grid sweep over scoring/model knobs")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="CSV path")
    p.add_argument("--cache-dir", default=None)
    p.add_argument("--grid-alpha", default=None, help="comma-separated values")
    p.add_argument("--grid-beta", default=None)
    p.add_argument("--grid-hidden-dim", default=None)
    p.add_argument("--grid-eval-rounds", default=None)
    p.add_argument("--grid-tau", default=None)
    p.add_argument("--no-figures", action="store_true")
    _add_train_flags(p)

    p = sub.add_parser(
        "correlation-sweep",
        help="inject at several coupling levels, train and evaluate each",
    )
    p.add_argument("--data", required=True, help="unlabeled base dataset")
    p.add_argument("--out", required=True, help="CSV path")
    p.add_argument("--levels", required=True, help="comma-separated coupling levels in [0,1]")
    p.add_argument("--seeds-per-level", type=int, default=1)
    p.add_argument("--clique-size", type=int, default=8)
    p.add_argument("--cliques", type=int, default=4)
    p.add_argument("--candidate-pool", type=int, default=20)
    p.add_argument("--attr-edges", type=int, default=2)
    p.add_argument("--no-figures", action="store_true")
    _add_train_flags(p)
    return parser


def _cmd_synth(args, overrides):
    graph = dataio.synth_graph(args.nodes, args.edge_prob, args.features, args.seed or 0)
    dataio.save_dataset(args.out, graph)
    print(f"wrote {graph.num_nodes} nodes, {graph.num_edges} edges to {args.out}")
    return EXIT_OK


def _cmd_inject(args, overrides):
    graph = dataio.load_dataset(args.data)
    cfg = injection.InjectionConfig(
        clique_size=args.clique_size,
        clique_count=args.cliques,
        candidate_pool=args.candidate_pool,
        attr_edge_count=args.attr_edges,
        rng_seed=args.seed or 0,
    )
    rng = np.random.default_rng(cfg.rng_seed)
    if args.mode == "structural":
        out, report = injection.inject_structural(graph, cfg, rng)
    elif args.mode == "attributive":
        out, report = injection.inject_attributive(graph, cfg, rng)
    else:
        out, report = injection.inject_both(graph, cfg, rng)
    dataio.save_dataset(args.out, out)
    achieved = injection.anomaly_correlation(out)
    payload = {
        "injected_node_ids": report.injected_node_ids,
        "injected_edge_ids": report.injected_edge_ids,
        "counts": report.counts,
        "anomaly_correlation": achieved,
        "config": {
            "clique_size": cfg.clique_size,
            "clique_count": cfg.clique_count,
            "candidate_pool": cfg.candidate_pool,
            "attr_edge_count": cfg.attr_edge_count,
            "rng_seed": cfg.rng_seed,
            "mode": args.mode,
        },
    }
    with open(Path(args.out) / "injection_report.json", "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(
        f"injected {len(report.injected_node_ids)} nodes, "
        f"{len(report.injected_edge_ids)} edges; anomaly correlation {achieved:.4f}"
    )
    return EXIT_OK


def _dump_one_view(graph, config, path) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(config.seed)
    target = int(np.flatnonzero(graph.degrees > 0)[0])
    vp = build_view_pair(
        graph, target, config.hops, config.subgraph_size, config.augment(), rng
    )
    np.savetxt(path / "x_hat.csv", vp.x_hat, fmt="%.9g", delimiter=",")
    np.savetxt(path / "a_hat.csv", vp.a_hat, fmt="%g", delimiter=",")
    np.savetxt(path / "xs_hat.csv", vp.xs_hat, fmt="%.9g", delimiter=",")
    np.savetxt(path / "ms_hat.csv", vp.ms_hat, fmt="%g", delimiter=",")
    meta = {
        "target": vp.target,
        "target_edge_ids": vp.target_edge_ids.tolist(),
        "n_s": vp.n_s,
        "m_s": vp.m_s,
        "m_tar": vp.m_tar,
        "slots": vp.slots.tolist(),
    }
    with open(path / "view.json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _cmd_train(args, overrides):
    graph = dataio.load_dataset(args.data)
    config = _train_config(args, overrides)
    if args.dump_views:
        _dump_one_view(graph, config, args.dump_views)
    log_path = Path(args.log) if args.log else Path(str(args.out) + ".log.jsonl")

    best, history = train(graph, config)
    with open(log_path, "w") as fh:
        for entry in history:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")
    save_checkpoint(args.out, best.all_parameters(), best.step, best.tau)
    halted = any(e.get("halted") for e in history)
    losses = [e["loss"] for e in history if e["loss"] is not None]
    print(
        f"trained {len(history)} epochs; best loss {min(losses):.6f}; "
        f"checkpoint {args.out}; log {log_path}"
    )
    if halted:
        print("training halted on a numerical failure; checkpoint is the last good state")
        return EXIT_NUMERIC
    return EXIT_OK


def _cmd_score(args, overrides):
    graph = dataio.load_dataset(args.data)
    config = _train_config(args, overrides)
    header, arrays = load_checkpoint(args.ckpt)
    model = ModelState.from_arrays(arrays, header["tau"], header["step"])
    if model.feature_dim != graph.feature_dim:
        raise dataio.DataError(
            f"checkpoint expects {model.feature_dim} features, dataset has {graph.feature_dim}"
        )
    rounds = args.rounds if args.rounds is not None else config.eval_rounds
    table = infer_scores(
        graph,
        model,
        config.weights(),
        config.augment(),
        config.hops,
        config.subgraph_size,
        rounds,
        config.seed,
        threads=args.threads,
    )
    with open(args.out, "w") as fh:
        json.dump(table.to_json_dict(), fh)
        fh.write("\n")
    print(
        f"scored {int((table.node_count > 0).sum())} nodes and "
        f"{int((table.edge_count > 0).sum())} edges over {rounds} rounds -> {args.out}"
    )
    return EXIT_OK


def _cmd_eval(args, overrides):
    graph = dataio.load_dataset(args.data)
    with open(args.scores) as fh:
        payload = json.load(fh)
    if args.task == "node":
        if graph.node_labels is None:
            raise dataio.DataError("dataset has no node labels")
        scores, labels = payload["node_scores"], graph.node_labels
    else:
        if graph.edge_labels is None:
            raise dataio.DataError("dataset has no edge labels")
        scores, labels = payload["edge_scores"], graph.edge_labels
    if len(scores) != len(labels):
        raise dataio.DataError(
            f"scores length {len(scores)} != labels length {len(labels)}"
        )
    report = metrics.evaluate(
        scores,
        labels,
        args.task,
        k=args.k,
        config={"scores": str(args.scores), "data": str(args.data), "k": args.k},
    )
    report.save(args.out)
    roc_csv = Path(args.roc_csv) if args.roc_csv else Path(str(args.out) + ".roc.csv")
    with open(roc_csv, "w") as fh:
        fh.write("fpr,tpr\n")
        for fpr, tpr in report.roc_points:
            fh.write(f"{fpr:.10g},{tpr:.10g}\n")
    if not args.no_figures:
        figures.save_roc_figure(
            report.roc_points, report.auc, report.task, Path(str(args.out) + ".roc.png")
        )
    print(report.summary_line())
    return EXIT_OK


def _parse_grid_values(text, cast):
    return [cast(tok) for tok in text.split(",") if tok]


def _cmd_sweep(args, overrides):
    graph = dataio.load_dataset(args.data)
    base = _train_config(args, overrides)
    grid = {}
    for flag, name, cast in (
        (args.grid_alpha, "alpha", float),
        (args.grid_beta, "beta", float),
        (args.grid_hidden_dim, "hidden_dim", int),
        (args.grid_eval_rounds, "eval_rounds", int),
        (args.grid_tau, "tau", float),
    ):
        if flag:
            grid[name] = _parse_grid_values(flag, cast)
    if not grid:
        raise dataio.DataError("sweep needs at least one --grid-* flag")
    rows = sweeps.run_hyperparameter_sweep(
        graph,
        base,
        grid,
        args.out,
        cache_dir=args.cache_dir,
        threads=args.threads,
        render_figure=not args.no_figures,
    )
    print(f"swept {len(rows)} cells -> {args.out}")
    return EXIT_OK


def _cmd_correlation_sweep(args, overrides):
    graph = dataio.load_dataset(args.data)
    base = _train_config(args, overrides)
    levels = _parse_grid_values(args.levels, float)
    cfg = injection.InjectionConfig(
        clique_size=args.clique_size,
        clique_count=args.cliques,
        candidate_pool=args.candidate_pool,
        attr_edge_count=args.attr_edges,
        rng_seed=base.seed,
    )
    rows = sweeps.run_correlation_sweep(
        graph,
        cfg,
        levels,
        base,
        args.out,
        seeds_per_level=args.seeds_per_level,
        threads=args.threads,
        render_figure=not args.no_figures,
    )
    for row in rows:
        print(
            f"level={row['level']:.2f} achieved={row['achieved']:.3f} "
            f"node_auc={row['node_auc']:.4f} edge_auc={row['edge_auc']:.4f}"
        )
    return EXIT_OK


_COMMANDS = {
    "synth": _cmd_synth,
    "inject": _cmd_inject,
    "train": _cmd_train,
    "score": _cmd_score,
    "eval": _cmd_eval,
    "sweep": _cmd_sweep,
    "correlation-sweep": _cmd_correlation_sweep,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    started = time.perf_counter()
    try:
        code = _COMMANDS[args.verb](args, _load_config_file(args.config))
    except (dataio.DataError, GraphError, injection.InjectionError,
            metrics.MetricError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (NumericsError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    log.debug("%s finished in %.2fs", args.verb, time.perf_counter() - started)
    return code


if __name__ == "__main__":
    sys.exit(main())
