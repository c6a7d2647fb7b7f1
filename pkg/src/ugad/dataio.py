"""Dataset directory format and synthetic graph generation.

A dataset directory holds:

* ``edges.csv``        two integer columns with header ``src,dst``
* ``features.csv``     N rows x D real columns, no header, row index = node id
* ``node_labels.csv``  optional, one 0/1 value per node, no header
* ``edge_labels.csv``  optional, one 0/1 value per canonical edge id, no header
* ``meta.json``        {"num_nodes", "num_edges", "feature_dim"} for validation

Edge labels follow the canonical edge id order (sorted i < j pairs).
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .graph import AttributedGraph, GraphError, build_graph


class DataError(ValueError):
    """Invalid or inconsistent dataset input."""


def save_dataset(path, graph: AttributedGraph) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    with open(path / "edges.csv", "w") as fh:
        fh.write("src,dst\n")
        for i, j in graph.edge_list:
            fh.write(f"{i},{j}\n")
    # %.9g round-trips float32 exactly
    np.savetxt(path / "features.csv", graph.features, fmt="%.9g", delimiter=",")
    if graph.node_labels is not None:
        np.savetxt(path / "node_labels.csv", graph.node_labels, fmt="%d")
    if graph.edge_labels is not None:
        np.savetxt(path / "edge_labels.csv", graph.edge_labels, fmt="%d")
    meta = {
        "num_nodes": graph.num_nodes,
        "num_edges": graph.num_edges,
        "feature_dim": graph.feature_dim,
    }
    with open(path / "meta.json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_dataset(path) -> AttributedGraph:
    path = Path(path)
    if not path.is_dir():
        raise DataError(f"dataset directory not found: {path}")
    meta_path = path / "meta.json"
    if not meta_path.is_file():
        raise DataError(f"missing meta.json in {path}")
    with open(meta_path) as fh:
        meta = json.load(fh)
    for key in ("num_nodes", "num_edges", "feature_dim"):
        if key not in meta:
            raise DataError(f"meta.json missing field {key!r}")

    features = np.loadtxt(path / "features.csv", delimiter=",", dtype=np.float32, ndmin=2)
    edges_file = path / "edges.csv"
    with open(edges_file) as fh:
        header = fh.readline().strip()
        if header != "src,dst":
            raise DataError(f"edges.csv must start with a 'src,dst' header, got {header!r}")
        body = fh.read().strip()
    if body:
        raw = np.loadtxt(
            [line for line in body.splitlines()], delimiter=",", dtype=np.int64, ndmin=2
        )
    else:
        raw = np.empty((0, 2), dtype=np.int64)

    node_labels = _load_labels(path / "node_labels.csv")
    edge_labels = _load_labels(path / "edge_labels.csv")
    try:
        graph = build_graph(raw, features, node_labels, edge_labels)
    except GraphError as exc:
        raise DataError(f"invalid dataset {path}: {exc}") from exc

    mismatches = []
    if graph.num_nodes != meta["num_nodes"]:
        mismatches.append(f"num_nodes {graph.num_nodes} != {meta['num_nodes']}")
    if graph.num_edges != meta["num_edges"]:
        mismatches.append(f"num_edges {graph.num_edges} != {meta['num_edges']}")
    if graph.feature_dim != meta["feature_dim"]:
        mismatches.append(f"feature_dim {graph.feature_dim} != {meta['feature_dim']}")
    if mismatches:
        raise DataError(f"meta.json disagrees with data in {path}: " + "; ".join(mismatches))
    return graph


def _load_labels(path: Path):
    if not path.is_file():
        return None
    vals = np.loadtxt(path, dtype=np.int64, ndmin=1)
    return vals.astype(np.int8)


def synth_graph(num_nodes: int, edge_prob: float, feature_dim: int, seed: int) -> AttributedGraph:
    """Seeded Erdos-Renyi graph with standard-normal features."""
    if num_nodes < 1 or not (0.0 <= edge_prob <= 1.0) or feature_dim < 1:
        raise DataError("invalid synthetic graph parameters")
    rng = np.random.default_rng(seed)
    iu, ju = np.triu_indices(num_nodes, k=1)
    keep = rng.random(iu.shape[0]) < edge_prob
    pairs = np.stack([iu[keep], ju[keep]], axis=1)
    features = rng.standard_normal((num_nodes, feature_dim)).astype(np.float32)
    return build_graph(pairs, features)
