"""Synthetic anomaly injection and the node/edge anomaly-coupling metric.

Two injection passes are provided. The structural pass wires sampled node
groups into fully connected cliques; the attributive pass replaces a node's
features with a far-away node's features and attaches a few edges toward
feature-distant nodes. Injected nodes and newly added edges are labeled 1.

``inject_correlated`` is a controllable variant used to sweep the coupling
between node and edge anomalies from 0 to 1.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .graph import AttributedGraph, GraphError, build_graph


class InjectionError(ValueError):
    """Injection preconditions not met."""


@dataclass
class InjectionConfig:
    clique_size: int = 15  # nodes per clique
    clique_count: int = 1  # cliques (also sets the attributive node count)
    candidate_pool: int = 50  # candidates drawn per set for attribute swaps
    attr_edge_count: int = 2  # far-feature edges attached per attributive node
    rng_seed: int = 0

    def __post_init__(self):
        if self.clique_size < 2:
            raise InjectionError("clique_size must be >= 2")
        if self.clique_count < 0:
            raise InjectionError("clique_count must be >= 0")
        if self.candidate_pool < 1:
            raise InjectionError("candidate_pool must be >= 1")
        if not (0 <= self.attr_edge_count <= self.candidate_pool):
            raise InjectionError("attr_edge_count must be in [0, candidate_pool]")


@dataclass
class InjectionReport:
    injected_node_ids: list = field(default_factory=list)
    injected_edge_ids: list = field(default_factory=list)
    counts: dict = field(default_factory=dict)

    def merged_with(self, other: "InjectionReport") -> "InjectionReport":
        counts = dict(self.counts)
        counts.update(other.counts)
        return InjectionReport(
            injected_node_ids=sorted(set(self.injected_node_ids) | set(other.injected_node_ids)),
            injected_edge_ids=sorted(set(self.injected_edge_ids) | set(other.injected_edge_ids)),
            counts=counts,
        )


def _label_arrays(graph: AttributedGraph):
    y_n = (
        graph.node_labels.astype(np.int8).copy()
        if graph.node_labels is not None
        else np.zeros(graph.num_nodes, dtype=np.int8)
    )
    y_e = (
        graph.edge_labels.astype(np.int8).copy()
        if graph.edge_labels is not None
        else np.zeros(graph.num_edges, dtype=np.int8)
    )
    return y_n, y_e


def _rebuild(graph, features, y_n, old_y_e, new_pairs, new_pair_labels):
    """Re-canonicalize the enlarged edge set, carrying labels across the id shift."""
    label_by_key = {}
    n = graph.num_nodes
    for t, (i, j) in enumerate(graph.edge_list):
        label_by_key[int(i) * n + int(j)] = int(old_y_e[t])
    for (i, j), lab in zip(new_pairs, new_pair_labels):
        lo, hi = (i, j) if i < j else (j, i)
        label_by_key[lo * n + hi] = lab
    all_pairs = np.array(sorted(label_by_key.keys()), dtype=np.int64)
    edge_list = np.stack([all_pairs // n, all_pairs % n], axis=1)
    y_e = np.array([label_by_key[int(k)] for k in all_pairs], dtype=np.int8)
    out = AttributedGraph(edge_list, features, node_labels=y_n, edge_labels=y_e)
    new_ids = [out.edge_id(i, j) for i, j in new_pairs]
    return out, new_ids


def inject_structural(graph: AttributedGraph, cfg: InjectionConfig, rng: np.random.Generator):
    """Wire ``clique_count`` groups of ``clique_size`` nodes into full cliques.

    Selected nodes are labeled anomalous; every newly added intra-clique edge
    is labeled anomalous. Pairs that were already connected keep their label.
    """
    total = cfg.clique_size * cfg.clique_count
    if graph.num_nodes < total:
        raise InjectionError(
            f"need {total} nodes for {cfg.clique_count} cliques, graph has {graph.num_nodes}"
        )
    y_n, y_e = _label_arrays(graph)
    chosen = rng.choice(graph.num_nodes, size=total, replace=False)
    new_pairs = []
    for c in range(cfg.clique_count):
        members = np.sort(chosen[c * cfg.clique_size : (c + 1) * cfg.clique_size])
        for a in range(len(members)):
            for b in range(a + 1, len(members)):
                i, j = int(members[a]), int(members[b])
                if graph.edge_id(i, j) < 0:
                    new_pairs.append((i, j))
    y_n[chosen] = 1
    out, new_ids = _rebuild(graph, graph.features, y_n, y_e, new_pairs, [1] * len(new_pairs))
    report = InjectionReport(
        injected_node_ids=sorted(int(v) for v in chosen),
        injected_edge_ids=sorted(new_ids),
        counts={"structural_nodes": total, "structural_edges": len(new_pairs)},
    )
    return out, report


def inject_attributive(
    graph: AttributedGraph,
    cfg: InjectionConfig,
    rng: np.random.Generator,
    exclude_nodes=(),
):
    """Swap features of sampled nodes with far-away rows and add far edges.

    For each selected node, two disjoint candidate sets of ``candidate_pool``
    nodes are drawn. Edges are added to the ``attr_edge_count`` members of the
    second set at largest Euclidean feature distance; the node's feature row
    is replaced by the most distant member of the first set. Nodes already
    labeled anomalous (or listed in ``exclude_nodes``) are never selected.
    """
    total = cfg.clique_size * cfg.clique_count
    if graph.num_nodes < total + 2 * cfg.candidate_pool:
        raise InjectionError(
            f"need {total + 2 * cfg.candidate_pool} nodes, graph has {graph.num_nodes}"
        )
    y_n, y_e = _label_arrays(graph)
    blocked = np.zeros(graph.num_nodes, dtype=bool)
    blocked[np.asarray(list(exclude_nodes), dtype=np.int64)] = True
    blocked |= y_n == 1
    pool = np.flatnonzero(~blocked)
    if pool.size < total:
        raise InjectionError("not enough unlabeled nodes for attributive injection")
    chosen = rng.choice(pool, size=total, replace=False)

    features = graph.features.copy()
    new_pairs = []
    for v in chosen:
        v = int(v)
        others = np.flatnonzero(np.arange(graph.num_nodes) != v)
        cand = rng.choice(others, size=2 * cfg.candidate_pool, replace=False)
        swap_set = cand[: cfg.candidate_pool]
        edge_set = cand[cfg.candidate_pool :]

        d_edge = np.linalg.norm(features[edge_set] - features[v], axis=1)
        far = edge_set[np.argsort(-d_edge, kind="stable")[: cfg.attr_edge_count]]
        for u in far:
            u = int(u)
            if graph.edge_id(v, u) < 0 and (min(v, u), max(v, u)) not in set(new_pairs):
                new_pairs.append((min(v, u), max(v, u)))

        d_swap = np.linalg.norm(features[swap_set] - features[v], axis=1)
        donor = int(swap_set[np.argmax(d_swap)])
        features[v] = features[donor]
        y_n[v] = 1

    out, new_ids = _rebuild(graph, features, y_n, y_e, new_pairs, [1] * len(new_pairs))
    report = InjectionReport(
        injected_node_ids=sorted(int(v) for v in chosen),
        injected_edge_ids=sorted(new_ids),
        counts={"attributive_nodes": total, "attributive_edges": len(new_pairs)},
    )
    return out, report


def inject_both(graph: AttributedGraph, cfg: InjectionConfig, rng: np.random.Generator):
    """Structural followed by attributive injection on disjoint node pools."""
    g1, rep1 = inject_structural(graph, cfg, rng)
    g2, rep2 = inject_attributive(g1, cfg, rng, exclude_nodes=rep1.injected_node_ids)
    # rep1's edge ids predate the second rebuild; remap them
    remapped = [g2.edge_id(*g1.edge_list[t]) for t in rep1.injected_edge_ids]
    rep1 = InjectionReport(rep1.injected_node_ids, sorted(remapped), rep1.counts)
    return g2, rep1.merged_with(rep2)


def anomaly_correlation(graph: AttributedGraph) -> float:
    """Mean, over anomalous nodes, of the anomalous fraction of incident edges.

    Always in [0, 1]. Anomalous nodes of degree zero contribute 0 with a
    warning; a graph without anomalous nodes is an error.
    """
    if graph.node_labels is None or graph.edge_labels is None:
        raise InjectionError("anomaly_correlation requires node and edge labels")
    anomalous = np.flatnonzero(graph.node_labels == 1)
    if anomalous.size == 0:
        raise InjectionError("anomaly_correlation undefined: no anomalous nodes")
    total = 0.0
    for v in anomalous:
        inc = graph.incident_edge_ids(int(v))
        if inc.size == 0:
            warnings.warn(f"anomalous node {int(v)} has degree 0; contributes 0")
            continue
        total += float(graph.edge_labels[inc].sum()) / inc.size
    return total / anomalous.size


def inject_correlated(
    graph: AttributedGraph,
    cfg: InjectionConfig,
    level: float,
    rng: np.random.Generator,
):
    """Attributive-style injection with a tunable node/edge anomaly coupling.

    ``level`` in [0, 1] controls how strongly edge anomalies concentrate on
    the anomalous nodes. Each selected node always gets its features replaced
    (as in :func:`inject_attributive`). Of its ``attr_edge_count`` far
    edges, round(level * s) attach to the node itself; the rest are placed
    between feature-distant pairs of normal nodes, so edge anomalies exist at
    every level. Additionally, enough of the node's pre-existing incident
    edges are relabeled anomalous to bring its anomalous-incident fraction to
    approximately ``level``. The achieved coupling is computed exactly from
    the result and returned alongside it.
    """
    if not (0.0 <= level <= 1.0):
        raise InjectionError("level must be in [0, 1]")
    total = cfg.clique_size * cfg.clique_count
    if graph.num_nodes < total + 2 * cfg.candidate_pool:
        raise InjectionError("graph too small for correlated injection")
    y_n, y_e = _label_arrays(graph)
    pool = np.flatnonzero(y_n == 0)
    chosen = rng.choice(pool, size=total, replace=False)
    chosen_mask = np.zeros(graph.num_nodes, dtype=bool)
    chosen_mask[chosen] = True

    features = graph.features.copy()
    attach = int(round(level * cfg.attr_edge_count))
    new_pairs = []
    relabel_plan = {}  # node -> how many pre-existing incident edges to relabel

    for v in chosen:
        v = int(v)
        others = np.flatnonzero(np.arange(graph.num_nodes) != v)
        cand = rng.choice(others, size=2 * cfg.candidate_pool, replace=False)
        swap_set = cand[: cfg.candidate_pool]
        edge_set = cand[cfg.candidate_pool :]

        d_edge = np.linalg.norm(features[edge_set] - features[v], axis=1)
        ranked = edge_set[np.argsort(-d_edge, kind="stable")]
        for u in ranked[:attach]:
            u = int(u)
            pair = (min(v, u), max(v, u))
            if graph.edge_id(*pair) < 0 and pair not in set(new_pairs):
                new_pairs.append(pair)

        # decoupled far edges between normal node pairs
        normal = np.flatnonzero(~chosen_mask)
        for _ in range(cfg.attr_edge_count - attach):
            for _attempt in range(16):
                a = int(rng.choice(normal))
                c2 = rng.choice(normal[normal != a], size=min(cfg.candidate_pool, normal.size - 1), replace=False)
                d = np.linalg.norm(features[c2] - features[a], axis=1)
                b = int(c2[np.argmax(d)])
                pair = (min(a, b), max(a, b))
                if graph.edge_id(*pair) < 0 and pair not in set(new_pairs):
                    new_pairs.append(pair)
                    break

        d_swap = np.linalg.norm(features[swap_set] - features[v], axis=1)
        donor = int(swap_set[np.argmax(d_swap)])
        features[v] = features[donor]
        y_n[v] = 1

        deg = int(graph.degrees[v])
        want = int(round(level * (deg + attach)))
        relabel_plan[v] = max(0, min(deg, want - attach))

    out, new_ids = _rebuild(graph, features, y_n, y_e, new_pairs, [1] * len(new_pairs))

    # relabel pre-existing incident edges on the rebuilt graph
    y_e2 = out.edge_labels.copy()
    y_e2.setflags(write=True)
    for v, count in relabel_plan.items():
        if count <= 0:
            continue
        inc = out.incident_edge_ids(v)
        inc = inc[y_e2[inc] == 0]
        take = min(count, inc.size)
        if take:
            y_e2[rng.choice(inc, size=take, replace=False)] = 1
    out = AttributedGraph(out.edge_list, out.features, node_labels=out.node_labels, edge_labels=y_e2)

    achieved = anomaly_correlation(out)
    report = InjectionReport(
        injected_node_ids=sorted(int(v) for v in chosen),
        injected_edge_ids=sorted(new_ids),
        counts={
            "attributive_nodes": total,
            "attributive_edges": len(new_pairs),
            "relabeled_edges": int((y_e2 == 1).sum() - len(new_pairs)),
        },
    )
    return out, report, achieved
