"""Attributed graphs, node-edge incidence, and the edge-as-node dual view.

Graphs are undirected and simple. Edges are stored once as (i, j) with
i < j in lexicographic order; the row index of ``edge_list`` is the edge id
used by every downstream label vector and score table, which makes results
reproducible across runs and input orderings.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp


class GraphError(ValueError):
    """Structurally invalid graph input."""


def canonical_edges(edge_pairs, num_nodes: int) -> np.ndarray:
    """Canonicalize raw node-id pairs: orient i < j, deduplicate, sort.

    Directed or duplicated inputs are symmetrized by this step. Raises
    :class:`GraphError` on out-of-range ids or self-loops.
    """
    pairs = np.asarray(edge_pairs, dtype=np.int64)
    if pairs.size == 0:
        return np.empty((0, 2), dtype=np.int64)
    pairs = pairs.reshape(-1, 2)
    if pairs.min() < 0 or pairs.max() >= num_nodes:
        raise GraphError(f"edge endpoint outside [0, {num_nodes})")
    if np.any(pairs[:, 0] == pairs[:, 1]):
        raise GraphError("self-loops are not allowed")
    lo = np.minimum(pairs[:, 0], pairs[:, 1])
    hi = np.maximum(pairs[:, 0], pairs[:, 1])
    return np.unique(np.stack([lo, hi], axis=1), axis=0)


class AttributedGraph:
    """Undirected graph with dense node features and optional 0/1 labels.

    The adjacency is kept in CSR form with unit float32 weights and a zero
    diagonal. Instances are immutable after construction; the backing arrays
    are marked read-only so they can be shared across threads.
    """

    def __init__(self, edge_list, features, node_labels=None, edge_labels=None):
        features = np.ascontiguousarray(features, dtype=np.float32)
        if features.ndim != 2:
            raise GraphError("features must be an N x D matrix")
        n = features.shape[0]
        edge_list = np.asarray(edge_list, dtype=np.int64).reshape(-1, 2)
        m = edge_list.shape[0]
        if m:
            if edge_list.min() < 0 or edge_list.max() >= n:
                raise GraphError(f"edge endpoint outside [0, {n})")
            if np.any(edge_list[:, 0] >= edge_list[:, 1]):
                raise GraphError("edge_list must be canonical: i < j per row")
            keys = edge_list[:, 0] * n + edge_list[:, 1]
            if np.any(np.diff(keys) <= 0):
                raise GraphError("edge_list must be sorted and duplicate-free")
            self._edge_keys = keys
        else:
            self._edge_keys = np.empty(0, dtype=np.int64)

        self.features = features
        self.edge_list = edge_list
        self.node_labels = self._check_labels(node_labels, n, "node")
        self.edge_labels = self._check_labels(edge_labels, m, "edge")

        if m:
            rows = np.concatenate([edge_list[:, 0], edge_list[:, 1]])
            cols = np.concatenate([edge_list[:, 1], edge_list[:, 0]])
            adj = sp.csr_matrix(
                (np.ones(2 * m, dtype=np.float32), (rows, cols)), shape=(n, n)
            )
        else:
            adj = sp.csr_matrix((n, n), dtype=np.float32)
        adj.sort_indices()
        self.adjacency = adj
        self.degrees = np.diff(adj.indptr)

        # node -> incident edge ids, CSR layout (indices sorted per row)
        if m:
            inc = sp.csr_matrix(
                (
                    np.ones(2 * m, dtype=np.float32),
                    (rows, np.concatenate([np.arange(m), np.arange(m)])),
                ),
                shape=(n, m),
            )
            inc.sort_indices()
        else:
            inc = sp.csr_matrix((n, m), dtype=np.float32)
        self._incidence = inc

        for arr in (self.features, self.edge_list, self.node_labels, self.edge_labels):
            if arr is not None:
                arr.setflags(write=False)

    @staticmethod
    def _check_labels(labels, size, kind):
        if labels is None:
            return None
        labels = np.asarray(labels, dtype=np.int8).reshape(-1)
        if labels.shape[0] != size:
            raise GraphError(f"{kind} label vector length {labels.shape[0]} != {size}")
        if labels.size and not np.isin(labels, (0, 1)).all():
            raise GraphError(f"{kind} labels must be 0/1")
        return labels

    @property
    def num_nodes(self) -> int:
        return self.features.shape[0]

    @property
    def num_edges(self) -> int:
        return self.edge_list.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def neighbors(self, v: int) -> np.ndarray:
        a = self.adjacency
        return a.indices[a.indptr[v] : a.indptr[v + 1]]

    def incident_edge_ids(self, v: int) -> np.ndarray:
        inc = self._incidence
        return inc.indices[inc.indptr[v] : inc.indptr[v + 1]]

    def edge_id(self, i: int, j: int) -> int:
        """Edge id for the pair (i, j), or -1 if the edge is absent."""
        if i == j:
            return -1
        lo, hi = (i, j) if i < j else (j, i)
        key = lo * self.num_nodes + hi
        pos = np.searchsorted(self._edge_keys, key)
        if pos < self._edge_keys.size and self._edge_keys[pos] == key:
            return int(pos)
        return -1

    def validate(self) -> None:
        """Assert the structural invariants; raises GraphError on violation."""
        adj = self.adjacency
        if adj.nnz != 2 * self.num_edges:
            raise GraphError("adjacency nonzero count != 2M")
        if adj.diagonal().any():
            raise GraphError("adjacency diagonal must be zero")
        if (adj != adj.T).nnz != 0:
            raise GraphError("adjacency must be symmetric")
        inc = self._incidence
        if self.num_edges:
            col_sums = np.asarray(inc.sum(axis=0)).ravel()
            if not np.all(col_sums == 2):
                raise GraphError("incidence column sums must all equal 2")
            row_sums = np.asarray(inc.sum(axis=1)).ravel()
            if not np.array_equal(row_sums, self.degrees):
                raise GraphError("incidence row sums must equal degrees")


@dataclass
class DualHypergraph:
    """Edges of a source graph seen as nodes, nodes seen as hyperedges.

    ``incidence`` is the transpose of the source graph's node-edge incidence;
    row t of ``features`` is the mean of edge t's endpoint feature rows.
    Fresh duals have exactly two memberships per row; perturbation may lower
    that to one, never to zero.
    """

    incidence: sp.csr_matrix  # M x N
    features: np.ndarray  # M x D

    @property
    def num_dual_nodes(self) -> int:
        return self.incidence.shape[0]

    @property
    def num_hyperedges(self) -> int:
        return self.incidence.shape[1]


def build_graph(edge_pairs, features, node_labels=None, edge_labels=None) -> AttributedGraph:
    """Build an :class:`AttributedGraph` from raw pairs, canonicalizing them.

    Pairs may arrive in either orientation or duplicated; edge ids of the
    result are the canonical sorted order.
    """
    features = np.asarray(features, dtype=np.float32)
    if features.ndim != 2:
        raise GraphError("features must be an N x D matrix")
    edges = canonical_edges(edge_pairs, features.shape[0])
    return AttributedGraph(edges, features, node_labels, edge_labels)


def incidence(graph: AttributedGraph) -> sp.csr_matrix:
    """Node-edge incidence matrix: entry (i, t) = 1 iff node i ends edge t."""
    return graph._incidence


def dual_transform(graph: AttributedGraph) -> DualHypergraph:
    """Transpose the incidence and average endpoint features per edge."""
    if graph.num_edges == 0:
        raise GraphError("dual transform requires at least one edge")
    inc_t = graph._incidence.T.tocsr()
    inc_t.sort_indices()
    i = graph.edge_list[:, 0]
    j = graph.edge_list[:, 1]
    feats = 0.5 * (graph.features[i] + graph.features[j])
    return DualHypergraph(incidence=inc_t, features=feats.astype(np.float32))


def k_hop_neighbors(graph: AttributedGraph, v: int, k: int) -> np.ndarray:
    """Nodes at shortest-path distance in [1, k] from v, ascending id order."""
    if k < 1:
        raise GraphError("hop count must be >= 1")
    if not (0 <= v < graph.num_nodes):
        raise GraphError(f"node id {v} out of range")
    visited = np.zeros(graph.num_nodes, dtype=bool)
    visited[v] = True
    frontier = np.array([v], dtype=np.int64)
    layers = []
    adj = graph.adjacency
    for _ in range(k):
        sub = adj[frontier]
        nxt = np.unique(sub.indices)
        nxt = nxt[~visited[nxt]]
        if nxt.size == 0:
            break
        visited[nxt] = True
        layers.append(nxt)
        frontier = nxt
    if not layers:
        return np.empty(0, dtype=np.int64)
    return np.sort(np.concatenate(layers)).astype(np.int64)


def all_k_hop_neighbors(graph: AttributedGraph, k: int) -> list[np.ndarray]:
    """k-hop neighbor arrays for every node; cached by callers that resample."""
    return [k_hop_neighbors(graph, v, k) for v in range(graph.num_nodes)]
