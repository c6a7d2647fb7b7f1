"""Per-target view construction: sampling, dual views, and anonymization.

For a target node we extract a fixed-size enclosing subgraph (slot 0 is the
target, K more slots drawn with replacement from its k-hop neighborhood),
take its edge-as-node dual, perturb the dual, and anonymize both views:

* graph view: the target's context row is zeroed and its true feature row is
  re-attached as an extra isolated slot, so its independent embedding cannot
  leak context and the context cannot leak the target.
* dual view: the rows of the edges incident to the target get the same
  treatment, with an identity block wiring each appended row to a fresh
  private hyperedge.

Duplicate draws become distinct slots that share the original's feature and
adjacency pattern. Each distinct incident edge of the target is designated
once (first occurrence in slot order); surplus copies stay ordinary context.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .graph import AttributedGraph, DualHypergraph, GraphError, k_hop_neighbors

log = logging.getLogger(__name__)

FORCE_INCLUDE_RETRIES = 3

_TRIU_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _triu_pairs(n: int):
    cached = _TRIU_CACHE.get(n)
    if cached is None:
        cached = _TRIU_CACHE[n] = np.triu_indices(n, k=1)
    return cached


def _sorted_member(sorted_ids: np.ndarray, queries: np.ndarray) -> np.ndarray:
    """Vectorized membership of queries in a sorted id array."""
    if sorted_ids.size == 0:
        return np.zeros(queries.shape, dtype=bool)
    pos = np.searchsorted(sorted_ids, queries)
    pos_c = np.minimum(pos, sorted_ids.size - 1)
    return sorted_ids[pos_c] == queries


@dataclass
class AugmentConfig:
    feature_mask_prob: float = 0.2
    hyperedge_drop_prob: float = 0.2

    def __post_init__(self):
        for p in (self.feature_mask_prob, self.hyperedge_drop_prob):
            if not (0.0 <= p < 1.0) and p != 1.0:
                raise ValueError("augmentation probabilities must be in [0, 1]")


@dataclass
class Subgraph:
    """Pre-anonymization enclosing subgraph of one target node.

    ``slot_edges`` lists induced slot pairs (p < q) with the designated
    target edges first; ``edge_gids`` maps each row to the original edge id.
    """

    target: int
    slots: np.ndarray  # (K+1,) original node ids, slots[0] == target
    adj: np.ndarray  # (K+1, K+1) induced 0/1 adjacency, float32
    slot_edges: np.ndarray  # (M_s, 2) slot index pairs, targets first
    edge_gids: np.ndarray  # (M_s,) original edge id per slot edge
    m_tar: int  # number of designated target edges
    target_edge_ids: np.ndarray  # (m_tar,) original edge ids, ascending

    @property
    def n_s(self) -> int:
        return len(self.slots)

    @property
    def m_s(self) -> int:
        return len(self.slot_edges)


@dataclass
class ViewPair:
    """One training/inference instance: anonymized graph and dual views."""

    target: int
    target_edge_ids: np.ndarray
    n_s: int
    m_s: int
    m_tar: int
    a_hat: np.ndarray  # (n_s+1, n_s+1)
    ms_hat: np.ndarray  # (m_s+m_tar, n_s+m_tar)
    x_hat: np.ndarray | None  # (n_s+1, D), None when features are not materialized
    xs_hat: np.ndarray | None  # (m_s+m_tar, D)
    slots: np.ndarray  # (n_s,) original node ids
    dual_pairs: np.ndarray  # (m_s, 2) original endpoint node ids, target-first order
    dual_gids: np.ndarray  # (m_s,) original edge ids, target-first order
    masked_rows: np.ndarray  # (m_s,) bool, dual rows zeroed by feature masking


def sample_target_batch(graph: AttributedGraph, batch_size: int, rng: np.random.Generator):
    """Uniformly sample distinct non-isolated targets with their incident edges."""
    pool = np.flatnonzero(graph.degrees > 0)
    skipped = graph.num_nodes - pool.size
    if pool.size == 0:
        raise GraphError("all nodes are isolated; nothing to sample")
    if skipped:
        log.info("excluding %d isolated nodes from target sampling", skipped)
    if batch_size > pool.size:
        raise GraphError(f"batch size {batch_size} exceeds {pool.size} usable nodes")
    targets = rng.choice(pool, size=batch_size, replace=False)
    return [(int(v), graph.incident_edge_ids(int(v)).copy()) for v in targets]


def extract_subgraph(
    graph: AttributedGraph,
    target: int,
    hops: int,
    size: int,
    rng: np.random.Generator,
    khop_cache=None,
) -> Subgraph:
    """Draw ``size`` slots with replacement from the target's k-hop ball.

    Guarantees at least one designated target edge: after a few redraws, the
    first draw slot is forced to a direct neighbor of the target.
    """
    if graph.degrees[target] == 0:
        raise GraphError(f"target {target} is isolated")
    if khop_cache is not None:
        ball = khop_cache[target]
    else:
        ball = k_hop_neighbors(graph, target, hops)
    if ball.size == 0:
        raise GraphError(f"target {target} has an empty {hops}-hop neighborhood")

    direct = graph.neighbors(target)  # CSR indices are sorted
    draws = ball[rng.integers(0, ball.size, size=size)]
    for _ in range(FORCE_INCLUDE_RETRIES):
        if _sorted_member(direct, draws).any():
            break
        draws = ball[rng.integers(0, ball.size, size=size)]
    if not _sorted_member(direct, draws).any():
        draws = draws.copy()
        draws[0] = direct[rng.integers(0, direct.size)]

    slots = np.empty(size + 1, dtype=np.int64)
    slots[0] = target
    slots[1:] = draws
    n_slots = slots.size

    # vectorized pair lookup against the sorted canonical edge keys; a pair
    # of duplicate slots yields a diagonal key which never matches an edge,
    # so duplicates of one original are not mutually adjacent
    iu, ju = _triu_pairs(n_slots)
    lo = np.minimum(slots[iu], slots[ju])
    hi = np.maximum(slots[iu], slots[ju])
    keys = lo * graph.num_nodes + hi
    pos = np.searchsorted(graph._edge_keys, keys)
    pos_c = np.minimum(pos, max(graph.num_edges - 1, 0))
    present = (
        (graph.num_edges > 0)
        & (pos < graph.num_edges)
        & (graph._edge_keys[pos_c] == keys)
    )

    adj = np.zeros((n_slots, n_slots), dtype=np.float32)
    adj[iu[present], ju[present]] = 1.0
    adj += adj.T

    pairs = np.stack([iu[present], ju[present]], axis=1).astype(np.int64)
    gids = pos[present].astype(np.int64)

    # designate the first slot-order occurrence of each distinct incident edge
    seen: set[int] = set()
    designated = []
    for row in np.flatnonzero(pairs[:, 0] == 0):
        g = int(gids[row])
        if g not in seen:
            seen.add(g)
            designated.append(row)
    designated = np.array(sorted(designated, key=lambda r: gids[r]), dtype=np.int64)
    keep = np.ones(len(pairs), dtype=bool)
    keep[designated] = False
    order = np.concatenate([designated, np.flatnonzero(keep)]).astype(np.int64)

    target_ids = gids[designated]
    return Subgraph(
        target=target,
        slots=slots,
        adj=adj,
        slot_edges=pairs[order],
        edge_gids=gids[order],
        m_tar=len(designated),
        target_edge_ids=target_ids,
    )


def perturb_memberships(
    incidence: np.ndarray,
    cfg: AugmentConfig,
    rng: np.random.Generator,
    protected_rows=(),
) -> np.ndarray:
    """Drop incidence nonzeros i.i.d., never orphaning a row or a protected row.

    Nonzeros are visited in row-major order; a flagged deletion is skipped if
    it would leave its row with zero memberships or touches a protected row.
    """
    out = incidence.copy()
    protected = set(int(r) for r in protected_rows)
    rows, cols = np.nonzero(incidence)
    flags = rng.random(rows.size) < cfg.hyperedge_drop_prob
    row_counts = incidence.astype(bool).sum(axis=1).astype(np.int64)
    for r, c, f in zip(rows, cols, flags):
        if not f or int(r) in protected:
            continue
        if row_counts[r] <= 1:
            continue
        out[r, c] = 0
        row_counts[r] -= 1
    return out


def mask_features(features: np.ndarray, cfg: AugmentConfig, rng: np.random.Generator):
    """Zero feature rows i.i.d.; returns (masked features, bool mask)."""
    mask = rng.random(features.shape[0]) < cfg.feature_mask_prob
    out = features.copy()
    out[mask] = 0
    return out, mask


def augment_hypergraph(
    dual: DualHypergraph,
    cfg: AugmentConfig,
    rng: np.random.Generator,
    protected_rows=(),
) -> DualHypergraph:
    """Feature masking followed by membership perturbation on a dual view."""
    feats, _ = mask_features(dual.features, cfg, rng)
    dense = np.asarray(dual.incidence.todense(), dtype=np.float32)
    dense = perturb_memberships(dense, cfg, rng, protected_rows)
    return DualHypergraph(incidence=sp.csr_matrix(dense), features=feats)


def anonymize_node_view(sub: Subgraph, features: np.ndarray):
    """Zero the target's context row and append its true row as an isolated slot."""
    n_s = sub.n_s
    d = features.shape[1]
    x_hat = np.zeros((n_s + 1, d), dtype=features.dtype)
    x_hat[1:n_s] = features[sub.slots[1:]]
    x_hat[n_s] = features[sub.target]
    a_hat = np.zeros((n_s + 1, n_s + 1), dtype=np.float32)
    a_hat[:n_s, :n_s] = sub.adj
    a_hat[n_s, n_s] = 1.0
    return x_hat, a_hat


def anonymize_edge_view(
    incidence: np.ndarray,
    features: np.ndarray,
    m_tar: int,
    target_features: np.ndarray | None = None,
):
    """Zero the first ``m_tar`` dual rows and append isolated copies of them.

    ``incidence`` and ``features`` must already be ordered target-first. The
    appended rows take ``target_features`` when given (the unperturbed rows),
    else the current first ``m_tar`` feature rows.
    """
    if m_tar < 1:
        raise GraphError("at least one target edge is required")
    m_s, n_s = incidence.shape
    d = features.shape[1]
    if target_features is None:
        target_features = features[:m_tar]
    xs_hat = np.zeros((m_s + m_tar, d), dtype=features.dtype)
    xs_hat[m_tar:m_s] = features[m_tar:]
    xs_hat[m_s:] = target_features
    ms_hat = np.zeros((m_s + m_tar, n_s + m_tar), dtype=np.float32)
    ms_hat[:m_s, :n_s] = incidence
    ms_hat[m_s:, n_s:] = np.eye(m_tar, dtype=np.float32)
    return xs_hat, ms_hat


def dual_of_subgraph(sub: Subgraph, features: np.ndarray):
    """Dense dual of the slot graph, rows in the subgraph's target-first order.

    Returns (incidence (M_s, K+1), dual feature rows (M_s, D)).
    """
    m_s = sub.m_s
    inc = np.zeros((m_s, sub.n_s), dtype=np.float32)
    rows = np.arange(m_s)
    inc[rows, sub.slot_edges[:, 0]] = 1.0
    inc[rows, sub.slot_edges[:, 1]] = 1.0
    ends = sub.slots[sub.slot_edges]
    feats = 0.5 * (features[ends[:, 0]] + features[ends[:, 1]])
    return inc, feats


def build_view_pair(
    graph: AttributedGraph,
    target: int,
    hops: int,
    size: int,
    augment: AugmentConfig,
    rng: np.random.Generator,
    khop_cache=None,
    materialize_features: bool = True,
) -> ViewPair:
    """Full per-target pipeline: sample, dualize, perturb, anonymize.

    With ``materialize_features=False`` the D-dimensional matrices are left
    out (the trainer recovers them from the index fields and feature
    products); the structural matrices are always present.
    """
    sub = extract_subgraph(graph, target, hops, size, rng, khop_cache)
    inc, dual_feats = dual_of_subgraph(sub, graph.features)

    masked_feats, mask = mask_features(dual_feats, augment, rng)
    inc_aug = perturb_memberships(inc, augment, rng, protected_rows=range(sub.m_tar))

    x_hat = xs_hat = None
    if materialize_features:
        x_hat, a_hat = anonymize_node_view(sub, graph.features)
        xs_hat, _ = anonymize_edge_view(
            inc_aug, masked_feats, sub.m_tar, target_features=dual_feats[: sub.m_tar]
        )
    else:
        _, a_hat = anonymize_node_view(sub, np.zeros((graph.num_nodes, 0), dtype=np.float32))
    _, ms_hat = anonymize_edge_view(
        inc_aug, np.zeros((sub.m_s, 0), dtype=np.float32), sub.m_tar
    )

    ends = sub.slots[sub.slot_edges]
    return ViewPair(
        target=target,
        target_edge_ids=sub.target_edge_ids,
        n_s=sub.n_s,
        m_s=sub.m_s,
        m_tar=sub.m_tar,
        a_hat=a_hat,
        ms_hat=ms_hat,
        x_hat=x_hat,
        xs_hat=xs_hat,
        slots=sub.slots,
        dual_pairs=ends.astype(np.int64),
        dual_gids=sub.edge_gids,
        masked_rows=mask,
    )


def validate_view_pair(vp: ViewPair, graph: AttributedGraph) -> None:
    """Check every structural invariant of a materialized view pair."""
    assert vp.m_tar >= 1, "view without a target edge"
    n1 = vp.n_s + 1
    assert vp.a_hat.shape == (n1, n1)
    assert vp.ms_hat.shape == (vp.m_s + vp.m_tar, vp.n_s + vp.m_tar)
    # target slot isolation in the graph view
    assert vp.a_hat[vp.n_s, vp.n_s] == 1.0
    assert not vp.a_hat[vp.n_s, : vp.n_s].any()
    assert not vp.a_hat[: vp.n_s, vp.n_s].any()
    # identity block and zero blocks in the dual view
    tail = vp.ms_hat[vp.m_s :, vp.n_s :]
    assert np.array_equal(tail, np.eye(vp.m_tar, dtype=np.float32))
    assert not vp.ms_hat[vp.m_s :, : vp.n_s].any()
    assert not vp.ms_hat[: vp.m_s, vp.n_s :].any()
    # no dual row orphaned by perturbation
    assert (vp.ms_hat[: vp.m_s].sum(axis=1) >= 1).all()
    # target-edge rows keep both memberships
    assert (vp.ms_hat[: vp.m_tar].sum(axis=1) == 2).all()
    if vp.x_hat is not None:
        assert not vp.x_hat[0].any(), "target context row must be all-zero"
        assert np.array_equal(vp.x_hat[vp.n_s], graph.features[vp.target])
        assert not vp.xs_hat[: vp.m_tar].any(), "target dual rows must be all-zero"
        ends = vp.dual_pairs[: vp.m_tar]
        expect = 0.5 * (graph.features[ends[:, 0]] + graph.features[ends[:, 1]])
        assert np.allclose(vp.xs_hat[vp.m_s :], expect)
    # designated target edges are incident to the target and distinct
    assert len(set(vp.target_edge_ids.tolist())) == vp.m_tar
    for gid in vp.target_edge_ids:
        i, j = graph.edge_list[gid]
        assert vp.target in (i, j)
