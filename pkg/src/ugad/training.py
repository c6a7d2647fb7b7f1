"""Training loop (stop-gradient + moving-average target) and R-round scoring.

Gradients flow only into the online branch: the graph convolution weight,
its activation slope, and the predictor. The dual-branch weight is updated
after every optimizer step as an exponential moving average of the online
convolution weight and never accumulates a gradient.

Two performance-minded identities keep the math exact while avoiding
per-view heavy lifting:

* every view feature row is a copy of a full-graph feature row (or the mean
  of two), so per-batch caches ``X @ W`` replace all per-view products over
  the feature dimension, and the convolution-weight gradient is recovered as
  ``X^T G`` from a per-node accumulator;
* all graph views in a batch share the fixed (K+2)-slot shape, so their
  propagation and predictor run as one stacked computation.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .encoders import ModelState, graph_readout, hyper_readout
from .graph import AttributedGraph, all_k_hop_neighbors
from .nn import (
    Adam,
    NumericsError,
    cosine_backward,
    prelu_backward,
    prelu_forward,
)
from .scoring import (
    ScoreWeights,
    edge_scores,
    edge_scores_backward,
    node_score,
    node_score_backward,
    pool_edge_context,
)
from .views import AugmentConfig, ViewPair, build_view_pair

log = logging.getLogger(__name__)

_TRAIN_TAG = 0x7E41
_INFER_TAG = 0x1FE2
_SHUFFLE_TAG = 0x5AFF


@dataclass
class TrainConfig:
    batch_size: int = 300
    epochs: int = 1000
    learning_rate: float = 1e-3
    tau: float = 0.99
    hops: int = 2
    subgraph_size: int = 12
    hidden_dim: int = 128
    seed: int = 0
    eval_rounds: int = 160
    alpha: float = 0.8
    beta: float = 0.6
    feature_mask_prob: float = 0.2
    hyperedge_drop_prob: float = 0.2
    predictor_hidden: int = 512
    symmetric_roles: bool = False

    def __post_init__(self):
        positive = {
            "batch_size": self.batch_size,
            "epochs": self.epochs,
            "learning_rate": self.learning_rate,
            "hops": self.hops,
            "subgraph_size": self.subgraph_size,
            "hidden_dim": self.hidden_dim,
            "eval_rounds": self.eval_rounds,
            "predictor_hidden": self.predictor_hidden,
        }
        for name, value in positive.items():
            if value <= 0:
                raise ValueError(f"{name} must be positive")
        if not (0.0 < self.tau <= 1.0):
            raise ValueError("tau must be in (0, 1]")

    def weights(self) -> ScoreWeights:
        return ScoreWeights(self.alpha, self.beta)

    def augment(self) -> AugmentConfig:
        return AugmentConfig(self.feature_mask_prob, self.hyperedge_drop_prob)

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class ViewScores:
    target: int
    target_edge_ids: np.ndarray
    node: float
    edges: np.ndarray


@dataclass
class ScoreTable:
    """Running per-node and per-edge score means over evaluation rounds."""

    node_sum: np.ndarray
    node_count: np.ndarray
    edge_sum: np.ndarray
    edge_count: np.ndarray
    skipped_isolated: list = field(default_factory=list)

    @classmethod
    def empty(cls, num_nodes: int, num_edges: int) -> "ScoreTable":
        return cls(
            node_sum=np.zeros(num_nodes, dtype=np.float64),
            node_count=np.zeros(num_nodes, dtype=np.int64),
            edge_sum=np.zeros(num_edges, dtype=np.float64),
            edge_count=np.zeros(num_edges, dtype=np.int64),
        )

    def merge(self, other: "ScoreTable") -> None:
        self.node_sum += other.node_sum
        self.node_count += other.node_count
        self.edge_sum += other.edge_sum
        self.edge_count += other.edge_count

    def node_scores(self) -> np.ndarray:
        """Mean node scores; unscored (isolated) nodes carry +inf sentinels."""
        out = np.full(self.node_sum.shape, np.inf)
        scored = self.node_count > 0
        out[scored] = self.node_sum[scored] / self.node_count[scored]
        return out

    def edge_scores(self) -> np.ndarray:
        """Mean edge scores; edges never drawn into a view carry NaN."""
        out = np.full(self.edge_sum.shape, np.nan)
        scored = self.edge_count > 0
        out[scored] = self.edge_sum[scored] / self.edge_count[scored]
        return out

    def to_json_dict(self) -> dict:
        node = [
            float(self.node_sum[i] / self.node_count[i]) if self.node_count[i] else None
            for i in range(len(self.node_sum))
        ]
        edge = [
            float(self.edge_sum[i] / self.edge_count[i]) if self.edge_count[i] else None
            for i in range(len(self.edge_sum))
        ]
        return {
            "node_scores": node,
            "edge_scores": edge,
            "skipped_isolated": sorted(int(v) for v in self.skipped_isolated),
        }


def _per_node_seeds(seed: int, tag: int, index: int, count: int) -> np.ndarray:
    ss = np.random.SeedSequence((int(seed), tag, int(index)))
    return ss.generate_state(count, dtype=np.uint64)


def _dual_input_rows(vp: ViewPair, xw_phi: np.ndarray, dim: int) -> np.ndarray:
    """Rows of (anonymized, perturbed dual features) @ phi via the cache."""
    rows = 0.5 * (xw_phi[vp.dual_pairs[:, 0]] + xw_phi[vp.dual_pairs[:, 1]])
    s_star = np.zeros((vp.m_s + vp.m_tar, dim), dtype=xw_phi.dtype)
    s_star[vp.m_s :] = rows[: vp.m_tar]  # appended rows keep the true features
    rows[vp.masked_rows] = 0.0
    rows[: vp.m_tar] = 0.0
    s_star[: vp.m_s] = rows
    return s_star


def _hyper_embed(vp: ViewPair, model: ModelState, xw_phi: np.ndarray):
    """Dual-branch embeddings via the factored propagation chain.

    Computes Dv^-1/2 M (De^-1 (M^T (Dv^-1/2 S))) without materializing the
    dense propagation matrix; hyperedge degrees of zero invert to zero.
    """
    ms = vp.ms_hat
    s_star = _dual_input_rows(vp, xw_phi, model.hidden_dim)
    dv = ms.sum(axis=1)
    de = ms.sum(axis=0)
    de_inv = np.divide(1.0, de, out=np.zeros_like(de), where=de > 0)
    dvh = (dv**-0.5)[:, None]
    inner = ms.T @ (dvh * s_star)
    u_star = dvh * (ms @ (de_inv[:, None] * inner))
    z = prelu_forward(u_star, model.slope_hgnn.value)
    return z, u_star


class _GraphBatch:
    """Stacked graph-branch forward state for one batch of views."""

    __slots__ = ("views", "p", "u", "h", "v1", "a1", "h_bar", "k1")

    def __init__(self, views: list[ViewPair], model: ModelState, xw_theta: np.ndarray):
        b = len(views)
        k1 = views[0].n_s
        dim = xw_theta.shape[1]
        if any(vp.n_s != k1 for vp in views):
            raise ValueError("views in one batch must share the subgraph size")
        self.views = views
        self.k1 = k1

        slots = np.stack([vp.slots for vp in views])  # (b, k1)
        targets = np.array([vp.target for vp in views])
        s = np.zeros((b, k1 + 1, dim), dtype=xw_theta.dtype)
        s[:, 1:k1] = xw_theta[slots[:, 1:]]
        s[:, k1] = xw_theta[targets]

        a_hat = np.stack([vp.a_hat for vp in views])  # (b, k2, k2)
        a_tilde = a_hat + np.eye(k1 + 1, dtype=a_hat.dtype)
        deg = a_tilde.sum(axis=2)
        d_inv = deg**-0.5
        self.p = d_inv[:, :, None] * a_tilde * d_inv[:, None, :]

        self.u = self.p @ s
        self.h = prelu_forward(self.u, model.slope_gcn.value)
        flat = self.h.reshape(-1, dim)
        self.v1 = flat @ model.w1.value
        self.a1 = prelu_forward(self.v1, model.slope_mlp.value)
        self.h_bar = (self.a1 @ model.w2.value).reshape(b, k1 + 1, dim)

    def backward(self, d_hbar: np.ndarray, model: ModelState, node_sink: np.ndarray):
        """Accumulate predictor/convolution gradients; scatter the rest into
        the per-node sink for the deferred X^T contraction."""
        b, k2, dim = d_hbar.shape
        flat_up = d_hbar.reshape(-1, dim)
        model.w2.grad += self.a1.T @ flat_up
        d_a1 = flat_up @ model.w2.value.T
        d_v1, g_sm = prelu_backward(self.v1, model.slope_mlp.value, d_a1)
        model.slope_mlp.grad += g_sm
        model.w1.grad += self.h.reshape(-1, dim).T @ d_v1
        d_h = (d_v1 @ model.w1.value.T).reshape(b, k2, dim)
        d_u, g_sg = prelu_backward(self.u, model.slope_gcn.value, d_h)
        model.slope_gcn.grad += g_sg
        d_s = np.swapaxes(self.p, 1, 2) @ d_u

        slots = np.stack([vp.slots for vp in self.views])
        targets = np.array([vp.target for vp in self.views])
        np.add.at(node_sink, slots[:, 1:].ravel(), d_s[:, 1 : self.k1].reshape(-1, dim))
        np.add.at(node_sink, targets, d_s[:, self.k1])


def _score_batch(
    views: list[ViewPair],
    model: ModelState,
    weights: ScoreWeights,
    xw_theta: np.ndarray,
    xw_phi: np.ndarray,
    keep_ctx: bool = False,
):
    """Forward one batch; returns (scores per view, graph batch, score ctxs)."""
    gb = _GraphBatch(views, model, xw_theta)
    k1 = gb.k1
    out = []
    ctxs = [] if keep_ctx else None
    for i, vp in enumerate(views):
        h_bar = gb.h_bar[i]
        h_p = h_bar[0]
        h_t = h_bar[k1]
        h_s = graph_readout(h_bar, k1)
        z, u_star = _hyper_embed(vp, model, xw_phi)
        z_p = pool_edge_context(z[: vp.m_tar])
        z_s = hyper_readout(z, vp.m_s)
        s_node, ctx_node = node_score(h_t, z_p, z_s, weights)
        s_edge, ctx_edge = edge_scores(z[vp.m_s :], h_p, h_s, weights)
        out.append(ViewScores(vp.target, vp.target_edge_ids, float(s_node), s_edge))
        if keep_ctx:
            ctxs.append((ctx_node, ctx_edge, u_star))
    return out, gb, ctxs


def forward_view(vp: ViewPair, model: ModelState, weights: ScoreWeights, xw_theta, xw_phi):
    """Score a single view (test/debug convenience around the batched path)."""
    scores, _, _ = _score_batch([vp], model, weights, xw_theta, xw_phi)
    return scores[0], None


def batch_loss(
    graph: AttributedGraph,
    views: list[ViewPair],
    model: ModelState,
    weights: ScoreWeights,
    backward: bool = False,
    symmetric_roles: bool = False,
) -> float:
    """Mean combined loss over a batch: (mean node score + mean edge score)/2.

    With ``backward=True`` gradients are accumulated into the online
    parameters; the dual-branch parameters stay gradient-free unless
    ``symmetric_roles`` routes the edge task into them.
    """
    if not views:
        raise ValueError("batch_loss needs a non-empty batch")
    xw_theta = graph.features @ model.theta.value
    xw_phi = graph.features @ model.phi.value
    b = len(views)

    scores, gb, ctxs = _score_batch(
        views, model, weights, xw_theta, xw_phi, keep_ctx=backward
    )
    total = sum(0.5 * (s.node + float(s.edges.mean())) / b for s in scores)
    if not np.isfinite(total):
        raise NumericsError(f"non-finite batch loss: {total}")
    if not backward:
        return float(total)

    k1 = gb.k1
    dim = model.hidden_dim
    d_hbar = np.zeros((b, k1 + 1, dim), dtype=xw_theta.dtype)
    phi_sink = np.zeros_like(xw_phi) if symmetric_roles else None
    for i, vp in enumerate(views):
        ctx_node, ctx_edge, u_star = ctxs[i]
        g_node = 1.0 / (2.0 * b)
        g_edges = np.full(vp.m_tar, 1.0 / (2.0 * b * vp.m_tar))
        d_hbar[i, k1] += node_score_backward(ctx_node, g_node)
        if symmetric_roles:
            _symmetric_dual_backward(vp, model, ctx_edge, g_edges, u_star, phi_sink)
        else:
            d_hp, d_hs = edge_scores_backward(ctx_edge, g_edges)
            d_hbar[i, 0] += d_hp
            d_hbar[i, :k1] += d_hs / k1

    node_sink = np.zeros_like(xw_theta)
    gb.backward(d_hbar, model, node_sink)
    model.theta.grad += graph.features.T @ node_sink
    if phi_sink is not None:
        model.phi.grad += graph.features.T @ phi_sink
    return float(total)


def _symmetric_dual_backward(vp, model, ctx_edge, g_edges, u_star, phi_sink):
    """Symmetric-roles mode: the dual branch learns from the edge task via
    the isolated target-edge rows; the context vectors stay stop-gradient."""
    per_edge_ctxs, w = ctx_edge
    d_zt = np.zeros((vp.m_tar, model.hidden_dim), dtype=phi_sink.dtype)
    for i, (ctx_p, ctx_s) in enumerate(per_edge_ctxs):
        g_p, _ = cosine_backward(ctx_p, -w.alpha * float(g_edges[i]))
        g_s, _ = cosine_backward(ctx_s, -w.beta * float(g_edges[i]))
        d_zt[i] = g_p + g_s
    d_z = np.zeros_like(u_star)
    d_z[vp.m_s :] = d_zt
    d_us, g_sh = prelu_backward(u_star, model.slope_hgnn.value, d_z)
    model.slope_hgnn.grad += g_sh
    # appended rows are isolated (degree-1 private hyperedges), so the
    # propagation is the identity on them and the gradient stays in place
    half = 0.5 * d_us[vp.m_s :]
    pairs = vp.dual_pairs[: vp.m_tar]
    np.add.at(phi_sink, pairs[:, 0], half)
    np.add.at(phi_sink, pairs[:, 1], half)


def train(graph: AttributedGraph, config: TrainConfig, progress=None):
    """Train on all non-isolated nodes; returns (best model, epoch log).

    The model snapshot with the lowest epoch loss is retained. A non-finite
    loss halts training and returns the last good snapshot.
    """
    weights = config.weights()
    augment = config.augment()
    model = ModelState(
        graph.feature_dim,
        config.hidden_dim,
        config.predictor_hidden,
        config.tau,
        config.seed,
    )
    trained = model.online_parameters()
    if config.symmetric_roles:
        trained = trained + [model.phi, model.slope_hgnn]
    adam = Adam(trained, lr=config.learning_rate)
    khop = all_k_hop_neighbors(graph, config.hops)
    usable = np.flatnonzero(graph.degrees > 0)
    if usable.size == 0:
        raise ValueError("graph has no non-isolated nodes to train on")
    skipped = graph.num_nodes - usable.size
    if skipped:
        log.info("training skips %d isolated nodes", skipped)
    shuffle_rng = np.random.default_rng(
        np.random.SeedSequence((config.seed, _SHUFFLE_TAG))
    )

    history = []
    best_loss = np.inf
    best_model = model.copy()
    for epoch in range(1, config.epochs + 1):
        started = time.perf_counter()
        order = shuffle_rng.permutation(usable)
        seeds = _per_node_seeds(config.seed, _TRAIN_TAG, epoch, graph.num_nodes)
        epoch_sum = 0.0
        seen = 0
        halted = False
        for lo in range(0, order.size, config.batch_size):
            batch = order[lo : lo + config.batch_size]
            views = [
                build_view_pair(
                    graph,
                    int(v),
                    config.hops,
                    config.subgraph_size,
                    augment,
                    np.random.default_rng(int(seeds[v])),
                    khop_cache=khop,
                    materialize_features=False,
                )
                for v in batch
            ]
            try:
                loss = batch_loss(
                    graph, views, model, weights,
                    backward=True, symmetric_roles=config.symmetric_roles,
                )
                adam.step()
            except NumericsError as exc:
                log.error("numerical failure at epoch %d: %s", epoch, exc)
                halted = True
                break
            if not config.symmetric_roles:
                model.ema_step()
            model.step += 1
            epoch_sum += loss * len(views)
            seen += len(views)
        if halted:
            history.append(
                {
                    "epoch": epoch,
                    "loss": None,
                    "wall_time": time.perf_counter() - started,
                    "halted": True,
                }
            )
            break
        epoch_loss = epoch_sum / seen
        history.append(
            {"epoch": epoch, "loss": epoch_loss, "wall_time": time.perf_counter() - started}
        )
        if epoch_loss < best_loss:
            best_loss = epoch_loss
            best_model = model.copy()
        if progress is not None:
            progress(epoch, epoch_loss)
    return best_model, history


def infer_scores(
    graph: AttributedGraph,
    model: ModelState,
    weights: ScoreWeights,
    augment: AugmentConfig,
    hops: int,
    subgraph_size: int,
    rounds: int,
    seed: int,
    threads: int = 1,
) -> ScoreTable:
    """Score every non-isolated node over ``rounds`` resampled views.

    Node scores average the per-round values. Each designated target edge in
    a view contributes one sample to that edge's running mean, so edges
    accumulate contributions from both endpoints across rounds.
    """
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    xw_theta = graph.features @ model.theta.value
    xw_phi = graph.features @ model.phi.value
    khop = all_k_hop_neighbors(graph, hops)
    usable = np.flatnonzero(graph.degrees > 0)
    table = ScoreTable.empty(graph.num_nodes, graph.num_edges)
    table.skipped_isolated = [int(v) for v in np.flatnonzero(graph.degrees == 0)]
    if table.skipped_isolated:
        log.warning(
            "%d isolated nodes cannot be scored and are reported separately",
            len(table.skipped_isolated),
        )

    def run_chunk(chunk: np.ndarray, seeds: np.ndarray) -> ScoreTable:
        part = ScoreTable.empty(graph.num_nodes, graph.num_edges)
        views = [
            build_view_pair(
                graph,
                int(v),
                hops,
                subgraph_size,
                augment,
                np.random.default_rng(int(seeds[v])),
                khop_cache=khop,
                materialize_features=False,
            )
            for v in chunk
        ]
        scores, _, _ = _score_batch(views, model, weights, xw_theta, xw_phi)
        for v, s in zip(chunk, scores):
            part.node_sum[v] += s.node
            part.node_count[v] += 1
            part.edge_sum[s.target_edge_ids] += s.edges
            part.edge_count[s.target_edge_ids] += 1
        return part

    for r in range(rounds):
        seeds = _per_node_seeds(seed, _INFER_TAG, r, graph.num_nodes)
        if threads <= 1:
            table.merge(run_chunk(usable, seeds))
        else:
            chunks = np.array_split(usable, threads)
            with ThreadPoolExecutor(max_workers=threads) as pool:
                parts = list(pool.map(lambda c: run_chunk(c, seeds), chunks))
            for part in parts:  # merged in chunk order: deterministic
                table.merge(part)
    return table
