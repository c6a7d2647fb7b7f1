"""Swapped-context cosine discrimination for node and edge anomaly scores.

A node is scored against the pooled dual-view context of its incident edges
(patch level) and the dual-view readout (subgraph level); each incident edge
is scored against the graph-view context row of the node and the graph-view
readout. Disagreement raises the score: S = (a + b) - a*cos(., patch)
- b*cos(., subgraph), so S lies in [0, 2(a + b)] with larger meaning more
anomalous.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import cosine_backward, cosine_forward


@dataclass
class ScoreWeights:
    alpha: float = 0.8  # patch-level weight
    beta: float = 0.6  # subgraph-level weight

    def __post_init__(self):
        if not (0.0 <= self.alpha <= 1.0 and 0.0 <= self.beta <= 1.0):
            raise ValueError("alpha and beta must be in [0, 1]")
        if self.alpha == 0.0 and self.beta == 0.0:
            raise ValueError("alpha and beta cannot both be zero")

    @property
    def max_score(self) -> float:
        return 2.0 * (self.alpha + self.beta)


def pool_edge_context(z_p: np.ndarray) -> np.ndarray:
    """Average-pool the per-target-edge context rows into one vector."""
    if z_p.shape[0] < 1:
        raise ValueError("cannot pool an empty context")
    return (np.add.reduce(z_p, axis=0, dtype=np.float64) / z_p.shape[0]).astype(z_p.dtype)


def node_score(h_t, z_p, z_s, weights: ScoreWeights):
    """Anomaly score of one node; returns (score, ctx) for the backward pass."""
    c_p, ctx_p = cosine_forward(h_t, z_p)
    c_s, ctx_s = cosine_forward(h_t, z_s)
    s = (weights.alpha + weights.beta) - weights.alpha * c_p - weights.beta * c_s
    return s, (ctx_p, ctx_s, weights)


def node_score_backward(ctx, upstream: float):
    """Gradient of the node score with respect to the node embedding only."""
    ctx_p, ctx_s, weights = ctx
    d_p, _ = cosine_backward(ctx_p, -weights.alpha * upstream)
    d_s, _ = cosine_backward(ctx_s, -weights.beta * upstream)
    return d_p + d_s


def edge_scores(z_t, h_p, h_s, weights: ScoreWeights):
    """Anomaly scores of the target edges; the graph-side context vectors are
    broadcast to every row. Returns (scores, ctx)."""
    m = z_t.shape[0]
    out = np.empty(m, dtype=np.float64)
    ctxs = []
    for i in range(m):
        c_p, ctx_p = cosine_forward(z_t[i], h_p)
        c_s, ctx_s = cosine_forward(z_t[i], h_s)
        out[i] = (weights.alpha + weights.beta) - weights.alpha * c_p - weights.beta * c_s
        ctxs.append((ctx_p, ctx_s))
    return out, (ctxs, weights)


def edge_scores_backward(ctx, upstream: np.ndarray):
    """Gradients with respect to the broadcast graph-side vectors (h_p, h_s)."""
    ctxs, weights = ctx
    d_hp = None
    d_hs = None
    for i, (ctx_p, ctx_s) in enumerate(ctxs):
        _, g_p = cosine_backward(ctx_p, -weights.alpha * float(upstream[i]))
        _, g_s = cosine_backward(ctx_s, -weights.beta * float(upstream[i]))
        d_hp = g_p if d_hp is None else d_hp + g_p
        d_hs = g_s if d_hs is None else d_hs + g_s
    return d_hp, d_hs
