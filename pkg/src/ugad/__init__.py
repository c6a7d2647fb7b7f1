"""Unified node and edge anomaly detection on attributed graphs.

Anomalies are scored without labels: a bootstrapped two-branch model embeds
each node's enclosing subgraph and the dual (edge-as-node) view of that
subgraph, then measures how poorly the target node or edge agrees with its
swapped context. High disagreement means anomalous.
"""

from .graph import (
    AttributedGraph,
    DualHypergraph,
    GraphError,
    build_graph,
    dual_transform,
    incidence,
    k_hop_neighbors,
)
from .injection import (
    InjectionConfig,
    InjectionReport,
    anomaly_correlation,
    inject_attributive,
    inject_both,
    inject_correlated,
    inject_structural,
)
from .metrics import EvalReport, evaluate, precision_recall_at_k, roc_auc, roc_curve
from .scoring import ScoreWeights, edge_scores, node_score, pool_edge_context
from .training import ScoreTable, TrainConfig, batch_loss, infer_scores, train
from .views import AugmentConfig, ViewPair, build_view_pair, extract_subgraph

__version__ = "0.1.0"

__all__ = [
    "AttributedGraph",
    "AugmentConfig",
    "DualHypergraph",
    "EvalReport",
    "GraphError",
    "InjectionConfig",
    "InjectionReport",
    "ScoreTable",
    "ScoreWeights",
    "TrainConfig",
    "ViewPair",
    "anomaly_correlation",
    "batch_loss",
    "build_graph",
    "build_view_pair",
    "dual_transform",
    "edge_scores",
    "evaluate",
    "extract_subgraph",
    "incidence",
    "infer_scores",
    "inject_attributive",
    "inject_both",
    "inject_correlated",
    "inject_structural",
    "k_hop_neighbors",
    "node_score",
    "pool_edge_context",
    "precision_recall_at_k",
    "roc_auc",
    "roc_curve",
    "train",
]
