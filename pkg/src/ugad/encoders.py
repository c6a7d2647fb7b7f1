"""Graph-view and dual-view encoders plus the two-branch model container.

Both encoders are single propagation layers with PReLU. The graph branch is
followed by a two-layer predictor; the dual branch is not. Readouts average
the context rows only: the appended isolated rows never enter them, and the
isolated rows receive no neighbor messages, so the target embeddings stay
independent of their context by construction.
"""

from __future__ import annotations

import numpy as np

from .nn import Parameter, glorot_uniform, prelu_forward, spmm


def gcn_propagation(a_hat: np.ndarray) -> np.ndarray:
    """Symmetric-normalized propagation with self-loops: D^-1/2 (A+I) D^-1/2.

    The appended isolated slot already carries a diagonal 1, so its entry in
    A+I is 2; the formula is kept literal rather than special-cased.
    """
    a_tilde = a_hat + np.eye(a_hat.shape[0], dtype=a_hat.dtype)
    deg = a_tilde.sum(axis=1)
    assert (deg > 0).all(), "zero-degree row after self-loop insertion"
    d_inv = deg**-0.5
    return d_inv[:, None] * a_tilde * d_inv[None, :]


def hgnn_propagation(ms_hat: np.ndarray) -> np.ndarray:
    """Hypergraph propagation Dv^-1/2 M De^-1 M^T Dv^-1/2 (unit edge weights).

    Dual-node degrees are >= 1 by construction (perturbation never orphans a
    row; appended rows sit in their own hyperedge). Hyperedge degrees can be
    zero when a drawn slot is isolated in the induced subgraph; such columns
    are all-zero and contribute nothing, so their inverse is taken as 0.
    """
    dv = ms_hat.sum(axis=1)
    assert (dv > 0).all(), "orphaned dual node"
    de = ms_hat.sum(axis=0)
    de_inv = np.where(de > 0, 1.0 / np.where(de > 0, de, 1.0), 0.0)
    b = ms_hat * (dv**-0.5)[:, None]
    return (b * de_inv[None, :]) @ b.T


def gcn_forward(a_hat, x_hat, weight, slope) -> np.ndarray:
    """One-layer graph convolution: PReLU(P X W) with P from :func:`gcn_propagation`."""
    p = gcn_propagation(a_hat)
    return prelu_forward(spmm(p, x_hat @ weight), slope)


def hgnn_forward(ms_hat, xs_hat, weight, slope) -> np.ndarray:
    """One-layer hypergraph convolution: PReLU(P* X* W)."""
    p = hgnn_propagation(ms_hat)
    return prelu_forward(spmm(p, xs_hat @ weight), slope)


def predictor_forward(h, w1, slope, w2) -> np.ndarray:
    """Two-layer predictor: (PReLU(H W1)) W2."""
    return prelu_forward(h @ w1, slope) @ w2


def _mean_rows(x: np.ndarray, count: int) -> np.ndarray:
    # 64-bit accumulation for readout sums
    return (np.add.reduce(x[:count], axis=0, dtype=np.float64) / count).astype(x.dtype)


def graph_readout(h_bar: np.ndarray, n_s: int) -> np.ndarray:
    """Mean of the first n_s rows; excludes the appended isolated target row."""
    return _mean_rows(h_bar, n_s)


def hyper_readout(z: np.ndarray, m_s: int) -> np.ndarray:
    """Mean of the first m_s rows; excludes the appended target-edge rows."""
    return _mean_rows(z, m_s)


class ModelState:
    """Online branch (graph encoder + predictor) and target branch (dual encoder).

    The target branch takes no gradients: its weight tracks the online
    convolution weight by exponential moving average and its activation slope
    stays at its initial value. Both convolution weights share the D x D'
    shape, which the moving average requires.
    """

    def __init__(self, feature_dim, hidden_dim, predictor_hidden=512, tau=0.99, seed=0):
        rng = np.random.default_rng(np.random.SeedSequence((int(seed), 0xC0DE)))
        self.feature_dim = int(feature_dim)
        self.hidden_dim = int(hidden_dim)
        self.predictor_hidden = int(predictor_hidden)
        self.tau = float(tau)
        self.step = 0

        self.theta = Parameter("gcn.weight", glorot_uniform(rng, feature_dim, hidden_dim))
        self.slope_gcn = Parameter("gcn.slope", np.float32(0.25))
        self.w1 = Parameter("predictor.w1", glorot_uniform(rng, hidden_dim, predictor_hidden))
        self.slope_mlp = Parameter("predictor.slope", np.float32(0.25))
        self.w2 = Parameter("predictor.w2", glorot_uniform(rng, predictor_hidden, hidden_dim))
        # target branch starts as a copy of the online weight
        self.phi = Parameter("hgnn.weight", self.theta.value.copy())
        self.slope_hgnn = Parameter("hgnn.slope", np.float32(0.25))
        assert self.phi.value.shape == self.theta.value.shape

    def online_parameters(self) -> list[Parameter]:
        return [self.theta, self.slope_gcn, self.w1, self.slope_mlp, self.w2]

    def target_parameters(self) -> list[Parameter]:
        return [self.phi, self.slope_hgnn]

    def all_parameters(self) -> list[Parameter]:
        return self.online_parameters() + self.target_parameters()

    def ema_step(self) -> None:
        from .nn import ema_update

        ema_update(self.phi, self.theta, self.tau)

    def copy(self) -> "ModelState":
        dup = ModelState.__new__(ModelState)
        dup.feature_dim = self.feature_dim
        dup.hidden_dim = self.hidden_dim
        dup.predictor_hidden = self.predictor_hidden
        dup.tau = self.tau
        dup.step = self.step
        for attr in ("theta", "slope_gcn", "w1", "slope_mlp", "w2", "phi", "slope_hgnn"):
            src = getattr(self, attr)
            setattr(dup, attr, Parameter(src.name, src.value.copy()))
        return dup

    def state_parameters(self) -> list[Parameter]:
        return self.all_parameters()

    @classmethod
    def from_arrays(cls, arrays: dict, tau: float, step: int = 0) -> "ModelState":
        theta = arrays["gcn.weight"]
        w1 = arrays["predictor.w1"]
        model = cls.__new__(cls)
        model.feature_dim = theta.shape[0]
        model.hidden_dim = theta.shape[1]
        model.predictor_hidden = w1.shape[1]
        model.tau = float(tau)
        model.step = int(step)
        model.theta = Parameter("gcn.weight", theta)
        model.slope_gcn = Parameter("gcn.slope", arrays["gcn.slope"].reshape(()))
        model.w1 = Parameter("predictor.w1", w1)
        model.slope_mlp = Parameter("predictor.slope", arrays["predictor.slope"].reshape(()))
        model.w2 = Parameter("predictor.w2", arrays["predictor.w2"])
        model.phi = Parameter("hgnn.weight", arrays["hgnn.weight"])
        model.slope_hgnn = Parameter("hgnn.slope", arrays["hgnn.slope"].reshape(()))
        return model
