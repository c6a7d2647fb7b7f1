import numpy as np
import pytest

from ugad.dataio import synth_graph
from ugad.encoders import (
    ModelState,
    gcn_forward,
    graph_readout,
    hgnn_forward,
    hyper_readout,
    predictor_forward,
)
from ugad.graph import build_graph
from ugad.nn import Adam, NumericsError
from ugad.scoring import ScoreWeights, edge_scores, node_score, pool_edge_context
from ugad.training import (
    ScoreTable,
    TrainConfig,
    batch_loss,
    forward_view,
    infer_scores,
    train,
)
from ugad.views import AugmentConfig, build_view_pair

from _oracles import central_difference_grad, relative_error


def small_graph(seed=0, n=24, p=0.18, d=6):
    return synth_graph(n, p, d, seed)


def make_views(graph, targets, k=2, size=5, seed=0, materialize=True, probs=(0.2, 0.2)):
    return [
        build_view_pair(
            graph, int(v), k, size, AugmentConfig(*probs),
            np.random.default_rng(seed + i), materialize_features=materialize,
        )
        for i, v in enumerate(targets)
    ]


def explicit_view_scores(vp, model, weights):
    """Independent scoring route: materialized matrices, no product caches."""
    h = gcn_forward(vp.a_hat, vp.x_hat, model.theta.value, model.slope_gcn.value)
    h_bar = predictor_forward(h, model.w1.value, model.slope_mlp.value, model.w2.value)
    h_p, h_t = h_bar[0], h_bar[vp.n_s]
    h_s = graph_readout(h_bar, vp.n_s)
    z = hgnn_forward(vp.ms_hat, vp.xs_hat, model.phi.value, model.slope_hgnn.value)
    z_p = pool_edge_context(z[: vp.m_tar])
    z_s = hyper_readout(z, vp.m_s)
    s_n, _ = node_score(h_t, z_p, z_s, weights)
    s_e, _ = edge_scores(z[vp.m_s :], h_p, h_s, weights)
    return s_n, s_e


def test_cached_forward_matches_explicit_route():
    g = small_graph(1)
    model = ModelState(g.feature_dim, 8, predictor_hidden=16, seed=2)
    model.ema_step()  # make phi differ from theta
    model.theta.value += 0.01
    w = ScoreWeights(0.8, 0.6)
    usable = np.flatnonzero(g.degrees > 0)
    xw_t = g.features @ model.theta.value
    xw_p = g.features @ model.phi.value
    for i, v in enumerate(usable[:12]):
        vp = make_views(g, [v], seed=100 + i)[0]
        s_n_ref, s_e_ref = explicit_view_scores(vp, model, w)
        scores, _ = forward_view(vp, model, w, xw_t, xw_p)
        assert scores.node == pytest.approx(s_n_ref, rel=1e-4, abs=1e-5)
        assert np.allclose(scores.edges, s_e_ref, rtol=1e-4, atol=1e-5)


def test_batch_loss_single_target_formula():
    g = small_graph(2)
    model = ModelState(g.feature_dim, 8, predictor_hidden=16, seed=0)
    w = ScoreWeights(0.8, 0.6)
    v = int(np.flatnonzero(g.degrees > 0)[0])
    views = make_views(g, [v], seed=5)
    loss = batch_loss(g, views, model, w)
    xw_t = g.features @ model.theta.value
    xw_p = g.features @ model.phi.value
    scores, _ = forward_view(views[0], model, w, xw_t, xw_p)
    assert loss == pytest.approx(0.5 * (scores.node + scores.edges.mean()), rel=1e-6)


def test_batch_loss_empty_batch_rejected():
    g = small_graph(3)
    model = ModelState(g.feature_dim, 8, predictor_hidden=16, seed=0)
    with pytest.raises(ValueError):
        batch_loss(g, [], model, ScoreWeights())


def test_batch_loss_gradients_match_finite_differences():
    # end-to-end analytic gradient of the full online branch against central
    # differences, in float64 for a clean comparison
    g = small_graph(4, n=16, p=0.3, d=4)
    w = ScoreWeights(0.8, 0.6)
    usable = np.flatnonzero(g.degrees > 0)
    views = make_views(g, usable[:3], size=4, seed=9, probs=(0.0, 0.2))

    model = ModelState(g.feature_dim, 5, predictor_hidden=7, seed=3)
    for p in model.all_parameters():
        p.value = p.value.astype(np.float64)
        p.grad = np.zeros_like(p.value)
    g64 = build_graph(g.edge_list, g.features)  # features stay float32; fine

    loss = batch_loss(g64, views, model, w, backward=True)
    assert np.isfinite(loss)

    for param in model.online_parameters():
        analytic = param.grad.copy()

        def loss_at(value, _p=param):
            old = _p.value
            _p.value = value.reshape(old.shape) if value.shape else value
            out = batch_loss(g64, views, model, w)
            _p.value = old
            return out

        numeric = central_difference_grad(loss_at, param.value.copy(), h=1e-4)
        assert relative_error(analytic, numeric) < 1e-3, param.name


def test_stop_gradient_target_parameters_never_accumulate():
    g = small_graph(5)
    model = ModelState(g.feature_dim, 8, predictor_hidden=16, seed=1)
    w = ScoreWeights(0.8, 0.6)
    usable = np.flatnonzero(g.degrees > 0)
    opt = Adam(model.online_parameters(), lr=1e-3)
    rng = np.random.default_rng(0)
    for step in range(100):
        targets = rng.choice(usable, size=4, replace=False)
        views = make_views(g, targets, seed=step * 10, materialize=False)
        batch_loss(g, views, model, w, backward=True)
        assert not model.phi.grad.any(), "target weight accumulated gradient"
        assert not model.slope_hgnn.grad.any(), "target slope accumulated gradient"
        opt.step()
        model.ema_step()


def test_train_tau_one_freezes_target():
    g = small_graph(6)
    cfg = TrainConfig(batch_size=8, epochs=3, hidden_dim=6, subgraph_size=4,
                      eval_rounds=1, seed=0, tau=1.0, predictor_hidden=8)
    model, _ = train(g, cfg)
    init = ModelState(g.feature_dim, 6, predictor_hidden=8, tau=1.0, seed=0)
    assert np.array_equal(model.phi.value, init.phi.value)
    assert not np.array_equal(model.theta.value, init.theta.value)


def test_train_loss_decreases_on_small_graph():
    g = synth_graph(30, 0.15, 8, seed=7)
    cfg = TrainConfig(batch_size=15, epochs=50, hidden_dim=8, subgraph_size=5,
                      eval_rounds=1, seed=1, predictor_hidden=32)
    model, history = train(g, cfg)
    losses = [h["loss"] for h in history]
    assert losses[-1] < losses[0]
    assert min(losses) == pytest.approx(
        min(l for l in losses if l is not None), rel=1e-12
    )


def test_train_returns_best_checkpoint_and_log_fields():
    g = small_graph(8)
    cfg = TrainConfig(batch_size=8, epochs=5, hidden_dim=6, subgraph_size=4,
                      eval_rounds=1, seed=2, predictor_hidden=8)
    model, history = train(g, cfg)
    assert len(history) == 5
    for entry in history:
        assert set(entry) >= {"epoch", "loss", "wall_time"}
        assert entry["wall_time"] >= 0
    assert isinstance(model, ModelState)


def test_train_determinism():
    g = small_graph(9)
    cfg = TrainConfig(batch_size=8, epochs=4, hidden_dim=6, subgraph_size=4,
                      eval_rounds=1, seed=11, predictor_hidden=8)
    m1, h1 = train(g, cfg)
    m2, h2 = train(g, cfg)
    assert [e["loss"] for e in h1] == [e["loss"] for e in h2]
    for a, b in zip(m1.all_parameters(), m2.all_parameters()):
        assert np.array_equal(a.value, b.value)


def test_infer_rounds_one_equals_single_forward():
    g = small_graph(10)
    cfg = TrainConfig(batch_size=8, epochs=2, hidden_dim=6, subgraph_size=4,
                      eval_rounds=1, seed=3, predictor_hidden=8)
    model, _ = train(g, cfg)
    w = cfg.weights()
    table = infer_scores(g, model, w, cfg.augment(), cfg.hops, cfg.subgraph_size,
                         rounds=1, seed=77)
    assert (table.node_count[np.flatnonzero(g.degrees > 0)] == 1).all()
    # reproduce one node's score by hand with the same per-round stream
    from ugad.training import _INFER_TAG, _per_node_seeds

    seeds = _per_node_seeds(77, _INFER_TAG, 0, g.num_nodes)
    v = int(np.flatnonzero(g.degrees > 0)[0])
    vp = build_view_pair(g, v, cfg.hops, cfg.subgraph_size, cfg.augment(),
                         np.random.default_rng(int(seeds[v])))
    xw_t = g.features @ model.theta.value
    xw_p = g.features @ model.phi.value
    scores, _ = forward_view(vp, model, w, xw_t, xw_p)
    assert table.node_scores()[v] == pytest.approx(scores.node)


def test_infer_scores_threaded_deterministic_and_close_to_sequential():
    g = small_graph(11, n=40)
    model = ModelState(g.feature_dim, 6, predictor_hidden=8, seed=4)
    w = ScoreWeights()
    aug = AugmentConfig()
    a = infer_scores(g, model, w, aug, 2, 4, rounds=3, seed=5, threads=1)
    b = infer_scores(g, model, w, aug, 2, 4, rounds=3, seed=5, threads=3)
    c = infer_scores(g, model, w, aug, 2, 4, rounds=3, seed=5, threads=3)
    # threaded runs are bit-reproducible (fixed chunking, fixed merge order)
    assert np.array_equal(b.node_sum, c.node_sum)
    assert np.array_equal(b.edge_sum, c.edge_sum)
    # and agree with sequential up to batching/summation-order rounding
    assert np.array_equal(a.node_count, b.node_count)
    assert np.array_equal(a.edge_count, b.edge_count)
    assert np.allclose(a.node_sum, b.node_sum, rtol=1e-5, atol=1e-7)
    assert np.allclose(a.edge_sum, b.edge_sum, rtol=1e-5, atol=1e-7)


def test_infer_isolated_nodes_reported():
    g = build_graph([(0, 1)], np.random.default_rng(0).normal(size=(4, 3)).astype(np.float32))
    model = ModelState(3, 4, predictor_hidden=4, seed=0)
    table = infer_scores(g, model, ScoreWeights(), AugmentConfig(), 2, 3, 2, 0)
    assert table.skipped_isolated == [2, 3]
    ns = table.node_scores()
    assert np.isinf(ns[2]) and np.isinf(ns[3])
    payload = table.to_json_dict()
    assert payload["node_scores"][2] is None
    assert payload["skipped_isolated"] == [2, 3]


def test_infer_doubling_rounds_consistent_in_expectation():
    # two independent R=24 runs vs one R=48 run agree within Monte Carlo noise
    g = small_graph(12, n=30, p=0.2)
    cfg = TrainConfig(batch_size=10, epochs=3, hidden_dim=6, subgraph_size=4,
                      eval_rounds=1, seed=6, predictor_hidden=8)
    model, _ = train(g, cfg)
    w = cfg.weights()
    aug = cfg.augment()
    t1 = infer_scores(g, model, w, aug, 2, 4, rounds=24, seed=101)
    t2 = infer_scores(g, model, w, aug, 2, 4, rounds=24, seed=202)
    t3 = infer_scores(g, model, w, aug, 2, 4, rounds=48, seed=303)
    usable = np.flatnonzero(g.degrees > 0)
    half = 0.5 * (t1.node_scores()[usable] + t2.node_scores()[usable])
    full = t3.node_scores()[usable]
    spread = np.std(np.concatenate([t1.node_scores()[usable], full]))
    assert abs(half.mean() - full.mean()) < 3 * spread / np.sqrt(usable.size)


def test_nonfinite_loss_halts_with_checkpoint():
    g = small_graph(13)
    cfg = TrainConfig(batch_size=8, epochs=6, hidden_dim=6, subgraph_size=4,
                      eval_rounds=1, seed=7, predictor_hidden=8,
                      learning_rate=1e-3)
    calls = {"n": 0}

    import ugad.training as tr

    original = tr.batch_loss

    def poisoned(*args, **kwargs):
        calls["n"] += 1
        if calls["n"] == 5:
            raise NumericsError("synthetic blow-up")
        return original(*args, **kwargs)

    tr.batch_loss = poisoned
    try:
        model, history = tr.train(g, cfg)
    finally:
        tr.batch_loss = original
    assert any(e.get("halted") for e in history)
    assert isinstance(model, ModelState)  # last good snapshot still returned


def test_score_table_merge_and_json():
    t = ScoreTable.empty(3, 2)
    t.node_sum[0] = 2.0
    t.node_count[0] = 2
    u = ScoreTable.empty(3, 2)
    u.node_sum[0] = 1.0
    u.node_count[0] = 1
    u.edge_sum[1] = 3.0
    u.edge_count[1] = 1
    t.merge(u)
    assert t.node_scores()[0] == 1.0
    payload = t.to_json_dict()
    assert payload["node_scores"][0] == 1.0
    assert payload["node_scores"][1] is None
    assert payload["edge_scores"] == [None, 3.0]
