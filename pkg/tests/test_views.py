import numpy as np
import pytest

from ugad.graph import GraphError, build_graph, dual_transform
from ugad.views import (
    AugmentConfig,
    anonymize_edge_view,
    anonymize_node_view,
    augment_hypergraph,
    build_view_pair,
    dual_of_subgraph,
    extract_subgraph,
    mask_features,
    perturb_memberships,
    sample_target_batch,
    validate_view_pair,
)

from _oracles import random_attributed_graph


def triangle():
    x = np.array([[1, 0], [0, 1], [1, 1]], dtype=np.float32)
    return build_graph([(0, 1), (1, 2), (0, 2)], x)


def path(n=3):
    return build_graph(
        [(i, i + 1) for i in range(n - 1)],
        np.arange(n, dtype=np.float32).reshape(-1, 1),
    )


# --- target sampling ---------------------------------------------------------


def test_sample_targets_star_center():
    g = build_graph([(0, i) for i in range(1, 5)], np.zeros((5, 1), dtype=np.float32))
    rng = np.random.default_rng(0)
    batch = dict(sample_target_batch(g, 5, rng))
    assert len(batch[0]) == 4  # the hub's incident edges
    assert len(batch[3]) == 1


def test_sample_targets_path_endpoint():
    g = path(3)
    batch = dict(sample_target_batch(g, 3, np.random.default_rng(1)))
    assert batch[2].tolist() == [g.edge_id(1, 2)]


def test_sample_targets_full_sweep_covers_every_usable_node():
    rng = np.random.default_rng(2)
    pairs, feats = random_attributed_graph(rng, 80, 0.05)
    g = build_graph(pairs, feats)
    usable = set(np.flatnonzero(g.degrees > 0).tolist())
    batch = sample_target_batch(g, len(usable), np.random.default_rng(3))
    assert {v for v, _ in batch} == usable


def test_sample_targets_skips_isolated_and_errors_when_all_isolated():
    g = build_graph([(0, 1)], np.zeros((4, 1), dtype=np.float32))
    batch = sample_target_batch(g, 2, np.random.default_rng(0))
    assert {v for v, _ in batch} == {0, 1}
    with pytest.raises(GraphError):
        sample_target_batch(g, 3, np.random.default_rng(0))
    empty = build_graph([], np.zeros((3, 1), dtype=np.float32))
    with pytest.raises(GraphError):
        sample_target_batch(empty, 1, np.random.default_rng(0))


# --- subgraph extraction -----------------------------------------------------


def test_extract_triangle_full_induction():
    g = triangle()
    # force draws [b, c] by trying seeds until both appear (K=2 with k=1)
    for seed in range(50):
        sub = extract_subgraph(g, 0, 1, 2, np.random.default_rng(seed))
        if set(sub.slots[1:].tolist()) == {1, 2}:
            break
    else:
        pytest.fail("no seed drew both neighbors")
    assert sub.n_s == 3
    assert sub.m_s == 3
    assert sub.m_tar == 2
    assert sorted(sub.target_edge_ids.tolist()) == [g.edge_id(0, 1), g.edge_id(0, 2)]


def test_extract_forces_direct_neighbor_when_draws_miss():
    # path 0-1-2: 2-hop ball of 0 is {1, 2}; draws of only node 2 give no
    # incident edge, so the first slot must be forced to node 1
    g = path(3)
    for seed in range(200):
        rng = np.random.default_rng(seed)
        sub = extract_subgraph(g, 0, 2, 2, rng)
        assert sub.m_tar >= 1
        if 1 not in sub.slots[1:]:
            pytest.fail("subgraph without any direct neighbor slipped through")


def test_extract_fixed_size_property():
    rng = np.random.default_rng(4)
    pairs, feats = random_attributed_graph(rng, 100, 0.1)
    g = build_graph(pairs, feats)
    usable = np.flatnonzero(g.degrees > 0)
    for i in range(1000):
        v = int(usable[i % usable.size])
        sub = extract_subgraph(g, v, 2, 7, np.random.default_rng(i))
        assert sub.n_s == 8
        assert sub.slots[0] == v
        assert sub.m_tar >= 1
        assert sub.m_tar <= g.degrees[v]


def test_extract_duplicate_neighbor_designates_one_target_copy():
    # star: node 0 with single neighbor 1; all K draws hit node 1
    g = build_graph([(0, 1)], np.zeros((2, 1), dtype=np.float32))
    sub = extract_subgraph(g, 0, 1, 4, np.random.default_rng(0))
    assert sub.n_s == 5
    assert sub.m_s == 4  # four slot copies of the same incident edge
    assert sub.m_tar == 1  # but only one designated target
    assert sub.target_edge_ids.tolist() == [g.edge_id(0, 1)]


def test_extract_rejects_isolated_target():
    g = build_graph([(0, 1)], np.zeros((3, 1), dtype=np.float32))
    with pytest.raises(GraphError):
        extract_subgraph(g, 2, 2, 3, np.random.default_rng(0))


# --- augmentation ------------------------------------------------------------


def test_augment_identity_when_probs_zero():
    g = triangle()
    dual = dual_transform(g)
    out = augment_hypergraph(dual, AugmentConfig(0.0, 0.0), np.random.default_rng(0))
    assert np.array_equal(out.features, dual.features)
    assert (out.incidence != dual.incidence).nnz == 0


def test_augment_full_mask_zeroes_features_only():
    g = triangle()
    dual = dual_transform(g)
    out = augment_hypergraph(dual, AugmentConfig(1.0, 0.0), np.random.default_rng(0))
    assert not out.features.any()
    assert (out.incidence != dual.incidence).nnz == 0


def test_perturb_never_orphans_and_respects_protection():
    rng = np.random.default_rng(5)
    for trial in range(200):
        inc = np.zeros((6, 5), dtype=np.float32)
        for r in range(6):
            cols = rng.choice(5, size=2, replace=False)
            inc[r, cols] = 1.0
        out = perturb_memberships(inc, AugmentConfig(0.0, 0.9), rng, protected_rows=(0, 1))
        assert (out.sum(axis=1) >= 1).all()
        assert np.array_equal(out[:2], inc[:2])
        # deletions only ever remove entries
        assert ((inc - out) >= 0).all()


def test_perturb_monte_carlo_matches_sequential_closed_form():
    # every unprotected row has 2 memberships; under row-major first-wins
    # deletion the expected deletions per row are p + p(1-p)
    p = 0.2
    rows, cols = 40, 30
    rng = np.random.default_rng(6)
    inc = np.zeros((rows, cols), dtype=np.float32)
    for r in range(rows):
        inc[r, rng.choice(cols, size=2, replace=False)] = 1.0
    trials = 3000
    survivors = np.empty(trials)
    for t in range(trials):
        out = perturb_memberships(inc, AugmentConfig(0.0, p), rng)
        survivors[t] = out.sum()
    expected = inc.sum() - rows * (p + p * (1 - p))
    per_trial_sigma = np.sqrt(rows * 0.5)  # loose bound on one trial's std
    assert abs(survivors.mean() - expected) < 3 * per_trial_sigma / np.sqrt(trials)
    # and the naive binomial approximation holds at one-trial resolution
    assert abs(survivors.mean() - (1 - p) * inc.sum()) < 3 * per_trial_sigma


def test_mask_features_expected_rate():
    rng = np.random.default_rng(7)
    feats = np.ones((5000, 3), dtype=np.float32)
    _, mask = mask_features(feats, AugmentConfig(0.2, 0.0), rng)
    assert abs(mask.mean() - 0.2) < 3 * np.sqrt(0.2 * 0.8 / 5000)


# --- anonymization -----------------------------------------------------------


def test_anonymize_node_view_layout():
    g = triangle()
    sub = extract_subgraph(g, 0, 1, 2, np.random.default_rng(1))
    x_hat, a_hat = anonymize_node_view(sub, g.features)
    n = sub.n_s
    assert x_hat.shape == (n + 1, 2)
    assert a_hat.shape == (n + 1, n + 1)
    assert not x_hat[0].any()
    assert np.array_equal(x_hat[n], g.features[0])
    assert np.array_equal(x_hat[1:n], g.features[sub.slots[1:]])
    assert a_hat[n, n] == 1.0
    assert not a_hat[n, :n].any() and not a_hat[:n, n].any()
    assert np.array_equal(a_hat[:n, :n], sub.adj)


def test_anonymize_edge_view_layout():
    g = triangle()
    sub = extract_subgraph(g, 0, 1, 2, np.random.default_rng(1))
    inc, feats = dual_of_subgraph(sub, g.features)
    xs_hat, ms_hat = anonymize_edge_view(inc, feats, sub.m_tar)
    m, n = sub.m_s, sub.n_s
    t = sub.m_tar
    assert xs_hat.shape == (m + t, 2)
    assert ms_hat.shape == (m + t, n + t)
    assert not xs_hat[:t].any()
    assert np.array_equal(xs_hat[m:], feats[:t])
    assert np.array_equal(xs_hat[t:m], feats[t:])
    assert np.array_equal(ms_hat[m:, n:], np.eye(t, dtype=np.float32))
    assert not ms_hat[m:, :n].any() and not ms_hat[:m, n:].any()
    assert np.array_equal(ms_hat[:m, :n], inc)


def test_anonymize_edge_view_uses_supplied_original_features():
    inc = np.array([[1, 1, 0], [0, 1, 1]], dtype=np.float32)
    masked = np.zeros((2, 2), dtype=np.float32)
    original = np.array([[3.0, 4.0], [5.0, 6.0]], dtype=np.float32)
    xs_hat, _ = anonymize_edge_view(inc, masked, 1, target_features=original[:1])
    assert np.array_equal(xs_hat[2], original[0])


def test_anonymize_edge_view_requires_target():
    with pytest.raises(GraphError):
        anonymize_edge_view(np.ones((1, 2), dtype=np.float32), np.ones((1, 2)), 0)


# --- full pipeline -----------------------------------------------------------


def test_view_pairs_satisfy_all_invariants():
    rng = np.random.default_rng(8)
    pairs, feats = random_attributed_graph(rng, 120, 0.06, dim=5)
    g = build_graph(pairs, feats)
    usable = np.flatnonzero(g.degrees > 0)
    for i in range(300):
        v = int(usable[i % usable.size])
        vp = build_view_pair(
            g, v, 2, 9, AugmentConfig(0.3, 0.3), np.random.default_rng(1000 + i)
        )
        validate_view_pair(vp, g)


def test_view_pair_reproducible_for_fixed_seed():
    g = triangle()

    def make():
        return build_view_pair(g, 0, 1, 4, AugmentConfig(), np.random.default_rng(42))

    a, b = make(), make()
    assert np.array_equal(a.x_hat, b.x_hat)
    assert np.array_equal(a.a_hat, b.a_hat)
    assert np.array_equal(a.xs_hat, b.xs_hat)
    assert np.array_equal(a.ms_hat, b.ms_hat)
    assert np.array_equal(a.slots, b.slots)


def test_view_pair_appended_rows_survive_feature_masking():
    g = triangle()
    # full masking: context rows all zero, appended target rows keep originals
    vp = build_view_pair(g, 0, 1, 3, AugmentConfig(1.0, 0.0), np.random.default_rng(0))
    assert not vp.xs_hat[: vp.m_s].any()
    ends = vp.dual_pairs[: vp.m_tar]
    expect = 0.5 * (g.features[ends[:, 0]] + g.features[ends[:, 1]])
    assert np.array_equal(vp.xs_hat[vp.m_s :], expect)


def test_view_pair_unmaterialized_matches_materialized_structure():
    g = triangle()
    full = build_view_pair(g, 0, 1, 4, AugmentConfig(), np.random.default_rng(9))
    slim = build_view_pair(
        g, 0, 1, 4, AugmentConfig(), np.random.default_rng(9), materialize_features=False
    )
    assert slim.x_hat is None and slim.xs_hat is None
    assert np.array_equal(full.a_hat, slim.a_hat)
    assert np.array_equal(full.ms_hat, slim.ms_hat)
    assert np.array_equal(full.slots, slim.slots)
    assert np.array_equal(full.masked_rows, slim.masked_rows)
