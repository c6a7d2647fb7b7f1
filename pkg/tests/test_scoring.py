import numpy as np
import pytest

from ugad.scoring import (
    ScoreWeights,
    edge_scores,
    edge_scores_backward,
    node_score,
    node_score_backward,
    pool_edge_context,
)

from _oracles import central_difference_grad, relative_error


def test_weights_validation():
    with pytest.raises(ValueError):
        ScoreWeights(0.0, 0.0)
    with pytest.raises(ValueError):
        ScoreWeights(1.5, 0.5)
    assert ScoreWeights(1.0, 1.0).max_score == 4.0


def test_pool_single_row_and_mean():
    row = np.array([[3.0, -1.0]])
    assert np.array_equal(pool_edge_context(row), row[0])
    rows = np.array([[2.0, 0.0], [0.0, 2.0]])
    assert np.allclose(pool_edge_context(rows), [1.0, 1.0])


def test_pool_matches_direct_summation():
    rng = np.random.default_rng(0)
    rows = rng.normal(size=(7, 128))
    expect = rows.sum(axis=0) / 7
    assert relative_error(pool_edge_context(rows), expect) < 1e-12


def test_node_score_agreement_limits():
    w = ScoreWeights(1.0, 1.0)
    v = np.array([0.3, -0.4, 1.0])
    s, _ = node_score(v, v, v, w)
    assert s == pytest.approx(0.0, abs=1e-6)
    a = np.array([1.0, 0.0])
    b = np.array([0.0, 1.0])
    s, _ = node_score(a, b, b, w)
    assert s == pytest.approx(2.0)
    s, _ = node_score(a, -a, -a, w)
    assert s == pytest.approx(4.0)  # the true maximum of the raw range


def test_edge_scores_match_scalar_loop():
    rng = np.random.default_rng(1)
    w = ScoreWeights(0.7, 0.3)
    z_t = rng.normal(size=(5, 16))
    h_p = rng.normal(size=16)
    h_s = rng.normal(size=16)
    vec, _ = edge_scores(z_t, h_p, h_s, w)

    def cos(a, b):
        return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))

    for i in range(5):
        expect = (w.alpha + w.beta) - w.alpha * cos(z_t[i], h_p) - w.beta * cos(z_t[i], h_s)
        assert vec[i] == pytest.approx(expect, rel=1e-6)


def test_edge_scores_single_row_equals_node_score_with_roles_swapped():
    rng = np.random.default_rng(2)
    w = ScoreWeights(0.8, 0.6)
    t = rng.normal(size=8)
    p = rng.normal(size=8)
    s = rng.normal(size=8)
    vec, _ = edge_scores(t.reshape(1, -1), p, s, w)
    scalar, _ = node_score(t, p, s, w)
    assert vec[0] == pytest.approx(scalar)


def test_edge_scores_zero_when_all_aligned():
    w = ScoreWeights(0.5, 0.5)
    v = np.array([1.0, 2.0])
    vec, _ = edge_scores(np.tile(v, (3, 1)), v, v, w)
    assert np.allclose(vec, 0.0, atol=1e-6)


def test_score_bounds_random_sample():
    rng = np.random.default_rng(3)
    w = ScoreWeights(0.8, 0.6)
    for _ in range(2000):
        a, b, c = rng.normal(size=(3, 6))
        s, _ = node_score(a, b, c, w)
        assert 0.0 <= s <= w.max_score


def test_scores_scale_invariant():
    rng = np.random.default_rng(4)
    w = ScoreWeights(0.8, 0.6)
    a, b, c = rng.normal(size=(3, 12))
    base, _ = node_score(a, b, c, w)
    for lam in (1e-2, 3.0, 1e3):
        scaled, _ = node_score(lam * a, lam * b, lam * c, w)
        assert scaled == pytest.approx(base, abs=1e-6)


def test_node_score_backward_gradcheck():
    rng = np.random.default_rng(5)
    w = ScoreWeights(0.8, 0.6)
    for _ in range(20):
        h_t = rng.normal(size=10)
        z_p = rng.normal(size=10)
        z_s = rng.normal(size=10)
        _, ctx = node_score(h_t, z_p, z_s, w)
        grad = node_score_backward(ctx, 1.0)
        num = central_difference_grad(
            lambda v: node_score(v, z_p, z_s, w)[0], h_t, h=1e-4
        )
        assert relative_error(grad, num) < 1e-4


def test_edge_scores_backward_gradcheck():
    rng = np.random.default_rng(6)
    w = ScoreWeights(0.8, 0.6)
    for _ in range(10):
        z_t = rng.normal(size=(4, 9))
        h_p = rng.normal(size=9)
        h_s = rng.normal(size=9)
        up = rng.normal(size=4)
        _, ctx = edge_scores(z_t, h_p, h_s, w)
        d_hp, d_hs = edge_scores_backward(ctx, up)
        num_hp = central_difference_grad(
            lambda v: float(edge_scores(z_t, v, h_s, w)[0] @ up), h_p, h=1e-4
        )
        num_hs = central_difference_grad(
            lambda v: float(edge_scores(z_t, h_p, v, w)[0] @ up), h_s, h=1e-4
        )
        assert relative_error(d_hp, num_hp) < 1e-4
        assert relative_error(d_hs, num_hs) < 1e-4
