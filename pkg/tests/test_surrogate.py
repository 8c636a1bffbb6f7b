import numpy as np
import pytest

from somf.regularizers import BallParams, PenaltyParams, column_ball_norms, project_ball
from somf.sampling import Mask, draw_mask
from somf.surrogate import (
    Dictionary,
    SurrogateStats,
    full_dict_update,
    partial_dict_update,
    surrogate_value,
    update_stats_full,
    update_stats_split,
)

PEN = PenaltyParams(0.1, 1.0)


def random_stats(rng, p, k, n=30):
    X, A = rng.standard_normal((p, n)), rng.standard_normal((k, n))
    return SurrogateStats(X @ A.T / n, A @ A.T / n, t=1)


def test_unit_weight_overwrites(rng):
    stats = random_stats(rng, 4, 2)
    x, a = rng.standard_normal(4), rng.standard_normal(2)
    update_stats_full(stats, x, a, 1.0, PEN)
    np.testing.assert_allclose(stats.C, np.outer(a, a))
    np.testing.assert_allclose(stats.B, np.outer(x, a))
    assert stats.loss_offset == pytest.approx(0.5 * x @ x + 0.1 * np.abs(a).sum())


def test_zero_code_scales_down(rng):
    stats = random_stats(rng, 4, 2)
    B0, C0 = stats.B.copy(), stats.C.copy()
    update_stats_full(stats, rng.standard_normal(4), np.zeros(2), 0.25, PEN)
    np.testing.assert_allclose(stats.B, 0.75 * B0)
    np.testing.assert_allclose(stats.C, 0.75 * C0)


def test_harmonic_weights_give_plain_average(rng):
    xs, As = rng.standard_normal((5, 6)), rng.standard_normal((5, 3))
    stats = SurrogateStats.zeros(6, 3)
    for t in range(5):
        update_stats_full(stats, xs[t], As[t], 1.0 / (t + 1), PEN)
    np.testing.assert_allclose(stats.B, sum(np.outer(x, a) for x, a in zip(xs, As)) / 5, atol=1e-14)
    np.testing.assert_allclose(stats.C, sum(np.outer(a, a) for a in As) / 5, atol=1e-14)


def test_split_matches_full(rng):
    x, A = rng.standard_normal((10, 3)), rng.standard_normal((4, 3))
    base = random_stats(rng, 10, 4)
    full = SurrogateStats(base.B.copy(), base.C.copy())
    update_stats_full(full, x, A, 0.3, PEN)
    same = SurrogateStats(base.B.copy(), base.C.copy())
    update_stats_split(same, x, A, 0.3, Mask.full(10), PEN)
    np.testing.assert_array_equal(same.B, full.B)
    split = SurrogateStats(base.B.copy(), base.C.copy())
    update_stats_split(split, x, A, 0.3, draw_mask(rng, 10, 3.0), PEN)
    assert np.max(np.abs(split.B - full.B)) <= 1e-14
    np.testing.assert_array_equal(split.C, full.C)


def test_weight_range():
    with pytest.raises(ValueError):
        update_stats_full(SurrogateStats.zeros(2, 1), np.ones(2), np.ones(1), 0.0, PEN)


def test_single_atom_closed_form():
    # k=1: minimizer is B / C projected on the unit l2 ball
    stats = SurrogateStats(np.array([[0.2], [0.1]]), np.array([[1.0]]))
    d = Dictionary(np.array([[1.0], [0.0]]), BallParams(0.0))
    full_dict_update(d, stats)
    np.testing.assert_allclose(d.D[:, 0], [0.2, 0.1])
    stats = SurrogateStats(np.array([[3.0], [4.0]]), np.array([[1.0]]))
    full_dict_update(d, stats)
    np.testing.assert_allclose(d.D[:, 0], [0.6, 0.8])


def test_feasible_minimizer_is_fixed_point(rng):
    D = rng.standard_normal((5, 3)) * 0.1
    A = rng.standard_normal((3, 20))
    stats = SurrogateStats(D @ A @ A.T / 20, A @ A.T / 20)
    d = Dictionary(D, BallParams(0.0))
    full_dict_update(d, stats)
    np.testing.assert_allclose(d.D, D, atol=1e-12)


@pytest.mark.parametrize("mu", [0.0, 0.5])
def test_many_passes_reach_projected_gradient_fixed_point(rng, mu):
    ball = BallParams(mu)
    stats = random_stats(rng, 12, 3)
    stats.B *= 5
    d = Dictionary(project_ball(rng.standard_normal(12), ball)[:, None].repeat(3, axis=1), ball)
    full_dict_update(d, stats, passes=500)
    # oracle: projected gradient iteration with a fixed step from the same point
    D = d.D.copy()
    step = 1.0 / np.linalg.eigvalsh(stats.C).max()
    grad = D @ stats.C - stats.B
    P = np.column_stack([project_ball(D[:, j] - step * grad[:, j], ball) for j in range(3)])
    np.testing.assert_allclose(P, D, atol=1e-8)


def test_surrogate_never_increases(rng):
    for mu in (0.0, 0.3, 1.0):
        ball = BallParams(mu)
        stats = random_stats(rng, 8, 4)
        d = Dictionary(np.column_stack([project_ball(c, ball) for c in rng.standard_normal((4, 8))]), ball)
        before = surrogate_value(d, stats)
        full_dict_update(d, stats)
        assert surrogate_value(d, stats) <= before + 1e-12
        before = surrogate_value(d, stats)
        partial_dict_update(d, stats, draw_mask(rng, 8, 2.0))
        assert surrogate_value(d, stats) <= before + 1e-12


def test_partial_full_mask_equals_full_pass(rng):
    stats = random_stats(rng, 6, 3)
    D0 = rng.standard_normal((6, 3)) * 0.2
    a, b = Dictionary(D0, BallParams(0.4)), Dictionary(D0, BallParams(0.4))
    full_dict_update(a, stats)
    partial_dict_update(b, stats, Mask.full(6))
    np.testing.assert_allclose(b.D, a.D, atol=1e-15)


def test_partial_respects_frozen_rows_and_ball(rng):
    for mu in (0.0, 0.5, 1.0):
        ball = BallParams(mu)
        stats = random_stats(rng, 10, 3)
        stats.B *= 10
        d = Dictionary(np.column_stack([project_ball(c, ball) for c in rng.standard_normal((3, 10))]), ball)
        mask = draw_mask(rng, 10, 2.0)
        frozen = d.D[mask.complement()].copy()
        partial_dict_update(d, stats, mask)
        np.testing.assert_array_equal(d.D[mask.complement()], frozen)
        assert np.all(column_ball_norms(d.D, ball) <= 1 + 1e-10)
        np.testing.assert_allclose(d.norms, column_ball_norms(d.D, ball), atol=1e-12)


def test_partial_empty_mask_is_noop(rng):
    stats = random_stats(rng, 4, 2)
    d = Dictionary(rng.standard_normal((4, 2)) * 0.3, BallParams(0.0))
    D0 = d.D.copy()
    partial_dict_update(d, stats, Mask(4, np.array([], dtype=np.int64), 2.0))
    np.testing.assert_array_equal(d.D, D0)


def test_degenerate_column_is_skipped(rng):
    stats = SurrogateStats(np.ones((3, 2)), np.diag([1.0, 0.0]))
    d = Dictionary(np.array([[0.1, 0.2], [0.1, 0.2], [0.1, 0.2]]), BallParams(0.0))
    full_dict_update(d, stats)
    np.testing.assert_array_equal(d.D[:, 1], [0.2, 0.2, 0.2])
    assert d.skipped == 1


def test_surrogate_value_examples():
    stats = SurrogateStats(np.array([[1.0], [0.0]]), np.array([[2.0]]), loss_offset=0.5)
    assert surrogate_value(np.array([[1.0], [0.0]]), stats) == pytest.approx(0.5)
    assert surrogate_value(np.zeros((2, 1)), stats) == pytest.approx(0.5)
    assert surrogate_value(np.array([[0.5], [0.0]]), stats) == pytest.approx(0.25)
