"""Donsker-Varadhan estimator, marginal draws and the discrete MI oracle."""
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import central_difference, check_parameter_gradients, max_relative_error, mi_by_hand
from unlearn_lab.mine import (
    EstimationError,
    MarginalRule,
    MiBatch,
    draw_marginal,
    exact_discrete_mi,
    fit_mine,
    mine_objective,
    mine_value,
    sample_discrete_pairs,
    tune_mine,
)
from unlearn_lab.models import ModelShape, init_backbone, init_mine
from unlearn_lab.numeric import ParameterSet, backward_mlp, forward_mlp


def _random_batch(rng, n=9, z_dim=3, groups=4):
    g = rng.integers(0, groups, size=n)
    return MiBatch(rng.normal(size=(n, z_dim)), g, rng.integers(0, groups, size=n))


def _deterministic_data(seed, n, n_eval=0, z_dim=4):
    """Four equiprobable groups, each mapped to its own feature point.

    Returns ``(z, g)`` or, with ``n_eval``, a fit sample and an evaluation sample.
    """
    rng = np.random.default_rng(seed)
    centers = rng.normal(size=(4, z_dim))
    fit = sample_discrete_pairs(np.eye(4) / 4, centers, n, rng)
    if not n_eval:
        return fit
    return fit, sample_discrete_pairs(np.eye(4) / 4, centers, n_eval, rng)


class TestExactMi:
    def test_product_histogram(self):
        joint = np.outer([0.2, 0.5, 0.3], [0.6, 0.4])
        assert exact_discrete_mi(joint) == pytest.approx(0.0, abs=1e-15)

    def test_diagonal(self):
        assert exact_discrete_mi(np.eye(4) / 4) == pytest.approx(math.log(4), rel=1e-15)

    def test_hand_case(self):
        joint = [[0.4, 0.1], [0.1, 0.4]]
        expected = 2 * (0.4 * math.log(1.6) + 0.1 * math.log(0.4))
        assert expected == pytest.approx(0.1927, abs=5e-5)
        assert exact_discrete_mi(np.array(joint)) == pytest.approx(expected, rel=1e-12)

    @given(st.lists(st.lists(st.one_of(st.just(0.0), st.floats(1e-3, 5.0)), min_size=3, max_size=3), min_size=2, max_size=4))
    def test_against_textbook_sum(self, rows):
        joint = np.array(rows)
        if joint.sum() == 0:
            return
        assert exact_discrete_mi(joint) == pytest.approx(mi_by_hand(rows), abs=1e-12)

    def test_invalid_histogram(self):
        with pytest.raises(ValueError):
            exact_discrete_mi(np.zeros((2, 2)))
        with pytest.raises(ValueError):
            exact_discrete_mi(np.array([[0.5, -0.1], [0.3, 0.3]]))


class TestValue:
    def test_constant_statistic_is_exactly_zero(self):
        psi = ParameterSet.zeros([3 + 4, 5, 1])
        batch = _random_batch(np.random.default_rng(0))
        assert mine_value(psi, batch, 4) == 0.0
        assert mine_objective(psi, batch, 4)[0] == 0.0

    def test_constant_bias_cancels(self):
        psi = ParameterSet.zeros([3 + 4, 5, 1])
        psi.layers[-1].bias[:] = 3.7
        batch = _random_batch(np.random.default_rng(1))
        assert mine_value(psi, batch, 4) == pytest.approx(0.0, abs=1e-15)

    def test_stable_for_large_statistics(self):
        rng = np.random.default_rng(2)
        psi = init_mine(3, 4, 5, rng)
        psi.layers[-1].weight *= 500.0
        assert math.isfinite(mine_value(psi, _random_batch(rng), 4))

    def test_empty_batch(self):
        psi = init_mine(3, 4, 5, np.random.default_rng(0))
        empty = MiBatch(np.zeros((0, 3)), [], [])
        with pytest.raises(EstimationError):
            mine_value(psi, empty, 4)
        with pytest.raises(EstimationError):
            mine_objective(psi, empty, 4)

    def test_mismatched_rows(self):
        with pytest.raises(EstimationError):
            MiBatch(np.zeros((3, 2)), [0, 1], [0, 1, 2])

    def test_value_agrees_between_entry_points(self):
        rng = np.random.default_rng(3)
        psi = init_mine(3, 4, 5, rng)
        batch = _random_batch(rng)
        assert mine_objective(psi, batch, 4)[0] == pytest.approx(mine_value(psi, batch, 4), rel=1e-14)


class TestGradients:
    def test_psi_and_z(self):
        rng = np.random.default_rng(4)
        psi = init_mine(3, 4, 6, rng)
        for layer in psi.layers:
            layer.bias[...] = rng.normal(scale=0.1, size=layer.bias.shape)
        batch = _random_batch(rng, n=11)

        def f():
            return mine_value(psi, batch, 4)

        _, grad_psi, grad_z = mine_objective(psi, batch, 4)
        assert check_parameter_gradients(f, psi, grad_psi) < 1e-4
        assert max_relative_error(grad_z, central_difference(f, batch.z)) < 1e-4

    def test_through_backbone(self):
        # chain rule from the estimate into theta
        rng = np.random.default_rng(5)
        shape = ModelShape(in_dim=4, hidden=6, z_dim=3)
        theta = init_backbone(shape, rng)
        psi = init_mine(3, 4, 5, rng)
        x = rng.normal(size=(8, 4))
        g, g_bar = rng.integers(0, 4, size=8), rng.integers(0, 4, size=8)

        def f():
            return mine_value(psi, MiBatch(forward_mlp(theta, x)[1], g, g_bar), 4)

        cache, z = forward_mlp(theta, x)
        _, _, dz = mine_objective(psi, MiBatch(z, g, g_bar), 4)
        grads, _ = backward_mlp(theta, cache, dz)
        assert check_parameter_gradients(f, theta, grads) < 1e-4


class TestMarginal:
    @pytest.mark.parametrize("rule", list(MarginalRule))
    def test_single_group(self, rule):
        g = np.zeros(20, dtype=np.int64)
        assert np.array_equal(draw_marginal(g, rule, 1, 0), g)

    @given(st.lists(st.integers(0, 5), min_size=0, max_size=50), st.integers(0, 1000))
    def test_permute_preserves_multiset(self, groups, seed):
        g = np.array(groups, dtype=np.int64)
        g_bar = draw_marginal(g, MarginalRule.PERMUTE, 6, seed)
        assert sorted(g_bar.tolist()) == sorted(groups)

    def test_uniform_frequencies(self):
        g = np.zeros(10**5, dtype=np.int64)
        g_bar = draw_marginal(g, "uniform-random", 4, 7)
        np.testing.assert_allclose(np.bincount(g_bar, minlength=4) / g.size, 0.25, atol=0.01)

    def test_seeded(self):
        g = np.arange(10) % 3
        assert np.array_equal(draw_marginal(g, "permute", 3, 5), draw_marginal(g, "permute", 3, 5))


class TestTraining:
    def test_zero_lr_leaves_psi(self):
        z, g = _deterministic_data(0, 500)
        psi = init_mine(4, 4, 8, np.random.default_rng(1))
        before = psi.copy()
        fit_mine(psi, z, g, 4, steps=20, batch_size=64, lr=0.0, rng=2)
        assert psi.equals(before)

    def test_backbone_untouched(self):
        rng = np.random.default_rng(3)
        theta = init_backbone(ModelShape(in_dim=5, hidden=6, z_dim=4), rng)
        before = theta.copy()
        x, g = rng.normal(size=(300, 5)), rng.integers(0, 4, size=300)
        psi = init_mine(4, 4, 8, rng)
        tune_mine(psi, theta, x, g, 4, steps=10, batch_size=64, lr=0.1, rng=4)
        assert theta.equals(before)
        assert not psi.equals(init_mine(4, 4, 8, np.random.default_rng(3)))

    def test_needs_a_step(self):
        psi = init_mine(4, 4, 8, np.random.default_rng(0))
        with pytest.raises(ValueError):
            tune_mine(psi, ParameterSet.zeros([5, 4]), np.zeros((3, 5)), np.zeros(3, int), 4, 0, 2, 0.1)

    def test_no_data(self):
        psi = init_mine(4, 4, 8, np.random.default_rng(0))
        with pytest.raises(EstimationError):
            fit_mine(psi, np.zeros((0, 4)), np.zeros(0, int), 4, 1, 8, 0.1)

    def test_hundred_steps_beat_init(self):
        (z, g), (ze, ge) = _deterministic_data(1, 3000, 4000)
        rng = np.random.default_rng(2)
        psi = init_mine(4, 4, 100, rng)
        batch = MiBatch(ze, ge, draw_marginal(ge, "permute", 4, 3))
        start = mine_value(psi, batch, 4)
        fit_mine(psi, z, g, 4, 100, 256, 0.1, rng=rng)
        assert mine_value(psi, batch, 4) > start

    def test_more_steps_help_in_median(self):
        def estimate(seed, steps):
            (z, g), (ze, ge) = _deterministic_data(seed, 3000, 4000)
            rng = np.random.default_rng(seed)
            psi = init_mine(4, 4, 100, rng)
            fit_mine(psi, z, g, 4, steps, 256, 0.1, rng=rng)
            return mine_value(psi, MiBatch(ze, ge, draw_marginal(ge, "permute", 4, seed)), 4)

        short = np.median([estimate(s, 10) for s in range(10)])
        long = np.median([estimate(s, 100) for s in range(10)])
        assert long >= short

    def test_fit_is_seeded(self):
        z, g = _deterministic_data(4, 600)
        a = fit_mine(init_mine(4, 4, 8, np.random.default_rng(0)), z, g, 4, 15, 64, 0.1, rng=9)
        b = fit_mine(init_mine(4, 4, 8, np.random.default_rng(0)), z, g, 4, 15, 64, 0.1, rng=9)
        assert a.equals(b)
