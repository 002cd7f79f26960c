from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, strategies as st

from passportlab.errors import ArgumentError, NotPSDError, StrategyInfeasibleError
from passportlab.market import MarketModel
from passportlab.paths import (IndexState, PathConfig, mc_estimate, semidefinite_cholesky,
                               simulate_account, simulate_classical_portfolio, simulate_gbm,
                               simulate_index_state, step_normals)
from passportlab.strategy import StrategyField


class TestRandomNumbers:
    def test_slices_are_consistent(self):
        full = step_normals(7, 0, 3, 0, 100, 2)
        part = step_normals(7, 0, 3, 37, 21, 2)
        np.testing.assert_array_equal(full[37:58], part)

    def test_streams_and_steps_differ(self):
        a = step_normals(1, 0, 1, 0, 10, 1)
        assert not np.array_equal(a, step_normals(1, 1, 1, 0, 10, 1))
        assert not np.array_equal(a, step_normals(1, 0, 2, 0, 10, 1))

    def test_moments(self):
        z = step_normals(3, 0, 1, 0, 200_000, 1)[:, 0]
        assert abs(z.mean()) < 0.01
        assert abs(z.std() - 1.0) < 0.01
        assert np.all(np.isfinite(z))

    @given(st.integers(0, 500), st.integers(1, 300))
    def test_any_window_matches_the_full_draw(self, start, count):
        full = step_normals(11, 2, 5, 0, 800, 3)
        np.testing.assert_array_equal(step_normals(11, 2, 5, start, count, 3), full[start:start + count])


class TestCholesky:
    def test_identity(self):
        np.testing.assert_array_equal(semidefinite_cholesky(np.eye(3)), np.eye(3))

    def test_perfect_correlation_has_a_zero_column(self):
        L = semidefinite_cholesky(np.ones((2, 2)))
        np.testing.assert_allclose(L @ L.T, np.ones((2, 2)))
        assert L[1, 1] == 0.0

    def test_rejects_indefinite(self):
        with pytest.raises(NotPSDError):
            semidefinite_cholesky(np.array([[1.0, 2.0], [2.0, 1.0]]))

    @given(st.floats(-0.99, 0.99), st.floats(-0.99, 0.99))
    def test_reconstructs(self, r1, r2):
        c = np.array([[1.0, r1, 0.0], [r1, 1.0, r2], [0.0, r2, 1.0]])
        if np.linalg.eigvalsh(c).min() <= 1e-9:
            return
        L = semidefinite_cholesky(c)
        np.testing.assert_allclose(L @ L.T, c, atol=1e-12)


class TestPathConfig:
    def test_rejects_bad_values(self):
        with pytest.raises(ArgumentError):
            PathConfig(T=0.0)
        with pytest.raises(ArgumentError):
            PathConfig(scheme="milstein")
        with pytest.raises(ArgumentError):
            PathConfig(paths=3, antithetic=True)
        with pytest.raises(ArgumentError):
            PathConfig(steps=4, checkpoints=5)

    def test_checkpoints(self):
        cfg = PathConfig(steps=8, checkpoints=4)
        np.testing.assert_array_equal(cfg.checkpoint_steps(), [0, 2, 4, 6, 8])


class TestGBM:
    def test_zero_volatility_is_constant(self):
        m = MarketModel([0.0, 0.0], np.eye(2), [1.5, 0.7])
        ens = simulate_gbm(m, PathConfig(steps=16, paths=50, checkpoints=4))
        np.testing.assert_array_equal(ens.values[:, :, 0], 1.5)
        np.testing.assert_array_equal(ens.values[:, :, 1], 0.7)

    @pytest.mark.parametrize("scheme", ["euler", "log-euler"])
    def test_martingale(self, scheme):
        m = MarketModel.uncorrelated([0.3])
        ens = simulate_gbm(m, PathConfig(steps=32, paths=40_000, seed=5, scheme=scheme))
        mean, se = mc_estimate(ens)
        assert abs(mean - 1.0) < 4 * se

    def test_perfect_correlation_gives_identical_paths(self):
        m = MarketModel([0.25, 0.25], np.ones((2, 2)), [1.0, 1.0])
        ens = simulate_gbm(m, PathConfig(steps=16, paths=200, checkpoints=16))
        np.testing.assert_allclose(ens.column("S1"), ens.column("S2"), rtol=1e-14)

    def test_lognormal_variance(self):
        m = MarketModel.uncorrelated([0.2])
        ens = simulate_gbm(m, PathConfig(steps=8, paths=100_000, seed=2))
        var = np.var(np.log(ens.terminal("S1")))
        assert var == pytest.approx(0.04, rel=0.02)


class TestDeterminism:
    def test_chunking_and_threads_do_not_change_paths(self):
        m = MarketModel.uncorrelated([0.2, 0.3])
        base = simulate_gbm(m, PathConfig(steps=8, paths=1000, seed=9, chunk=1000))
        for chunk, threads in ((64, 1), (100, 4), (2, 2)):
            other = simulate_gbm(m, PathConfig(steps=8, paths=1000, seed=9, chunk=chunk, threads=threads))
            np.testing.assert_array_equal(base.values, other.values)

    def test_antithetic_chunking(self):
        m = MarketModel.uncorrelated([0.2])
        a = simulate_gbm(m, PathConfig(steps=4, paths=100, antithetic=True, chunk=100))
        b = simulate_gbm(m, PathConfig(steps=4, paths=100, antithetic=True, chunk=6, threads=3))
        np.testing.assert_array_equal(a.values, b.values)

    def test_seed_changes_paths(self):
        m = MarketModel.uncorrelated([0.2])
        a = simulate_gbm(m, PathConfig(steps=4, paths=10, seed=1))
        b = simulate_gbm(m, PathConfig(steps=4, paths=10, seed=2))
        assert not np.array_equal(a.values, b.values)


class TestIndexState:
    @pytest.mark.parametrize("m0", [0.0, 2.0])
    def test_boundaries_absorb(self, m0):
        ens = simulate_index_state(0.5, PathConfig(steps=32, paths=100), m0)
        np.testing.assert_array_equal(ens.terminal("M_N"), m0)

    def test_martingale_and_complement(self):
        ens = simulate_index_state(0.4, PathConfig(steps=64, paths=40_000, seed=4), 1.0)
        mean, se = mc_estimate(ens, column="M_N")
        assert abs(mean - 1.0) < 4 * se
        np.testing.assert_allclose(ens.column("M_N") + ens.column("S_N"), 2.0)
        assert ens.values.min() >= 0.0 and ens.values.max() <= 2.0

    def test_rejects_bad_start(self):
        with pytest.raises(ArgumentError):
            simulate_index_state(0.2, PathConfig(paths=10, steps=2), 2.5)
        with pytest.raises(ArgumentError):
            IndexState(-0.1)


class TestAccount:
    def test_neutral_strategy_freezes_wealth(self):
        ens = simulate_account(0.3, StrategyField.neutral(), PathConfig(steps=32, paths=500), IndexState(1.0, 1.3))
        np.testing.assert_array_equal(ens.terminal("X_N"), 1.3)

    def test_account_is_a_martingale(self):
        cfg = PathConfig(steps=64, paths=40_000, seed=8)
        ens = simulate_account(0.3, StrategyField.stop_loss(), cfg, IndexState(1.0))
        mean, se = mc_estimate(ens, column="X_N")
        assert abs(mean - 1.0) < 4 * se
        assert ens.terminal("X_N").min() >= 0.0

    def test_all_in_the_other_asset_tracks_its_price(self):
        # holding only M: X_N moves like M_N in index units
        cfg = PathConfig(steps=64, paths=200, checkpoints=64)
        ens = simulate_account(0.3, StrategyField.fraction(0.0), cfg, IndexState(1.0, 1.0))
        np.testing.assert_allclose(ens.column("X_N"), ens.column("M_N"), atol=0.05)

    def test_infeasible_strategy_raises(self):
        greedy = StrategyField.smooth(lambda t, s, x: 2.0 * x / s, contract="symmetric", name="greedy")
        with pytest.raises(StrategyInfeasibleError) as info:
            simulate_account(0.2, greedy, PathConfig(steps=4, paths=10), IndexState(1.0))
        assert info.value.step == 0

    def test_classical_strategy_is_refused(self):
        with pytest.raises(ArgumentError):
            simulate_account(0.2, StrategyField.constant([1.0]), PathConfig(steps=4, paths=10), IndexState(1.0))


class TestClassicalPortfolio:
    def test_full_position_replicates_the_asset(self):
        m = MarketModel.uncorrelated([0.25])
        ens = simulate_classical_portfolio(m, StrategyField.constant([1.0]), PathConfig(steps=32, paths=500), p0=0.3)
        np.testing.assert_allclose(ens.terminal("Pi"), 0.3 + ens.terminal("S1") - 1.0, atol=1e-12)

    def test_ito_isometry(self):
        m = MarketModel.uncorrelated([0.3])
        ens = simulate_classical_portfolio(m, StrategyField.constant([1.0]),
                                           PathConfig(steps=64, paths=50_000, seed=6))
        lhs = np.mean(ens.terminal("Pi") ** 2)
        rhs = np.mean(ens.extras["int_s2"][:, 0])
        assert lhs == pytest.approx(rhs, rel=0.03)
        assert rhs == pytest.approx(np.exp(0.09) - 1.0, rel=0.03)

    def test_dyadic_positions_are_martingales(self):
        m = MarketModel.uncorrelated([0.2])
        s = StrategyField.dyadic(1.0, 2, [1, -1, -1, 1])
        ens = simulate_classical_portfolio(m, s, PathConfig(steps=64, paths=30_000, seed=3))
        mean, se = mc_estimate(ens, column="Pi")
        assert abs(mean) < 4 * se

    def test_box_violation_raises(self):
        m = MarketModel.uncorrelated([0.2])
        with pytest.raises(StrategyInfeasibleError):
            simulate_classical_portfolio(m, StrategyField.constant([1.5]), PathConfig(steps=4, paths=10))


class TestEstimate:
    def test_examples(self):
        mean, se = mc_estimate(np.array([1.0, 2.0, 3.0, 4.0]))
        assert mean == 2.5
        assert se == pytest.approx(np.std([1, 2, 3, 4], ddof=1) / 2)
        assert mc_estimate(np.array([5.0])) == (5.0, 0.0)

    def test_payoff_and_pairs(self):
        mean, se = mc_estimate(np.array([1.0, -1.0, 2.0, -2.0]), payoff=lambda x: x, antithetic=True)
        assert (mean, se) == (0.0, 0.0)
        with pytest.raises(ArgumentError):
            mc_estimate(np.array([1.0, 2.0, 3.0]), antithetic=True)
        with pytest.raises(ArgumentError):
            mc_estimate(np.array([]))

    def test_antithetic_reduces_error_for_monotone_payoffs(self):
        m = MarketModel.uncorrelated([0.2])
        plain = mc_estimate(simulate_gbm(m, PathConfig(steps=8, paths=20_000)))
        anti = mc_estimate(simulate_gbm(m, PathConfig(steps=8, paths=20_000, antithetic=True)))
        assert anti[1] < 0.3 * plain[1]
        assert abs(anti[0] - 1.0) < 4 * anti[1] + 1e-4
