from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from passportlab.errors import ArgumentError, HypothesisError
from passportlab.market import CoefficientField, UnivariatePayoff
from passportlab.pde import SpaceTimeGrid
from passportlab.structure import (bachelier_gap, check_matrix_order, convexity_criterion_critical,
                                   convexity_criterion_global, find_convexity_violation, hessian_fd,
                                   hinge_sum, hormander_rank, lie_bracket, replay_witness, trace_field,
                                   verify_comparison)
from passportlab.suites import sine_field


def quad(x):
    return x[..., 0] ** 2 + x[..., 1] ** 2


def square(x):
    return x[..., 0] ** 2


def quart(x):
    return x[..., 0] ** 4


@pytest.fixture(scope="module")
def comparison_grid():
    return SpaceTimeGrid.stable((-8.0, -1.0), (8.0, 1.0), (161, 5), 0.5, 1.0)


@pytest.fixture(scope="module")
def box():
    return SpaceTimeGrid((-3.0, -3.0), (3.0, 3.0), (61, 61), 1.0, 1)


class TestMatrixOrder:
    pts = np.random.default_rng(0).normal(size=(20, 2))

    def test_strict(self):
        r = check_matrix_order(CoefficientField.diagonal([0.5, 0.5]), CoefficientField.diagonal([1.0, 0.5]), self.pts)
        assert r.verdict == "ordered-strict-11"
        assert r.entry11_gap == pytest.approx(0.5)
        assert r.psd_gap == 0.0

    def test_equal_fields_are_ordered_but_not_strict(self):
        A = CoefficientField.diagonal([0.5, 0.5])
        assert check_matrix_order(A, A, self.pts).verdict == "ordered"

    def test_unordered(self):
        r = check_matrix_order(CoefficientField.diagonal([0.5, 0.5]), CoefficientField.diagonal([1.0, 0.2]), self.pts)
        assert r.verdict == "unordered"
        assert r.psd_gap == pytest.approx(-0.3)

    def test_dimension_mismatch(self):
        with pytest.raises(ArgumentError):
            check_matrix_order(CoefficientField.constant([[1.0]]), CoefficientField.diagonal([1.0, 1.0]), self.pts)

    def test_report_serializes(self):
        r = check_matrix_order(CoefficientField.diagonal([0.5, 0.5]), CoefficientField.diagonal([1.0, 0.5]), self.pts)
        assert json.loads(r.to_json())["verdict"] == "ordered-strict-11"

    @given(st.floats(0.0, 2.0), st.floats(0.0, 2.0))
    def test_adding_a_psd_matrix_orders(self, a, b):
        A = CoefficientField.constant([[1.0, 0.2], [0.2, 1.0]])
        Ap = CoefficientField.constant([[1.0 + a, 0.2 + np.sqrt(a * b)], [0.2 + np.sqrt(a * b), 1.0 + b]])
        assert check_matrix_order(A, Ap, self.pts).verdict != "unordered"


class TestComparison:
    def test_hinge_gap_matches_closed_form(self, comparison_grid):
        rep = verify_comparison(CoefficientField.diagonal([0.5, 0.5]), CoefficientField.diagonal([1.0, 0.5]),
                                UnivariatePayoff.hinge(), comparison_grid, 0.5)
        assert rep.verdict == "pass"
        assert rep.tags == []
        assert rep.gap_at_origin == pytest.approx(bachelier_gap(0.5, 1.0, 0.5), abs=5e-3)
        assert rep.strict_fraction > 0.5 and rep.strict_nodes > 0

    def test_closed_form_gap(self):
        # sqrt(t/pi) * (sqrt(a') - sqrt(a)) at the kink
        assert bachelier_gap(0.5, 1.0, 0.5) == pytest.approx(np.sqrt(0.5 / np.pi) * (1 - np.sqrt(0.5)))

    def test_equal_fields_give_zero_gap(self, comparison_grid):
        A = CoefficientField.diagonal([0.5, 0.5])
        rep = verify_comparison(A, A, UnivariatePayoff.hinge(), comparison_grid, 0.5)
        assert rep.gap_at_origin == 0.0
        assert rep.min_gap == 0.0
        assert "order not strict in the (1,1) entry" in rep.tags

    def test_unordered_is_refused(self, comparison_grid):
        with pytest.raises(HypothesisError):
            verify_comparison(CoefficientField.diagonal([0.5, 0.5]), CoefficientField.diagonal([1.0, 0.2]),
                              UnivariatePayoff.hinge(), comparison_grid, 0.5)

    def test_multivariate_data_is_tagged(self, comparison_grid):
        payoff = lambda x: np.maximum(x[..., 0], 0.0) + np.maximum(x[..., 1], 0.0)
        rep = verify_comparison(CoefficientField.diagonal([0.5, 0.5]), CoefficientField.diagonal([1.0, 0.5]),
                                payoff, comparison_grid, 0.5)
        assert any("not univariate" in t for t in rep.tags)

    def test_wrong_axis_is_tagged(self, comparison_grid):
        rep = verify_comparison(CoefficientField.diagonal([0.5, 0.5]), CoefficientField.diagonal([1.0, 0.5]),
                                UnivariatePayoff.hinge(axis=1), comparison_grid, 0.5)
        assert any("along x1" in t for t in rep.tags)


class TestConvexity:
    def test_hessian_oracle(self):
        x = np.array([[0.3, -0.7]])
        H = hessian_fd(lambda y: y[..., 0] ** 3 + y[..., 0] * y[..., 1], x)[0]
        np.testing.assert_allclose(H, [[1.8, 1.0], [1.0, 0.0]], atol=1e-8)

    def test_constant_field_quadratic_passes(self, box):
        r = convexity_criterion_global(CoefficientField.constant(0.7 * np.eye(2)), quad, box)
        assert r.passed and r.witness is None

    def test_constant_field_quartic_passes(self, box):
        assert convexity_criterion_global(CoefficientField.constant(0.7 * np.eye(2)), quart, box).passed

    def test_sine_field_square_fails_with_replayable_witness(self, box):
        A = sine_field()
        r = convexity_criterion_global(A, square, box)
        assert not r.passed
        assert r.min_value < 0
        g = trace_field(A, square)
        assert abs(replay_witness(g, r.witness) - r.witness["value"]) <= 1e-10

    def test_trace_field_oracle(self):
        # Tr(diag(1 + sin(x2)/2, 1) D^2 x1^2) = 2 + sin(x2)
        g = trace_field(sine_field(), square)
        x = np.array([[0.4, 1.1]])
        assert g(x)[0] == pytest.approx(2 + np.sin(1.1), abs=1e-8)

    def test_critical_set_modes(self, box):
        A = sine_field()
        r = convexity_criterion_critical(A, quart, box)
        assert "|C_r|=" in r.note
        d = convexity_criterion_critical(A, square, box, mode="directional")
        assert d.checked_nodes > 0
        with pytest.raises(ArgumentError):
            convexity_criterion_critical(A, square, box, mode="nope")

    def test_strictly_convex_data_has_empty_critical_set(self, box):
        r = convexity_criterion_critical(sine_field(), quad, box)
        assert r.passed and "vacuous" in r.note

    def test_smoothing_keeps_quadratics(self, box):
        r = convexity_criterion_global(CoefficientField.constant(0.7 * np.eye(2)), quad, box, eps=0.1)
        assert r.passed


@pytest.fixture(scope="module")
def grid():
    return SpaceTimeGrid.stable((-4.0, -4.0), (4.0, 4.0), (41, 41), 0.1, 1.5)


class TestViolationSearch:
    def test_hinge_sum(self):
        f = hinge_sum([[1.0, 0.0], [0.0, 1.0]], [0.0, 1.0])
        assert f(np.array([2.0, 3.0])) == pytest.approx(4.0)

    def test_sine_field_yields_a_replayable_witness(self, grid):
        A = sine_field()
        w = find_convexity_violation(A, grid, budget=200)
        assert w is not None and w.value < -1e-4
        assert abs(w.replay(A, grid) - w.value) <= 1e-10

    def test_constant_field_has_no_violation(self, grid):
        assert find_convexity_violation(CoefficientField.constant(0.7 * np.eye(2)), grid, budget=10) is None

    def test_search_is_seeded(self, grid):
        A = sine_field()
        a = find_convexity_violation(A, grid, budget=50, seed=3)
        b = find_convexity_violation(A, grid, budget=50, seed=3)
        assert (a is None) == (b is None)
        if a is not None:
            assert a.to_dict() == b.to_dict()


def e1(x):
    return np.array([1.0, 0.0])


def e2(x):
    return np.array([0.0, 1.0])


def grushin(x):
    return np.array([0.0, x[0]])


class TestHormander:
    def test_examples(self):
        x0 = np.zeros(2)
        assert hormander_rank([e1, e2], x0) == (True, 0)
        assert hormander_rank([e1, grushin], x0) == (True, 1)
        assert hormander_rank([e1], x0) == (False, None)

    def test_away_from_the_degenerate_line(self):
        assert hormander_rank([e1, grushin], np.array([0.5, 0.0])) == (True, 0)

    def test_bracket_oracle(self):
        np.testing.assert_allclose(lie_bracket(e1, grushin)(np.array([0.3, 0.2])), [0.0, 1.0], atol=1e-8)

    def test_drift_counts_in_brackets(self):
        drift = lambda x: np.array([0.0, x[0] ** 2 + 1.0])
        # [e1, drift] = (0, 2 x1) vanishes at 0, but drift itself is not a level-0 field
        assert hormander_rank([e1], np.array([1.0, 0.0]), drift=drift) == (True, 1)

    def test_negative_depth(self):
        with pytest.raises(ArgumentError):
            hormander_rank([e1], np.zeros(2), max_depth=-1)

    @given(st.floats(-2, 2), st.floats(-2, 2), st.floats(-2, 2), st.floats(-2, 2))
    def test_invariant_under_constant_recombination(self, a, b, c, d):
        if abs(a * d - b * c) < 0.1:
            return
        V = lambda x: a * e1(x) + b * grushin(x)
        W = lambda x: c * e1(x) + d * grushin(x)
        assert hormander_rank([V, W], np.zeros(2)) == (True, 1)
