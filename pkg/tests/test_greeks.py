from __future__ import annotations

import io

import numpy as np
import pytest
from hypothesis import given, strategies as st

from passportlab.errors import ArgumentError
from passportlab.market import (CoefficientField, MollifierSpec, UnivariatePayoff, mollify_and_cutoff,
                                normal_pdf)
from passportlab.pde import SpaceTimeGrid, solve_cauchy
from passportlab.greeks import (GreekRequest, adjoint_identity_residual, finite_difference,
                                greek_via_adjoint, greeks_to_csv, translation_invariant)
from passportlab.suites import variable_field

A1 = CoefficientField.constant([[0.5]])


@pytest.fixture(scope="module")
def line():
    return SpaceTimeGrid.stable([-6.0], [6.0], [241], 0.5, 0.5)


@pytest.fixture(scope="module")
def smooth_hinge(line):
    return mollify_and_cutoff(UnivariatePayoff.hinge(), MollifierSpec(eps=2 * line.spacing[0], R=6.0))


class TestRequest:
    def test_validation(self):
        with pytest.raises(ArgumentError):
            GreekRequest((1, 0), (0.0,), 0.5)
        with pytest.raises(ArgumentError):
            GreekRequest((3,), (0.0,), 0.5)
        with pytest.raises(ArgumentError):
            GreekRequest((1,), (0.0,), 0.5, method="bump")
        assert GreekRequest((1, 1), (0.0, 0.0), 0.5).order == 2


class TestDirect:
    def test_square_has_gamma_two(self):
        # far-field extrapolation is inexact for x^2; the centre stays within 1e-8
        g = SpaceTimeGrid([-4.0], [4.0], [81], 0.2, 200)
        s = solve_cauchy(A1, lambda x: x[..., 0] ** 2, g)
        assert finite_difference(s, GreekRequest((2,), (0.0,), 0.2)) == pytest.approx(2.0, abs=1e-8)
        assert finite_difference(s, GreekRequest((1,), (0.5,), 0.2)) == pytest.approx(1.0, abs=1e-8)

    def test_affine_has_no_gamma(self):
        g = SpaceTimeGrid([-3.0, -3.0], [3.0, 3.0], [31, 31], 0.2, 100)
        s = solve_cauchy(CoefficientField.diagonal([0.5, 0.5]), lambda x: 2 * x[..., 0] - x[..., 1] + 1, g)
        for alpha, want in (((2, 0), 0.0), ((1, 1), 0.0), ((1, 0), 2.0), ((0, 1), -1.0)):
            assert finite_difference(s, GreekRequest(alpha, (0.1, -0.3), 0.2)) == pytest.approx(want, abs=1e-9)

    def test_hinge_delta_at_the_kink(self, line):
        s = solve_cauchy(A1, UnivariatePayoff.hinge(), line)
        assert finite_difference(s, GreekRequest((1,), (0.0,), 0.5)) == pytest.approx(0.5, abs=1e-12)

    def test_stencil_must_fit(self, line):
        s = solve_cauchy(A1, UnivariatePayoff.hinge(), line)
        with pytest.raises(ArgumentError):
            finite_difference(s, GreekRequest((2,), (6.0,), 0.5))


class TestAdjoint:
    def test_gamma_of_mollified_hinge(self, line, smooth_hinge):
        # Gaussian data of variance (2h)^2 and a source bump of the same width
        h = line.spacing[0]
        oracle = normal_pdf(0.0) / np.sqrt(0.5 + (2 * h) ** 2)
        got = greek_via_adjoint(A1, smooth_hinge, GreekRequest((2,), (0.0,), 0.5, "adjoint"), line)
        assert got == pytest.approx(oracle, abs=1e-2)

    @pytest.mark.parametrize("alpha", [(1,), (2,)])
    def test_adjoint_matches_payoff_shift(self, line, smooth_hinge, alpha):
        a = greek_via_adjoint(A1, smooth_hinge, GreekRequest(alpha, (0.2,), 0.5, "adjoint"), line)
        b = greek_via_adjoint(A1, smooth_hinge, GreekRequest(alpha, (0.2,), 0.5, "payoff-shift"), line)
        assert abs(a - b) <= 1e-3

    def test_constant_data_has_no_greeks(self, line):
        one = mollify_and_cutoff(UnivariatePayoff(lambda x: np.ones_like(x), name="one"),
                                 MollifierSpec(eps=0.1, R=100.0))
        for alpha in ((1,), (2,)):
            got = greek_via_adjoint(A1, one, GreekRequest(alpha, (0.0,), 0.5, "adjoint"), line)
            assert abs(got) <= 1e-9

    def test_refuses_unregularized_payoff(self, line):
        with pytest.raises(ArgumentError, match="mollify_and_cutoff"):
            greek_via_adjoint(A1, UnivariatePayoff.hinge(), GreekRequest((2,), (0.0,), 0.5, "adjoint"), line)

    def test_payoff_shift_needs_translation_invariance(self, smooth_hinge):
        g = SpaceTimeGrid([-4.0, -4.0], [4.0, 4.0], [41, 41], 0.2, 1)
        with pytest.raises(ArgumentError, match="translation invariant"):
            greek_via_adjoint(variable_field(), smooth_hinge, GreekRequest((1, 0), (0.0, 0.0), 0.2, "payoff-shift"), g)

    def test_translation_invariance_probe(self):
        g = SpaceTimeGrid([-1.0, -1.0], [1.0, 1.0], [5, 5], 1.0, 1)
        A = CoefficientField.diagonal([lambda x: 1.0 + 0.5 * np.sin(x[..., 1]), 1.0])
        assert translation_invariant(A, [0], g)
        assert not translation_invariant(A, [1], g)

    def test_rejects_direct_method_and_bad_time(self, line, smooth_hinge):
        with pytest.raises(ArgumentError):
            greek_via_adjoint(A1, smooth_hinge, GreekRequest((1,), (0.0,), 0.5, "direct"), line)
        with pytest.raises(ArgumentError):
            greek_via_adjoint(A1, smooth_hinge, GreekRequest((1,), (0.0,), 0.0, "adjoint"), line)


class TestIdentityResidual:
    grid = SpaceTimeGrid([-4.0, -4.0], [4.0, 4.0], [41, 41], 1.0, 1)

    def test_requires_forward_time(self):
        with pytest.raises(ArgumentError):
            adjoint_identity_residual(variable_field(), (0.0, (0.0, 0.0)), (0.5, (0.0, 0.0)), (0, 0), self.grid)

    def test_kernel_peak_identity(self):
        r = adjoint_identity_residual(variable_field(), (0.5, (0.0, 0.0)), (0.0, (0.0, 0.0)), (0, 0), self.grid)
        assert r <= 5e-3

    @given(st.integers(-10, 10), st.integers(-10, 10), st.sampled_from([(0, 0), (1, 0), (0, 1), (2, 0)]))
    def test_constant_field_identity_is_exact_at_nodes(self, i, j, alpha):
        # translation invariance makes both sides the same discrete kernel
        fine = SpaceTimeGrid([-4.0, -4.0], [4.0, 4.0], [81, 81], 1.0, 1)
        A = CoefficientField.diagonal([0.5, 0.5])
        r = adjoint_identity_residual(A, (0.3, (0.1 * i, 0.1 * j)), (0.0, (0.0, 0.0)), alpha, fine)
        assert r <= 1e-10


def test_greeks_csv():
    buf = io.StringIO()
    greeks_to_csv([(GreekRequest((1, 1), (0.0, 0.5), 0.5, "adjoint"), 0.25)], buf, header="h")
    lines = buf.getvalue().splitlines()
    assert lines[0] == "# h"
    assert lines[1] == "t,x1,x2,alpha,method,value"
    assert lines[2].split(",")[3:5] == ["1-1", "adjoint"]
