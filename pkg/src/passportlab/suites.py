"""Verification batteries run by ``passportlab verify``.

Each suite returns a list of :class:`Check` rows (name, tolerance, observed
value, pass flag, note).  Parameters come from the ``suite.params`` mapping
of the run configuration; the defaults are desk-sized.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ConfigurationError
from .greeks import adjoint_identity_residual
from .market import CoefficientField, UnivariatePayoff
from .pde import SpaceTimeGrid, fundamental_solution, greens_residual
from .structure import (bachelier_gap, check_matrix_order, convexity_criterion_critical,
                        convexity_criterion_global, find_convexity_violation, hormander_rank,
                        verify_comparison)


@dataclass(frozen=True)
class Check:
    name: str
    tolerance: float
    observed: float
    passed: bool
    note: str = ""


def sine_field() -> CoefficientField:
    """``diag(1 + sin(x2)/2, 1)``: nonconstant, uniformly elliptic."""
    return CoefficientField.diagonal([lambda x: 1.0 + 0.5 * np.sin(x[..., 1]), 1.0], name="sine")


def variable_field() -> CoefficientField:
    """Smooth, non-translation-invariant 2x2 field used for the adjoint identities."""

    def f(x):
        out = np.zeros(x.shape[:-1] + (2, 2))
        out[..., 0, 0] = 0.5 + 0.15 * np.sin(x[..., 1])
        out[..., 1, 1] = 0.4 + 0.1 * np.cos(x[..., 0])
        out[..., 0, 1] = out[..., 1, 0] = 0.05
        return out

    return CoefficientField(2, f, name="variable")


def _p(params: dict, key: str, default):
    return params.get(key, default)


def comparison_suite(params: dict) -> list[Check]:
    A = CoefficientField.diagonal([0.5, 0.5])
    Ap = CoefficientField.diagonal([1.0, 0.5])
    t = float(_p(params, "t", 0.5))
    L = float(_p(params, "half_width", 8.0))
    n1 = int(_p(params, "nodes", 161))
    probe = SpaceTimeGrid((-L, -1.0), (L, 1.0), (n1, 5), t, 1)
    grid = SpaceTimeGrid.stable(probe.lo, probe.hi, probe.nodes, t, 1.0)
    if _p(params, "multivariate", False):
        payoff = lambda x: np.maximum(x[..., 0], 0.0) + np.maximum(x[..., 1], 0.0)
    else:
        payoff = UnivariatePayoff.hinge()
    order = check_matrix_order(A, Ap, grid.points().reshape(-1, 2))
    rep = verify_comparison(A, Ap, payoff, grid, t)
    note = "; ".join(rep.tags)
    out = [
        Check("matrix-order", 1e-10, order.entry11_gap, order.verdict == "ordered-strict-11", order.verdict),
        Check("min-gap-on-gamma-nodes", 0.0, rep.min_gap, rep.verdict == "pass", note),
    ]
    if rep.gap_at_origin is not None and not _p(params, "multivariate", False):
        oracle = bachelier_gap(0.5, 1.0, t)
        err = abs(rep.gap_at_origin - oracle)
        out.append(Check("gap-at-origin-vs-closed-form", 5e-3, err, err <= 5e-3, note))
    elif note:
        out.append(Check("hypotheses", 0.0, 0.0, True, note))
    return out


def convexity_suite(params: dict) -> list[Check]:
    n = int(_p(params, "nodes", 61))
    G = SpaceTimeGrid((-3.0, -3.0), (3.0, 3.0), (n, n), 1.0, 1)
    const = CoefficientField.constant(np.eye(2) * 0.7)
    sine = sine_field()
    quad = lambda x: x[..., 0] ** 2 + x[..., 1] ** 2
    quart = lambda x: x[..., 0] ** 4
    sq = lambda x: x[..., 0] ** 2
    out = []
    r = convexity_criterion_global(const, quad, G)
    out.append(Check("global:constant-A-quadratic", 0.0, r.min_value, r.passed, "expect pass"))
    r = convexity_criterion_global(const, quart, G)
    out.append(Check("global:constant-A-quartic", 0.0, r.min_value, r.passed, "expect pass"))
    r = convexity_criterion_global(sine, sq, G)
    out.append(Check("global:sine-A-square", 0.0, r.min_value, (not r.passed) and r.witness is not None,
                     "expect fail with witness"))
    r = convexity_criterion_critical(sine, quart, G)
    out.append(Check("critical:sine-A-quartic", 0.0, r.min_value, r.passed, r.note))
    r = convexity_criterion_critical(sine, sq, G)
    out.append(Check("critical:sine-A-square", 0.0, r.min_value, r.passed, r.note))

    budget = int(_p(params, "budget", 200))
    probe = SpaceTimeGrid((-4.0, -4.0), (4.0, 4.0), (41, 41), 0.1, 1)
    VG = SpaceTimeGrid.stable(probe.lo, probe.hi, probe.nodes, 0.1, 1.5)
    w = find_convexity_violation(sine, VG, budget=budget, seed=int(_p(params, "seed", 0)))
    out.append(Check("violation-search:sine", -1e-4, w.value if w else 0.0, w is not None and w.value < -1e-4,
                     f"candidate {w.candidate}" if w else "budget exhausted"))
    w0 = find_convexity_violation(const, VG, budget=min(budget, 20))
    out.append(Check("violation-search:constant", -1e-4, w0.value if w0 else 0.0, w0 is None,
                     "expect none"))
    return out


def hormander_suite(params: dict) -> list[Check]:
    e1 = lambda x: np.array([1.0, 0.0])
    e2 = lambda x: np.array([0.0, 1.0])
    grushin = lambda x: np.array([0.0, x[0]])
    x0 = np.zeros(2)
    cases = [("coordinate-fields", [e1, e2], (True, 0)),
             ("grushin", [e1, grushin], (True, 1)),
             ("single-field", [e1], (False, None))]
    out = []
    for name, fields, want in cases:
        got = hormander_rank(fields, x0, max_depth=int(_p(params, "max_depth", 3)))
        out.append(Check(name, 0.0, -1.0 if got[1] is None else float(got[1]), got == want,
                         f"expected {want}, got {got}"))
    return out


def adjoint_identity_suite(params: dict) -> list[Check]:
    V = variable_field()
    tx = (0.5, (0.4, -0.2))
    sy = (0.0, (0.0, 0.0))
    coarse = int(_p(params, "nodes", 81))
    fine = 2 * (coarse - 1) + 1
    tol = float(_p(params, "tol", 5e-3))
    out = []
    for alpha in ((0, 0), (1, 0), (0, 1), (2, 0)):
        res = []
        for N in (coarse, fine):
            G = SpaceTimeGrid((-4.0, -4.0), (4.0, 4.0), (N, N), 1.0, 1)
            res.append(adjoint_identity_residual(V, tx, sy, alpha, G))
        order = math.log2(res[0] / res[1]) if res[1] > 0 else math.inf
        a = "".join(map(str, alpha))
        out.append(Check(f"residual:alpha={a}", tol, res[0], res[0] <= tol))
        out.append(Check(f"order:alpha={a}", 0.8, order, order >= 0.8, f"fine residual {res[1]:.3e}"))
    return out


def greens_suite(params: dict) -> list[Check]:
    A = CoefficientField.constant([[0.5]])
    out = []
    res = []
    for N, steps in ((81, 125), (161, 500)):
        g = SpaceTimeGrid([-8.0], [8.0], [N], 1.0, steps)
        v = fundamental_solution(A, [-0.3], g, 0.4, save_every=1)
        u = fundamental_solution(A, [0.4], g, 0.4, adjoint=True, t_start=1.0, save_every=1)
        res.append(greens_residual(A, u, v, ([-1.0], [1.0], 0.1, 0.9)))
    out.append(Check("residual", 1e-3, res[0], res[0] <= 1e-3))
    ratio = res[0] / res[1] if res[1] > 0 else math.inf
    out.append(Check("shrink-ratio", 1.8, ratio, ratio >= 1.8, f"refined residual {res[1]:.3e}"))
    return out


SUITE_RUNNERS: dict[str, Callable[[dict], list[Check]]] = {
    "comparison": comparison_suite,
    "convexity": convexity_suite,
    "hormander": hormander_suite,
    "adjoint-identity": adjoint_identity_suite,
    "greens": greens_suite,
}


def run_suite(name: str, params: dict | None = None) -> list[Check]:
    try:
        runner = SUITE_RUNNERS[name]
    except KeyError:
        raise ConfigurationError(f"unknown suite {name!r}") from None
    return runner(dict(params or {}))
