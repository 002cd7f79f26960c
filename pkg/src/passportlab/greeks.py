"""Spatial Greeks by direct differencing and through the adjoint density.

The forward fundamental solution differentiated in its evaluation point is
the adjoint fundamental solution differentiated in its *source* point:
``D^a_x p(t, x; s, y) = D^a_x p*(s, y; t, x)``.  The adjoint form of a Greek
therefore re-solves the adjoint from shifted sources ``x +- h e_i``.  Moving
the derivative onto the payoff (``payoff-shift``) additionally needs ``A`` to
be translation invariant along the differentiated directions.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .errors import ArgumentError
from .market import CoefficientField
from .pde import (SpaceTimeGrid, ValueSurface, _coefficients, coefficient_norm, format_float,
                  fundamental_solution, trapezoid)

METHODS = ("direct", "adjoint", "payoff-shift")


@dataclass(frozen=True)
class GreekRequest:
    alpha: tuple[int, ...]
    x: tuple[float, ...]
    t: float
    method: str = "direct"

    def __post_init__(self) -> None:
        alpha = tuple(int(a) for a in self.alpha)
        x = tuple(float(v) for v in np.atleast_1d(self.x))
        if len(alpha) != len(x):
            raise ArgumentError("multi-index and point must have the same dimension")
        if any(a < 0 for a in alpha) or sum(alpha) > 2:
            raise ArgumentError("only multi-indices with |alpha| <= 2 are supported")
        if self.method not in METHODS:
            raise ArgumentError(f"unknown method {self.method!r}")
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "x", x)

    @property
    def order(self) -> int:
        return sum(self.alpha)


def _derivative_field(values: np.ndarray, h: np.ndarray, alpha: Sequence[int]) -> np.ndarray:
    """``D^alpha`` by centered differences; NaN where the stencil leaves the array."""
    out = np.full(values.shape, np.nan)
    n = values.ndim
    active = [d for d, a in enumerate(alpha) for _ in range(a)]
    if not active:
        return values.copy()
    core = tuple(slice(1, -1) if d in active else slice(None) for d in range(n))

    def shifted(offs):
        return values[tuple(slice(1 + offs[d], values.shape[d] - 1 + offs[d]) if d in active else slice(None)
                            for d in range(n))]

    zero = [0] * n
    if len(active) == 1:
        d = active[0]
        p = list(zero); p[d] = 1
        m = list(zero); m[d] = -1
        out[core] = (shifted(p) - shifted(m)) / (2 * h[d])
    elif active[0] == active[1]:
        d = active[0]
        p = list(zero); p[d] = 1
        m = list(zero); m[d] = -1
        out[core] = (shifted(p) - 2 * values[core] + shifted(m)) / h[d] ** 2
    else:
        i, j = active
        res = 0.0
        for si, sj, sign in ((1, 1, 1), (1, -1, -1), (-1, 1, -1), (-1, -1, 1)):
            o = list(zero); o[i] = si; o[j] = sj
            res = res + sign * shifted(o)
        out[core] = res / (4 * h[i] * h[j])
    return out


def finite_difference(surface: ValueSurface, req: GreekRequest) -> float:
    """``D^alpha v(t, x)`` from the nodal surface; multilinear in ``x`` between nodes."""
    grid = surface.grid
    if len(req.alpha) != grid.n:
        raise ArgumentError("request dimension does not match the surface")
    x = np.asarray(req.x)
    h = grid.spacing
    reach = np.array([1 if a else 0 for a in req.alpha]) * h
    lo = np.array(grid.lo) + reach
    hi = np.array(grid.hi) - reach
    if np.any(x < lo - 1e-12) or np.any(x > hi + 1e-12):
        raise ArgumentError(f"stencil for {req.alpha} at {req.x} leaves the grid")
    field = _derivative_field(surface.at(req.t), h, req.alpha)
    node = np.rint((x - np.array(grid.lo)) / h)
    if np.allclose(x, np.array(grid.lo) + node * h, atol=1e-9 * h.max()):
        return float(field[tuple(node.astype(int))])
    return float(RegularGridInterpolator(grid.axes, field)(x[None])[0])


def _require_regularized(payoff) -> None:
    if not getattr(payoff, "regularized", False):
        raise ArgumentError("payoff is not regularized; pass it through mollify_and_cutoff "
                            "(width about 2h) before computing adjoint Greeks")


def translation_invariant(A: CoefficientField, axes: Sequence[int], grid: SpaceTimeGrid,
                          tol: float = 1e-10) -> bool:
    """``A(x + c e_i) == A(x)`` on grid nodes for every listed axis (probed with two shifts)."""
    if A.is_constant:
        return True
    pts = grid.points().reshape(-1, grid.n)
    base = np.asarray(A(pts))
    for i in axes:
        for c in (0.37, 1.13):
            e = np.zeros(grid.n); e[i] = c
            if np.max(np.abs(np.asarray(A(pts + e)) - base)) > tol:
                return False
    return True


def _time_grid(A: CoefficientField, grid: SpaceTimeGrid, T: float, c_stab: float = 0.9) -> SpaceTimeGrid:
    probe = SpaceTimeGrid(grid.lo, grid.hi, grid.nodes, T, 1)
    return SpaceTimeGrid.stable(grid.lo, grid.hi, grid.nodes, T,
                                coefficient_norm(_coefficients(A, probe)), c_stab=c_stab)


def greek_via_adjoint(A: CoefficientField, payoff: Callable, req: GreekRequest, grid: SpaceTimeGrid,
                      w0: float | None = None) -> float:
    """``D^alpha v(t, x)`` for ``v(0) = payoff`` through the adjoint density started at ``(t, x)``.

    ``req.method == "adjoint"``: ``int f(y) D^alpha_x p*(0, y; t, x) dy`` with the
    source derivative taken by re-solving from ``x +- h e_i``.
    ``req.method == "payoff-shift"``: ``int D^alpha f(y) p*(0, y; t, x) dy``; requires
    ``A`` translation invariant along the differentiated axes.
    """
    _require_regularized(payoff)
    if req.method not in ("adjoint", "payoff-shift"):
        raise ArgumentError("greek_via_adjoint handles the 'adjoint' and 'payoff-shift' methods")
    if req.t <= 0:
        raise ArgumentError("evaluation time must be positive")
    g = _time_grid(A, grid, req.t)
    h = g.spacing
    w0 = 2.0 * float(h.max()) if w0 is None else w0
    x = np.asarray(req.x)
    f = np.asarray(payoff(g.points()), dtype=float)

    def density(src):
        return fundamental_solution(A, src, g, w0, adjoint=True, t_start=req.t, save_every=g.steps).values[0]

    if req.method == "payoff-shift":
        axes = [d for d, a in enumerate(req.alpha) if a]
        if not translation_invariant(A, axes, g):
            raise ArgumentError("payoff-shift Greeks need A translation invariant along the differentiated axes")
        df = _derivative_field(f, h, req.alpha)
        df = np.where(np.isnan(df), 0.0, df)
        return trapezoid(df * density(x), g)

    def value(src):
        return trapezoid(f * density(src), g)

    active = [d for d, a in enumerate(req.alpha) for _ in range(a)]
    if not active:
        return value(x)
    e = np.eye(g.n) * h
    if len(active) == 1:
        d = active[0]
        return (value(x + e[d]) - value(x - e[d])) / (2 * h[d])
    i, j = active
    if i == j:
        return (value(x + e[i]) - 2 * value(x) + value(x - e[i])) / h[i] ** 2
    return (value(x + e[i] + e[j]) - value(x + e[i] - e[j]) - value(x - e[i] + e[j])
            + value(x - e[i] - e[j])) / (4 * h[i] * h[j])


def adjoint_identity_residual(A: CoefficientField, tx: tuple[float, Sequence[float]],
                              sy: tuple[float, Sequence[float]], alpha: Sequence[int],
                              grid: SpaceTimeGrid, w0: float | None = None) -> float:
    """``|D^alpha_x p(t, x; s, y) - D^alpha_x p*(s, y; t, x)|``.

    The forward side starts a mollified source at ``(s, y)`` and differences the
    solution at ``x``; the adjoint side starts at ``(t, x +- h e_i)`` and is read
    at ``y``.  ``grid`` supplies the spatial box; time steps are chosen to meet
    the explicit bound on ``[s, t]``.
    """
    t, x = float(tx[0]), np.asarray(tx[1], dtype=float)
    s, y = float(sy[0]), np.asarray(sy[1], dtype=float)
    if t <= s:
        raise ArgumentError("need t > s")
    req = GreekRequest(tuple(alpha), tuple(x), t, "direct")
    g = _time_grid(A, grid, t - s)
    h = g.spacing
    w0 = 2.0 * float(h.max()) if w0 is None else w0

    fwd = fundamental_solution(A, y, g, w0, t_start=s, save_every=g.steps)
    lhs = finite_difference(fwd, req)

    def at_y(src):
        surf = fundamental_solution(A, src, g, w0, adjoint=True, t_start=t, save_every=g.steps)
        return float(RegularGridInterpolator(g.axes, surf.values[0])(y[None])[0])

    active = [d for d, a in enumerate(req.alpha) for _ in range(a)]
    e = np.eye(g.n) * h
    if not active:
        rhs = at_y(x)
    elif len(active) == 1:
        d = active[0]
        rhs = (at_y(x + e[d]) - at_y(x - e[d])) / (2 * h[d])
    elif active[0] == active[1]:
        d = active[0]
        rhs = (at_y(x + e[d]) - 2 * at_y(x) + at_y(x - e[d])) / h[d] ** 2
    else:
        i, j = active
        rhs = (at_y(x + e[i] + e[j]) - at_y(x + e[i] - e[j]) - at_y(x - e[i] + e[j])
               + at_y(x - e[i] - e[j])) / (4 * h[i] * h[j])
    return abs(lhs - rhs)


def greeks_to_csv(rows: Sequence[tuple[GreekRequest, float]], fh: io.TextIOBase, header: str | None = None) -> None:
    """Rows keyed by ``(t, x, alpha, method)``."""
    if header:
        fh.write(f"# {header}\n")
    n = len(rows[0][0].x) if rows else 0
    fh.write(",".join(["t", *[f"x{i + 1}" for i in range(n)], "alpha", "method", "value"]) + "\n")
    for req, val in rows:
        fh.write(",".join([format_float(req.t), *map(format_float, req.x),
                           "-".join(map(str, req.alpha)), req.method, format_float(val)]) + "\n")
