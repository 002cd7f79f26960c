"""Structural checks: coefficient order, value comparison, convexity criteria, Hörmander rank."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
from numpy.polynomial.hermite_e import hermegauss

from .errors import ArgumentError, HypothesisError
from .market import CoefficientField, UnivariatePayoff, bachelier_call
from .pde import SpaceTimeGrid, solve_cauchy

ORDER_TOL = 1e-10


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    return obj


class _Report:
    def to_dict(self) -> dict:
        return _jsonable(asdict(self))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


# ---------------------------------------------------------------------------
# ordering and comparison
# ---------------------------------------------------------------------------

@dataclass
class MatrixOrderReport(_Report):
    psd_gap: float
    entry11_gap: float
    verdict: str


def check_matrix_order(A: CoefficientField, Aprime: CoefficientField, points) -> MatrixOrderReport:
    """Sample ``A' - A`` at ``points`` (shape ``(m, n)``): minimum eigenvalue and (1,1) gap."""
    if A.n != Aprime.n:
        raise ArgumentError(f"dimension mismatch {A.n} vs {Aprime.n}")
    pts = np.asarray(points, dtype=float).reshape(-1, A.n)
    diff = np.asarray(Aprime(pts)) - np.asarray(A(pts))
    psd_gap = float(np.min(np.linalg.eigvalsh(diff)))
    gap11 = float(np.min(diff[:, 0, 0]))
    if psd_gap < -ORDER_TOL:
        verdict = "unordered"
    elif gap11 > ORDER_TOL:
        verdict = "ordered-strict-11"
    else:
        verdict = "ordered"
    # exact zeros print better than -1e-17
    psd_gap = 0.0 if abs(psd_gap) <= ORDER_TOL else psd_gap
    return MatrixOrderReport(psd_gap, gap11, verdict)


@dataclass
class ComparisonReport(_Report):
    verdict: str
    min_gap: float
    strict_fraction: float
    strict_nodes: int
    gap_at_origin: float | None
    t_eval: float
    tags: list = field(default_factory=list)


def verify_comparison(A: CoefficientField, Aprime: CoefficientField, payoff, grid: SpaceTimeGrid,
                      t_eval: float, *, gamma_tol: float = 1e-6, margin: int = 1) -> ComparisonReport:
    """Solve both Cauchy problems and report ``v' - v`` at ``t_eval``.

    Refuses (``HypothesisError``) when the coefficients are unordered.  Runs
    that miss other hypotheses (order not strict in the (1,1) entry, data not
    univariate) are computed but tagged.  ``strict_fraction`` counts interior
    nodes with discrete ``v_{x1x1} > gamma_tol`` where ``v' - v > h1^2``.
    """
    order = check_matrix_order(A, Aprime, grid.points().reshape(-1, grid.n))
    if order.verdict == "unordered":
        raise HypothesisError("coefficient matrices are not ordered (A' - A is not PSD); "
                              "the comparison theorem does not apply")
    tags = []
    if order.verdict != "ordered-strict-11":
        tags.append("order not strict in the (1,1) entry")
    if not isinstance(payoff, UnivariatePayoff):
        tags.append("outside theorem hypotheses: data not univariate")
    elif payoff.axis != 0:
        tags.append("outside theorem hypotheses: data not along x1")
    else:
        payoff.check(grid.axes[payoff.axis])

    g = grid if abs(grid.T - t_eval) < 1e-12 else SpaceTimeGrid(grid.lo, grid.hi, grid.nodes, t_eval,
                                                                max(1, round(grid.steps * t_eval / grid.T)))
    v = solve_cauchy(A, payoff, g, save_every=g.steps).final
    vp = solve_cauchy(Aprime, payoff, g, save_every=g.steps).final
    gap = vp - v
    inner = grid.interior_mask(margin)
    h1 = grid.spacing[0]
    gam = np.zeros_like(v)
    gam[1:-1] = (v[2:] - 2 * v[1:-1] + v[:-2]) / (h1 * h1)
    sel = inner & (gam > gamma_tol)
    strict = float(np.mean(gap[sel] > h1 * h1)) if np.any(sel) else 1.0
    origin = None
    if grid.contains(np.zeros(grid.n)):
        origin = float(np.asarray(_interp(grid, gap, np.zeros(grid.n))))
    min_gap = float(np.min(gap[inner]))
    verdict = "pass" if (np.all(gap[sel] > 0) and min_gap >= -1e-12) else "fail"
    return ComparisonReport(verdict, min_gap, strict, int(sel.sum()), origin, float(t_eval), tags)


def _interp(grid: SpaceTimeGrid, values: np.ndarray, x) -> float:
    from scipy.interpolate import RegularGridInterpolator
    return RegularGridInterpolator(grid.axes, values)(np.atleast_2d(x))[0]


def bachelier_gap(a: float, aprime: float, t: float, x1: float = 0.0) -> float:
    """Closed-form ``v' - v`` for the hinge ``max(x1, 0)`` under ``a11 = a`` and ``a'``."""
    return bachelier_call(x1, 2 * aprime * t) - bachelier_call(x1, 2 * a * t)


# ---------------------------------------------------------------------------
# convexity
# ---------------------------------------------------------------------------

@dataclass
class ConvexityReport(_Report):
    mode: str
    passed: bool
    min_value: float
    witness: dict | None = None
    checked_nodes: int = 0
    note: str = ""


def gaussian_smoothing(f: Callable, eps: float, n: int, order: int = 7) -> Callable:
    """``f * G_eps`` by tensor Gauss-Hermite quadrature; ``f`` itself when ``eps == 0``."""
    if eps <= 0:
        return f
    z, w = hermegauss(order)
    w = w / w.sum()
    nodes = np.array(np.meshgrid(*([z] * n), indexing="ij")).reshape(n, -1).T
    weights = np.prod(np.array(np.meshgrid(*([w] * n), indexing="ij")).reshape(n, -1), axis=0)

    def smoothed(x):
        x = np.asarray(x, dtype=float)
        vals = f(x[..., None, :] + eps * nodes)
        return vals @ weights

    return smoothed


def hessian_fd(f: Callable, x, step: float = 1e-2) -> np.ndarray:
    """Fourth-order finite-difference Hessian of ``f`` at points ``x`` (shape ``(..., n)``)."""
    x = np.asarray(x, dtype=float)
    n = x.shape[-1]
    H = np.empty(x.shape[:-1] + (n, n))
    e = np.eye(n)

    def cross(i, j, h):
        return (f(x + h * (e[i] + e[j])) - f(x + h * (e[i] - e[j]))
                - f(x - h * (e[i] - e[j])) + f(x - h * (e[i] + e[j]))) / (4 * h * h)

    f0 = f(x)
    for i in range(n):
        h = step
        H[..., i, i] = (-f(x + 2 * h * e[i]) + 16 * f(x + h * e[i]) - 30 * f0
                        + 16 * f(x - h * e[i]) - f(x - 2 * h * e[i])) / (12 * h * h)
        for j in range(i + 1, n):
            H[..., i, j] = H[..., j, i] = (4 * cross(i, j, step / 2) - cross(i, j, step)) / 3
    return H


def trace_field(A: CoefficientField, f: Callable, eps: float = 0.0, step: float = 1e-2) -> Callable:
    """``g(x) = Tr(A(x) D^2 f_eps(x))``."""
    fe = gaussian_smoothing(f, eps, A.n)

    def g(x):
        x = np.asarray(x, dtype=float)
        return np.einsum("...ij,...ji->...", np.asarray(A(x)), hessian_fd(fe, x, step))

    return g


def directional_second_difference(g: Callable, point, direction, step: float) -> float:
    p = np.asarray(point, dtype=float)
    u = np.asarray(direction, dtype=float)
    return float((g(p + step * u) - 2 * g(p) + g(p - step * u)) / (step * step))


def _grid_hessian(vals: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Discrete Hessian at interior nodes (centered, 4-point cross)."""
    n = vals.ndim
    inner = tuple(slice(1, -1) for _ in range(n))
    H = np.zeros(vals[inner].shape + (n, n))

    def sh(offs):
        return vals[tuple(slice(1 + o, vals.shape[d] - 1 + o) for d, o in enumerate(offs))]

    z = [0] * n
    for i in range(n):
        p = list(z); p[i] = 1
        m = list(z); m[i] = -1
        H[..., i, i] = (sh(p) - 2 * vals[inner] + sh(m)) / h[i] ** 2
        for j in range(i + 1, n):
            pp = list(z); pp[i] = 1; pp[j] = 1
            pm = list(z); pm[i] = 1; pm[j] = -1
            mp = list(z); mp[i] = -1; mp[j] = 1
            mm = list(z); mm[i] = -1; mm[j] = -1
            H[..., i, j] = H[..., j, i] = (sh(pp) - sh(pm) - sh(mp) + sh(mm)) / (4 * h[i] * h[j])
    return H


def _psd_scan(g: Callable, grid: SpaceTimeGrid, select: np.ndarray | None, mode: str,
              rel_tol: float) -> ConvexityReport:
    pts = grid.points()
    vals = np.asarray(g(pts))
    H = _grid_hessian(vals, grid.spacing)
    inner_pts = pts[tuple(slice(1, -1) for _ in range(grid.n))]
    lam, vec = np.linalg.eigh(H)
    mins = lam[..., 0]
    sel = np.ones(mins.shape, bool) if select is None else select[tuple(slice(1, -1) for _ in range(grid.n))]
    if not np.any(sel):
        return ConvexityReport(mode, True, 0.0, None, 0, "no nodes to check (vacuous pass)")
    tol = rel_tol * max(1.0, float(np.max(np.abs(vals))))
    masked = np.where(sel, mins, np.inf)
    idx = np.unravel_index(int(np.argmin(masked)), masked.shape)
    worst = float(masked[idx])
    if worst >= -tol:
        return ConvexityReport(mode, True, worst, None, int(sel.sum()))
    step = float(np.min(grid.spacing))
    point = inner_pts[idx]
    u = vec[idx][:, 0]
    u = u * (1.0 if u[np.argmax(np.abs(u))] > 0 else -1.0)
    value = directional_second_difference(g, point, u, step)
    witness = {"point": point.tolist(), "direction": u.tolist(), "step": step, "value": value}
    return ConvexityReport(mode, False, value, witness, int(sel.sum()))


def convexity_criterion_global(A: CoefficientField, f: Callable, grid: SpaceTimeGrid, eps: float = 0.0,
                               rel_tol: float = 1e-6) -> ConvexityReport:
    """Sufficient criterion: ``Tr(A D^2 f_eps)`` has a PSD discrete Hessian at every interior node."""
    g = trace_field(A, f, eps)
    return _psd_scan(g, grid, None, "global", rel_tol)


def convexity_criterion_critical(A: CoefficientField, f: Callable, grid: SpaceTimeGrid, *,
                                 mode: str = "matrix", radius: int = 0, tol_cr: float = 1e-8,
                                 rel_tol: float = 1e-6) -> ConvexityReport:
    """Criterion restricted to the critical set of the data.

    ``mode="matrix"``: ``C_r`` holds nodes with ``||D^2 f|| <= tol_cr * max ||D^2 f||``;
    the Hessian of ``g = Tr(A D^2 f)`` must be PSD there (and on nodes within
    ``radius`` grid steps).  ``mode="directional"``: at every node, each
    direction ``u`` with ``D_uu f = 0`` must have ``D_uu g >= 0``.
    """
    pts = grid.points()
    Hf = hessian_fd(f, pts)
    norm = np.linalg.norm(Hf, axis=(-1, -2))
    scale = float(np.max(norm))
    g = trace_field(A, f)
    if mode == "matrix":
        crit = norm <= tol_cr * scale if scale > 0 else np.ones(norm.shape, bool)
        if radius > 0:
            grown = crit.copy()
            for d in range(grid.n):
                for r in range(1, radius + 1):
                    grown |= np.roll(crit, r, axis=d) | np.roll(crit, -r, axis=d)
            crit = grown
        rep = _psd_scan(g, grid, crit, "critical-set", rel_tol)
        rep.note = (rep.note + f" |C_r|={int(crit.sum())}").strip()
        return rep
    if mode != "directional":
        raise ArgumentError(f"unknown mode {mode!r}")

    lam, vec = np.linalg.eigh(Hf)
    null = lam <= tol_cr * max(scale, 1e-300)
    vals = np.asarray(g(pts))
    tol = rel_tol * max(1.0, float(np.max(np.abs(vals))))
    step = float(np.min(grid.spacing))
    inner = grid.interior_mask()
    worst, witness, count = math.inf, None, 0
    for idx in zip(*np.nonzero(inner & null.any(axis=-1))):
        for k in np.flatnonzero(null[idx]):
            u = vec[idx][:, k]
            val = directional_second_difference(g, pts[idx], u, step)
            count += 1
            if val < worst:
                worst = val
                witness = {"point": pts[idx].tolist(), "direction": u.tolist(), "step": step, "value": val}
    if count == 0:
        return ConvexityReport("directional", True, 0.0, None, 0, "no degenerate directions (vacuous pass)")
    passed = worst >= -tol
    return ConvexityReport("directional", passed, worst, None if passed else witness, count)


def replay_witness(g: Callable, witness: dict) -> float:
    """Recompute a stored witness value."""
    return directional_second_difference(g, witness["point"], witness["direction"], witness["step"])


# -- violation search -------------------------------------------------------

def hinge_sum(weights, offsets) -> Callable:
    """``x -> sum_k max(<w_k, x> - b_k, 0)``."""
    W = np.atleast_2d(np.asarray(weights, dtype=float))
    b = np.atleast_1d(np.asarray(offsets, dtype=float))

    def f(x):
        x = np.asarray(x, dtype=float)
        return np.sum(np.maximum(x @ W.T - b, 0.0), axis=-1)

    return f


@dataclass
class ViolationWitness(_Report):
    weights: list
    offsets: list
    node: list
    point: list
    direction: list
    value: float
    t: float
    candidate: int

    def replay(self, A: CoefficientField, grid: SpaceTimeGrid) -> float:
        v = solve_cauchy(A, hinge_sum(self.weights, self.offsets), grid, save_every=grid.steps).final
        return _directional_node(v, grid, tuple(self.node), np.array(self.direction))


_DIRECTIONS = {2: [(1, 0), (0, 1), (1, 1), (1, -1)]}


def _directions(n: int) -> list[np.ndarray]:
    if n in _DIRECTIONS:
        return [np.array(d) for d in _DIRECTIONS[n]]
    out = [np.eye(n, dtype=int)[i] for i in range(n)]
    for i in range(n):
        for j in range(i + 1, n):
            for s in (1, -1):
                d = np.zeros(n, int); d[i] = 1; d[j] = s
                out.append(d)
    return out


def _directional_node(v: np.ndarray, grid: SpaceTimeGrid, node: tuple, d: np.ndarray) -> float:
    """Second difference along the lattice direction ``d`` divided by ``|d h|^2``."""
    step = np.asarray(d) * grid.spacing
    p = tuple(np.array(node) + d)
    m = tuple(np.array(node) - d)
    return float((v[p] - 2 * v[node] + v[m]) / float(step @ step))


def _directional_scan(v: np.ndarray, grid: SpaceTimeGrid, margin: int = 2):
    best = (math.inf, None, None)
    n = grid.n
    core = tuple(slice(margin, m - margin) for m in grid.nodes)
    for d in _directions(n):
        p = tuple(slice(margin + o, m - margin + o) for m, o in zip(grid.nodes, d))
        q = tuple(slice(margin - o, m - margin - o) for m, o in zip(grid.nodes, d))
        step = d * grid.spacing
        dd = (v[p] - 2 * v[core] + v[q]) / float(step @ step)
        i = np.unravel_index(int(np.argmin(dd)), dd.shape)
        if dd[i] < best[0]:
            best = (float(dd[i]), tuple(int(a + margin) for a in i), d)
    return best


def find_convexity_violation(A: CoefficientField, grid: SpaceTimeGrid, *, budget: int = 200,
                             threshold: float = -1e-4, seed: int = 0, max_hinges: int = 3,
                             univariate: bool = False) -> ViolationWitness | None:
    """Search hinge-sum data for a negative directional second difference of the solved value.

    Candidates are drawn from a seeded generator: 1..``max_hinges`` hinges with
    random unit normals (``e1`` only when ``univariate``) and offsets inside the
    central half of the box.  Only the central half of the box is scanned so
    the far-field extrapolation cannot fake a violation.  Returns the first witness below ``threshold`` or
    ``None`` when the budget is exhausted.
    """
    rng = np.random.default_rng(seed)
    n = grid.n
    lo, hi = np.array(grid.lo), np.array(grid.hi)
    for cand in range(budget):
        k = int(rng.integers(1, max_hinges + 1))
        if univariate:
            W = np.zeros((k, n)); W[:, 0] = 1.0
        else:
            W = rng.normal(size=(k, n))
            W /= np.linalg.norm(W, axis=1, keepdims=True)
        centers = lo + (hi - lo) * (0.25 + 0.5 * rng.random((k, n)))
        b = np.einsum("ki,ki->k", W, centers)
        v = solve_cauchy(A, hinge_sum(W, b), grid, save_every=grid.steps).final
        val, node, d = _directional_scan(v, grid, margin=max(2, min(grid.nodes) // 4))
        if val < threshold:
            pt = grid.points()[node]
            return ViolationWitness(W.tolist(), b.tolist(), list(node), pt.tolist(), d.tolist(),
                                    val, grid.T, cand)
    return None


def is_nonconstant(A: CoefficientField, points, tol: float = 1e-10) -> bool:
    vals = np.asarray(A(np.asarray(points, dtype=float).reshape(-1, A.n)))
    return bool(np.max(np.abs(vals - vals[0])) > tol)


# ---------------------------------------------------------------------------
# Hörmander rank
# ---------------------------------------------------------------------------

VectorField = Callable[[np.ndarray], np.ndarray]


def jacobian_fd(V: VectorField, x: np.ndarray) -> np.ndarray:
    """Centered-difference Jacobian ``dV_i/dx_j`` with step ``1e-5 (1 + |x|)``."""
    x = np.asarray(x, dtype=float)
    h = 1e-5 * (1.0 + np.linalg.norm(x))
    n = x.size
    cols = []
    for j in range(n):
        e = np.zeros(n); e[j] = h
        cols.append((np.asarray(V(x + e), float) - np.asarray(V(x - e), float)) / (2 * h))
    return np.column_stack(cols)


def lie_bracket(V: VectorField, W: VectorField) -> VectorField:
    """``[V, W] = (V . grad) W - (W . grad) V``."""

    def br(x):
        x = np.asarray(x, dtype=float)
        return jacobian_fd(W, x) @ np.asarray(V(x), float) - jacobian_fd(V, x) @ np.asarray(W(x), float)

    return br


def _rank(vectors: list[np.ndarray], rel: float) -> int:
    if not vectors:
        return 0
    s = np.linalg.svd(np.array(vectors), compute_uv=False)
    if s[0] == 0:
        return 0
    return int(np.sum(s > rel * s[0]))


def hormander_rank(fields: Sequence[VectorField], x, max_depth: int = 3, drift: VectorField | None = None,
                   rel_tol: float = 1e-8) -> tuple[bool, int | None]:
    """Bracket-generating check at ``x``.

    Level 0 spans the diffusion fields; each further level adds brackets
    ``[V_j, W]`` of every field (drift included) with the elements added at
    the previous level.  Returns ``(True, depth)`` at the first level reaching
    rank ``n``, otherwise ``(False, None)``.
    """
    x = np.asarray(x, dtype=float)
    n = x.size
    if max_depth < 0:
        raise ArgumentError("max_depth must be >= 0")
    gens = list(fields)
    every = ([drift] if drift is not None else []) + gens
    vecs = [np.asarray(V(x), float) for V in gens]
    for v in vecs:
        if v.shape != (n,) or not np.all(np.isfinite(v)):
            raise ArithmeticError("vector field evaluation failed")
    if _rank(vecs, rel_tol) == n:
        return True, 0
    frontier = gens
    for depth in range(1, max_depth + 1):
        new = []
        for V in every:
            for W in frontier:
                B = lie_bracket(V, W)
                b = np.asarray(B(x), float)
                if not np.all(np.isfinite(b)):
                    raise ArithmeticError("bracket evaluation failed")
                if _rank(vecs + [b], rel_tol) > _rank(vecs, rel_tol):
                    vecs.append(b)
                new.append(B)
        if _rank(vecs, rel_tol) == n:
            return True, depth
        frontier = new
    return False, None
