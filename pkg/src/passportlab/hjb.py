"""Passport-option control problems solved by candidate-set explicit sweeps.

Two problems live here:

* the classical passport option in natural coordinates ``(p, s_1..s_n)`` where
  ``p`` is the traded account ``Pi = sum delta_i S_i``; its generator is pure
  second order with matrix ``A(delta) = 1/2 [[d^T C d, (C d)^T], [C d, C]]`` and
  ``C_ij = sigma_i sigma_j rho_ij s_i s_j``;
* the symmetric passport option in index-numeraire log coordinates
  ``z1 = log S_N``, ``z2 = log X_N`` on the half strip ``z1 <= log 2``.

Both sweeps advance ``v_tau = max_c L_c v`` explicitly, where each candidate
control ``c`` has its own sparse operator ``L_c``.  Ties go to the earliest
candidate in the list.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import ArgumentError, ConfigurationError, DivergenceError
from .market import (MarketModel, basket_volatility, clamp_to_box, eigen_factorize, normal_cdf,
                     rotated_vertices)
from .pde import (SpaceTimeGrid, ValueSurface, _save_plan, assemble_operator, coefficient_norm,
                  extrapolate_boundary, format_float)

LOG2 = math.log(2.0)
TIE_RTOL = 1e-10


@dataclass
class PolicyMap:
    """Argmax candidate index per saved time level and node.

    ``index`` has shape ``(len(times), *grid.nodes)`` and points into
    ``candidates`` (shape ``(m, d)``).  Boundary nodes and the initial level
    carry ``-1`` (no decision taken there).
    """

    grid: SpaceTimeGrid
    times: np.ndarray
    index: np.ndarray
    candidates: np.ndarray
    contract: str
    labels: tuple[str, ...] = ()
    meta: dict = field(default_factory=dict)

    def controls(self, level: int | None = None) -> np.ndarray:
        """Control vectors, NaN where no decision was recorded."""
        idx = self.index if level is None else self.index[level]
        table = np.vstack([self.candidates, np.full((1, self.candidates.shape[1]), np.nan)])
        return table[np.where(idx < 0, len(self.candidates), idx)]

    def to_csv(self, fh: io.TextIOBase, header: str | None = None,
               coord_names: Sequence[str] | None = None) -> None:
        names = list(coord_names or [f"x{d + 1}" for d in range(self.grid.n)])
        m = self.candidates.shape[1]
        if header:
            fh.write(f"# {header}\n")
        fh.write(",".join(["t", *names, *[f"control{j + 1}" for j in range(m)]]) + "\n")
        pts = self.grid.points().reshape(-1, self.grid.n)
        for lev, t in enumerate(self.times):
            idx = self.index[lev].reshape(-1)
            for p, i in zip(pts, idx):
                if i < 0:
                    continue
                fh.write(",".join(format_float(v) for v in (t, *p, *self.candidates[i])) + "\n")


def _candidate_sweep(ops: list[sp.csr_matrix], v0: np.ndarray, grid: SpaceTimeGrid,
                     boundary: Callable[[np.ndarray, float], np.ndarray],
                     save_every: int | None, interior: np.ndarray,
                     check_every: int = 50) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Explicit ``v += k max_c L_c v``; returns ``(tau, values, policy_index)``."""
    save_every = _save_plan(grid.steps, save_every)
    k = grid.k
    shape = grid.nodes
    v = np.array(v0, dtype=float).reshape(shape)
    boundary(v, 0.0)
    inner = interior.reshape(-1)
    none = np.full(shape, -1, dtype=np.int16)
    saved_t, saved_v, saved_i = [0.0], [v.copy()], [none.copy()]
    flat = v.reshape(-1)
    stacked = np.empty((len(ops), flat.size))
    for n in range(1, grid.steps + 1):
        for c, op in enumerate(ops):
            stacked[c] = op @ flat
        best = stacked.max(axis=0)
        # earliest candidate within a relative tie band wins
        band = TIE_RTOL * np.maximum(np.abs(stacked).max(axis=0), 1e-300)
        choice = np.argmax(stacked >= (best - band), axis=0)
        flat = flat + k * best
        layer = boundary(flat.reshape(shape), n * k)
        flat = layer.reshape(-1)
        if n % check_every == 0 or n == grid.steps:
            if not np.all(np.isfinite(flat)):
                raise DivergenceError("non-finite values during HJB sweep", step=n)
        if n % save_every == 0 or n == grid.steps:
            saved_t.append(n * k)
            saved_v.append(layer.copy())
            pol = np.where(inner, choice, -1).astype(np.int16)
            saved_i.append(pol.reshape(shape))
    return np.array(saved_t), np.array(saved_v), np.array(saved_i)


def _stable_steps(grid: SpaceTimeGrid, a_norm: float, c_stab: float) -> SpaceTimeGrid:
    kmax = grid.stability_limit(a_norm, c_stab=1.0)
    if grid.k > kmax * (1 + 1e-12):
        raise ConfigurationError(
            f"explicit step k={grid.k:.3e} exceeds stability bound {kmax:.3e}; "
            f"use >= {math.ceil(grid.T / (c_stab * kmax))} steps"
        )
    return grid


# ---------------------------------------------------------------------------
# symmetric passport
# ---------------------------------------------------------------------------

def bs_boundary_value(z2, tau, sigma: float, strike: float = 1.0):
    """Black-Scholes call on ``X = exp(z2)`` with volatility ``sigma`` and no rates.

    ``exp(z2) N(d+) - K N(d-)``, ``d+- = (z2 - log K +- sigma^2 tau / 2) / (sigma sqrt(tau))``;
    the payoff ``(exp(z2) - K)^+`` at ``tau = 0``.
    """
    z2 = np.asarray(z2, dtype=float)
    tau = np.asarray(tau, dtype=float)
    x = np.exp(z2)
    vol = sigma * np.sqrt(np.maximum(tau, 0.0))
    payoff = np.maximum(x - strike, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        dp = (z2 - math.log(strike) + 0.5 * vol * vol) / vol
        dm = dp - vol
        bs = x * normal_cdf(dp) - strike * normal_cdf(dm)
    out = np.where(vol > 0, bs, payoff)
    return float(out) if out.ndim == 0 else out


def optimal_symmetric_strategy(s_n, x_s):
    """Stop-loss rule: hold ``x_s`` units of ``S`` while ``S_N <= 1``, nothing otherwise."""
    s_n = np.asarray(s_n, dtype=float)
    x_s = np.asarray(x_s, dtype=float)
    out = np.where(s_n <= 1.0, x_s, 0.0)
    return float(out) if out.ndim == 0 else out


def symmetric_grid(sigma: float, T: float = 1.0, strike: float = 1.0, *, h: float = 0.02,
                   z1_low: float = -2.0, z2_halfwidth: float | None = None,
                   c_stab: float = 0.9, eps_reg: float = 0.0) -> SpaceTimeGrid:
    """Grid on ``[z1_low, log 2] x [log K - W, log K + W]`` whose z1 axis contains ``0``.

    Spacing is ``h`` in both directions (z1 spacing adjusted so that ``log 2``
    is a whole number of steps from ``0``); ``W`` defaults to ``6 sigma sqrt(T)``
    rounded up to a node.  The step count meets the explicit bound.
    """
    m = max(1, round(LOG2 / h))
    h1 = LOG2 / m
    below = math.ceil(-z1_low / h1)
    lo1 = -below * h1
    W = z2_halfwidth if z2_halfwidth is not None else max(6.0 * sigma * math.sqrt(T), 10 * h)
    half = math.ceil(W / h)
    c = math.log(strike)
    probe = SpaceTimeGrid((lo1, c - half * h), (LOG2, c + half * h), (below + m + 1, 2 * half + 1), T, 1)
    return SpaceTimeGrid.stable(probe.lo, probe.hi, probe.nodes, T,
                                _symmetric_norm(sigma, eps_reg), c_stab=c_stab)


def _symmetric_norm(sigma: float, eps_reg: float) -> float:
    # over s in [0, 2] and delta in {0, 1}: largest eigenvalue is sigma^2 at s -> 0, delta = 1
    return sigma * sigma + eps_reg * eps_reg


def symmetric_coefficients(sigma: float, z1: np.ndarray, fraction: np.ndarray | float,
                           eps_reg: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Second-order matrix and drift of ``(log S_N, log X_N)`` when a wealth fraction sits in ``S``.

    ``a = 2 - S_N``, ``b = S_N - 2 fraction``; the diffusion matrix is
    ``sigma^2/8 [[a^2, -a b], [-a b, b^2]]`` and the Ito drift of each log
    coordinate equals minus its diagonal entry.
    """
    s = np.exp(z1)
    a = 2.0 - s
    b = s - 2.0 * np.asarray(fraction, dtype=float)
    c = sigma * sigma / 8.0
    A = np.empty(np.shape(z1) + (2, 2))
    A[..., 0, 0] = c * a * a + eps_reg * eps_reg
    A[..., 1, 1] = c * b * b
    A[..., 0, 1] = A[..., 1, 0] = -c * a * b
    B = np.stack([-c * a * a, -c * b * b], axis=-1)
    return A, B


def _symmetric_boundary(grid: SpaceTimeGrid, sigma: float, strike: float):
    z2 = grid.axes[1]
    x = np.exp(z2)
    # extrapolation linear in X = exp(z2) on the z2 faces
    wl = (x[0] - x[1]) / (x[1] - x[2])
    wh = (x[-1] - x[-2]) / (x[-2] - x[-3])

    def apply(v: np.ndarray, tau: float) -> np.ndarray:
        v[0, :] = 2.0 * v[1, :] - v[2, :]
        v[:, 0] = v[:, 1] + wl * (v[:, 1] - v[:, 2])
        v[:, -1] = v[:, -2] + wh * (v[:, -2] - v[:, -3])
        v[-1, :] = bs_boundary_value(z2, tau, sigma, strike)
        return v

    return apply


def solve_symmetric_passport(sigma: float, strike: float = 1.0, grid: SpaceTimeGrid | None = None, *,
                             eps_reg: float = 0.0, policy: str | Callable | None = None,
                             save_every: int | None = None) -> tuple[ValueSurface, PolicyMap]:
    """Value of the symmetric passport option in ``(tau, log S_N, log X_N)``.

    The candidate controls are the wealth fractions ``1`` (all wealth in
    ``S``, i.e. ``Delta^S = X_S``) and ``0``.  With ``policy`` set the sweep
    applies a fixed rule instead of the maximum: ``"stop-loss"``, ``"zero"``,
    ``"full"`` or a callable ``z1 -> fraction`` in ``{0, 1}``.

    ``grid`` must end exactly at ``z1 = log 2``, where the Black-Scholes value
    of the account is imposed.  ``eps_reg`` adds ``eps_reg^2 u_{z1 z1}``.
    """
    if sigma < 0:
        raise ArgumentError("sigma must be nonnegative")
    grid = grid or symmetric_grid(sigma, strike=strike, eps_reg=eps_reg)
    if grid.n != 2:
        raise ConfigurationError("symmetric passport grid must be two dimensional (z1, z2)")
    if abs(grid.hi[0] - LOG2) > 1e-12:
        raise ConfigurationError(f"grid must end at z1 = log 2, got {grid.hi[0]!r}")
    _stable_steps(grid, _symmetric_norm(sigma, eps_reg), 0.9)

    pts = grid.points()
    z1 = pts[..., 0]
    fractions = np.array([[1.0], [0.0]])
    ops = []
    for f in fractions[:, 0]:
        A, B = symmetric_coefficients(sigma, z1, f, eps_reg)
        ops.append(assemble_operator(grid, A, B, cross="centered"))

    if policy is not None:
        if policy == "stop-loss":
            rule = (z1 <= 0.0).astype(float)
        elif policy == "zero":
            rule = np.zeros_like(z1)
        elif policy == "full":
            rule = np.ones_like(z1)
        elif callable(policy):
            rule = np.asarray(policy(z1), dtype=float)
        else:
            raise ArgumentError(f"unknown policy {policy!r}")
        if not np.all((rule == 0.0) | (rule == 1.0)):
            raise ArgumentError("fixed policy must take values in {0, 1}")
        mask = sp.diags(rule.reshape(-1))
        ops = [(mask @ ops[0] + (sp.identity(z1.size) - mask) @ ops[1]).tocsr()]

    v0 = np.maximum(np.exp(pts[..., 1]) - strike, 0.0)
    interior = grid.interior_mask()
    tau, vals, idx = _candidate_sweep(ops, v0, grid, _symmetric_boundary(grid, sigma, strike),
                                      save_every, interior)
    if policy is not None:
        idx = np.where(idx >= 0, np.where(rule == 1.0, 0, 1)[None], -1).astype(np.int16)
    meta = {"kind": "symmetric-passport", "sigma": sigma, "strike": strike, "eps_reg": eps_reg,
            "policy": policy if isinstance(policy, str) or policy is None else "custom"}
    surface = ValueSurface(grid, tau, vals, meta=meta)
    pmap = PolicyMap(grid, tau, idx, fractions, contract="symmetric",
                     labels=("full", "none"), meta=dict(meta))
    return surface, pmap


def symmetric_value(surface: ValueSurface, m0: float = 1.0, x0: float = 1.0, tau: float | None = None) -> float:
    """Interpolated value at ``S_N = 2 - m0``, ``X_N = x0``."""
    pt = np.array([math.log(2.0 - m0), math.log(x0)])
    return float(surface.interpolate(pt, tau))


def symmetric_policy_agreement(surface: ValueSurface, pmap: PolicyMap, gamma_tol: float = 1e-6) -> tuple[float, int]:
    """Fraction of decided nodes (``tau > 0``, z2-Gamma above ``gamma_tol``) where the recorded
    control is the stop-loss one; returns ``(fraction, count)``.

    The z2-Gamma is the log-coordinate Gamma ``u_{z2 z2} - u_{z2} = X^2 u_XX``
    (plain ``u_{z2 z2}`` is about ``X`` deep in the money, where the
    controls are nearly indifferent).
    """
    grid = surface.grid
    h2 = grid.spacing[1]
    z1 = grid.points()[..., 0]
    want = np.where(z1 <= 0.0, 0, 1)
    agree = total = 0
    for lev in range(1, len(surface.times)):
        v = surface.values[lev]
        gam = np.zeros_like(v)
        gam[:, 1:-1] = ((v[:, 2:] - 2 * v[:, 1:-1] + v[:, :-2]) / (h2 * h2)
                        - (v[:, 2:] - v[:, :-2]) / (2 * h2))
        sel = (pmap.index[lev] >= 0) & (gam > gamma_tol)
        total += int(sel.sum())
        agree += int(np.sum(pmap.index[lev][sel] == want[sel]))
    return (agree / total if total else 1.0), total


# ---------------------------------------------------------------------------
# classical passport
# ---------------------------------------------------------------------------

def optimal_passport_vertex(model: MarketModel, marginal_signs, s=None, *, warn: bool = True) -> dict:
    """Rotated vertex ``Q^T v`` for marginal signs ``v`` in ``{-1, 1}^n``.

    Returns a dict with the literal vertex, its box-clamped version and, when
    prices ``s`` are given (default: spot), both basket volatilities.
    """
    v = np.asarray(marginal_signs, dtype=float)
    if v.shape != (model.n,) or not np.all(np.abs(v) == 1.0):
        raise ArgumentError("marginal signs must be a vector of +-1 of length n")
    fac = eigen_factorize(model)
    literal = v @ fac.Q
    clamped = clamp_to_box(literal, warn=warn)
    s = model.spot if s is None else np.asarray(s, dtype=float)
    return {
        "literal": literal,
        "clamped": clamped,
        "feasible": bool(np.max(np.abs(literal)) <= 1.0 + 1e-12),
        "sigma_b_literal": basket_volatility(model, s, literal, fac),
        "sigma_b_clamped": basket_volatility(model, s, clamped, fac),
    }


def passport_candidates(model: MarketModel, include_box: bool = True) -> np.ndarray:
    """Candidate controls: clamped rotated vertices, then box vertices, then ``0``; duplicates dropped.

    The box vertices are added because clamped rotated vertices can miss the
    basket-volatility maximiser (e.g. strong negative correlation).
    """
    fac = eigen_factorize(model)
    rot = np.clip(rotated_vertices(fac), -1.0, 1.0)
    n = model.n
    parts = [rot]
    if include_box:
        parts.append(np.array(np.meshgrid(*([[-1.0, 1.0]] * n), indexing="ij")).reshape(n, -1).T)
    parts.append(np.zeros((1, n)))
    out: list[np.ndarray] = []
    for row in np.vstack(parts):
        if not any(np.allclose(row, o, atol=1e-12) for o in out):
            out.append(row)
    return np.array(out)


def passport_generator(model: MarketModel, s: np.ndarray, delta: np.ndarray) -> np.ndarray:
    """``A(delta)`` on ``(p, s_1..s_n)``, shape ``(..., n+1, n+1)``."""
    w = model.sigma * s
    C = w[..., :, None] * model.rho * w[..., None, :]
    Cd = C @ delta
    n = model.n
    A = np.empty(s.shape[:-1] + (n + 1, n + 1))
    A[..., 0, 0] = Cd @ delta
    A[..., 0, 1:] = Cd
    A[..., 1:, 0] = Cd
    A[..., 1:, 1:] = C
    return 0.5 * A


def passport_grid(model: MarketModel, strike: float = 0.0, T: float = 1.0, *, p0: float = 0.0,
                  h: float = 0.05, s_max: Sequence[float] | None = None, c_stab: float = 0.9,
                  n_candidates: np.ndarray | None = None) -> SpaceTimeGrid:
    """Grid on ``p`` in ``[min(p0,K) - W, max(p0,K) + W]``, ``W = 6 sigma_max sqrt(T) sum(spot)``,
    and each ``s_i`` in ``[-h, s_max_i]``.

    The ghost layer at ``s_i = -h`` keeps ``s_i = 0`` an interior node: every
    coefficient touching ``s_i`` vanishes there, so the ghost never feeds back.
    All directions share the spacing ``h``.
    """
    W = 6.0 * float(np.max(model.sigma)) * math.sqrt(T) * float(np.sum(model.spot))
    W = max(W, 4 * h)
    plo, phi = min(p0, strike) - W, max(p0, strike) + W
    m_p = math.ceil((phi - plo) / h)
    phi = plo + m_p * h
    if s_max is None:
        s_max = model.spot * np.exp(4.0 * np.maximum(model.sigma, 0.05) * math.sqrt(T))
    s_max = np.broadcast_to(np.asarray(s_max, dtype=float), (model.n,))
    m_s = [math.ceil(sm / h) for sm in s_max]
    lo = (plo, *[-h] * model.n)
    hi = (phi, *[m * h for m in m_s])
    nodes = (m_p + 1, *[m + 2 for m in m_s])
    probe = SpaceTimeGrid(lo, hi, nodes, T, 1)
    cands = passport_candidates(model) if n_candidates is None else n_candidates
    return SpaceTimeGrid.stable(lo, hi, nodes, T, _passport_norm(model, probe, cands), c_stab=c_stab)


def _passport_norm(model: MarketModel, grid: SpaceTimeGrid, candidates: np.ndarray) -> float:
    s_hi = np.array(grid.hi[1:])
    return max(coefficient_norm(passport_generator(model, s_hi, c)[None]) for c in candidates)


def _monotone_ok(a_nodes: np.ndarray, h: np.ndarray) -> bool:
    n = a_nodes.shape[-1]
    for i in range(n):
        red = a_nodes[..., i, i].copy()
        for j in range(n):
            if j != i:
                red -= np.abs(a_nodes[..., i, j]) * h[i] / h[j]
        if np.min(red) < -1e-14 * max(1.0, float(np.max(np.abs(a_nodes)))):
            return False
    return True


def solve_passport_hjb(model: MarketModel, strike: float = 0.0, grid: SpaceTimeGrid | None = None, *,
                       candidates: np.ndarray | None = None, cross: str = "auto",
                       save_every: int | None = None, p0: float = 0.0) -> tuple[ValueSurface, PolicyMap]:
    """Classical passport value ``sup E[(Pi_T - K)^+]`` over controls in ``[-1, 1]^n``.

    Axis 0 of the grid is the account ``p``; axes ``1..n`` are the prices.
    ``cross="auto"`` uses the monotone cross stencil when every candidate's
    matrix is diagonally dominant on the grid, the centered one otherwise.
    """
    if model.n > 3:
        raise ArgumentError("classical passport grids are limited to n <= 3")
    cands = passport_candidates(model) if candidates is None else np.atleast_2d(np.asarray(candidates, float))
    if cands.shape[1] != model.n or np.any(np.abs(cands) > 1.0 + 1e-12):
        raise ArgumentError("candidates must be controls in [-1, 1]^n")
    grid = grid or passport_grid(model, strike, p0=p0, n_candidates=cands)
    if grid.n != model.n + 1:
        raise ConfigurationError(f"grid must have {model.n + 1} dimensions (p, s_1..s_n)")
    if any(lo >= 0 for lo in grid.lo[1:]):
        raise ConfigurationError("price axes need a ghost layer below s = 0")

    pts = grid.points()
    s = np.maximum(pts[..., 1:], 0.0)
    a_list = [passport_generator(model, s, c) for c in cands]
    _stable_steps(grid, max(coefficient_norm(a) for a in a_list), 0.9)
    if cross == "auto":
        cross = "monotone" if all(_monotone_ok(a, grid.spacing) for a in a_list) else "centered"
    ops = [assemble_operator(grid, a, cross=cross) for a in a_list]

    v0 = np.maximum(pts[..., 0] - strike, 0.0)

    def boundary(v, tau):
        # ghost s = -h faces included: their values never enter the interior update
        return extrapolate_boundary(v)

    interior = grid.interior_mask()
    tau, vals, idx = _candidate_sweep(ops, v0, grid, boundary, save_every, interior)
    meta = {"kind": "passport-hjb", "n": model.n, "strike": strike, "cross": cross}
    surface = ValueSurface(grid, tau, vals, meta=meta)
    pmap = PolicyMap(grid, tau, idx, cands, contract="classical", meta=dict(meta))
    return surface, pmap


def passport_value(surface: ValueSurface, p0: float, spot: Sequence[float], tau: float | None = None) -> float:
    return float(surface.interpolate(np.array([p0, *spot], dtype=float), tau))


def basket_policy_check(model: MarketModel, surface: ValueSurface, pmap: PolicyMap, *,
                        grid_points: int = 41, gamma_tol: float = 1e-6, tol: float = 1e-6,
                        levels: Sequence[int] | None = None) -> tuple[float, int]:
    """Compare the basket volatility of the recorded control with the maximum over a control grid.

    At every decided node with ``s > 0`` and discrete ``v_pp > gamma_tol`` the
    attained ``sigma_B(delta*, s)`` is compared with the maximum of ``sigma_B``
    over the ``grid_points^n`` tensor grid on ``[-1, 1]^n``.  Returns
    ``(fraction within tol, node count)``.
    """
    grid = surface.grid
    n = model.n
    hp = grid.spacing[0]
    lin = np.linspace(-1.0, 1.0, grid_points)
    ctrl = np.array(np.meshgrid(*([lin] * n), indexing="ij")).reshape(n, -1).T
    cov = model.covariance
    s_all = grid.points()[..., 1:]
    ok = total = 0
    levels = range(1, len(surface.times)) if levels is None else levels
    for lev in levels:
        v = surface.values[lev]
        gam = np.zeros_like(v)
        gam[1:-1] = (v[2:] - 2 * v[1:-1] + v[:-2]) / (hp * hp)
        sel = (pmap.index[lev] >= 0) & (gam > gamma_tol) & np.all(s_all > 0, axis=-1)
        if not np.any(sel):
            continue
        s = s_all[sel]
        chosen = pmap.candidates[pmap.index[lev][sel]]
        attained = np.sqrt(np.maximum(np.einsum("ki,ij,kj->k", chosen * s, cov, chosen * s), 0.0))
        best = np.zeros(len(s))
        for start in range(0, len(s), 4096):
            w = s[start:start + 4096, None, :] * ctrl[None]
            q = np.einsum("kci,ij,kcj->kc", w, cov, w)
            best[start:start + 4096] = np.sqrt(np.maximum(q.max(axis=1), 0.0))
        total += len(s)
        ok += int(np.sum(np.abs(best - attained) <= tol))
    return (ok / total if total else 1.0), total
