"""Finite differences for pure second-order Cauchy problems ``v_t = sum_ij a_ij v_{x_i x_j}``.

The spatial operator is assembled once as a sparse matrix acting on the
flattened (C-ordered) nodal vector.  Boundary rows are empty; far-field values
are refreshed after every step by linear extrapolation (second normal
derivative zero).  The adjoint solve uses the transpose of the interior
forward operator, i.e. the conservative form ``sum_ij D_ij (a_ij u)``.
"""

from __future__ import annotations

import io
import math
import struct
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.interpolate import RegularGridInterpolator

from .errors import ArgumentError, ConfigurationError, DivergenceError
from .market import CoefficientField

MAGIC = b"PLVS"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class SpaceTimeGrid:
    """Tensor grid ``prod_d [lo_d, hi_d]`` with ``nodes_d`` points and ``steps`` uniform time steps on ``[0, T]``."""

    lo: tuple[float, ...]
    hi: tuple[float, ...]
    nodes: tuple[int, ...]
    T: float
    steps: int

    def __post_init__(self) -> None:
        lo = tuple(float(v) for v in np.atleast_1d(self.lo))
        hi = tuple(float(v) for v in np.atleast_1d(self.hi))
        nodes = tuple(int(v) for v in np.atleast_1d(self.nodes))
        if not (len(lo) == len(hi) == len(nodes)):
            raise ArgumentError("lo, hi and nodes must have the same length")
        if any(n < 3 for n in nodes):
            raise ArgumentError("need at least 3 nodes per dimension")
        if any(b <= a for a, b in zip(lo, hi)):
            raise ArgumentError("grid bounds must satisfy lo < hi")
        if not self.T > 0 or int(self.steps) < 1:
            raise ArgumentError("need T > 0 and steps >= 1")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "T", float(self.T))
        object.__setattr__(self, "steps", int(self.steps))

    @property
    def n(self) -> int:
        return len(self.nodes)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.nodes

    @property
    def spacing(self) -> np.ndarray:
        return np.array([(b - a) / (m - 1) for a, b, m in zip(self.lo, self.hi, self.nodes)])

    @property
    def k(self) -> float:
        return self.T / self.steps

    @property
    def axes(self) -> list[np.ndarray]:
        return [np.linspace(a, b, m) for a, b, m in zip(self.lo, self.hi, self.nodes)]

    def points(self) -> np.ndarray:
        """Node coordinates, shape ``(*nodes, n)``."""
        return np.stack(np.meshgrid(*self.axes, indexing="ij"), axis=-1)

    def interior_mask(self, margin: int = 1) -> np.ndarray:
        mask = np.zeros(self.nodes, dtype=bool)
        mask[tuple(slice(margin, m - margin) for m in self.nodes)] = True
        return mask

    def window_mask(self, lo: Sequence[float], hi: Sequence[float]) -> np.ndarray:
        pts = self.points()
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        tol = 1e-9 * self.spacing
        return np.all((pts >= lo - tol) & (pts <= hi + tol), axis=-1)

    def index_of(self, x: Sequence[float]) -> tuple[int, ...]:
        """Index of the node nearest to ``x``."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        idx = np.rint((x - np.array(self.lo)) / self.spacing).astype(int)
        return tuple(int(i) for i in idx)

    def contains(self, x: Sequence[float]) -> bool:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return bool(np.all(x >= np.array(self.lo)) and np.all(x <= np.array(self.hi)))

    def stability_limit(self, a_norm: float, c_stab: float = 0.9) -> float:
        """Largest explicit step ``c_stab * min h^2 / (2 n max||A||)``."""
        if a_norm <= 0:
            return math.inf
        return c_stab * float(np.min(self.spacing) ** 2) / (2.0 * self.n * a_norm)

    def with_steps(self, steps: int) -> "SpaceTimeGrid":
        return SpaceTimeGrid(self.lo, self.hi, self.nodes, self.T, steps)

    @classmethod
    def stable(cls, lo, hi, nodes, T: float, a_norm: float, c_stab: float = 0.9) -> "SpaceTimeGrid":
        """Grid whose step count is the smallest one meeting the explicit bound."""
        probe = cls(lo, hi, nodes, T, 1)
        kmax = probe.stability_limit(a_norm, c_stab)
        steps = 1 if math.isinf(kmax) else max(1, math.ceil(T / kmax * (1 + 1e-12)))
        return probe.with_steps(steps)


@dataclass
class ValueSurface:
    """Nodal values on ``grid`` at the physical times ``times`` (ascending).

    ``values`` has shape ``(len(times), *grid.nodes)``.
    """

    grid: SpaceTimeGrid
    times: np.ndarray
    values: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.times.size,) + self.grid.nodes:
            raise ArgumentError(
                f"values shape {self.values.shape} inconsistent with grid {self.grid.nodes} and {self.times.size} times"
            )
        if not np.all(np.isfinite(self.values)):
            raise DivergenceError("surface contains non-finite values")

    def time_index(self, t: float) -> int:
        i = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[i] - t) > 1e-9 * max(1.0, abs(t)):
            raise ArgumentError(f"time {t} is not a saved level (nearest {self.times[i]})")
        return i

    def at(self, t: float) -> np.ndarray:
        return self.values[self.time_index(t)]

    @property
    def final(self) -> np.ndarray:
        return self.values[-1]

    def interpolate(self, x, t: float | None = None) -> np.ndarray | float:
        """Multilinear interpolation at points ``x`` (shape ``(..., n)``) at saved time ``t``."""
        layer = self.final if t is None else self.at(t)
        x = np.asarray(x, dtype=float)
        interp = RegularGridInterpolator(self.grid.axes, layer, method="linear", bounds_error=True)
        out = interp(x.reshape(-1, self.grid.n)).reshape(x.shape[:-1])
        return float(out) if out.ndim == 0 else out

    # -- export ---------------------------------------------------------------
    def to_csv(self, fh: io.TextIOBase, header: str | None = None,
               coord_names: Sequence[str] | None = None) -> None:
        """One row per (time, node): ``t, x_1..x_n, value`` with 17 significant digits."""
        names = list(coord_names or [f"x{d + 1}" for d in range(self.grid.n)])
        if header:
            fh.write(f"# {header}\n")
        fh.write(",".join(["t", *names, "value"]) + "\n")
        pts = self.grid.points().reshape(-1, self.grid.n)
        for t, layer in zip(self.times, self.values):
            flat = layer.reshape(-1)
            for p, val in zip(pts, flat):
                fh.write(",".join(format_float(v) for v in (t, *p, val)) + "\n")

    def to_bytes(self) -> bytes:
        """Little-endian dump; layout documented in README (section "Binary surface format")."""
        g = self.grid
        head = struct.pack("<4sIII", MAGIC, FORMAT_VERSION, g.n, self.times.size)
        head += struct.pack(f"<{g.n}I", *g.nodes)
        head += struct.pack(f"<{g.n}d", *g.lo) + struct.pack(f"<{g.n}d", *g.hi)
        head += struct.pack("<d", g.T) + struct.pack("<I", g.steps)
        body = self.times.astype("<f8").tobytes() + np.ascontiguousarray(self.values).astype("<f8").tobytes()
        return head + body

    @classmethod
    def from_bytes(cls, data: bytes) -> "ValueSurface":
        magic, version, n, nt = struct.unpack_from("<4sIII", data, 0)
        if magic != MAGIC or version != FORMAT_VERSION:
            raise ArgumentError("not a passportlab surface dump")
        off = 16
        nodes = struct.unpack_from(f"<{n}I", data, off); off += 4 * n
        lo = struct.unpack_from(f"<{n}d", data, off); off += 8 * n
        hi = struct.unpack_from(f"<{n}d", data, off); off += 8 * n
        (T,) = struct.unpack_from("<d", data, off); off += 8
        (steps,) = struct.unpack_from("<I", data, off); off += 4
        times = np.frombuffer(data, "<f8", nt, off); off += 8 * nt
        values = np.frombuffer(data, "<f8", nt * int(np.prod(nodes)), off)
        grid = SpaceTimeGrid(lo, hi, nodes, T, steps)
        return cls(grid, times.astype(float), values.reshape((nt,) + tuple(nodes)).astype(float))


def format_float(v: float) -> str:
    return format(float(v), ".17g")


# ---------------------------------------------------------------------------
# operator assembly
# ---------------------------------------------------------------------------

def _flat_index(shape: tuple[int, ...]) -> np.ndarray:
    return np.arange(int(np.prod(shape))).reshape(shape)


def _interior_slices(shape, offset) -> tuple[slice, ...]:
    return tuple(slice(1 + o, m - 1 + o) for m, o in zip(shape, offset))


def assemble_operator(grid: SpaceTimeGrid, a: np.ndarray, b: np.ndarray | None = None,
                      cross: str = "centered") -> sp.csr_matrix:
    """Sparse matrix of ``sum_ij a_ij D_ij + sum_i b_i D_i`` on interior rows.

    ``a`` has shape ``(*nodes, n, n)`` (symmetric), ``b`` shape ``(*nodes, n)``.
    ``cross="centered"`` uses the 4-point rule for mixed derivatives;
    ``cross="monotone"`` splits each mixed term onto the diagonal direction
    matching the sign of ``a_ij`` (the 7-point scheme), which is monotone when
    ``a_ii >= sum_j |a_ij| h_i / h_j``.
    """
    shape = grid.nodes
    n = grid.n
    h = grid.spacing
    idx = _flat_index(shape)
    inner = idx[_interior_slices(shape, (0,) * n)].ravel()
    rows, cols, vals = [], [], []

    def add(offset, coef):
        off = tuple(offset)
        rows.append(inner)
        cols.append(idx[_interior_slices(shape, off)].ravel())
        vals.append(np.broadcast_to(coef, inner.shape).astype(float))

    sl = _interior_slices(shape, (0,) * n)
    ai = a[sl].reshape(-1, n, n)
    diag = [ai[:, d, d].copy() for d in range(n)]
    unit = np.eye(n, dtype=int)

    for i in range(n):
        for j in range(i + 1, n):
            aij = ai[:, i, j]
            if not np.any(aij):
                continue
            if cross == "centered":
                c = 2.0 * aij / (4.0 * h[i] * h[j])
                add(unit[i] + unit[j], c)
                add(-unit[i] - unit[j], c)
                add(unit[i] - unit[j], -c)
                add(-unit[i] + unit[j], -c)
            elif cross == "monotone":
                pos = np.where(aij > 0, aij, 0.0) / (h[i] * h[j])
                neg = np.where(aij < 0, -aij, 0.0) / (h[i] * h[j])
                add(unit[i] + unit[j], pos)
                add(-unit[i] - unit[j], pos)
                add(unit[i] - unit[j], neg)
                add(-unit[i] + unit[j], neg)
                add(np.zeros(n, dtype=int), -2.0 * (pos + neg))
                diag[i] -= np.abs(aij) * h[i] / h[j]
                diag[j] -= np.abs(aij) * h[j] / h[i]
            else:
                raise ArgumentError(f"unknown cross stencil {cross!r}")

    for d in range(n):
        c = diag[d] / h[d] ** 2
        add(unit[d], c)
        add(-unit[d], c)
        add(np.zeros(n, dtype=int), -2.0 * c)

    if b is not None:
        bi = b[sl].reshape(-1, n)
        for d in range(n):
            c = bi[:, d] / (2.0 * h[d])
            add(unit[d], c)
            add(-unit[d], -c)

    size = idx.size
    mat = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                        shape=(size, size))
    return mat.tocsr()


def interior_projection(grid: SpaceTimeGrid) -> sp.dia_matrix:
    return sp.diags(grid.interior_mask().ravel().astype(float))


def extrapolate_boundary(v: np.ndarray, skip: Sequence[tuple[int, int]] = ()) -> np.ndarray:
    """Fill every face by linear extrapolation from the two inner neighbours (in place).

    ``skip`` lists ``(axis, side)`` faces (side 0 = low, 1 = high) holding
    Dirichlet data that must not be touched.
    """
    skip = set(skip)
    for d in range(v.ndim):
        lo = [slice(None)] * v.ndim
        if (d, 0) not in skip:
            lo_t = list(lo); lo_t[d] = 0
            lo_1 = list(lo); lo_1[d] = 1
            lo_2 = list(lo); lo_2[d] = 2
            v[tuple(lo_t)] = 2.0 * v[tuple(lo_1)] - v[tuple(lo_2)]
        if (d, 1) not in skip:
            hi_t = list(lo); hi_t[d] = -1
            hi_1 = list(lo); hi_1[d] = -2
            hi_2 = list(lo); hi_2[d] = -3
            v[tuple(hi_t)] = 2.0 * v[tuple(hi_1)] - v[tuple(hi_2)]
    return v


def _save_plan(steps: int, save_every: int | None, max_levels: int = 101) -> int:
    if save_every is None:
        save_every = max(1, math.ceil(steps / (max_levels - 1)))
    if save_every < 1:
        raise ArgumentError("save_every must be >= 1")
    return int(save_every)


def march(op: sp.spmatrix, v0: np.ndarray, grid: SpaceTimeGrid, *, scheme: str = "explicit",
          save_every: int | None = None, boundary: Callable[[np.ndarray], np.ndarray] = extrapolate_boundary,
          check_every: int = 50) -> tuple[np.ndarray, np.ndarray]:
    """Advance ``v_tau = op v`` over ``grid.steps`` steps; returns ``(tau_levels, values)``."""
    save_every = _save_plan(grid.steps, save_every)
    k = grid.k
    shape = grid.nodes
    v = np.array(v0, dtype=float).reshape(shape)
    boundary(v)
    saved_t, saved_v = [0.0], [v.copy()]

    if scheme == "explicit":
        def step(x):
            return x + k * (op @ x)
    elif scheme == "implicit":
        # Crank-Nicolson on interior rows; boundary rows carry the extrapolation via `boundary`.
        eye = sp.identity(op.shape[0], format="csr")
        lhs = spla.splu((eye - 0.5 * k * op).tocsc())
        rhs = (eye + 0.5 * k * op).tocsr()

        def step(x):
            return lhs.solve(rhs @ x)
    else:
        raise ArgumentError(f"unknown scheme {scheme!r}")

    flat = v.reshape(-1)
    for n in range(1, grid.steps + 1):
        flat = step(flat)
        layer = boundary(flat.reshape(shape))
        flat = layer.reshape(-1)
        if n % check_every == 0 or n == grid.steps:
            if not np.all(np.isfinite(flat)):
                raise DivergenceError("non-finite values during time stepping", step=n)
        if n % save_every == 0 or n == grid.steps:
            saved_t.append(n * k)
            saved_v.append(layer.copy())
    return np.array(saved_t), np.array(saved_v)


def _nodal(data, grid: SpaceTimeGrid) -> np.ndarray:
    if callable(data):
        out = np.asarray(data(grid.points()), dtype=float)
    else:
        out = np.asarray(data, dtype=float)
    if out.shape != grid.nodes:
        raise ArgumentError(f"data shape {out.shape} does not match grid {grid.nodes}")
    if not np.all(np.isfinite(out)):
        raise ArgumentError("initial data not finite on the grid")
    return out


def _coefficients(A: CoefficientField, grid: SpaceTimeGrid) -> np.ndarray:
    if A.n != grid.n:
        raise ArgumentError(f"coefficient dimension {A.n} != grid dimension {grid.n}")
    return np.array(A(grid.points()))


def coefficient_norm(a_nodes: np.ndarray) -> float:
    """Max over nodes of the spectral norm of ``A`` (PSD, so the top eigenvalue)."""
    n = a_nodes.shape[-1]
    return float(np.max(np.linalg.eigvalsh(a_nodes.reshape(-1, n, n))[:, -1]))


def _check_stability(grid: SpaceTimeGrid, a_nodes: np.ndarray, scheme: str, c_stab: float) -> None:
    if scheme != "explicit":
        return
    kmax = grid.stability_limit(coefficient_norm(a_nodes), c_stab=c_stab)
    if grid.k > kmax * (1 + 1e-12):
        raise ConfigurationError(
            f"explicit step k={grid.k:.3e} exceeds stability bound {kmax:.3e}; "
            f"use >= {math.ceil(grid.T / kmax)} steps or scheme='implicit'"
        )


def solve_cauchy(A: CoefficientField, data, grid: SpaceTimeGrid, *, scheme: str = "explicit",
                 cross: str = "centered", save_every: int | None = None, t0: float = 0.0,
                 c_stab: float = 1.0) -> ValueSurface:
    """Solve ``v_t = sum_ij a_ij v_{x_i x_j}``, ``v(t0) = data`` on ``[t0, t0 + T]``."""
    a = _coefficients(A, grid)
    _check_stability(grid, a, scheme, c_stab)
    v0 = _nodal(data, grid)
    op = assemble_operator(grid, a, cross=cross)
    tau, vals = march(op, v0, grid, scheme=scheme, save_every=save_every)
    return ValueSurface(grid, t0 + tau, vals, meta={"kind": "forward", "field": A.name, "scheme": scheme})


def adjoint_operator(grid: SpaceTimeGrid, a: np.ndarray, cross: str = "centered") -> sp.csr_matrix:
    """Conservative adjoint ``sum_ij D_ij(a_ij .)``: transpose of the interior forward operator."""
    P = interior_projection(grid)
    fwd = assemble_operator(grid, a, cross=cross)
    return (P @ fwd @ P).T.tocsr()


def solve_adjoint(A: CoefficientField, data, grid: SpaceTimeGrid, *, scheme: str = "explicit",
                  cross: str = "centered", save_every: int | None = None, t_terminal: float | None = None,
                  c_stab: float = 1.0) -> ValueSurface:
    """Solve ``u_t + sum_ij D_ij(a_ij u) = 0`` backward from ``u(t_terminal) = data``.

    The returned surface is indexed by physical time ascending, covering
    ``[t_terminal - T, t_terminal]`` (``t_terminal`` defaults to ``grid.T``).
    """
    a = _coefficients(A, grid)
    _check_stability(grid, a, scheme, c_stab)
    u0 = _nodal(data, grid)
    op = adjoint_operator(grid, a, cross=cross)
    tau, vals = march(op, u0, grid, scheme=scheme, save_every=save_every)
    t_end = grid.T if t_terminal is None else float(t_terminal)
    return ValueSurface(grid, (t_end - tau)[::-1], vals[::-1],
                        meta={"kind": "adjoint", "field": A.name, "scheme": scheme})


def trapezoid(values: np.ndarray, grid: SpaceTimeGrid, mask: np.ndarray | None = None) -> float:
    """Tensor trapezoid rule over the grid (or over the box selected by ``mask``)."""
    w = np.ones(grid.nodes)
    if mask is None:
        mask = np.ones(grid.nodes, dtype=bool)
    box = _mask_box(mask)
    for d, (a, b) in enumerate(box):
        wd = np.zeros(grid.nodes[d])
        wd[a:b + 1] = grid.spacing[d]
        wd[a] *= 0.5
        wd[b] *= 0.5
        shape = [1] * grid.n
        shape[d] = -1
        w = w * wd.reshape(shape)
    return float(np.sum(w * values))


def _mask_box(mask: np.ndarray) -> list[tuple[int, int]]:
    box = []
    for d in range(mask.ndim):
        other = tuple(i for i in range(mask.ndim) if i != d)
        hit = np.flatnonzero(mask.any(axis=other) if other else mask)
        if hit.size == 0:
            raise ArgumentError("empty integration window")
        box.append((int(hit[0]), int(hit[-1])))
    return box


def gaussian_bump(grid: SpaceTimeGrid, center: Sequence[float], width: float) -> np.ndarray:
    """Gaussian of standard deviation ``width`` at ``center``, normalised to unit trapezoid mass."""
    c = np.atleast_1d(np.asarray(center, dtype=float))
    if c.size != grid.n:
        raise ArgumentError("source dimension does not match grid")
    if not grid.contains(c):
        raise ArgumentError(f"source {c.tolist()} lies outside the grid")
    r2 = np.sum((grid.points() - c) ** 2, axis=-1)
    bump = np.exp(-0.5 * r2 / width ** 2)
    return bump / trapezoid(bump, grid)


def fundamental_solution(A: CoefficientField, y: Sequence[float], grid: SpaceTimeGrid, w0: float, *,
                         adjoint: bool = False, scheme: str = "explicit", save_every: int | None = None,
                         t_start: float = 0.0) -> ValueSurface:
    """Approximate fundamental solution from a normalised Gaussian source of width ``w0`` at ``y``.

    Forward (``adjoint=False``): ``p(t, . ; t_start, y)`` for ``t`` in
    ``[t_start, t_start + T]``.  Adjoint: ``p*(s, . ; t_start, y)`` for ``s`` in
    ``[t_start - T, t_start]``.
    """
    if w0 < 2.0 * float(np.max(grid.spacing)) - 1e-12:
        raise ArgumentError(f"source width {w0} below twice the grid spacing")
    bump = gaussian_bump(grid, y, w0)
    if adjoint:
        surf = solve_adjoint(A, bump, grid, scheme=scheme, save_every=save_every, t_terminal=t_start)
    else:
        surf = solve_cauchy(A, bump, grid, scheme=scheme, save_every=save_every, t0=t_start)
    surf.meta.update(source=list(np.atleast_1d(y).astype(float)), width=w0)
    return surf


def greens_residual(A: CoefficientField, u: ValueSurface, v: ValueSurface,
                    window: tuple[Sequence[float], Sequence[float], float, float]) -> float:
    """Discrete check of the integrated Green identity on a space-time box.

    ``window = (lo, hi, t1, t2)``.  With ``u`` solving the adjoint and ``v`` the
    forward problem, ``d/dt int_W u v = -oint F.n`` where
    ``F_i = sum_j v D_j(a_ij u) - u a_ij D_j v``.  Returns
    ``|int_W uv(t2) - int_W uv(t1) + int_t1^t2 oint F.n|`` using the saved time
    levels of both surfaces in ``[t1, t2]`` (trapezoid in time and space).
    """
    if u.grid.nodes != v.grid.nodes or u.grid.lo != v.grid.lo or u.grid.hi != v.grid.hi:
        raise ArgumentError("u and v live on incompatible grids")
    lo, hi, t1, t2 = window
    grid = u.grid
    tol = 1e-9 * max(1.0, abs(t2))
    common = [t for t in u.times if t1 - tol <= t <= t2 + tol and np.any(np.abs(v.times - t) <= tol)]
    if len(common) < 2:
        raise ArgumentError("surfaces share fewer than two time levels inside the window")
    mask = grid.window_mask(lo, hi)
    box = _mask_box(mask)
    a = _coefficients(A, grid)
    h = grid.spacing
    n = grid.n

    def integrals(t):
        uu, vv = u.at(t), v.at(t)
        mass = trapezoid(uu * vv, grid, mask)
        flux_total = 0.0
        for i in range(n):
            F = np.zeros(grid.nodes)
            for j in range(n):
                au = a[..., i, j] * uu
                F += vv * np.gradient(au, h[j], axis=j) - uu * a[..., i, j] * np.gradient(vv, h[j], axis=j)
            for side, sign in ((0, -1.0), (1, 1.0)):
                face_idx = box[i][side]
                face = np.take(F, face_idx, axis=i)
                if n == 1:
                    flux_total += sign * float(face)
                    continue
                sub_lo = [lo[d] for d in range(n) if d != i]
                sub_hi = [hi[d] for d in range(n) if d != i]
                sub = SpaceTimeGrid([grid.lo[d] for d in range(n) if d != i],
                                    [grid.hi[d] for d in range(n) if d != i],
                                    [grid.nodes[d] for d in range(n) if d != i], 1.0, 1)
                flux_total += sign * trapezoid(face, sub, sub.window_mask(sub_lo, sub_hi))
        return mass, flux_total

    vals = [integrals(t) for t in common]
    masses = np.array([m for m, _ in vals])
    fluxes = np.array([f for _, f in vals])
    ts = np.array(common)
    flux_int = float(np.sum(0.5 * (fluxes[1:] + fluxes[:-1]) * np.diff(ts)))
    return abs(masses[-1] - masses[0] + flux_int)
