"""Monte Carlo paths for the raw assets, the index-numeraire state and traded accounts.

Normals come from a counter-based Philox stream keyed by ``(seed, stream, step)``;
within a step, path ``j`` uses draws ``j*d .. j*d + d - 1``.  Any chunking of
the path range therefore reproduces the same numbers bit for bit.
"""

from __future__ import annotations

import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import ndtri

from .errors import ArgumentError, NotPSDError, StrategyInfeasibleError
from .market import MarketModel
from .pde import format_float
from .strategy import CLASSICAL, SYMMETRIC, StrategyField

FEAS_TOL = 1e-12


@dataclass(frozen=True)
class PathConfig:
    T: float = 1.0
    steps: int = 512
    paths: int = 100_000
    seed: int = 0
    scheme: str = "log-euler"
    antithetic: bool = False
    checkpoints: int = 1
    chunk: int = 65_536
    threads: int = 1

    def __post_init__(self) -> None:
        if not self.T > 0:
            raise ArgumentError("horizon T must be positive")
        if self.steps < 1 or self.paths < 1:
            raise ArgumentError("steps and paths must be >= 1")
        if self.scheme not in ("euler", "log-euler"):
            raise ArgumentError(f"unknown scheme {self.scheme!r}")
        if self.antithetic and self.paths % 2:
            raise ArgumentError("antithetic pairing needs an even path count")
        if not 1 <= self.checkpoints <= self.steps:
            raise ArgumentError("checkpoints must lie in [1, steps]")
        if self.chunk < 2 or self.threads < 1:
            raise ArgumentError("chunk must be >= 2 and threads >= 1")

    @property
    def dt(self) -> float:
        return self.T / self.steps

    def checkpoint_steps(self) -> np.ndarray:
        """Step indices (including 0) at which states are stored."""
        return np.unique(np.round(np.linspace(0, self.steps, self.checkpoints + 1)).astype(int))


@dataclass(frozen=True)
class IndexState:
    """State in index-numeraire units; ``s_n`` is always ``2 - m_n``."""

    m_n: float
    x_n: float = 1.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.m_n <= 2.0:
            raise ArgumentError("m_n must lie in [0, 2]")
        if self.x_n < 0:
            raise ArgumentError("x_n must be nonnegative")

    @property
    def s_n(self) -> float:
        return 2.0 - self.m_n


@dataclass
class PathEnsemble:
    """States at checkpoint times; ``values`` has shape ``(paths, len(times), len(names))``."""

    times: np.ndarray
    values: np.ndarray
    names: tuple[str, ...]
    antithetic: bool = False
    extras: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return self.values.shape[0]

    def column(self, name: str) -> np.ndarray:
        return self.values[:, :, self.names.index(name)]

    def terminal(self, name: str | None = None) -> np.ndarray:
        if name is None:
            return self.values[:, -1, :]
        return self.values[:, -1, self.names.index(name)]

    def to_csv(self, fh: io.TextIOBase, header: str | None = None) -> None:
        """One row per path per checkpoint: ``path, t, <names>``."""
        if header:
            fh.write(f"# {header}\n")
        fh.write(",".join(["path", "t", *self.names]) + "\n")
        for j in range(len(self)):
            for i, t in enumerate(self.times):
                fh.write(",".join([str(j), format_float(t), *map(format_float, self.values[j, i])]) + "\n")


# ---------------------------------------------------------------------------
# random numbers
# ---------------------------------------------------------------------------

def step_normals(seed: int, stream: int, step: int, start: int, count: int, dim: int) -> np.ndarray:
    """Normals for paths ``start .. start+count-1`` at one step, shape ``(count, dim)``."""
    bg = np.random.Philox(key=[seed & 0xFFFFFFFFFFFFFFFF, (stream << 32) + step])
    first = start * dim
    bg.advance(first // 4)
    gen = np.random.Generator(bg)
    skip = first % 4
    u = gen.random(count * dim + skip)[skip:]
    # random() returns multiples of 2^-53 in [0, 1); shift off zero
    return ndtri(u + 2.0 ** -54).reshape(count, dim)


def _normals(cfg: PathConfig, stream: int, step: int, start: int, count: int, dim: int) -> np.ndarray:
    if not cfg.antithetic:
        return step_normals(cfg.seed, stream, step, start, count, dim)
    # path 2i and 2i+1 share base draw i with opposite signs; chunks start on even paths
    base = step_normals(cfg.seed, stream, step, start // 2, (count + 1) // 2, dim)
    z = np.empty((2 * base.shape[0], dim))
    z[0::2] = base
    z[1::2] = -base
    return z[:count]


def semidefinite_cholesky(c: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Lower factor ``L`` with ``L L^T = c`` for PSD ``c``; zero pivots give zero columns."""
    c = np.asarray(c, dtype=float)
    n = c.shape[0]
    L = np.zeros_like(c)
    scale = max(1.0, float(np.max(np.abs(c))))
    for j in range(n):
        d = c[j, j] - L[j, :j] @ L[j, :j]
        if d < -tol * scale:
            raise NotPSDError(f"correlation matrix not PSD (pivot {d:.3e} at {j})")
        if d <= tol * scale:
            for i in range(j + 1, n):
                r = c[i, j] - L[i, :j] @ L[j, :j]
                if abs(r) > 1e-8 * scale:
                    raise NotPSDError("correlation matrix not PSD (inconsistent zero pivot)")
            continue
        L[j, j] = math.sqrt(d)
        L[j + 1:, j] = (c[j + 1:, j] - L[j + 1:, :j] @ L[j, :j]) / L[j, j]
    return L


def _chunks(cfg: PathConfig) -> list[tuple[int, int]]:
    size = cfg.chunk - cfg.chunk % 2
    return [(a, min(cfg.paths, a + size)) for a in range(0, cfg.paths, size)]


def _run_chunks(cfg: PathConfig, work: Callable[[int, int], tuple[np.ndarray, dict]],
                ncols: int, names: Sequence[str]) -> PathEnsemble:
    cps = cfg.checkpoint_steps()
    out = np.empty((cfg.paths, len(cps), ncols))
    extras: dict[str, list] = {}
    chunks = _chunks(cfg)
    if cfg.threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            results = list(pool.map(lambda ab: work(*ab), chunks))
    else:
        results = [work(a, b) for a, b in chunks]
    for (a, b), (vals, ext) in zip(chunks, results):
        out[a:b] = vals
        for key, arr in ext.items():
            extras.setdefault(key, []).append(arr)
    merged = {k: np.concatenate(v) for k, v in extras.items()}
    return PathEnsemble(cps * cfg.dt, out, tuple(names), cfg.antithetic, merged)


# ---------------------------------------------------------------------------
# simulators
# ---------------------------------------------------------------------------

def _gbm_step(s: np.ndarray, z: np.ndarray, sig: np.ndarray, dt: float, scheme: str) -> np.ndarray:
    if scheme == "log-euler":
        return s * np.exp(-0.5 * sig * sig * dt + sig * math.sqrt(dt) * z)
    return s * (1.0 + sig * math.sqrt(dt) * z)


def simulate_gbm(model: MarketModel, cfg: PathConfig, stream: int = 0) -> PathEnsemble:
    """Driftless correlated geometric Brownian motions started at ``model.spot``."""
    L = semidefinite_cholesky(model.rho)
    n, dt = model.n, cfg.dt
    cps = cfg.checkpoint_steps()
    sig = model.sigma

    def work(a, b):
        m = b - a
        s = np.broadcast_to(model.spot, (m, n)).copy()
        vals = np.empty((m, len(cps), n))
        vals[:, 0] = s
        c = 1
        for step in range(1, cfg.steps + 1):
            z = _normals(cfg, stream, step, a, m, n) @ L.T
            s = _gbm_step(s, z, sig, dt, cfg.scheme)
            if c < len(cps) and step == cps[c]:
                vals[:, c] = s
                c += 1
        return vals, {}

    return _run_chunks(cfg, work, n, [f"S{i + 1}" for i in range(n)])


def simulate_index_state(sigma: float, cfg: PathConfig, m0: float, stream: int = 0) -> PathEnsemble:
    """Euler paths of ``dM_N = sigma/2 M_N (2 - M_N) dW``, clamped to ``[0, 2]``.

    Columns are ``M_N`` and ``S_N = 2 - M_N``.
    """
    if not 0.0 <= m0 <= 2.0:
        raise ArgumentError("m0 must lie in [0, 2]")
    dt = cfg.dt
    cps = cfg.checkpoint_steps()
    sq = math.sqrt(dt)

    def work(a, b):
        cnt = b - a
        m = np.full(cnt, float(m0))
        vals = np.empty((cnt, len(cps), 2))
        vals[:, 0, 0] = m
        c = 1
        for step in range(1, cfg.steps + 1):
            z = _normals(cfg, stream, step, a, cnt, 1)[:, 0]
            m = np.clip(m + 0.5 * sigma * m * (2.0 - m) * sq * z, 0.0, 2.0)
            if c < len(cps) and step == cps[c]:
                vals[:, c, 0] = m
                c += 1
        vals[:, :, 1] = 2.0 - vals[:, :, 0]
        return vals, {}

    return _run_chunks(cfg, work, 2, ["M_N", "S_N"])


def simulate_account(sigma: float, strategy: StrategyField, cfg: PathConfig, state0: IndexState,
                     stream: int = 0) -> PathEnsemble:
    """Euler paths of ``(M_N, X_N)`` sharing the increments ``dW``.

    ``dX_N = sigma/2 S_N (X_N - 2 Delta^S) dW`` with ``Delta^S = strategy(t, S_N, X_N)``
    units of ``S``; feasibility ``0 <= Delta^S S_N <= X_N`` is asserted every step.
    ``X_N`` is floored at 0, which is absorbing.
    """
    if strategy.contract != SYMMETRIC:
        raise ArgumentError("simulate_account needs a symmetric-passport strategy")
    dt = cfg.dt
    cps = cfg.checkpoint_steps()
    sq = math.sqrt(dt)

    def work(a, b):
        cnt = b - a
        m = np.full(cnt, state0.m_n)
        x = np.full(cnt, state0.x_n)
        vals = np.empty((cnt, len(cps), 3))
        vals[:, 0] = np.column_stack([m, 2.0 - m, x])
        c = 1
        for step in range(1, cfg.steps + 1):
            t = (step - 1) * dt
            s = 2.0 - m
            d = np.asarray(strategy(t, s, x), dtype=float)
            held = d * s
            tol = FEAS_TOL * np.maximum(1.0, x)
            if np.any(d < -FEAS_TOL) or np.any(held > x + tol):
                raise StrategyInfeasibleError(
                    f"strategy {strategy.name!r} violates 0 <= Delta^S S_N <= X_N", step=step - 1)
            z = _normals(cfg, stream, step, a, cnt, 1)[:, 0]
            dw = sq * z
            x_new = x + 0.5 * sigma * s * (x - 2.0 * d) * dw
            m = np.clip(m + 0.5 * sigma * m * s * dw, 0.0, 2.0)
            x = np.where(x > 0.0, np.maximum(x_new, 0.0), 0.0)
            if c < len(cps) and step == cps[c]:
                vals[:, c] = np.column_stack([m, 2.0 - m, x])
                c += 1
        return vals, {}

    return _run_chunks(cfg, work, 3, ["M_N", "S_N", "X_N"])


def simulate_classical_portfolio(model: MarketModel, strategy: StrategyField, cfg: PathConfig,
                                 p0: float = 0.0, stream: int = 0) -> PathEnsemble:
    """Traded account ``dPi = sum_i Delta_i dS_i`` on log-Euler asset paths.

    Columns are ``Pi`` followed by the prices.  ``extras["int_s2"]`` holds
    ``sum_steps sigma_i^2 S_i^2 dt`` per path and asset (left-point rule),
    the integrand of the Ito isometry for unit positions.
    """
    if strategy.contract != CLASSICAL:
        raise ArgumentError("simulate_classical_portfolio needs a classical strategy")
    L = semidefinite_cholesky(model.rho)
    n, dt = model.n, cfg.dt
    cps = cfg.checkpoint_steps()
    sig = model.sigma

    def work(a, b):
        cnt = b - a
        s = np.broadcast_to(model.spot, (cnt, n)).copy()
        pi = np.full(cnt, float(p0))
        acc = np.zeros((cnt, n))
        vals = np.empty((cnt, len(cps), n + 1))
        vals[:, 0, 0] = pi
        vals[:, 0, 1:] = s
        c = 1
        for step in range(1, cfg.steps + 1):
            t = (step - 1) * dt
            d = np.asarray(strategy(t, s, pi), dtype=float)
            if np.any(np.abs(d) > 1.0 + FEAS_TOL):
                raise StrategyInfeasibleError(f"strategy {strategy.name!r} leaves [-1, 1]^n", step=step - 1)
            acc += (sig * s) ** 2 * dt
            z = _normals(cfg, stream, step, a, cnt, n) @ L.T
            s_new = _gbm_step(s, z, sig, dt, cfg.scheme)
            pi = pi + np.sum(d * (s_new - s), axis=1)
            s = s_new
            if c < len(cps) and step == cps[c]:
                vals[:, c, 0] = pi
                vals[:, c, 1:] = s
                c += 1
        return vals, {"int_s2": acc}

    return _run_chunks(cfg, work, n + 1, ["Pi", *[f"S{i + 1}" for i in range(n)]])


def mc_estimate(data, payoff: Callable[[np.ndarray], np.ndarray] | None = None,
                column: str | None = None, antithetic: bool | None = None) -> tuple[float, float]:
    """Sample mean and standard error ``std / sqrt(paths)`` of ``payoff(terminal)``.

    ``data`` is a :class:`PathEnsemble` (terminal values of ``column``, default
    the first) or an array of samples.  Antithetic ensembles are averaged in
    pairs before the standard error is taken.
    """
    if isinstance(data, PathEnsemble):
        x = data.terminal(column or data.names[0])
        pair = data.antithetic if antithetic is None else antithetic
    else:
        x = np.asarray(data, dtype=float).reshape(-1)
        pair = bool(antithetic)
    if x.size == 0:
        raise ArgumentError("empty ensemble")
    y = np.asarray(payoff(x) if payoff is not None else x, dtype=float)
    if pair:
        if y.size % 2:
            raise ArgumentError("antithetic estimate needs an even sample count")
        y = 0.5 * (y[0::2] + y[1::2])
    mean = float(np.mean(y))
    if y.size < 2:
        return mean, 0.0
    return mean, float(np.std(y, ddof=1) / math.sqrt(y.size))
