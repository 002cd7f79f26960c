"""Trading strategies for classical and symmetric passport contracts.

Classical strategies map ``(t, s, p)`` to positions in ``[-1, 1]^n``
(``s`` has shape ``(paths, n)``, ``p`` shape ``(paths,)``).  Symmetric
strategies map ``(t, s_n, x_n)`` to the number of units ``Delta^S`` held in
``S``; feasibility is ``0 <= Delta^S * S_N <= X_N``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ArgumentError
from .market import EigenFactorization, MarketModel, eigen_factorize, smooth_indicator

CLASSICAL = "classical"
SYMMETRIC = "symmetric"


@dataclass(frozen=True)
class StrategyField:
    kind: str
    contract: str
    func: Callable[..., np.ndarray]
    level: int | None = None
    values: np.ndarray | None = None
    name: str = ""

    def __post_init__(self) -> None:
        if self.kind not in ("smooth", "dyadic", "vertex", "stop-loss", "constant"):
            raise ArgumentError(f"unknown strategy kind {self.kind!r}")
        if self.contract not in (CLASSICAL, SYMMETRIC):
            raise ArgumentError(f"unknown contract {self.contract!r}")

    def __call__(self, t: float, *state) -> np.ndarray:
        return self.func(t, *state)

    # -- classical ------------------------------------------------------------
    @classmethod
    def constant(cls, delta) -> "StrategyField":
        d = np.atleast_1d(np.asarray(delta, dtype=float))

        def func(t, s, p):
            return np.broadcast_to(d, np.shape(s))

        return cls("constant", CLASSICAL, func, values=d, name=f"const{d.tolist()}")

    @classmethod
    def dyadic(cls, T: float, level: int, values) -> "StrategyField":
        """Piecewise constant in time on ``[T i / 2^N, T (i+1) / 2^N)``, ``i < 2^N``."""
        vals = np.asarray(values, dtype=float)
        if vals.ndim == 1:
            vals = vals[:, None]
        if vals.shape[0] != 2 ** level:
            raise ArgumentError(f"dyadic level {level} needs {2 ** level} interval values, got {vals.shape[0]}")

        def func(t, s, p):
            i = min(int(np.floor(t / T * 2 ** level + 1e-12)), 2 ** level - 1)
            return np.broadcast_to(vals[i], np.shape(s))

        return cls("dyadic", CLASSICAL, func, level=level, values=vals,
                   name="dyadic[" + ",".join(f"{v:+g}" for v in vals[:, 0]) + "]")

    @classmethod
    def rotated_vertex(cls, model: MarketModel, signs_fn: Callable[[float, np.ndarray, np.ndarray], np.ndarray],
                       factorization: EigenFactorization | None = None) -> "StrategyField":
        """``Q^T v`` with ``v = signs_fn(t, s, p)`` in ``{-1, 1}^n``, clipped into the box."""
        fac = factorization or eigen_factorize(model)

        def func(t, s, p):
            v = np.asarray(signs_fn(t, s, p), dtype=float)
            return np.clip(v @ fac.Q, -1.0, 1.0)

        return cls("vertex", CLASSICAL, func, name="rotated-vertex")

    @classmethod
    def smooth(cls, fn: Callable, contract: str = CLASSICAL, name: str = "smooth") -> "StrategyField":
        return cls("smooth", contract, fn, name=name)

    # -- symmetric ------------------------------------------------------------
    @classmethod
    def stop_loss(cls) -> "StrategyField":
        """Everything in ``S`` while it is the weaker asset (``S_N <= 1``), nothing otherwise."""

        def func(t, s_n, x_n):
            s_n = np.asarray(s_n, dtype=float)
            x_s = np.divide(x_n, s_n, out=np.zeros_like(s_n), where=s_n > 0)
            return np.where(s_n <= 1.0, x_s, 0.0)

        return cls("stop-loss", SYMMETRIC, func, name="stop-loss")

    @classmethod
    def fraction(cls, alpha: float) -> "StrategyField":
        """Constant wealth fraction ``alpha`` in ``S``: ``Delta^S = alpha X_N / S_N``."""
        if not 0.0 <= alpha <= 1.0:
            raise ArgumentError("wealth fraction must lie in [0, 1]")

        def func(t, s_n, x_n):
            s_n = np.asarray(s_n, dtype=float)
            return alpha * np.divide(x_n, s_n, out=np.zeros_like(s_n), where=s_n > 0)

        return cls("constant", SYMMETRIC, func, name=f"fraction({alpha:g})")

    @classmethod
    def neutral(cls) -> "StrategyField":
        """``Delta^S = X_N / 2`` kills the account's diffusion, feasible whenever ``S_N <= 2``."""

        def func(t, s_n, x_n):
            return 0.5 * np.asarray(x_n, dtype=float)

        return cls("constant", SYMMETRIC, func, name="neutral")

    @classmethod
    def mollified_stop_loss(cls, eps: float, variant: str = "reciprocal") -> "StrategyField":
        """Smooth approximation of the stop-loss fraction through the ``h^eps`` bridge in ``z1 = log S_N``."""

        def func(t, s_n, x_n):
            s_n = np.asarray(s_n, dtype=float)
            with np.errstate(divide="ignore"):
                z1 = np.log(s_n)
            frac = smooth_indicator(eps, z1, variant=variant)
            return frac * np.divide(x_n, s_n, out=np.zeros_like(s_n), where=s_n > 0)

        return cls("smooth", SYMMETRIC, func, name=f"mollified-stop-loss({eps:g})")


def dyadic_sign_battery(T: float, level: int = 2) -> list[StrategyField]:
    """All ``2^(2^level)`` univariate dyadic strategies with values in ``{-1, +1}``."""
    m = 2 ** level
    out = []
    for code in range(2 ** m):
        vals = [1.0 if (code >> (m - 1 - i)) & 1 else -1.0 for i in range(m)]
        out.append(StrategyField.dyadic(T, level, vals))
    return out
