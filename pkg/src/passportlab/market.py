"""Market primitives: correlated lognormal assets, coefficient fields, payoffs, mollifiers.

Everything here is immutable after construction.  Evaluation maps are pure and
vectorised over leading axes (points are arrays of shape ``(..., n)``).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ArgumentError, NotPSDError

PSD_TOL = 1e-10  # relative to the matrix max-norm

ArrayFn = Callable[[np.ndarray], np.ndarray]


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


def _check_psd(m: np.ndarray, what: str, rel_tol: float = PSD_TOL) -> np.ndarray:
    scale = max(1.0, float(np.max(np.abs(m))))
    eig = np.linalg.eigvalsh(m)
    if eig.min() < -rel_tol * scale:
        raise NotPSDError(f"{what} is not positive semidefinite (min eigenvalue {eig.min():.3e})")
    return eig


@dataclass(frozen=True)
class MarketModel:
    """``n`` driftless correlated lognormal assets ``dS_i = sigma_i S_i dW_i``."""

    sigma: np.ndarray
    rho: np.ndarray
    spot: np.ndarray

    def __post_init__(self) -> None:
        sigma = np.atleast_1d(np.asarray(self.sigma, dtype=float))
        spot = np.atleast_1d(np.asarray(self.spot, dtype=float))
        rho = np.atleast_2d(np.asarray(self.rho, dtype=float))
        n = sigma.size
        if sigma.ndim != 1 or spot.shape != (n,) or rho.shape != (n, n):
            raise ArgumentError(
                f"inconsistent market dimensions: sigma {sigma.shape}, spot {spot.shape}, rho {rho.shape}"
            )
        if np.any(sigma < 0):
            raise ArgumentError("volatilities must be nonnegative")
        if np.any(spot <= 0):
            raise ArgumentError("spot prices must be positive")
        if not np.allclose(rho, rho.T, atol=1e-12, rtol=0):
            raise ArgumentError("correlation matrix must be symmetric")
        if not np.allclose(np.diag(rho), 1.0, atol=1e-12, rtol=0):
            raise ArgumentError("correlation matrix must have unit diagonal")
        _check_psd(rho, "correlation matrix", rel_tol=1e-12)
        object.__setattr__(self, "sigma", _frozen(sigma))
        object.__setattr__(self, "spot", _frozen(spot))
        object.__setattr__(self, "rho", _frozen(rho))

    # Zero volatilities are allowed so degenerate runs (sigma == 0) can be priced;
    # positivity is enforced where a strictly positive volatility is needed.

    @property
    def n(self) -> int:
        return int(self.sigma.size)

    @property
    def covariance(self) -> np.ndarray:
        """Instantaneous log-return covariance ``sigma_i rho_ij sigma_j``."""
        return self.sigma[:, None] * self.rho * self.sigma[None, :]

    @classmethod
    def uncorrelated(cls, sigma: Sequence[float], spot: Sequence[float] | None = None) -> "MarketModel":
        sigma = np.atleast_1d(np.asarray(sigma, dtype=float))
        spot = np.ones_like(sigma) if spot is None else spot
        return cls(sigma=sigma, rho=np.eye(sigma.size), spot=spot)

    @classmethod
    def two_asset(cls, sigma1: float, sigma2: float, rho12: float,
                  spot: Sequence[float] = (1.0, 1.0)) -> "MarketModel":
        return cls(sigma=[sigma1, sigma2], rho=[[1.0, rho12], [rho12, 1.0]], spot=spot)


@dataclass(frozen=True)
class CoefficientField:
    """Symmetric PSD second-order coefficient field ``x -> A(x)`` of a pure diffusion.

    ``func`` maps points of shape ``(..., n)`` to matrices of shape ``(..., n, n)``.
    ``growth`` holds constants ``(c0, c1)`` certifying ``|a_ij(x)| <= c0 + c1 |x|``.
    """

    n: int
    func: ArrayFn
    regularity: str = "smooth"
    growth: tuple[float, float] = (1.0, 0.0)
    name: str = "field"

    def __post_init__(self) -> None:
        if self.regularity not in ("constant", "smooth", "measurable"):
            raise ArgumentError(f"unknown regularity tag {self.regularity!r}")
        if self.n < 1:
            raise ArgumentError("dimension must be positive")

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.n:
            raise ArgumentError(f"points have dimension {x.shape[-1]}, field has {self.n}")
        out = np.asarray(self.func(x), dtype=float)
        return np.broadcast_to(out, x.shape[:-1] + (self.n, self.n))

    @property
    def is_constant(self) -> bool:
        return self.regularity == "constant"

    @classmethod
    def constant(cls, matrix, name: str | None = None) -> "CoefficientField":
        a = _frozen(np.atleast_2d(matrix))
        if a.shape[0] != a.shape[1]:
            raise ArgumentError("coefficient matrix must be square")
        if not np.allclose(a, a.T, atol=1e-14):
            raise ArgumentError("coefficient matrix must be symmetric")
        _check_psd(a, "coefficient matrix")
        bound = float(np.max(np.abs(a))) if a.size else 0.0

        def func(x: np.ndarray) -> np.ndarray:
            return np.broadcast_to(a, x.shape[:-1] + a.shape)

        return cls(n=a.shape[0], func=func, regularity="constant", growth=(bound, 0.0),
                   name=name or f"const{np.round(np.diag(a), 6).tolist()}")

    @classmethod
    def diagonal(cls, entries: Sequence[ArrayFn | float], name: str = "diag",
                 growth: tuple[float, float] = (2.0, 0.0)) -> "CoefficientField":
        """Diagonal field whose entries are constants or callables of the full point."""
        n = len(entries)
        if all(not callable(e) for e in entries):
            return cls.constant(np.diag(np.asarray(entries, dtype=float)), name=name)

        def func(x: np.ndarray) -> np.ndarray:
            out = np.zeros(x.shape[:-1] + (n, n))
            for i, e in enumerate(entries):
                out[..., i, i] = e(x) if callable(e) else e
            return out

        return cls(n=n, func=func, regularity="smooth", growth=growth, name=name)

    def check(self, points) -> float:
        """Verify symmetry, PSD and the growth certificate on sample points.

        Returns the smallest eigenvalue found.
        """
        pts = np.asarray(points, dtype=float).reshape(-1, self.n)
        a = self(pts)
        if not np.allclose(a, np.swapaxes(a, -1, -2), atol=1e-12):
            raise ArgumentError(f"{self.name}: coefficient matrix not symmetric")
        lam = np.linalg.eigvalsh(a).min()
        if lam < -PSD_TOL:
            raise NotPSDError(f"{self.name}: min eigenvalue {lam:.3e} below -{PSD_TOL}")
        c0, c1 = self.growth
        bound = c0 + c1 * np.linalg.norm(pts, axis=-1)
        if np.any(np.abs(a).max(axis=(-1, -2)) > bound + 1e-12):
            raise ArgumentError(f"{self.name}: growth certificate {self.growth} violated")
        return float(lam)


@dataclass(frozen=True)
class UnivariatePayoff:
    """Convex data depending on one coordinate: ``f(x) = h(x[axis])``.

    ``growth=(c, eps)`` certifies ``|h(x)| <= c exp(c |x|^(2-eps))``.
    ``regularized`` marks payoffs that went through :func:`mollify_and_cutoff`.
    """

    h: ArrayFn
    axis: int = 0
    growth: tuple[float, float] = (1.0, 1.0)
    name: str = "payoff"
    regularized: bool = False

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.asarray(self.h(x[..., self.axis]), dtype=float)

    def check(self, x1, step: float = 1e-2) -> None:
        """Check discrete convexity and the growth bound at sample abscissae."""
        x1 = np.asarray(x1, dtype=float)
        d2 = self.h(x1 - step) - 2.0 * self.h(x1) + self.h(x1 + step)
        if np.any(d2 < -1e-12):
            bad = x1[np.argmin(d2)]
            raise ArgumentError(f"{self.name}: not convex near x1={bad:.6g}")
        c, eps = self.growth
        with np.errstate(over="ignore"):
            bound = c * np.exp(c * np.abs(x1) ** (2.0 - eps))
        if np.any(np.abs(self.h(x1)) > bound):
            raise ArgumentError(f"{self.name}: growth condition (c={c}, eps={eps}) violated")

    # -- common payoffs -------------------------------------------------------
    @classmethod
    def hinge(cls, strike: float = 0.0, axis: int = 0) -> "UnivariatePayoff":
        k = float(strike)
        return cls(lambda x: np.maximum(x - k, 0.0), axis=axis,
                   growth=(1.0 + abs(k), 1.0), name=f"hinge(K={k:g})")

    @classmethod
    def power(cls, m: float, axis: int = 0) -> "UnivariatePayoff":
        """Power payoff ``s^m`` written in log coordinates, ``exp(m x)``."""
        m = float(m)
        # exp(m x) <= c exp(c |x|) with c = max(1, |m|), i.e. eps = 1
        return cls(lambda x: np.exp(m * x), axis=axis, growth=(max(1.0, abs(m)), 1.0),
                   name=f"power(m={m:g})")

    @classmethod
    def monomial(cls, degree: int, axis: int = 0) -> "UnivariatePayoff":
        if degree % 2 or degree < 0:
            raise ArgumentError("only even nonnegative degrees are convex")
        return cls(lambda x: x ** degree, axis=axis, growth=(float(max(degree, 1)) ** 2, 1.0),
                   name=f"x^{degree}")

    @classmethod
    def table(cls, knots, values, axis: int = 0) -> "UnivariatePayoff":
        """Piecewise-linear payoff through ``(knots, values)``, extended linearly."""
        xs = np.asarray(knots, dtype=float)
        ys = np.asarray(values, dtype=float)
        if xs.ndim != 1 or xs.shape != ys.shape or xs.size < 2 or np.any(np.diff(xs) <= 0):
            raise ArgumentError("table payoff needs >= 2 strictly increasing knots")
        slopes = np.diff(ys) / np.diff(xs)
        if np.any(np.diff(slopes) < -1e-12):
            raise ArgumentError("table payoff is not convex")
        lo_s, hi_s = slopes[0], slopes[-1]

        def h(x):
            x = np.asarray(x, dtype=float)
            y = np.interp(x, xs, ys)
            y = np.where(x < xs[0], ys[0] + lo_s * (x - xs[0]), y)
            return np.where(x > xs[-1], ys[-1] + hi_s * (x - xs[-1]), y)

        c = 1.0 + float(np.max(np.abs(ys))) + float(max(abs(lo_s), abs(hi_s)) + abs(xs).max())
        return cls(h, axis=axis, growth=(c, 1.0), name="table")


@dataclass(frozen=True)
class MollifierSpec:
    """Gaussian smoothing width ``eps``, cutoff decay ``delta0`` and cutoff radius ``R``."""

    eps: float
    delta0: float = 1.0
    R: float = 10.0
    nodes: int = 129
    truncation: float = 6.0

    def __post_init__(self) -> None:
        if not (self.eps > 0 and self.delta0 > 0 and self.R > 0):
            raise ArgumentError("mollifier eps, delta0 and R must be positive")
        if self.nodes < 129 or self.nodes % 2 == 0:
            raise ArgumentError("mollifier quadrature needs an odd node count >= 129")

    def kernel(self) -> tuple[np.ndarray, np.ndarray]:
        """Quadrature nodes and weights of the truncated Gaussian (weights sum to one)."""
        u = np.linspace(-self.truncation * self.eps, self.truncation * self.eps, self.nodes)
        w = np.exp(-0.5 * (u / self.eps) ** 2)
        w[0] *= 0.5
        w[-1] *= 0.5
        return u, w / w.sum()

    @property
    def window(self) -> float:
        """Half-width on which the smoothed payoff equals the plain convolution."""
        return self.R - self.truncation * self.eps


@dataclass(frozen=True)
class EigenFactorization:
    """``Q^T diag(lam) Q = (sigma_i rho_ij sigma_j)``; rows of ``Q`` are eigenvectors."""

    Q: np.ndarray
    lam: np.ndarray


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------

def _check_vectors(model: MarketModel, s, delta) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(s, dtype=float)
    delta = np.asarray(delta, dtype=float)
    if s.shape[-1:] != (model.n,) or delta.shape[-1:] != (model.n,):
        raise ArgumentError(
            f"price/control vectors must have trailing dimension {model.n}, got {s.shape} and {delta.shape}"
        )
    return s, delta


def build_volatility_matrix(model: MarketModel, s, delta) -> np.ndarray:
    """Entry ``(i, j)`` is ``delta_i sigma_i s_i rho_ij delta_j sigma_j s_j``.

    Broadcasts over leading axes of ``s`` and ``delta``.
    """
    s, delta = _check_vectors(model, s, delta)
    if np.any(s < 0):
        raise ArgumentError("prices must be nonnegative")
    w = delta * model.sigma * s
    return w[..., :, None] * model.rho * w[..., None, :]


def eigen_factorize(model: MarketModel) -> EigenFactorization:
    """Diagonalise the volatility matrix ``sigma_i rho_ij sigma_j``.

    Eigenvalues are sorted descending and each eigenvector (row of ``Q``) has its
    first non-negligible component positive, so ``Q`` is deterministic.
    """
    c = np.asarray(model.covariance, dtype=float)
    if not np.allclose(c, c.T, atol=1e-14):
        raise ArgumentError("volatility matrix is not symmetric")
    lam, vecs = np.linalg.eigh(c)
    scale = max(1.0, float(np.max(np.abs(c))))
    if lam.min() < -PSD_TOL * scale:
        raise NotPSDError(f"volatility matrix has eigenvalue {lam.min():.3e}")
    order = np.argsort(-lam, kind="stable")
    lam = np.clip(lam[order], 0.0, None)
    q = vecs[:, order].T.copy()
    for row in q:
        nz = np.flatnonzero(np.abs(row) > 1e-12)
        if nz.size and row[nz[0]] < 0:
            row *= -1.0
    return EigenFactorization(Q=_frozen(q), lam=_frozen(lam))


def basket_volatility(model: MarketModel, s, delta,
                      factorization: EigenFactorization | None = None) -> np.ndarray | float:
    """Volatility of the weighted sum ``sum_i delta_i S_i``: ``sqrt(sum_ij (sigma sigma^T)_ij(delta))``.

    The entry-sum form is returned; it is cross-checked against the eigen form
    ``sqrt(<Q s_delta, Lambda Q s_delta>)``.
    """
    s, delta = _check_vectors(model, s, delta)
    radicand = build_volatility_matrix(model, s, delta).sum(axis=(-1, -2))
    fac = factorization or eigen_factorize(model)
    y = (s * delta) @ fac.Q.T
    eig_form = np.sum(fac.lam * y * y, axis=-1)
    scale = np.maximum(1.0, np.abs(radicand))
    if np.any(np.abs(radicand - eig_form) > 1e-9 * scale):
        raise NotPSDError("basket volatility forms disagree; factorization is stale")
    if np.any(radicand < -1e-12 * scale):
        raise NotPSDError(f"negative basket variance {np.min(radicand):.3e}")
    out = np.sqrt(np.clip(radicand, 0.0, None))
    return float(out) if out.ndim == 0 else out


def mollify_and_cutoff(payoff: UnivariatePayoff, spec: MollifierSpec) -> UnivariatePayoff:
    """Cut ``h`` off beyond ``|x| > R`` with ``exp(-delta0 (|x|-R)^2)`` and smooth it with ``G_eps``.

    On ``|x| <= spec.window`` the result is exactly the Gaussian convolution of
    ``h`` (the kernel is truncated at ``spec.truncation * eps``), hence convex there.
    """
    u, w = spec.kernel()
    h, R, d0 = payoff.h, spec.R, spec.delta0

    def cut(x: np.ndarray) -> np.ndarray:
        excess = np.maximum(np.abs(x) - R, 0.0)
        return h(x) * np.exp(-d0 * excess * excess)

    def smoothed(x):
        x = np.asarray(x, dtype=float)
        return cut(x[..., None] - u) @ w

    return UnivariatePayoff(smoothed, axis=payoff.axis, growth=payoff.growth,
                            name=f"{payoff.name}~eps={spec.eps:g},R={spec.R:g}", regularized=True)


def smooth_indicator(eps: float, z1, variant: str = "clamped"):
    """Bridge from 1 (``z1 <= -eps``) to 0 (``z1 >= 0``) used to smooth the stop-loss control.

    ``variant="clamped"`` evaluates ``exp(-1 - eps/z1)`` on ``(-eps, 0)`` and clips
    it into ``[0, 1]``; that expression exceeds one on the whole window, so the
    clamped bridge is a step at zero.  ``variant="reciprocal"`` uses
    ``exp(1 + eps/z1)``, a smooth strictly decreasing bridge.
    """
    if eps <= 0:
        raise ArgumentError("eps must be positive")
    z = np.asarray(z1, dtype=float)
    mid = (z > -eps) & (z < 0)
    zm = np.where(mid, z, -eps)
    with np.errstate(over="ignore"):
        if variant == "clamped":
            bridge = np.clip(np.exp(-1.0 - eps / zm), 0.0, 1.0)
        elif variant == "reciprocal":
            bridge = np.exp(1.0 + eps / zm)
        else:
            raise ArgumentError(f"unknown variant {variant!r}")
    out = np.where(z <= -eps, 1.0, np.where(mid, bridge, 0.0))
    return float(out) if out.ndim == 0 else out


def rotated_vertices(fac: EigenFactorization) -> np.ndarray:
    """All ``Q^T v`` for ``v`` in ``{-1, 1}^n`` (lexicographic in ``v``, ``-1`` first)."""
    n = fac.Q.shape[0]
    signs = np.array(np.meshgrid(*([[-1.0, 1.0]] * n), indexing="ij")).reshape(n, -1).T
    return signs @ fac.Q


def clamp_to_box(delta: np.ndarray, warn: bool = True) -> np.ndarray:
    """Clip controls into ``[-1, 1]^n``; warn when clipping exceeds rounding level."""
    delta = np.asarray(delta, dtype=float)
    excess = np.max(np.abs(delta)) - 1.0 if delta.size else 0.0
    if excess > 1e-12 and warn:
        warnings.warn(f"rotated vertex leaves the control box by {excess:.3g}; clamped",
                      RuntimeWarning, stacklevel=2)
    return np.clip(delta, -1.0, 1.0)


def normal_cdf(x):
    """Standard normal CDF via the complementary error function."""
    from scipy.special import ndtr
    out = ndtr(np.asarray(x, dtype=float))
    return float(out) if np.ndim(out) == 0 else out


def normal_pdf(x):
    x = np.asarray(x, dtype=float)
    out = np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
    return float(out) if out.ndim == 0 else out


def bachelier_call(x, variance):
    """``E[max(x + sqrt(variance) Z, 0)]``; the heat-equation solution of a hinge."""
    x = np.asarray(x, dtype=float)
    sd = np.sqrt(np.asarray(variance, dtype=float))
    with np.errstate(divide="ignore", invalid="ignore"):
        d = np.where(sd > 0, x / np.where(sd > 0, sd, 1.0), np.sign(x) * np.inf)
    out = np.where(sd > 0, x * normal_cdf(d) + sd * normal_pdf(np.where(sd > 0, d, 0.0)),
                   np.maximum(x, 0.0))
    return float(out) if out.ndim == 0 else out
