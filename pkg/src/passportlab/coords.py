"""Normal (``x = log s``) versus lognormal (``s``) coordinates.

Values are invariant under the change of variables, ``v^s(t, s) = v(t, log s)``,
and coefficient fields carry over pointwise, ``a^s_ij(s) = a_ij(log s)``
(the ``s_i s_j`` factors live in the lognormal operator).
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ArgumentError
from .market import CoefficientField, UnivariatePayoff
from .pde import ValueSurface, format_float

DIRECTIONS = ("to-lognormal", "to-normal")


@dataclass
class NodalSurface:
    """Values on a tensor grid with arbitrary (possibly nonuniform) axes."""

    axes: list[np.ndarray]
    times: np.ndarray
    values: np.ndarray
    coordinates: str
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.axes = [np.asarray(a, dtype=float) for a in self.axes]
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        shape = (self.times.size, *[a.size for a in self.axes])
        if self.values.shape != shape:
            raise ArgumentError(f"values shape {self.values.shape} does not match axes {shape}")

    @classmethod
    def from_surface(cls, surface: ValueSurface, coordinates: str = "normal") -> "NodalSurface":
        return cls(surface.grid.axes, surface.times, surface.values, coordinates, dict(surface.meta))

    def to_csv(self, fh: io.TextIOBase, header: str | None = None) -> None:
        prefix = "s" if self.coordinates == "lognormal" else "x"
        if header:
            fh.write(f"# {header}\n")
        fh.write(",".join(["t", *[f"{prefix}{d + 1}" for d in range(len(self.axes))], "value"]) + "\n")
        pts = np.stack(np.meshgrid(*self.axes, indexing="ij"), axis=-1).reshape(-1, len(self.axes))
        for t, layer in zip(self.times, self.values):
            for p, v in zip(pts, layer.reshape(-1)):
                fh.write(",".join(format_float(c) for c in (t, *p, v)) + "\n")


def _to_log(s: np.ndarray) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    if np.any(s <= 0):
        raise ArgumentError("lognormal coordinates must be strictly positive")
    return np.log(s)


def transform_coordinates(obj, direction: str):
    """Change coordinates of a surface, payoff or coefficient field.

    ``to-lognormal`` maps normal-coordinate objects to ``s = exp(x)``;
    ``to-normal`` maps lognormal-coordinate objects to ``x = log s`` and
    rejects nonpositive ``s``.
    """
    if direction not in DIRECTIONS:
        raise ArgumentError(f"unknown direction {direction!r}")
    if isinstance(obj, ValueSurface):
        obj = NodalSurface.from_surface(obj, "normal")
    if isinstance(obj, NodalSurface):
        want = "normal" if direction == "to-lognormal" else "lognormal"
        if obj.coordinates != want:
            raise ArgumentError(f"{direction} expects a surface in {want} coordinates")
        if direction == "to-lognormal":
            axes = [np.exp(a) for a in obj.axes]
            return NodalSurface(axes, obj.times, obj.values, "lognormal", dict(obj.meta))
        axes = [_to_log(a) for a in obj.axes]
        return NodalSurface(axes, obj.times, obj.values, "normal", dict(obj.meta))
    if isinstance(obj, UnivariatePayoff):
        h = obj.h
        if direction == "to-lognormal":
            return UnivariatePayoff(lambda s: h(_to_log(s)), obj.axis, obj.growth, f"{obj.name}@s",
                                    obj.regularized)
        return UnivariatePayoff(lambda x: h(np.exp(x)), obj.axis, obj.growth, f"{obj.name}@x",
                                obj.regularized)
    if isinstance(obj, CoefficientField):
        func = obj.func
        if direction == "to-lognormal":
            return CoefficientField(obj.n, lambda s: func(_to_log(s)), obj.regularity, obj.growth,
                                    f"{obj.name}@s")
        return CoefficientField(obj.n, lambda x: func(np.exp(x)), obj.regularity, obj.growth,
                                f"{obj.name}@x")
    raise ArgumentError(f"cannot transform object of type {type(obj).__name__}")


def power_payoff_lognormal(m: float, axis: int = 0) -> UnivariatePayoff:
    """``s^m`` in lognormal coordinates; its normal form is ``exp(m x)``."""
    return UnivariatePayoff(lambda s: np.asarray(s, dtype=float) ** m, axis=axis,
                            growth=(max(1.0, abs(m)), 1.0), name=f"s^{m:g}")


def lognormal_constant_field(sigma: Sequence[float], rho=None) -> CoefficientField:
    """``a^s_ij = sigma_i sigma_j rho_ij / 2``; constant, so its normal form is constant too."""
    sig = np.asarray(sigma, dtype=float)
    r = np.eye(sig.size) if rho is None else np.asarray(rho, dtype=float)
    return CoefficientField.constant(0.5 * np.outer(sig, sig) * r, name="lognormal-const")
