"""Run configuration: one YAML file per run, canonical serialization and hash."""

from __future__ import annotations

import copy
import hashlib
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .errors import ArgumentError, ConfigurationError
from .market import MarketModel, UnivariatePayoff

COMMANDS = ("price-passport", "price-symmetric", "verify", "transform", "simulate")
SUITES = ("comparison", "convexity", "hormander", "adjoint-identity", "greens")

# sections each command must find in the file; the rest fall back to defaults
REQUIRED = {
    "price-passport": ("market", "payoff"),
    "price-symmetric": ("market", "payoff"),
    "verify": ("suite",),
    "transform": ("transform",),
    "simulate": ("market", "strategy", "mc"),
}

DEFAULTS: dict[str, dict[str, Any]] = {
    "market": {"sigma": [0.2], "rho": None, "spot": None},
    "payoff": {"kind": "hinge", "strike": 0.0, "power": 1.0, "coordinates": "normal",
               "knots": [], "values": []},
    "contract": {"T": 1.0, "p0": 0.0, "m0": 1.0, "x0": 1.0},
    "grid": {"h": None, "c_stab": 0.9, "s_max": None, "z1_low": -2.0, "save_every": None},
    "mc": {"paths": 100000, "steps": 512, "antithetic": False, "chunk": 65536,
           "checkpoints": 1, "scheme": "log-euler", "write_paths": False},
    "strategy": {"kind": "stop-loss", "values": [], "level": 0, "fraction": 1.0},
    "suite": {"name": "comparison", "params": {}},
    "transform": {"direction": "to-lognormal", "input": None, "lo": [-1.0], "hi": [1.0],
                  "nodes": [21]},
    "output": {"surface": "surface.csv", "policy": "policy.csv", "summary": "summary.csv",
               "report": "report.csv", "binary": None},
}
SECTIONS = tuple(DEFAULTS)


def _plain(obj):
    """Convert numpy scalars/arrays and tuples into YAML-safe builtins."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _merge(default: dict, given: dict, section: str) -> dict:
    unknown = set(given) - set(default)
    if unknown:
        raise ConfigurationError(f"unknown keys in [{section}]: {sorted(unknown)}")
    out = copy.deepcopy(default)
    out.update(copy.deepcopy(given))
    return out


@dataclass(frozen=True)
class RunConfig:
    """Parsed run configuration with every section filled in."""

    command: str
    seed: int = 0
    market: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS["market"]))
    payoff: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS["payoff"]))
    contract: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS["contract"]))
    grid: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS["grid"]))
    mc: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS["mc"]))
    strategy: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS["strategy"]))
    suite: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS["suite"]))
    transform: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS["transform"]))
    output: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS["output"]))

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        if not isinstance(raw, dict):
            raise ConfigurationError("configuration must be a mapping")
        raw = _plain(raw)
        extra = set(raw) - {"command", "seed", *SECTIONS}
        if extra:
            raise ConfigurationError(f"unknown top-level keys: {sorted(extra)}")
        command = raw.get("command")
        if command not in COMMANDS:
            raise ConfigurationError(f"command must be one of {COMMANDS}, got {command!r}")
        missing = [s for s in REQUIRED[command] if s not in raw]
        if missing:
            raise ConfigurationError(f"command {command!r} needs sections {missing}")
        seed = raw.get("seed", 0)
        if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
            raise ConfigurationError("seed must be a non-negative integer")
        parts = {}
        for s in SECTIONS:
            given = raw.get(s) or {}
            if not isinstance(given, dict):
                raise ConfigurationError(f"section [{s}] must be a mapping")
            parts[s] = _merge(DEFAULTS[s], given, s)
        cfg = cls(command=command, seed=seed, **parts)
        cfg.validate()
        return cfg

    @classmethod
    def parse(cls, text: str) -> "RunConfig":
        try:
            raw = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigurationError(f"malformed configuration: {exc}") from exc
        return cls.from_dict(raw)

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigurationError(f"cannot read configuration {path}: {exc}") from exc
        return cls.parse(text)

    def to_dict(self) -> dict:
        return {f.name: copy.deepcopy(getattr(self, f.name)) for f in fields(self)}

    def serialize(self) -> str:
        """Canonical YAML (sorted keys, block style)."""
        return yaml.safe_dump(self.to_dict(), sort_keys=True, default_flow_style=False)

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.serialize().encode()).hexdigest()

    def with_seed(self, seed: int) -> "RunConfig":
        d = self.to_dict()
        d["seed"] = seed
        return RunConfig.from_dict(d)

    def header(self) -> str:
        return f"config_sha256={self.digest} seed={self.seed} command={self.command}"

    # -- semantic views --------------------------------------------------

    def validate(self) -> None:
        try:
            if self.command in ("price-passport", "simulate") or self.market.get("rho") is not None:
                self.market_model()
            if self.command in ("price-passport", "price-symmetric"):
                self.payoff_function()
        except ArgumentError as exc:
            raise ConfigurationError(str(exc)) from exc
        T = self.contract["T"]
        if not isinstance(T, (int, float)) or T <= 0:
            raise ConfigurationError("contract.T must be positive")
        if self.command == "verify" and self.suite["name"] not in SUITES:
            raise ConfigurationError(f"unknown suite {self.suite['name']!r}; choose from {SUITES}")
        if self.command == "transform" and self.transform["direction"] not in ("to-lognormal", "to-normal"):
            raise ConfigurationError("transform.direction must be to-lognormal or to-normal")
        mc = self.mc
        for key in ("paths", "steps", "chunk", "checkpoints"):
            if not isinstance(mc[key], int) or mc[key] <= 0:
                raise ConfigurationError(f"mc.{key} must be a positive integer")
        h = self.grid["h"]
        if h is not None and (not isinstance(h, (int, float)) or h <= 0):
            raise ConfigurationError("grid.h must be positive")

    def market_model(self) -> MarketModel:
        m = self.market
        sigma = np.atleast_1d(np.asarray(m["sigma"], dtype=float))
        n = sigma.size
        rho = np.eye(n) if m["rho"] is None else np.asarray(m["rho"], dtype=float)
        spot = np.ones(n) if m["spot"] is None else np.atleast_1d(np.asarray(m["spot"], dtype=float))
        return MarketModel(sigma, rho, spot)

    def payoff_function(self) -> UnivariatePayoff:
        """The configured payoff in normal coordinates."""
        from .coords import power_payoff_lognormal, transform_coordinates

        p = self.payoff
        kind = p["kind"]
        lognormal = p["coordinates"] == "lognormal"
        if kind == "hinge":
            f = UnivariatePayoff.hinge(float(p["strike"]))
        elif kind == "power":
            m = float(p["power"])
            f = power_payoff_lognormal(m) if lognormal else UnivariatePayoff.power(m)
        elif kind == "table":
            f = UnivariatePayoff.table(p["knots"], p["values"])
        else:
            raise ConfigurationError(f"unknown payoff kind {kind!r}")
        if lognormal:
            return transform_coordinates(f, "to-normal")
        if p["coordinates"] != "normal":
            raise ConfigurationError("payoff.coordinates must be normal or lognormal")
        return f
