"""Command-line front end: ``passportlab <command> --config run.yaml --out DIR``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
Every artifact starts with ``# config_sha256=... seed=... command=...``;
wall-clock timings go to ``run.log`` only, so CSV artifacts stay byte-identical
across reruns.
"""

from __future__ import annotations

import argparse
import io
import math
import os
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from .config import RunConfig
from .coords import NodalSurface, transform_coordinates
from .errors import (ArgumentError, ConfigurationError, DivergenceError, HypothesisError,
                     PassportLabError, StrategyInfeasibleError)
from .hjb import (bs_boundary_value, passport_grid, passport_value, solve_passport_hjb,
                  solve_symmetric_passport, symmetric_grid, symmetric_value)
from .paths import (IndexState, PathConfig, mc_estimate, simulate_account,
                    simulate_classical_portfolio)
from .pde import SpaceTimeGrid, ValueSurface, format_float
from .strategy import StrategyField
from .suites import run_suite

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def atomic_write(path: Path, data: str | bytes) -> None:
    """Write to a temporary sibling, then ``os.replace`` onto ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        mode = "wb" if isinstance(data, bytes) else "w"
        kw = {} if isinstance(data, bytes) else {"newline": "\n", "encoding": "utf-8"}
        with os.fdopen(fd, mode, **kw) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _csv(writer, *args, **kwargs) -> str:
    buf = io.StringIO()
    writer(buf, *args, **kwargs)
    return buf.getvalue()


def _surface_csv(surface: ValueSurface, header: str, names) -> str:
    buf = io.StringIO()
    buf.write(f"# {header}\n")
    buf.write(",".join(["t", *names, "value"]) + "\n")
    pts = surface.grid.points().reshape(-1, surface.grid.n)
    for t, layer in zip(surface.times, surface.values):
        for p, v in zip(pts, layer.reshape(-1)):
            buf.write(",".join(format_float(c) for c in (t, *p, v)) + "\n")
    return buf.getvalue()


def _rows_csv(header: str, columns, rows) -> str:
    buf = io.StringIO()
    buf.write(f"# {header}\n")
    buf.write(",".join(columns) + "\n")
    for row in rows:
        buf.write(",".join(format_float(v) if isinstance(v, (float, np.floating)) else str(v)
                           for v in row) + "\n")
    return buf.getvalue()


class Run:
    """Artifacts of one command; files are written when the command finishes."""

    def __init__(self, cfg: RunConfig, out: Path, threads: int = 1):
        self.cfg = cfg
        self.out = Path(out)
        self.threads = threads
        self.header = cfg.header()
        self.files: dict[str, str | bytes] = {}
        self.log: list[str] = []

    def add(self, name: str, data: str | bytes) -> None:
        self.files[name] = data

    def flush(self) -> None:
        for name, data in self.files.items():
            atomic_write(self.out / name, data)
        atomic_write(self.out / "run.log", "".join(f"{line}\n" for line in self.log))

    def path_config(self) -> PathConfig:
        mc = self.cfg.mc
        return PathConfig(T=float(self.cfg.contract["T"]), steps=mc["steps"], paths=mc["paths"],
                          seed=self.cfg.seed, scheme=mc["scheme"], antithetic=bool(mc["antithetic"]),
                          checkpoints=mc["checkpoints"], chunk=mc["chunk"], threads=self.threads)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_price_passport(run: Run) -> int:
    cfg = run.cfg
    model = cfg.market_model()
    if model.n > 3:
        raise ConfigurationError("price-passport supports n <= 3")
    strike = float(cfg.payoff["strike"])
    T = float(cfg.contract["T"])
    p0 = float(cfg.contract["p0"])
    h = cfg.grid["h"] or (0.04 if model.n == 1 else 0.1)
    grid = passport_grid(model, strike, T, p0=p0, h=h, s_max=cfg.grid["s_max"], c_stab=cfg.grid["c_stab"])
    t0 = time.perf_counter()
    surface, pmap = solve_passport_hjb(model, strike, grid, p0=p0, save_every=cfg.grid["save_every"])
    elapsed = time.perf_counter() - t0
    value = passport_value(surface, p0, model.spot)
    names = ["p", *[f"s{i + 1}" for i in range(model.n)]]
    out = cfg.output
    run.add(out["surface"], _surface_csv(surface, run.header, names))
    run.add(out["policy"], _csv(pmap.to_csv, run.header, coord_names=names))
    run.add(out["summary"], _rows_csv(run.header, ["p0", *[f"spot{i + 1}" for i in range(model.n)],
                                                   "strike", "T", "value"],
                                      [[p0, *map(float, model.spot), strike, T, value]]))
    if out["binary"]:
        run.add(out["binary"], surface.to_bytes())
    run.log.append(f"price-passport value={format_float(value)} runtime_s={elapsed:.3f} "
                   f"grid={grid.nodes} steps={grid.steps} cross={surface.meta['cross']}")
    return EXIT_OK


def cmd_price_symmetric(run: Run) -> int:
    cfg = run.cfg
    sigma = float(np.atleast_1d(cfg.market["sigma"])[0])
    strike = float(cfg.payoff["strike"])
    if strike <= 0:
        raise ConfigurationError("symmetric passport needs a positive strike")
    T = float(cfg.contract["T"])
    m0, x0 = float(cfg.contract["m0"]), float(cfg.contract["x0"])
    if not 0.0 <= m0 < 2.0 or x0 <= 0:
        raise ConfigurationError("need 0 <= m0 < 2 and x0 > 0")
    h = cfg.grid["h"] or 0.02
    grid = symmetric_grid(sigma, T, strike, h=h, z1_low=min(float(cfg.grid["z1_low"]), math.log(2 - m0) - 2 * h),
                          c_stab=cfg.grid["c_stab"])
    half = (grid.hi[1] - grid.lo[1]) / 2
    if abs(math.log(x0) - math.log(strike)) > half - 2 * h:
        raise ConfigurationError("x0 lies outside the z2 range of the grid")
    t0 = time.perf_counter()
    surface, pmap = solve_symmetric_passport(sigma, strike, grid, save_every=cfg.grid["save_every"])
    pde = symmetric_value(surface, m0, x0)
    t1 = time.perf_counter()
    ens = simulate_account(sigma, StrategyField.stop_loss(), run.path_config(), IndexState(m0, x0))
    mc, se = mc_estimate(ens, lambda x: np.maximum(x - strike, 0.0), column="X_N")
    t2 = time.perf_counter()
    diff = pde - mc
    z = diff / se if se > 0 else (0.0 if diff == 0 else math.copysign(math.inf, diff))
    bound = 3.0 * se + 5e-3
    out = cfg.output
    names = ["z1", "z2"]
    run.add(out["surface"], _surface_csv(surface, run.header, names))
    run.add(out["policy"], _csv(pmap.to_csv, run.header, coord_names=names))
    run.add(out["summary"], _rows_csv(
        run.header,
        ["m0", "x0", "strike", "sigma", "T", "pde_value", "mc_value", "mc_stderr", "diff_in_stderr",
         "within_3se_plus_5e-3"],
        [[m0, x0, strike, sigma, T, pde, mc, se, z, str(abs(diff) <= bound).lower()]]))
    if out["binary"]:
        run.add(out["binary"], surface.to_bytes())
    # the last z1 column is the imposed boundary; record its check in the log
    z2 = grid.axes[1]
    err = max(float(np.max(np.abs(surface.values[k][-1] - bs_boundary_value(z2, tau, sigma, strike))))
              for k, tau in enumerate(surface.times))
    run.log.append(f"price-symmetric pde={format_float(pde)} mc={format_float(mc)} stderr={format_float(se)} "
                   f"boundary_err={err:.3e} pde_s={t1 - t0:.3f} mc_s={t2 - t1:.3f}")
    return EXIT_OK


def cmd_verify(run: Run) -> int:
    cfg = run.cfg
    name = cfg.suite["name"]
    t0 = time.perf_counter()
    checks = run_suite(name, cfg.suite["params"])
    run.add(cfg.output["report"], _rows_csv(
        run.header, ["suite", "check", "tolerance", "observed", "passed", "note"],
        [[name, c.name, float(c.tolerance), float(c.observed), str(c.passed).lower(),
          c.note.replace(",", ";")] for c in checks]))
    ok = all(c.passed for c in checks)
    run.log.append(f"verify suite={name} checks={len(checks)} passed={sum(c.passed for c in checks)} "
                   f"runtime_s={time.perf_counter() - t0:.3f}")
    return EXIT_OK if ok else EXIT_NUMERIC


def _load_surface(path: Path, coordinates: str) -> NodalSurface:
    return NodalSurface.from_surface(ValueSurface.from_bytes(path.read_bytes()), coordinates)


def cmd_transform(run: Run, config_dir: Path) -> int:
    cfg = run.cfg
    tr = cfg.transform
    direction = tr["direction"]
    source = "normal" if direction == "to-lognormal" else "lognormal"
    if tr["input"]:
        path = Path(tr["input"])
        path = path if path.is_absolute() else config_dir / path
        try:
            surf = _load_surface(path, source)
        except OSError as exc:
            raise ConfigurationError(f"cannot read surface {path}: {exc}") from exc
    else:
        lo, hi, nodes = tr["lo"], tr["hi"], tr["nodes"]
        if not (len(lo) == len(hi) == len(nodes)):
            raise ConfigurationError("transform lo/hi/nodes must have equal length")
        g = SpaceTimeGrid(lo, hi, nodes, float(cfg.contract["T"]), 1)
        pts = g.points()
        payoff = cfg.payoff_function()
        # evaluate the configured payoff in the source coordinates
        x = pts if source == "normal" else np.log(np.where(pts > 0, pts, np.nan))
        if source == "lognormal" and np.any(pts <= 0):
            raise ArgumentError("to-normal needs strictly positive s nodes")
        vals = np.asarray(payoff(x), dtype=float)[None]
        surf = NodalSurface(g.axes, np.zeros(1), vals, source)
    out = transform_coordinates(surf, direction)
    run.add(cfg.output["surface"], _csv(out.to_csv, run.header))
    run.log.append(f"transform {direction} nodes={[a.size for a in out.axes]}")
    return EXIT_OK


def _simulate_strategy(cfg: RunConfig, model):
    st = cfg.strategy
    kind = st["kind"]
    T = float(cfg.contract["T"])
    if kind == "stop-loss":
        return StrategyField.stop_loss()
    if kind == "fraction":
        return StrategyField.fraction(float(st["fraction"]))
    if kind == "neutral":
        return StrategyField.neutral()
    if kind == "constant":
        vals = st["values"] or [0.0] * model.n
        return StrategyField.constant(np.asarray(vals, dtype=float))
    if kind == "dyadic":
        return StrategyField.dyadic(T, int(st["level"]), np.asarray(st["values"], dtype=float))
    raise ConfigurationError(f"unknown strategy kind {kind!r}")


def cmd_simulate(run: Run) -> int:
    cfg = run.cfg
    model = cfg.market_model()
    strat = _simulate_strategy(cfg, model)
    pc = run.path_config()
    t0 = time.perf_counter()
    strike = float(cfg.payoff["strike"])
    if strat.contract == "symmetric":
        sigma = float(model.sigma[0])
        ens = simulate_account(sigma, strat, pc, IndexState(float(cfg.contract["m0"]), float(cfg.contract["x0"])))
        col = "X_N"
    else:
        ens = simulate_classical_portfolio(model, strat, pc, p0=float(cfg.contract["p0"]))
        col = "Pi"
    mean, se = mc_estimate(ens, lambda x: np.maximum(x - strike, 0.0), column=col)
    run.add(cfg.output["summary"], _rows_csv(
        run.header, ["strategy", "paths", "steps", "strike", "mc_value", "mc_stderr"],
        [[strat.name, pc.paths, pc.steps, strike, mean, se]]))
    if cfg.mc["write_paths"]:
        run.add("paths.csv", _csv(ens.to_csv, run.header))
    run.log.append(f"simulate strategy={strat.name} value={format_float(mean)} stderr={format_float(se)} "
                   f"runtime_s={time.perf_counter() - t0:.3f}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="passportlab", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name, text in (("price-passport", "classical passport HJB value and policy"),
                       ("price-symmetric", "symmetric passport: PDE value, MC cross-check, policy"),
                       ("verify", "run a verification suite"),
                       ("transform", "convert between normal and lognormal coordinates"),
                       ("simulate", "Monte Carlo under a fixed strategy")):
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", required=True, type=Path, help="YAML run configuration")
        p.add_argument("--out", type=Path, default=Path("out"), help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override the configured seed")
        p.add_argument("--threads", type=int, default=1, help="Monte Carlo worker threads")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = RunConfig.load(args.config)
        if cfg.command != args.command:
            raise ConfigurationError(f"config is for {cfg.command!r}, not {args.command!r}")
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigurationError("--seed must be non-negative")
            cfg = cfg.with_seed(args.seed)
        if args.threads < 1:
            raise ConfigurationError("--threads must be >= 1")
        run = Run(cfg, args.out, args.threads)
        if cfg.command == "price-passport":
            code = cmd_price_passport(run)
        elif cfg.command == "price-symmetric":
            code = cmd_price_symmetric(run)
        elif cfg.command == "verify":
            code = cmd_verify(run)
        elif cfg.command == "transform":
            code = cmd_transform(run, args.config.resolve().parent)
        else:
            code = cmd_simulate(run)
        run.flush()
        return code
    except (ConfigurationError, ArgumentError, HypothesisError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DivergenceError, StrategyInfeasibleError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except PassportLabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
