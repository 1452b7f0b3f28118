"""Command-line front end.

Every command writes one JSON summary; ``expand``, ``solve`` and ``sweep``
also write CSV series. Parameters come from a flat ``key = value`` file
(``--config``) overridden by flags. Exit status: 0 success, 2 invalid input,
3 numerical non-convergence (diagnostics in the JSON ``error`` block).

    hardylab classify --n 3 --gamma 0 --lambda 0.5 --q 5
    hardylab sweep --n 5 --sweep gamma=0.1:2.0:20 --sweep q=2.1:3.2:20 --out table
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import platform
import sys
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .quadform import GridMode, NonConvergenceError, build_grid, first_eigenvalue, rayleigh_min_mu, singular_solution
from .thresholds import ProblemInstance, UnsupportedError, beta_pm, classify, gamma_crit, gamma_H, is_critical, q_crit, two_star

SCHEMA_VERSION = 1
COMMANDS = ("thresholds", "classify", "mu", "lambda1", "mass", "expand", "solve", "sweep")
SERIES_COMMANDS = ("expand", "solve", "sweep")
SWEEPABLE = ("n", "alpha", "s", "gamma", "lambda", "q", "h0", "R")

# key -> (type, default); None defaults are resolved per command
KEYS = {
    "n": (float, 3.0),
    "alpha": (float, 2.0),
    "s": (float, 0.0),
    "gamma": (float, 0.0),
    "lambda": (float, 0.0),
    "q": (float, 3.0),
    "h0": (float, 1.0),
    "mass": (float, None),
    "R": (float, 1.0),
    "m": (int, None),
    "grading": (float, None),
    "eps_min": (float, None),
    "eps_max": (float, None),
    "eps_count": (int, 8),
    "tol": (float, None),
    "max_iters": (int, None),
    "out": (str, None),
    "format": (str, "json"),
    "sweep": (list, []),
    "sweep_command": (str, "classify"),
}

# (m, grading, tol, max_iters) per command
GRID_DEFAULTS = {
    "mu": (400, 2.0, 1e-10, 100_000),
    "lambda1": (400, 2.0, 1e-13, 20_000),
    "mass": (2000, 2.0, None, None),
    "expand": (20_000, 3.0, None, None),
    "solve": (400, 2.0, 1e-6, 2000),
}


class ConfigError(ValueError):
    pass


@dataclass
class SweepAxis:
    name: str
    lo: float
    hi: float
    count: int

    @property
    def values(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.count)


@dataclass
class RunConfig:
    command: str
    values: dict
    axes: list = field(default_factory=list)

    def instance(self, **overrides) -> ProblemInstance:
        v = {**self.values, **overrides}
        return ProblemInstance(
            n=v["n"], alpha=v["alpha"], s=v["s"], gamma=v["gamma"], lam=v["lambda"],
            q=v["q"], h0=v["h0"], mass=v["mass"], R=v["R"],
        )

    def grid(self):
        v = self.values
        if v["n"] == 1:
            return build_grid(GridMode.INTERVAL, v["R"], v["m"], v["grading"])
        return build_grid(GridMode.RADIAL, v["R"], v["m"], v["grading"], n=v["n"])

    def eps_series(self) -> np.ndarray:
        v = self.values
        return np.geomspace(v["eps_max"], v["eps_min"], v["eps_count"])

    def echo(self) -> dict:
        out = {k: v for k, v in self.values.items() if k not in ("out", "sweep")}
        out["sweep"] = [f"{a.name}={a.lo!r}:{a.hi!r}:{a.count}" for a in self.axes]
        return out


# ---------------------------------------------------------------------------
# config parsing


def _coerce(key: str, raw):
    if key not in KEYS:
        raise ConfigError(f"unknown config key {key!r}")
    kind = KEYS[key][0]
    if kind is list:
        return list(raw) if isinstance(raw, (list, tuple)) else [raw]
    if raw is None:
        return None
    try:
        if kind is int:
            as_float = float(raw)
            if as_float != int(as_float):
                raise ValueError
            return int(as_float)
        return kind(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"config key {key!r} expects {kind.__name__}, got {raw!r}") from None


def read_config_file(path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment, ``sweep`` may repeat."""
    values: dict = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, raw = (x.strip() for x in line.split("=", 1))
        key = key.replace("-", "_")
        if key == "sweep":
            values.setdefault("sweep", []).append(raw)
        else:
            values[key] = _coerce(key, raw)
    return values


def parse_axis(text: str) -> SweepAxis:
    try:
        name, rng = text.split("=", 1)
        lo, hi, count = rng.split(":")
        axis = SweepAxis(name.strip(), float(lo), float(hi), int(count))
    except ValueError:
        raise ConfigError(f"sweep range must look like name=lo:hi:count, got {text!r}") from None
    if axis.name not in SWEEPABLE:
        raise ConfigError(f"cannot sweep {axis.name!r}; choose from {', '.join(SWEEPABLE)}")
    if axis.count < 0:
        raise ConfigError(f"sweep count must be >= 0, got {axis.count}")
    return axis


def resolve(command: str, file_values: dict, flag_values: dict) -> RunConfig:
    """Merge defaults, file values and flags, then validate before any computation."""
    if command not in COMMANDS:
        raise ConfigError(f"unknown command {command!r}")
    values = {k: d for k, (_, d) in KEYS.items()}
    values.update(file_values)
    for k, v in flag_values.items():
        if v is not None and v != []:
            values[k] = _coerce(k, v)
    m, grading, tol, max_iters = GRID_DEFAULTS.get(command, (None, None, None, None))
    for key, default in (("m", m), ("grading", grading), ("tol", tol), ("max_iters", max_iters)):
        if values[key] is None:
            values[key] = default
    if values["eps_max"] is None:
        values["eps_max"] = values["R"] / 50.0
    if values["eps_min"] is None:
        values["eps_min"] = values["eps_max"] / 10.0
    axes = [parse_axis(a) for a in values["sweep"]]
    cfg = RunConfig(command, values, axes)
    _validate(cfg)
    return cfg


def _validate(cfg: RunConfig):
    v, cmd = cfg.values, cfg.command
    if v["format"] not in ("json", "csv"):
        raise ConfigError(f"format must be json or csv, got {v['format']!r}")
    if v["format"] == "csv" and cmd not in SERIES_COMMANDS and v["out"] is None:
        raise ConfigError(f"command {cmd!r} has no CSV series")
    if cmd == "sweep":
        if not 1 <= len(cfg.axes) <= 2:
            raise ConfigError("sweep needs one or two --sweep ranges")
        if len({a.name for a in cfg.axes}) != len(cfg.axes):
            raise ConfigError("the same parameter is swept twice")
        if v["sweep_command"] not in ("classify", "expand"):
            raise ConfigError(f"sweep_command must be classify or expand, got {v['sweep_command']!r}")
        return  # cells are validated one by one
    elif cfg.axes:
        raise ConfigError("--sweep is only valid with the sweep command")
    if cmd == "thresholds":
        _threshold_args(v)
        return
    cfg.instance()
    if cmd in GRID_DEFAULTS:
        if cmd in ("mass", "expand", "solve") and v["alpha"] != 2.0:
            raise ConfigError(f"{cmd} needs alpha = 2")
        if cmd in ("mass", "expand", "solve") and v["n"] <= 2:
            raise ConfigError(f"{cmd} needs a radial problem with n > 2")
        if v["n"] != 1 and v["alpha"] != 2.0:
            raise UnsupportedError("fractional problems (alpha < 2) are discretized only for n = 1")
        cfg.grid()
        if v["tol"] is not None and not v["tol"] > 0:
            raise ConfigError(f"tol must be positive, got {v['tol']}")
        if v["max_iters"] is not None and not v["max_iters"] > 0:
            raise ConfigError(f"max_iters must be positive, got {v['max_iters']}")
    if cmd == "expand":
        if v["eps_count"] < 5:
            raise ConfigError(f"eps_count must be >= 5, got {v['eps_count']}")
        if not 0 < v["eps_min"] < v["eps_max"] <= v["R"] / 50.0:
            raise ConfigError("need 0 < eps_min < eps_max <= R/50")
        if v["eps_max"] / v["eps_min"] < 10.0 * (1 - 1e-9):
            raise ConfigError("eps_min..eps_max must span at least one decade")


def _threshold_args(v):
    n, a, s, g = v["n"], v["alpha"], v["s"], v["gamma"]
    if not 0 < a <= 2:
        raise ConfigError(f"alpha must satisfy 0 < alpha <= 2, got {a}")
    if not n > a:
        raise ConfigError(f"need n > alpha, got n={n}, alpha={a}")
    if not 0 <= s < a:
        raise ConfigError(f"s violates 0 <= s < alpha (s={s}, alpha={a})")
    if not g < gamma_H(n, a):
        raise ConfigError(f"gamma violates gamma < gamma_H = {gamma_H(n, a)} (gamma={g})")


# ---------------------------------------------------------------------------
# commands. Each returns (result dict, csv header, csv rows).


def _grid_dict(grid) -> dict:
    return {"mode": grid.mode.value, "R": grid.R, "m": grid.m, "grading": grid.grading}


def cmd_thresholds(cfg):
    v = cfg.values
    n, a, s, g = v["n"], v["alpha"], v["s"], v["gamma"]
    bm, bp = beta_pm(n, a, g)
    crit = is_critical(n, a, g)
    res = {
        "n": n,
        "alpha": a,
        "s": s,
        "gamma": g,
        "gamma_H": gamma_H(n, a),
        "gamma_crit": gamma_crit(n, a),
        "two_star": two_star(n, a),
        "two_star_s": two_star(n, a, s),
        "beta_minus": bm,
        "beta_plus": bp,
        "critical": crit,
        "q_crit": q_crit(n, a, g) if crit else None,
    }
    return res, None, None


def cmd_classify(cfg):
    rep = classify(cfg.instance()).to_dict()
    rep["q"] = cfg.values["q"]
    return rep, None, None


def cmd_mu(cfg):
    inst, grid = cfg.instance(lam=0.0), cfg.grid()
    r = rayleigh_min_mu(inst, grid, tol=cfg.values["tol"], max_iter=cfg.values["max_iters"])
    from .testfun import ps_threshold

    res = {
        "mu": r.mu,
        "iterations": r.iterations,
        "grad_ratio": r.grad_ratio,
        "upsilon": ps_threshold(inst.n, inst.alpha, inst.s, r.mu),
        "grid": _grid_dict(grid),
    }
    return res, None, None


def cmd_lambda1(cfg):
    grid = cfg.grid()
    lam1 = first_eigenvalue(cfg.instance(), grid, tol=cfg.values["tol"], max_iter=cfg.values["max_iters"])
    return {"lambda1": lam1, "grid": _grid_dict(grid)}, None, None


def cmd_mass(cfg):
    grid = cfg.grid()
    sol = singular_solution(cfg.instance(), grid)
    res = {
        "mass": sol.mass,
        "shooting_mass": sol.shooting_mass,
        "fit_residual": sol.fit_residual,
        "beta_minus": sol.beta_minus,
        "beta_plus": sol.beta_plus,
        "grid": _grid_dict(grid),
    }
    return res, None, None


EXPAND_HEADER = ["eps", "I", "J", "K", "psi_quotient", "sup_phi", "theta", "t_star", "deficit"]


def cmd_expand(cfg):
    from .testfun import expansion_fit

    grid = cfg.grid()
    r = expansion_fit(cfg.instance(), cfg.eps_series(), grid=grid)
    rows = [[b.eps, b.I, b.J, b.K, b.psi_quotient, b.sup_phi, b.theta, b.t_star, float(dd)]
            for b, dd in zip(r.rows, r.deficits)]
    res = {**r.to_dict(), "grid": _grid_dict(grid)}
    return res, EXPAND_HEADER, rows


def cmd_solve(cfg):
    from .mountainpass import MPConfig, mountain_pass_solve, ps_monitor

    v = cfg.values
    grid = cfg.grid()
    mp = MPConfig(max_iters=v["max_iters"], grad_tol=v["tol"], m=grid.m, grading=grid.grading)
    r = mountain_pass_solve(cfg.instance(), mp, grid=grid)
    ps = ps_monitor(r.trace, r.upsilon)
    res = {
        **r.to_dict(),
        "cauchy": ps.cauchy,
        "compactness_risk": ps.compactness_risk,
        "grid": _grid_dict(grid),
    }
    rows = [[float(x), float(u)] for x, u in zip(grid.nodes, r.solution.values)]
    trace = [[k, lev, rr] for k, (lev, rr) in enumerate(r.trace)]
    return res, ["r", "u"], rows, (["iteration", "level", "residual"], trace)


SWEEP_CLASSIFY = ["regime", "gamma_crit", "q_crit", "q_vs_qcrit", "governing", "verdict"]
SWEEP_EXPAND = ["exponent", "predicted_exponent", "r_squared", "fit_verdict"]


def _sweep_cell(cfg: RunConfig, point: dict) -> list:
    try:
        inst = cfg.instance(**point)
        rep = classify(inst)
        if rep.regime.value == "Critical":
            tol = 1e-12 * max(1.0, abs(rep.q_crit))
            rel = "equal" if abs(inst.q - rep.q_crit) <= tol else ("below" if inst.q < rep.q_crit else "above")
        else:
            rel = "n/a"
        row = [rep.regime.value, rep.gamma_crit, rep.q_crit, rel, rep.governing.value, rep.verdict.value]
        if cfg.values["sweep_command"] == "expand":
            from .testfun import expansion_fit

            sub = RunConfig("expand", {**cfg.values, **point})
            _validate(sub)
            r = expansion_fit(inst, sub.eps_series(), grid=sub.grid())
            row += [r.deficit_fit.exponent, r.predicted_exponent, r.deficit_fit.r_squared, r.verdict.value]
        return row + [""]
    except (ValueError, NonConvergenceError, ArithmeticError) as exc:
        width = len(SWEEP_CLASSIFY) + (len(SWEEP_EXPAND) if cfg.values["sweep_command"] == "expand" else 0)
        return [None] * width + [f"{type(exc).__name__}: {exc}"]


def cmd_sweep(cfg):
    v = cfg.values
    if v["sweep_command"] == "expand":
        v["m"] = 20_000 if v["m"] is None else v["m"]
        v["grading"] = 3.0 if v["grading"] is None else v["grading"]
    axes = cfg.axes
    points = [{}]
    for ax in axes:
        points = [{**p, ax.name: float(x)} for p in points for x in ax.values]
    if any(a.count == 0 for a in axes):
        points = []
    workers = int(os.environ.get("HARDYLAB_WORKERS", "1") or 1)
    if workers < 1:
        raise ConfigError(f"HARDYLAB_WORKERS must be >= 1, got {workers}")
    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(lambda p: _sweep_cell(cfg, p), points))
    header = [a.name for a in axes] + SWEEP_CLASSIFY
    if v["sweep_command"] == "expand":
        header += SWEEP_EXPAND
    header.append("error")
    rows = [[p[a.name] for a in axes] + r for p, r in zip(points, results)]
    counts: dict = {}
    for r in results:
        if r[-1] == "":
            key = f"{r[0]}/{r[4]}"
            counts[key] = counts.get(key, 0) + 1
    res = {
        "axes": [{"name": a.name, "lo": a.lo, "hi": a.hi, "count": a.count} for a in axes],
        "cells": len(rows),
        "errors": sum(1 for r in results if r[-1] != ""),
        "counts": dict(sorted(counts.items())),
        "sweep_command": v["sweep_command"],
    }
    return res, header, rows


HANDLERS = {
    "thresholds": cmd_thresholds,
    "classify": cmd_classify,
    "mu": cmd_mu,
    "lambda1": cmd_lambda1,
    "mass": cmd_mass,
    "expand": cmd_expand,
    "solve": cmd_solve,
    "sweep": cmd_sweep,
}


# ---------------------------------------------------------------------------
# output


def _fmt_float(x: float) -> str:
    return format(x, ".17g")


def dumps(obj, indent: int = 2, _level: int = 0) -> str:
    """JSON with every float printed at 17 significant digits; NaN and inf become null."""
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if obj is None or (isinstance(obj, float) and not math.isfinite(obj)):
        return "null"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _fmt_float(float(obj)) if math.isfinite(obj) else "null"
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {dumps(v, indent, _level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        if len(obj) == 0:
            return "[]"
        items = [f"{pad}{dumps(v, indent, _level + 1)}" for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow(["" if x is None else _fmt_float(x) if isinstance(x, float) else x for x in row])
    return buf.getvalue()


def atomic_write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _stem(out: str) -> Path:
    p = Path(out)
    return p.with_suffix("") if p.suffix in (".json", ".csv") else p


def run(cfg: RunConfig) -> tuple[int, dict, list]:
    """Execute one command. Returns ``(exit code, payload, csv series)``.

    Each CSV series is ``(suffix, header, rows)``.
    """
    payload = {
        "schema_version": SCHEMA_VERSION,
        "command": cfg.command,
        "config": cfg.echo(),
        "status": "ok",
        "result": None,
        "error": None,
    }
    series: list = []
    try:
        out = HANDLERS[cfg.command](cfg)
        payload["result"] = out[0]
        if out[1] is not None:
            series.append(("", out[1], out[2]))
        if len(out) > 3:
            series.append((".trace", *out[3]))
        return 0, payload, series
    except NonConvergenceError as exc:
        diag = {}
        trace = getattr(exc, "trace", None)
        if trace:
            diag["levels"] = [float(c) for c, _ in trace]
            diag["residuals"] = [float(r) for _, r in trace]
        if getattr(exc, "upsilon", None) is not None:
            diag["upsilon"] = float(exc.upsilon)
        payload.update(status="error", error={"type": type(exc).__name__, "message": str(exc), "diagnostics": diag})
        return 3, payload, series
    except (ValueError, ZeroDivisionError) as exc:
        payload.update(status="error", error={"type": type(exc).__name__, "message": str(exc), "diagnostics": {}})
        return 2, payload, series


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hardylab", description="Thresholds and variational checks for Hardy-Schroedinger problems.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="flat key = value file; flags override it")
    for key in ("n", "alpha", "s", "gamma", "lambda", "q", "h0", "mass", "R", "grading", "eps-min", "eps-max", "tol"):
        p.add_argument(f"--{key}", dest=key.replace("-", "_"), type=float)
    for key in ("m", "eps-count", "max-iters"):
        p.add_argument(f"--{key}", dest=key.replace("-", "_"), type=int)
    p.add_argument("--out", help="output path stem: writes STEM.json (+ STEM.csv for series)")
    p.add_argument("--format", choices=("json", "csv"), help="what to print on stdout without --out")
    p.add_argument("--sweep", action="append", default=[], metavar="NAME=LO:HI:COUNT",
                   help="swept parameter, inclusive linspace; at most two")
    p.add_argument("--sweep-command", dest="sweep_command", choices=("classify", "expand"))
    return p


def main(argv: Optional[list] = None) -> int:
    args = build_parser().parse_args(argv)
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "config")}
    t_start = time.time()
    try:
        file_values = read_config_file(args.config) if args.config else {}
        cfg = resolve(args.command, file_values, flags)
    except (ValueError, OSError) as exc:
        print(f"hardylab: error: {exc}", file=sys.stderr)
        out = flags.get("out")
        if out is not None:
            payload = {
                "schema_version": SCHEMA_VERSION,
                "command": args.command,
                "config": None,
                "status": "error",
                "result": None,
                "error": {"type": type(exc).__name__, "message": str(exc), "diagnostics": {}},
            }
            stem = _stem(out)
            atomic_write(stem.parent / f"{stem.name}.json", dumps(payload) + "\n")
        return 2

    code, payload, series = run(cfg)
    if payload["error"] is not None:
        print(f"hardylab: {payload['error']['type']}: {payload['error']['message']}", file=sys.stderr)
    text = dumps(payload) + "\n"
    out = cfg.values["out"]
    if out is None:
        if cfg.values["format"] == "csv" and series:
            sys.stdout.write(csv_text(series[0][1], series[0][2]))
        else:
            sys.stdout.write(text)
        return code

    stem = _stem(out)
    for suffix, header, rows in series:
        atomic_write(stem.parent / f"{stem.name}{suffix}.csv", csv_text(header, rows))
    meta = {
        "created_unix": time.time(),
        "elapsed_s": time.time() - t_start,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "workers": int(os.environ.get("HARDYLAB_WORKERS", "1") or 1),
        "exit_code": code,
    }
    atomic_write(stem.parent / f"{stem.name}.meta.json", dumps(meta) + "\n")
    atomic_write(stem.parent / f"{stem.name}.json", text)
    return code


if __name__ == "__main__":
    sys.exit(main())
