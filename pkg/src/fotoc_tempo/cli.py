"""Command-line runner: config parsing, runs, sweeps, oracle checks.

Config files are flat ``key = value`` lines with dotted section names::

    # weak-coupling ohmic run
    model.s = 1.0
    model.alpha = 0.1
    grid.dt = 0.1
    grid.n_steps = 200
    sweep.param = model.alpha
    sweep.values = 0.1, 0.2, 0.3

Blank lines and ``#`` comments are ignored.  Unknown or repeated keys are
errors.  See ``DEFAULTS`` for every key and its default.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy

from . import __version__
from .bath import GridParams, ModelParams, dump_eta_csv, eta_table
from .ed import MAX_PATH_STEPS, direct_path_sum, discretize_bath, ed_evolve
from .fotoc import ProbeParams, extrema_locations, lyapunov_fit
from .tempo import TimeSeries, evolve
from .tensor_net import CompressionParams

__all__ = [
    "ConfigError",
    "RunConfig",
    "OracleSettings",
    "SweepSpec",
    "parse_config",
    "emit_csv",
    "read_csv",
    "run",
    "oracle_check",
    "main",
    "EXIT_OK",
    "EXIT_CONFIG",
    "EXIT_NUMERICAL",
    "EXIT_ORACLE",
]

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_ORACLE = 4

CSV_HEADER = ("t", "P", "re_W", "im_W", "F", "one_minus_F_scaled")
# memory length used when grid.dk_max is not given (capped at n_steps)
DEFAULT_DK_MAX = 20

# key -> (default, kind)
DEFAULTS: Dict[str, Tuple[object, str]] = {
    "model.s": (1.0, "float"),
    "model.alpha": (0.1, "float"),
    "model.omega_c": (10.0, "float"),
    "model.delta": (1.0, "float"),
    "grid.dt": (0.1, "float"),
    "grid.n_steps": (100, "int"),
    "grid.dk_max": (None, "int_or_full"),
    "comp.epsilon": (1e-11, "float"),
    "comp.chi_max": (None, "int_or_none"),
    "probe.enabled": (True, "bool"),
    "probe.xi": (1e-3, "float"),
    "probe.include_self_factor": (True, "bool"),
    "sweep.param": (None, "str"),
    "sweep.values": (None, "float_list"),
    "output_dir": ("output", "str"),
    "analysis.lyapunov_window": (None, "float_pair"),
    "oracle.modes": (2, "int"),
    "oracle.omega_max": (6.0, "float"),
    "oracle.fock_cutoff": (10, "int"),
    "oracle.dt": (0.05, "float"),
    "oracle.t_max": (1.0, "float"),
    "oracle.path_steps": (5, "int"),
    "oracle.tol_p": (1e-3, "float"),
    "oracle.tol_f": (0.05, "float"),
    "oracle.tol_path": (1e-10, "float"),
}

SWEEPABLE = ("model.s", "model.alpha", "model.omega_c", "model.delta", "grid.dt",
             "grid.n_steps", "grid.dk_max", "comp.epsilon", "comp.chi_max", "probe.xi")


class ConfigError(ValueError):
    """Bad config text or values; ``line``/``column`` are 1-based when known."""

    def __init__(self, message: str, line: Optional[int] = None, column: Optional[int] = None):
        where = f"line {line}, column {column}: " if line is not None else ""
        super().__init__(where + message)
        self.line = line
        self.column = column


@dataclass(frozen=True)
class SweepSpec:
    param: str
    values: Tuple[float, ...]


@dataclass(frozen=True)
class OracleSettings:
    modes: int = 2
    omega_max: float = 6.0
    fock_cutoff: int = 10
    dt: float = 0.02
    t_max: float = 1.0
    path_steps: int = 5
    tol_p: float = 1e-3
    tol_f: float = 0.05
    tol_path: float = 1e-10


@dataclass(frozen=True)
class RunConfig:
    model: ModelParams
    grid: GridParams
    comp: CompressionParams
    probe: Optional[ProbeParams]
    sweep: Optional[SweepSpec] = None
    output_dir: Path = Path("output")
    lyapunov_window: Optional[Tuple[float, float]] = None
    oracle: OracleSettings = field(default_factory=OracleSettings)

    def resolved(self) -> dict:
        """Plain-data view for the manifest."""
        return {
            "model": dataclasses.asdict(self.model),
            "grid": dataclasses.asdict(self.grid),
            "comp": dataclasses.asdict(self.comp),
            "probe": None if self.probe is None else dataclasses.asdict(self.probe),
            "sweep": None if self.sweep is None else {"param": self.sweep.param,
                                                      "values": list(self.sweep.values)},
            "output_dir": str(self.output_dir),
            "analysis": {"lyapunov_window": None if self.lyapunov_window is None
                         else list(self.lyapunov_window)},
            "oracle": dataclasses.asdict(self.oracle),
        }


# ---------------------------------------------------------------- parsing

def _convert(kind: str, text: str):
    low = text.strip().lower()
    if kind == "float":
        v = float(text)
        if not math.isfinite(v):
            raise ValueError("must be finite")
        return v
    if kind == "int":
        f = float(text)
        if f != int(f):
            raise ValueError("must be an integer")
        return int(f)
    if kind == "int_or_full":
        return None if low == "full" else _convert("int", text)
    if kind == "int_or_none":
        return None if low in ("none", "") else _convert("int", text)
    if kind == "bool":
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError("expected true/false")
    if kind == "str":
        if not text.strip():
            raise ValueError("must not be empty")
        return text.strip()
    if kind == "float_list":
        items = [p for p in text.split(",") if p.strip()]
        if not items:
            raise ValueError("expected a comma-separated list of numbers")
        return tuple(_convert("float", p) for p in items)
    if kind == "float_pair":
        pair = _convert("float_list", text)
        if len(pair) != 2:
            raise ValueError("expected two numbers 't_start, t_end'")
        return pair
    raise AssertionError(kind)


def _read_pairs(text: str) -> Dict[str, Tuple[object, int]]:
    """Parse the raw lines; returns ``key -> (value, line)``."""
    found: Dict[str, Tuple[object, int]] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        body = raw.split("#", 1)[0]
        if not body.strip():
            continue
        if "=" not in body:
            col = len(body) - len(body.lstrip()) + 1
            raise ConfigError("expected 'key = value'", lineno, col)
        key_part, value_part = body.split("=", 1)
        key = key_part.strip()
        key_col = len(key_part) - len(key_part.lstrip()) + 1
        value_col = len(key_part) + 2 + len(value_part) - len(value_part.lstrip())
        if not key:
            raise ConfigError("missing key before '='", lineno, key_col)
        if key not in DEFAULTS:
            raise ConfigError(f"unknown key {key!r}", lineno, key_col)
        if key in found:
            raise ConfigError(f"duplicate key {key!r} (first set on line {found[key][1]})",
                              lineno, key_col)
        try:
            value = _convert(DEFAULTS[key][1], value_part)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {exc}", lineno, value_col) from None
        found[key] = (value, lineno)
    return found


def _build(values: Dict[str, object]) -> RunConfig:
    def section(prefix):
        return {k.split(".", 1)[1]: v for k, v in values.items() if k.startswith(prefix + ".")}

    try:
        m = section("model")
        if m["delta"] <= 0:
            raise ValueError(f"tunneling delta must be > 0, got {m['delta']}")
        model = ModelParams(**m)
        g = section("grid")
        if g["dk_max"] is None and "grid.dk_max" not in values["_given"]:
            g["dk_max"] = min(DEFAULT_DK_MAX, max(g["n_steps"], 1))
        grid = GridParams(**g)
        comp = CompressionParams(**section("comp"))
        p = section("probe")
        probe = (ProbeParams(p["xi"], p["include_self_factor"]) if p["enabled"] else None)
        oracle = OracleSettings(**section("oracle"))
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from None
    if oracle.modes < 1 or oracle.fock_cutoff < 1 or oracle.dt <= 0 or oracle.t_max <= 0:
        raise ConfigError("oracle settings need modes >= 1, fock_cutoff >= 1, dt > 0, t_max > 0")
    if not 1 <= oracle.path_steps <= MAX_PATH_STEPS:
        raise ConfigError(f"oracle.path_steps must lie in [1, {MAX_PATH_STEPS}]")
    if grid.dt * model.omega_c > 2:
        log.warning("dt * omega_c = %g > 2: bath memory is under-resolved",
                    grid.dt * model.omega_c)

    sweep = None
    if (values["sweep.param"] is None) != (values["sweep.values"] is None):
        raise ConfigError("sweep.param and sweep.values must be given together")
    if values["sweep.param"] is not None:
        name = values["sweep.param"]
        if name not in SWEEPABLE:
            raise ConfigError(f"sweep.param {name!r} is not a scalar parameter; "
                              f"choose one of {', '.join(SWEEPABLE)}")
        sweep = SweepSpec(name, tuple(values["sweep.values"]))
    window = values["analysis.lyapunov_window"]
    if window is not None and not window[1] > window[0]:
        raise ConfigError("analysis.lyapunov_window needs t_start < t_end")
    cfg = RunConfig(model, grid, comp, probe, sweep, Path(values["output_dir"]),
                    window, oracle)
    if sweep is not None:
        for v in sweep.values:
            point_config(cfg, v)  # validates each point
    return cfg


def parse_config(text: str) -> RunConfig:
    """Parse and validate a config document; missing keys take ``DEFAULTS``.

    Raises :class:`ConfigError` with line and column for syntax problems and
    with the violated condition for invalid values.
    """
    found = _read_pairs(text)
    values = {k: d for k, (d, _) in DEFAULTS.items()}
    values.update({k: v for k, (v, _) in found.items()})
    values["_given"] = tuple(found)
    return _build(values)


def point_config(cfg: RunConfig, value: float) -> RunConfig:
    """The single-run config of one sweep point."""
    section, name = cfg.sweep.param.split(".")
    kind = DEFAULTS[cfg.sweep.param][1]
    if kind != "float":
        if value != int(value):
            raise ConfigError(f"sweep value {value} for {cfg.sweep.param} must be an integer")
        value = int(value)
    try:
        if section == "probe":
            if cfg.probe is None:
                raise ValueError("cannot sweep probe.xi with the probe disabled")
            return dataclasses.replace(cfg, probe=dataclasses.replace(cfg.probe, xi=value),
                                       sweep=None)
        if section == "model" and name == "delta" and value <= 0:
            raise ValueError(f"tunneling delta must be > 0, got {value}")
        sub = dataclasses.replace(getattr(cfg, section), **{name: value})
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"sweep point {cfg.sweep.param}={value}: {exc}") from None
    return dataclasses.replace(cfg, **{section: sub}, sweep=None)


# ---------------------------------------------------------------- output

def _fmt(x: float) -> str:
    return f"{x:.17g}"


def emit_csv(series: TimeSeries, path, alpha: Optional[float] = None) -> None:
    """Write ``t,P,re_W,im_W,F,one_minus_F_scaled`` rows, 17 significant digits.

    When the scaled value is undefined (``alpha = 0``) the last column is left
    out and the header ends at ``F``.
    """
    if alpha is None:
        alpha = series.metadata["model"].alpha
    header = CSV_HEADER if alpha > 0 else CSV_HEADER[:-1]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for i in range(len(series)):
            row = [series.t[i], series.polarization[i], series.w[i].real, series.w[i].imag,
                   series.f[i], series.scaled[i]][:len(header)]
            writer.writerow([_fmt(float(x)) for x in row])


def read_csv(path) -> Dict[str, np.ndarray]:
    """Columns of a file written by :func:`emit_csv`."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    return {name: np.array([float(r[i]) for r in body]) for i, name in enumerate(header)}


def _point_name(cfg: RunConfig, value: Optional[float]) -> str:
    if value is None:
        return "series"
    return f"{cfg.sweep.param.split('.')[1]}_{value!r}"


def _run_point(cfg: RunConfig, name: str) -> dict:
    """Evolve one point and write its CSV; runs in a worker process."""
    out = cfg.output_dir
    plog = logging.getLogger(f"{__name__}.{name}")
    plog.propagate = False
    handler = logging.FileHandler(out / "logs" / f"{name}.log", mode="w")
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(message)s"))
    plog.handlers[:] = [handler]
    plog.setLevel(logging.INFO)
    try:
        plog.info("start %s", json.dumps(cfg.resolved()))
        try:
            series = evolve(cfg.model, cfg.grid, cfg.comp, cfg.probe)
        except (FloatingPointError, np.linalg.LinAlgError, ArithmeticError) as exc:
            plog.error("numerical failure: %s", exc)
            return {"name": name, "error": f"{type(exc).__name__}: {exc}"}
        emit_csv(series, out / f"{name}.csv")
        result = {
            "name": name,
            "csv": f"{name}.csv",
            "wall_time": series.metadata["wall_time"],
            "max_bond_dim": series.metadata["max_bond_dim"],
            "extrema": _extrema_rows(series),
            "lyapunov": None,
        }
        if cfg.lyapunov_window is not None and series.has_probe:
            try:
                fit = lyapunov_fit(series, cfg.lyapunov_window)
                result["lyapunov"] = dataclasses.asdict(fit)
            except ValueError as exc:
                result["lyapunov"] = {"error": str(exc)}
        plog.info("done in %.2fs, max bond %d", result["wall_time"], result["max_bond_dim"])
        return result
    finally:
        handler.close()


def _extrema_rows(series: TimeSeries) -> List[list]:
    if len(series) < 5:
        return []
    rep = extrema_locations(series)
    rows = []
    for label, kind, times in (("P", "min", rep.minima_p), ("P", "max", rep.maxima_p),
                               ("F", "min", rep.minima_f), ("F", "max", rep.maxima_f)):
        rows.extend([label, kind, n, t, rep.uncertainty] for n, t in enumerate(times, 1))
    return rows


class NumericalFailure(RuntimeError):
    pass


def run(cfg: RunConfig, workers: int = 1) -> dict:
    """Execute a single run or a sweep and write all outputs to ``cfg.output_dir``.

    Returns the manifest.  Raises :class:`NumericalFailure` naming the first
    failed point (after all points have finished).
    """
    out = cfg.output_dir
    (out / "logs").mkdir(parents=True, exist_ok=True)
    if cfg.sweep is None:
        jobs = [(cfg, _point_name(cfg, None))]
    else:
        jobs = [(point_config(cfg, v), _point_name(cfg, v)) for v in cfg.sweep.values]
    start = time.perf_counter()
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            results = list(pool.map(_run_point, *zip(*jobs)))
    else:
        results = [_run_point(c, n) for c, n in jobs]

    ok = [r for r in results if "error" not in r]
    with open(out / "extrema.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["point", "series", "kind", "n", "t", "uncertainty"])
        for r in ok:
            for series_name, kind, n, t, unc in r["extrema"]:
                writer.writerow([r["name"], series_name, kind, n, _fmt(t), _fmt(unc)])
    if cfg.lyapunov_window is not None:
        with open(out / "lyapunov.csv", "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["point", "t_start", "t_end", "lambda_q", "intercept",
                             "r_squared", "residual_rms"])
            for r in ok:
                fit = r["lyapunov"]
                if fit is None or "error" in fit:
                    continue
                writer.writerow([r["name"], _fmt(fit["window"][0]), _fmt(fit["window"][1]),
                                 _fmt(fit["lambda_q"]), _fmt(fit["intercept"]),
                                 _fmt(fit["r_squared"]), _fmt(fit["residual_rms"])])
    manifest = {
        "version": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "config": cfg.resolved(),
        "points": [{k: r[k] for k in r if k != "extrema"} for r in results],
        "wall_time": time.perf_counter() - start,
    }
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, default=str)
    failed = [r for r in results if "error" in r]
    if failed:
        raise NumericalFailure(f"point {failed[0]['name']}: {failed[0]['error']}")
    return manifest


# ---------------------------------------------------------------- oracle check

def _check(name: str, value: float, tol: float) -> dict:
    value = float(value)
    return {"check": name, "value": value, "tolerance": tol, "pass": bool(value < tol)}


def oracle_check(cfg: RunConfig) -> Tuple[bool, List[dict]]:
    """Cross-check TEMPO against the exact references.

    1. ``direct_path_sum`` vs TEMPO at ``epsilon = 0`` (``oracle.path_steps``).
    2. Exact evolution of a discretized bath vs TEMPO fed that bath's
       correlation function, full memory, ``t <= oracle.t_max``.
    """
    o = cfg.oracle
    model = cfg.model
    probe = cfg.probe or ProbeParams()
    checks = []

    grid = GridParams(cfg.grid.dt, o.path_steps)
    exact = direct_path_sum(model, grid)
    ts = evolve(model, grid, CompressionParams(0.0), probe)
    rho_err = float(np.abs(ts.rho[-1] - exact.rho).max())
    exact_f = direct_path_sum(model, grid, probe)
    f_err = abs(ts.one_minus_f[-1] - exact_f.one_minus_f)
    checks.append(_check("path_sum_rho", rho_err, o.tol_path))
    checks.append(_check("path_sum_one_minus_F", f_err, o.tol_path))

    bath = discretize_bath(model, o.modes, o.omega_max, o.fock_cutoff)
    n = max(1, int(round(o.t_max / o.dt)))
    ed = ed_evolve(bath, model, o.dt, n, xi=probe.xi)
    tempo = evolve(model, GridParams(o.dt, n), cfg.comp, probe, kernel=bath.kernel())
    dp = float(np.abs(tempo.polarization - ed.polarization).max())
    checks.append(_check("ed_polarization", dp, o.tol_p))
    if model.alpha > 0:
        rel = float(np.max(np.abs(tempo.one_minus_f - ed.one_minus_f) / ed.one_minus_f))
        checks.append(_check("ed_one_minus_F_relative", rel, o.tol_f))
    return all(c["pass"] for c in checks), checks


# ---------------------------------------------------------------- entry point

def _load(path: str, args) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    except UnicodeDecodeError as exc:
        raise ConfigError(f"config is not UTF-8: {exc}") from None
    cfg = parse_config(text)
    if args.output_dir is not None:
        cfg = dataclasses.replace(cfg, output_dir=Path(args.output_dir))
    if args.no_self_factor and cfg.probe is not None:
        cfg = dataclasses.replace(cfg, probe=dataclasses.replace(cfg.probe,
                                                                 include_self_factor=False))
    return cfg


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fotoc-tempo", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "run": "single evolution, CSV per run",
        "sweep": "evolution per value of sweep.param",
        "oracle-check": "compare TEMPO with the exact references",
        "kernels": "dump the influence coefficient table",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        p.add_argument("config", help="key = value config file")
        p.add_argument("--output-dir", default=None, help="overrides output_dir")
        p.add_argument("--workers", type=int, default=1, help="parallel sweep points")
        p.add_argument("--no-self-factor", action="store_true",
                       help="drop the path-independent probe factor")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    try:
        cfg = _load(args.config, args)
        if args.workers < 1:
            raise ConfigError("--workers must be >= 1")
        if args.command == "run" and cfg.sweep is not None:
            raise ConfigError("config defines a sweep; use the 'sweep' subcommand")
        if args.command == "sweep" and cfg.sweep is None:
            raise ConfigError("'sweep' needs sweep.param and sweep.values")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        if args.command in ("run", "sweep"):
            manifest = run(cfg, workers=args.workers)
            print(f"wrote {len(manifest['points'])} series to {cfg.output_dir}")
            return EXIT_OK
        if args.command == "kernels":
            cfg.output_dir.mkdir(parents=True, exist_ok=True)
            path = cfg.output_dir / "eta.csv"
            dump_eta_csv(eta_table(cfg.model, cfg.grid), path)
            print(f"wrote {path}")
            return EXIT_OK
        passed, checks = oracle_check(cfg)
        cfg.output_dir.mkdir(parents=True, exist_ok=True)
        with open(cfg.output_dir / "oracle.json", "w") as fh:
            json.dump({"pass": passed, "checks": checks}, fh, indent=2)
        for c in checks:
            status = "PASS" if c["pass"] else "FAIL"
            print(f"{status} {c['check']}: {c['value']:.3e} (tolerance {c['tolerance']:g})")
        return EXIT_OK if passed else EXIT_ORACLE
    except (NumericalFailure, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
