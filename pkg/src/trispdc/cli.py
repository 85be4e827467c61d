"""Command-line front end: strict key=value configs, scenario dispatch and CSV export.

Config files hold one ``key = value`` per line; ``#`` starts a comment and lists
are comma separated. Example::

    scenario = fig2-maxG
    cutoff = 8
    g0_values = 0.01, 0.05, 0.1
    beta_min = 1.0
    beta_max = 3.0
    beta_count = 30

Exit status is 0 when every convergence certificate passes, 1 when some result
is unconverged and 2 on invalid input.
"""
from __future__ import annotations

import argparse
import csv
import math
import sys as _sys
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .evolution import ColumnMoments, EvolutionConfig, relative_drift
from .experiments import RUNNERS, Scenario, SweepGrid, SweepResult, column_moments_for
from .fock import InvalidArgument, ModeSystem
from .model import ThermalSpec, Variant, thermal_weights
from .witness import witness_arrays

SWEEP_HEADER = ["g0", "beta_omega_a", "maxI1", "maxI2", "maxI3", "maxG", "t_argmax_G", "converged"]
SERIES_HEADER = ["t", "re_abc", "im_abc", "Na", "Nb", "Nc", "NbNc", "NaNc", "NaNb", "I1", "I2", "I3", "G"]


class ConfigError(ValueError):
    def __init__(self, message: str, source: str = "<config>", line: int = 0, col: int = 0):
        self.line, self.col = line, col
        where = f"{source}:{line}:{col}: " if line else f"{source}: "
        super().__init__(where + message)


@dataclass
class RunConfig:
    """Fully resolved run configuration; every field can be set from a config file."""

    scenario: Optional[str] = None
    # mode system
    cutoff: int = 8
    frequencies: tuple = (1.0, 2.0, 3.0)
    phases: tuple = (0.0, 0.0, 0.0)
    # single-trajectory Hamiltonian and initial state
    variant: str = Variant.RWA.value
    g0: float = 0.05
    theta: Optional[float] = None
    omega0: Optional[float] = None
    beta_omega_a: float = 2.7
    # time grid
    t_max: float = 50.0
    n_samples: int = 200
    dt: float = 0.002
    convergence_tol: float = 1e-3
    # sweep grid
    g0_values: Optional[tuple] = None
    g0_min: float = 0.001
    g0_max: float = 0.1
    g0_count: int = 30
    beta_values: Optional[tuple] = None
    beta_min: float = 1.0
    beta_max: float = 3.0
    beta_count: int = 30
    # harness
    certify: bool = True
    escalate: bool = False
    step_check: bool = True
    out: str = "out"
    workers: int = 1

    def mode_system(self) -> ModeSystem:
        return ModeSystem(tuple(self.frequencies), tuple(self.phases), self.cutoff)

    def grid(self, scenario: Scenario) -> SweepGrid:
        g0 = self.g0_values or tuple(np.logspace(math.log10(self.g0_min), math.log10(self.g0_max), self.g0_count))
        if self.beta_values:
            beta = self.beta_values
        elif scenario.is_landscape and not self._beta_grid_set:
            beta = None
        else:
            beta = tuple(np.linspace(self.beta_min, self.beta_max, self.beta_count))
        return SweepGrid(scenario, g0, beta, self.t_max, self.n_samples)

    _beta_grid_set: bool = field(default=False, repr=False)

    def resolved(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self) if not f.name.startswith("_")}


_LISTS = {"frequencies", "phases", "g0_values", "beta_values"}
_OPTIONAL = {"scenario", "theta", "omega0", "g0_values", "beta_values"}


def _convert(name: str, raw: str, default):
    if name in _LISTS:
        items = [x.strip() for x in raw.split(",") if x.strip()]
        if not items:
            raise ValueError("expected a comma-separated list of numbers")
        return tuple(float(x) for x in items)
    if name == "scenario":
        return Scenario(raw).value
    if name == "variant":
        return Variant(raw).value
    kind = type(default) if default is not None else float
    if kind is bool:
        low = raw.lower()
        if low in ("true", "yes", "1", "on"):
            return True
        if low in ("false", "no", "0", "off"):
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    if kind is int:
        return int(raw)
    if kind is str:
        return raw
    return float(raw)


def _check(cfg: RunConfig):
    cfg.mode_system()
    EvolutionConfig(cfg.t_max, cfg.n_samples, None, cfg.dt, cfg.convergence_tol)
    if cfg.workers < 1:
        raise InvalidArgument("workers must be >= 1")
    if cfg.g0 < 0:
        raise InvalidArgument("g0 must be non-negative")
    if not cfg.beta_omega_a > 0:
        raise InvalidArgument("beta_omega_a must be positive")
    if not cfg.convergence_tol > 0:
        raise InvalidArgument("convergence_tol must be positive")
    if cfg.g0_count < 1 or cfg.beta_count < 1:
        raise InvalidArgument("grid counts must be >= 1")
    if not (0 < cfg.g0_min <= cfg.g0_max) or not (0 < cfg.beta_min <= cfg.beta_max):
        raise InvalidArgument("grid bounds must satisfy 0 < min <= max")


def parse_config(text: str = "", source: str = "<config>", overrides: Optional[dict] = None) -> RunConfig:
    """Parse ``key = value`` lines into a validated RunConfig; ``overrides`` win over the file."""
    cfg = RunConfig()
    known = {f.name: f for f in fields(RunConfig) if not f.name.startswith("_")}
    seen = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0]
        if not body.strip():
            continue
        if "=" not in body:
            col = len(body) - len(body.lstrip()) + 1
            raise ConfigError("expected 'key = value'", source, lineno, col)
        key_part, value_part = body.split("=", 1)
        key = key_part.strip()
        key_col = len(key_part) - len(key_part.lstrip()) + 1
        if key not in known:
            raise ConfigError(f"unknown key {key!r}", source, lineno, key_col)
        if key in seen:
            raise ConfigError(f"duplicate key {key!r} (first set on line {seen[key]})", source, lineno, key_col)
        seen[key] = lineno
        raw = value_part.strip()
        value_col = len(key_part) + 2 + len(value_part) - len(value_part.lstrip())
        try:
            if raw.lower() in ("none", "") and key in _OPTIONAL:
                value = None
            else:
                value = _convert(key, raw, known[key].default)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {exc}", source, lineno, value_col) from None
        setattr(cfg, key, value)
    for key, value in (overrides or {}).items():
        if value is not None:
            setattr(cfg, key, value)
    cfg._beta_grid_set = any(k in seen for k in ("beta_values", "beta_min", "beta_max", "beta_count"))
    try:
        _check(cfg)
    except InvalidArgument as exc:
        raise ConfigError(str(exc), source) from None
    return cfg


def load_config(path: Optional[str], overrides: Optional[dict] = None) -> RunConfig:
    if path is None:
        return parse_config("", overrides=overrides)
    p = Path(path)
    if not p.is_file():
        raise ConfigError("config file not found", str(p))
    return parse_config(p.read_text(), str(p), overrides)


# ----------------------------------------------------------------------- output


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


def _write_rows(path: Path, header: Sequence[str], rows) -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])
    return path


def _series_values(t, abc, n, nn, I, G):
    return [t, abc.real, abc.imag, *n, *nn, *I, G]


def emit_csv(result, out_dir, name: Optional[str] = None) -> list[Path]:
    """Write a SweepResult or a time series (``Trajectory``-like) to CSV files in ``out_dir``."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    written = []
    if isinstance(result, SweepResult):
        stem = name or result.grid.scenario.value
        if result.grid.scenario.is_landscape:
            rows = (
                [r.g0, r.beta_omega_a, *_series_values(r.t, r.abc, r.n, r.nn, r.I, r.G), r.converged]
                for r in result.series
            )
            written.append(_write_rows(out / f"{stem}.csv", ["g0", "beta_omega_a", *SERIES_HEADER, "converged"], rows))
        else:
            rows = (
                [c.g0, c.beta_omega_a, *c.max_I, c.max_G, c.t_argmax_G, c.converged] for c in result.cells
            )
            written.append(_write_rows(out / f"{stem}.csv", SWEEP_HEADER, rows))
        return written
    # trajectory: anything with .times and .moments
    from .witness import evaluate

    rows = []
    for m in result.moments:
        r = evaluate(m)
        rows.append(_series_values(m.time, m.abc, m.n, m.nn, r.I, r.G))
    written.append(_write_rows(out / f"{name or 'trajectory'}.csv", SERIES_HEADER, rows))
    return written


def write_manifest(path, cfg: RunConfig, extra: Optional[dict] = None) -> Path:
    lines = [f"version = {__version__}"]
    items = dict(cfg.resolved())
    items.update(extra or {})
    for key, value in items.items():
        if isinstance(value, (tuple, list)):
            text = ", ".join(fmt(v) for v in value)
        elif value is None:
            text = "none"
        elif isinstance(value, (bool, int, float, np.floating, np.integer)):
            text = fmt(value)
        else:
            text = str(value)
        lines.append(f"{key} = {text}")
    Path(path).write_text("\n".join(lines) + "\n")
    return Path(path)


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


# ------------------------------------------------------------------ subcommands


@dataclass
class SeriesResult:
    """Time series of one trajectory, with its truncation check."""

    times: np.ndarray
    moments: list
    converged: bool
    drift: float


def run_evolve(cfg: RunConfig) -> SeriesResult:
    sys = cfg.mode_system()
    variant = Variant(cfg.variant)
    times = EvolutionConfig(cfg.t_max, cfg.n_samples, None, cfg.dt).times
    systems = [sys, sys.with_cutoff(sys.cutoff + 2)] if cfg.certify else [sys]
    if cfg.theta is not None or cfg.omega0 is not None:
        raise ConfigError("theta/omega0 overrides are only supported through the library API")
    cols = column_moments_for(variant, [cfg.g0], systems, times, cfg.dt)
    spec = ThermalSpec(cfg.beta_omega_a)

    def series(s: ModeSystem) -> tuple[list, np.ndarray]:
        cm: ColumnMoments = cols[(cfg.g0, s.cutoff)]
        p = thermal_weights(spec, s, tail_tol=cfg.convergence_tol)
        sets = cm.moment_sets(p)
        abc, n, nn, _ = cm.weighted(p)
        I, G = witness_arrays(np.abs(abc), n, nn)
        return sets, np.column_stack([I, G])

    sets, values = series(sys)
    drift = 0.0
    if cfg.certify:
        _, check = series(systems[-1])
        drift = relative_drift(values, check)
    return SeriesResult(times, sets, drift < cfg.convergence_tol, drift)


def _sweep(cfg: RunConfig, default: Scenario, allowed: Sequence[Scenario]) -> SweepResult:
    scenario = Scenario(cfg.scenario) if cfg.scenario else default
    if scenario not in allowed:
        raise ConfigError(f"scenario {scenario.value} is not valid here; choose from {[s.value for s in allowed]}")
    return RUNNERS[scenario](
        cfg.grid(scenario),
        sys=cfg.mode_system(),
        dt=cfg.dt,
        convergence_tol=cfg.convergence_tol,
        certify=cfg.certify,
        escalate=cfg.escalate,
        step_check=cfg.step_check,
        workers=cfg.workers,
    )


def selftest(verbose: bool = True) -> bool:
    """Quick oracle checks: commutators, perturbative triplet, Gaussian null and witness algebra."""
    from .evolution import evolve_static
    from .fock import embed, lowering_operator
    from .model import HamiltonianSpec, double_spdc_hamiltonian, rwa_hamiltonian, vacuum_state
    from .witness import MomentSet, witness_G

    checks = []
    for d in (2, 4, 7):
        a = lowering_operator(d).entries
        comm = a @ a.T - a.T @ a
        checks.append((f"commutator d={d}", np.allclose(comm[: d - 1, : d - 1], np.eye(d - 1), atol=1e-12)))

    sys = ModeSystem(cutoff=4)
    g0, t = 0.01, 2.0
    H = rwa_hamiltonian(HamiltonianSpec(Variant.RWA, g0), sys)
    m = evolve_static(H, vacuum_state(sys), EvolutionConfig(t_max=t, sample_times=(t,)), sys).moments[0]
    s = g0 * t / 2
    checks.append(("perturbative |<abc>|", abs(abs(m.abc) - s) <= 0.01 * s))
    checks.append(("perturbative G", abs(witness_G(m) - (s - 3 * s * s)) <= 0.05 * (s - 3 * s * s)))

    sys6 = ModeSystem(cutoff=6)
    Hd = double_spdc_hamiltonian(HamiltonianSpec(Variant.DOUBLE, 0.1), sys6)
    rho0 = thermal_weights(ThermalSpec(2.0), sys6, tail_tol=1e-3)
    from .fock import DensityMatrix

    traj = evolve_static(Hd, DensityMatrix.from_diagonal(rho0), EvolutionConfig(t_max=10, n_samples=5), sys6)
    checks.append(("gaussian null <abc>", max(abs(x.abc) for x in traj.moments) < 1e-10))
    checks.append(("gaussian null G", max(witness_G(x) for x in traj.moments) < 1e-10))

    eps = 0.1
    ms = MomentSet(eps * math.sqrt(1 - eps**2), (eps**2,) * 3, (eps**2,) * 3)
    checks.append(("triplet G", abs(witness_G(ms) - 0.0695) < 1e-4))
    ok = all(passed for _, passed in checks)
    if verbose:
        for name, passed in checks:
            print(f"{'PASS' if passed else 'FAIL'} {name}")
    return ok


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="trispdc", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "evolve": "single-trajectory time series",
        "sweep": "max-over-time witnesses on a (g0, beta) grid (fig1-maxI, fig2-maxG)",
        "landscape": "G over (t, g0) at fixed temperature (fig3-rwa-G, fig4-full-G)",
        "baseline": "double two-mode SPDC comparison grid",
        "selftest": "run the built-in oracle checks",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", help="key=value config file")
        p.add_argument("--out", help="output directory")
        p.add_argument("--workers", type=int, help="parallel worker processes")
        p.add_argument("--cutoff", type=int, help="Fock cutoff per mode")
        p.add_argument("--dt", type=float, help="midpoint step for the full Hamiltonian")
        if name in ("sweep", "landscape"):
            p.add_argument("--scenario", help="scenario name")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {"out": args.out, "workers": args.workers, "cutoff": args.cutoff, "dt": args.dt}
    if getattr(args, "scenario", None):
        overrides["scenario"] = args.scenario
    try:
        if args.command == "selftest":
            return 0 if selftest() else 1
        cfg = load_config(args.config, overrides)
        out = Path(cfg.out)
        if args.command == "evolve":
            res = run_evolve(cfg)
            files = emit_csv(res, out, "evolve")
            extra = {"converged": res.converged, "max_relative_drift": res.drift}
            ok = res.converged
        else:
            default, allowed = {
                "sweep": (Scenario.FIG2, (Scenario.FIG1, Scenario.FIG2)),
                "landscape": (Scenario.FIG3, (Scenario.FIG3, Scenario.FIG4)),
                "baseline": (Scenario.DOUBLE, (Scenario.DOUBLE,)),
            }[args.command]
            res = _sweep(cfg, default, allowed)
            files = emit_csv(res, out)
            extra = {
                "resolved_scenario": res.grid.scenario.value,
                "variant": res.variant.value,
                "cells_unconverged": sum(not c.converged for c in res.cells),
                "series_unconverged": sum(not r.converged for r in res.series),
                "step_check_drift": res.step_check.drift if res.step_check else None,
                "all_converged": res.all_converged,
            }
            ok = res.all_converged
        write_manifest(out / "manifest.txt", cfg, extra)
    except (ConfigError, InvalidArgument, ValueError) as exc:
        print(f"error: {exc}", file=_sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=_sys.stderr)
        return 2
    for f in files:
        print(f)
    if not ok:
        print("warning: some results did not pass convergence certification", file=_sys.stderr)
    return 0 if ok else 1


if __name__ == "__main__":
    raise SystemExit(main())
