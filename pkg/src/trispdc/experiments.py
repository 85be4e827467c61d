"""Scenario presets and the (g0, beta) sweep harness.

Every scenario reduces to per-coupling ``ColumnMoments`` (see the evolution
module): one propagation per g0 and cutoff, after which any initial temperature
is a weighted sum. Grid cells are therefore cheap once the columns exist, and a
``MomentCache`` lets several scenarios share the same propagations.

Truncation is certified per cell by repeating the propagation at cutoff + 2;
cells that fail carry ``converged = False`` instead of raising.
"""
from __future__ import annotations

import enum
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .evolution import (
    ColumnMoments,
    ConvergenceCertificate,
    EvolutionConfig,
    relative_drift,
    static_column_moments,
    timedep_column_moments,
)
from .fock import HermitianEigensystem, InvalidArgument, ModeSystem
from .model import (
    HamiltonianSpec,
    ThermalSpec,
    Variant,
    double_spdc_hamiltonian,
    rwa_hamiltonian,
    thermal_weights,
)
from .witness import witness_arrays

VALIDATED_MAX_G0 = 0.1
VALIDATED_MIN_BETA = 1.0
LANDSCAPE_BETA = 2.7


class Scenario(str, enum.Enum):
    FIG1 = "fig1-maxI"
    FIG2 = "fig2-maxG"
    FIG3 = "fig3-rwa-G"
    FIG4 = "fig4-full-G"
    DOUBLE = "double-spdc-G"

    @property
    def variant(self) -> Variant:
        return {
            Scenario.FIG1: Variant.FULL,
            Scenario.FIG2: Variant.FULL,
            Scenario.FIG3: Variant.RWA,
            Scenario.FIG4: Variant.FULL,
            Scenario.DOUBLE: Variant.DOUBLE,
        }[self]

    @property
    def is_landscape(self) -> bool:
        return self in (Scenario.FIG3, Scenario.FIG4)


def default_g0_values(n: int = 30) -> tuple[float, ...]:
    return tuple(float(x) for x in np.logspace(-3, -1, n))


def default_beta_values(n: int = 30) -> tuple[float, ...]:
    return tuple(float(x) for x in np.linspace(1.0, 3.0, n))


@dataclass(frozen=True)
class SweepGrid:
    """Coupling/temperature grid for one scenario (``beta_values`` are beta*omega_a).

    Landscape scenarios default to the single temperature beta*omega_a = 2.7.
    """

    scenario: Scenario
    g0_values: Optional[tuple[float, ...]] = None
    beta_values: Optional[tuple[float, ...]] = None
    t_max: float = 50.0
    n_samples: int = 200

    def __post_init__(self):
        object.__setattr__(self, "scenario", Scenario(self.scenario))
        g0 = default_g0_values() if self.g0_values is None else tuple(float(x) for x in self.g0_values)
        if self.beta_values is not None:
            beta = tuple(float(x) for x in self.beta_values)
        elif self.scenario.is_landscape:
            beta = (LANDSCAPE_BETA,)
        else:
            beta = default_beta_values()
        for name, values in (("g0_values", g0), ("beta_values", beta)):
            if not values:
                raise InvalidArgument(f"{name} must be nonempty")
            if any(b <= a for a, b in zip(values, values[1:])):
                raise InvalidArgument(f"{name} must be strictly increasing")
        if g0[0] < 0:
            raise InvalidArgument("g0 must be non-negative")
        if beta[0] <= 0:
            raise InvalidArgument("beta*omega_a must be positive")
        if g0[-1] > VALIDATED_MAX_G0 or beta[0] < VALIDATED_MIN_BETA:
            warnings.warn(
                f"grid leaves the validated regime g0 <= {VALIDATED_MAX_G0}, beta*omega_a >= {VALIDATED_MIN_BETA}",
                stacklevel=3,
            )
        object.__setattr__(self, "g0_values", g0)
        object.__setattr__(self, "beta_values", beta)

    def evolution_config(self, dt: float = 0.002, convergence_tol: float = 1e-3) -> EvolutionConfig:
        return EvolutionConfig(self.t_max, self.n_samples, None, dt, convergence_tol)


@dataclass(frozen=True)
class CellResult:
    g0: float
    beta_omega_a: float
    max_I: tuple[float, float, float]
    max_G: float
    t_argmax_G: float
    t_argmax_I: tuple[float, float, float]
    certificate: ConvergenceCertificate
    max_abs_abc: float = 0.0
    # per-witness relative change (I1, I2, I3, G) against the check cutoff
    drifts: tuple = (0.0, 0.0, 0.0, 0.0)

    @property
    def converged(self) -> bool:
        return self.certificate.passed


@dataclass(frozen=True)
class SeriesRow:
    """One sample of a time series: moments and witnesses at (g0, beta, t)."""

    g0: float
    beta_omega_a: float
    t: float
    abc: complex
    n: tuple[float, float, float]
    nn: tuple[float, float, float]
    I: tuple[float, float, float]
    G: float
    converged: bool = True


@dataclass(frozen=True)
class StepCheck:
    g0: float
    dt: float
    drift: float
    passed: bool


@dataclass
class SweepResult:
    grid: SweepGrid
    variant: Variant
    cutoff: int
    dt: float
    cells: list[CellResult]
    series: list[SeriesRow] = field(default_factory=list)
    step_check: Optional[StepCheck] = None
    provenance: dict = field(default_factory=dict)

    def cell(self, g0: float, beta: float) -> CellResult:
        for c in self.cells:
            if math.isclose(c.g0, g0, rel_tol=1e-12) and math.isclose(c.beta_omega_a, beta, rel_tol=1e-12):
                return c
        raise KeyError((g0, beta))

    def table(self, attr: str = "max_G") -> np.ndarray:
        """Cell values as an array indexed [g0, beta]; ``attr`` may be max_G or max_I1..3."""
        out = np.empty((len(self.grid.g0_values), len(self.grid.beta_values)))
        nb = len(self.grid.beta_values)
        for k, c in enumerate(self.cells):
            out[k // nb, k % nb] = c.max_G if attr == "max_G" else c.max_I[int(attr[-1]) - 1]
        return out

    def series_array(self, g0: float, attr: str = "G") -> tuple[np.ndarray, np.ndarray]:
        rows = [r for r in self.series if math.isclose(r.g0, g0, rel_tol=1e-12)]
        return np.array([r.t for r in rows]), np.array([getattr(r, attr) for r in rows])

    @property
    def all_converged(self) -> bool:
        ok = all(c.converged for c in self.cells) and all(r.converged for r in self.series)
        return ok and (self.step_check is None or self.step_check.passed)


# ------------------------------------------------------------- moment engine


def _columns(variant: Variant, g0: float, sys: ModeSystem, times: tuple[float, ...], dt: float) -> ColumnMoments:
    if variant == Variant.FULL:
        return timedep_column_moments(HamiltonianSpec(variant, g0), sys, times, dt)
    # both are linear in g0: diagonalize once at unit coupling and rescale time
    eig = _unit_eigensystem(variant, sys)
    return static_column_moments(eig, sys, times, time_scale=g0)


_EIG_CACHE: dict = {}


def _unit_eigensystem(variant: Variant, sys: ModeSystem) -> HermitianEigensystem:
    key = (variant, sys)
    if key not in _EIG_CACHE:
        builder = rwa_hamiltonian if variant == Variant.RWA else double_spdc_hamiltonian
        _EIG_CACHE[key] = HermitianEigensystem(builder(HamiltonianSpec(variant, 1.0), sys))
    return _EIG_CACHE[key]


class MomentCache:
    """Column moments keyed by (variant, g0, system, sample times, dt); shareable across scenarios."""

    def __init__(self):
        self._store: dict = {}

    def key(self, variant, g0, sys, times, dt):
        return (Variant(variant), float(g0), sys, tuple(float(t) for t in times), float(dt) if variant == Variant.FULL else None)

    def get(self, variant, g0, sys, times, dt) -> Optional[ColumnMoments]:
        return self._store.get(self.key(variant, g0, sys, times, dt))

    def put(self, variant, g0, sys, times, dt, value: ColumnMoments):
        self._store[self.key(variant, g0, sys, times, dt)] = value

    def __len__(self):
        return len(self._store)


def _task(args):
    variant, g0, sys, times, dt = args
    return _columns(variant, g0, sys, times, dt)


def column_moments_for(
    variant: Variant,
    g0_values: Sequence[float],
    systems: Sequence[ModeSystem],
    times: Sequence[float],
    dt: float,
    cache: Optional[MomentCache] = None,
    workers: int = 1,
) -> dict:
    """Column moments for every (g0, system) pair, computed in parallel when ``workers`` > 1."""
    cache = MomentCache() if cache is None else cache
    times = tuple(float(t) for t in times)
    jobs = [(variant, g0, s, times, dt) for g0 in g0_values for s in systems]
    missing = [j for j in jobs if cache.get(*j) is None]
    if workers > 1 and len(missing) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_task, missing))
    else:
        results = [_task(j) for j in missing]
    for j, cm in zip(missing, results):
        cache.put(*j, cm)
    return {(j[1], j[2].cutoff): cache.get(*j) for j in jobs}


# ----------------------------------------------------------------- cell logic


def _witness_series(cm: ColumnMoments, p: np.ndarray):
    abc, n, nn, _ = cm.weighted(p)
    I, G = witness_arrays(np.abs(abc), n, nn)
    return abc, n, nn, I, G


def _weights(beta: float, sys: ModeSystem, tol: float) -> np.ndarray:
    # the tail guard is matched to the convergence tolerance; certification covers the rest
    return thermal_weights(ThermalSpec(beta), sys, tail_tol=tol)


def _sweep_cells(g0, betas, cm, cm_check, sys, sys_check, tol, dt, step_drift=None):
    cells = []
    for beta in betas:
        abc, _, _, I, G = _witness_series(cm, _weights(beta, sys, tol))
        values = np.array([*I.max(axis=0), G.max()])
        if cm_check is not None:
            _, _, _, I2, G2 = _witness_series(cm_check, _weights(beta, sys_check, tol))
            check = np.array([*I2.max(axis=0), G2.max()])
            drifts = np.abs(values - check) / np.maximum(1.0, np.abs(values))
        else:
            drifts = np.zeros(4)
        drift = float(drifts.max())
        cert = ConvergenceCertificate(sys.cutoff, dt, drift, drift < tol, step_drift)
        cells.append(
            CellResult(
                g0,
                beta,
                tuple(float(x) for x in values[:3]),
                float(values[3]),
                float(cm.times[int(np.argmax(G))]),
                tuple(float(cm.times[k]) for k in np.argmax(I, axis=0)),
                cert,
                float(np.abs(abc).max()),
                tuple(float(x) for x in drifts),
            )
        )
    return cells


def _series_rows(g0, beta, cm, cm_check, sys, sys_check, tol):
    abc, n, nn, I, G = _witness_series(cm, _weights(beta, sys, tol))
    ok = np.ones(len(cm.times), dtype=bool)
    if cm_check is not None:
        _, _, _, I2, G2 = _witness_series(cm_check, _weights(beta, sys_check, tol))
        v1 = np.column_stack([I, G])
        v2 = np.column_stack([I2, G2])
        ok = np.all(np.abs(v1 - v2) < tol * np.maximum(1.0, np.abs(v1)), axis=1)
    return [
        SeriesRow(
            g0, beta, float(t), complex(abc[j]), tuple(n[j]), tuple(nn[j]), tuple(I[j]), float(G[j]), bool(ok[j])
        )
        for j, t in enumerate(cm.times)
    ]


def run_scenario(
    grid: SweepGrid,
    sys: Optional[ModeSystem] = None,
    dt: float = 0.002,
    convergence_tol: float = 1e-3,
    certify: bool = True,
    escalate: bool = False,
    step_check: bool = True,
    workers: int = 1,
    cache: Optional[MomentCache] = None,
) -> SweepResult:
    """Evaluate every grid cell of ``grid.scenario``.

    With ``certify`` each g0 is also propagated at cutoff + 2 and cells whose
    witnesses move by more than ``convergence_tol * max(1, |value|)`` are marked
    unconverged; ``escalate`` retries those g0 once more at cutoff + 4. For the
    full Hamiltonian ``step_check`` reruns the largest g0 at dt/2.
    """
    sys = ModeSystem() if sys is None else sys
    variant = grid.scenario.variant
    cfg = grid.evolution_config(dt, convergence_tol)
    if variant == Variant.FULL:
        bound = cfg.max_stable_dt(HamiltonianSpec(variant, 0.0), sys)
        if dt > bound:
            raise InvalidArgument(f"dt = {dt} exceeds the stability bound {bound:.4g}")
    times = tuple(cfg.times)
    cache = MomentCache() if cache is None else cache
    systems = [sys, sys.with_cutoff(sys.cutoff + 2)] if certify else [sys]
    cols = column_moments_for(variant, grid.g0_values, systems, times, dt, cache, workers)

    step = None
    step_cm = None
    if step_check and variant == Variant.FULL:
        g_big = grid.g0_values[-1]
        step_cm = column_moments_for(variant, [g_big], [sys], times, dt / 2, cache, 1)[(g_big, sys.cutoff)]

    cells, series = [], []
    for g0 in grid.g0_values:
        cm = cols[(g0, sys.cutoff)]
        check_sys = systems[-1]
        cm_check = cols[(g0, check_sys.cutoff)] if certify else None
        step_drift = None
        if step_cm is not None and g0 == grid.g0_values[-1]:
            step_drift = max(
                relative_drift(_witness_series(cm, w)[4], _witness_series(step_cm, w)[4])
                for w in (_weights(b, sys, convergence_tol) for b in grid.beta_values)
            )
            step = StepCheck(g0, dt, step_drift, step_drift < convergence_tol)
        row_cells = _sweep_cells(
            g0, grid.beta_values, cm, cm_check, sys, check_sys, convergence_tol, dt if variant == Variant.FULL else None, step_drift
        )
        if certify and escalate and not all(c.converged for c in row_cells):
            hi = sys.with_cutoff(sys.cutoff + 4)
            cm_hi = column_moments_for(variant, [g0], [hi], times, dt, cache, 1)[(g0, hi.cutoff)]
            retry = _sweep_cells(
                g0, grid.beta_values, cm_check, cm_hi, check_sys, hi, convergence_tol, row_cells[0].certificate.dt_used, step_drift
            )
            row_cells = [r if not c.converged else c for c, r in zip(row_cells, retry)]
        cells.extend(row_cells)
        if grid.scenario.is_landscape:
            for beta in grid.beta_values:
                series.extend(_series_rows(g0, beta, cm, cm_check, sys, check_sys, convergence_tol))

    provenance = {
        "version": __version__,
        "scenario": grid.scenario.value,
        "variant": variant.value,
        "frequencies": sys.frequencies,
        "phases": sys.phases,
        "cutoff": sys.cutoff,
        "dt": dt,
        "convergence_tol": convergence_tol,
        "certify": certify,
        "escalate": escalate,
        **{k: v for k, v in asdict(grid).items() if k != "scenario"},
    }
    return SweepResult(grid, variant, sys.cutoff, dt, cells, series, step, provenance)


def _preset(scenario: Scenario):
    def run(grid: Optional[SweepGrid] = None, **kwargs) -> SweepResult:
        grid = SweepGrid(scenario) if grid is None else grid
        if grid.scenario != scenario:
            raise InvalidArgument(f"expected a {scenario.value} grid, got {grid.scenario.value}")
        return run_scenario(grid, **kwargs)

    run.__name__ = f"run_{scenario.name.lower()}"
    run.__doc__ = f"Run the {scenario.value} scenario ({scenario.variant.value} dynamics)."
    return run


run_fig1 = _preset(Scenario.FIG1)
run_fig2 = _preset(Scenario.FIG2)
run_fig3 = _preset(Scenario.FIG3)
run_fig4 = _preset(Scenario.FIG4)
run_double_spdc = _preset(Scenario.DOUBLE)
run_double_spdc.__name__ = "run_double_spdc"

RUNNERS = {
    Scenario.FIG1: run_fig1,
    Scenario.FIG2: run_fig2,
    Scenario.FIG3: run_fig3,
    Scenario.FIG4: run_fig4,
    Scenario.DOUBLE: run_double_spdc,
}
