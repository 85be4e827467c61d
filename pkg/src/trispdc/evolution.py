"""Unitary propagation of three-mode states and convergence certification.

Two propagators share one block structure:

* ``HermitianEigensystem`` (fock module) for time-independent Hamiltonians; a
  single eigendecomposition serves every sample time.
* ``InteractionPicturePropagator`` for the full Hamiltonian, stepped with the
  exponential midpoint rule U_k = exp(-i H(t_k + dt/2) dt).

Fock-diagonal initial states (thermal states) are handled as ensembles: every
basis state |n> is propagated as a column of U(t) and per-column expectation
values <n|U^+ O U|n> are stored in ``ColumnMoments``. Moments of any diagonal
initial state are then a weighted sum, so one propagation serves a whole grid
of temperatures.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator, Optional, Sequence

import numpy as np

from .fock import (
    DensityMatrix,
    HermitianEigensystem,
    InvalidArgument,
    ModeSystem,
    OperatorMatrix,
    assemble_blocks,
    block_groups,
    gather_blocks,
    hermitian_propagator,
)
from .model import (
    HamiltonianSpec,
    Variant,
    full_hamiltonian_at,
    hamiltonian_period,
    quadrature_product,
)
from .witness import PAIRS, MomentSet, WitnessReport, moments

# Stored propagators (bytes) above which periodic evolution recomputes instead of caching.
PROPAGATOR_MEMORY_BUDGET = 1.5e9


class EvolutionError(RuntimeError):
    """A unitary-evolution invariant (trace, purity) was violated."""


class StepConvergenceError(RuntimeError):
    def __init__(self, coarse, fine, drift: float, tol: float):
        self.coarse = coarse
        self.fine = fine
        self.drift = drift
        super().__init__(f"step halving changed the final state by {drift:.3e} > tol {tol:.1e}")


class TruncationError(RuntimeError):
    def __init__(self, values_by_cutoff: dict, drift: float, tol: float):
        self.values_by_cutoff = values_by_cutoff
        self.drift = drift
        super().__init__(
            f"witnesses not converged in cutoff {sorted(values_by_cutoff)}: drift {drift:.3e} > tol {tol:.1e}"
        )


@dataclass(frozen=True)
class EvolutionConfig:
    """Time grid and numerical tolerances (times in units of 1/omega_a)."""

    t_max: float = 50.0
    n_samples: int = 200
    sample_times: Optional[tuple[float, ...]] = None
    dt: float = 0.002
    convergence_tol: float = 1e-3

    def __post_init__(self):
        if not self.t_max > 0:
            raise InvalidArgument(f"t_max must be positive, got {self.t_max}")
        if not self.dt > 0:
            raise InvalidArgument(f"dt must be positive, got {self.dt}")
        if self.sample_times is not None:
            ts = tuple(float(t) for t in self.sample_times)
            if any(b < a for a, b in zip(ts, ts[1:])):
                raise InvalidArgument("sample_times must be sorted")
            if ts and (ts[0] < 0 or ts[-1] > self.t_max + 1e-12):
                raise InvalidArgument("sample_times must lie in [0, t_max]")
            object.__setattr__(self, "sample_times", ts)
        elif self.n_samples < 1:
            raise InvalidArgument("n_samples must be >= 1")

    @property
    def times(self) -> np.ndarray:
        if self.sample_times is not None:
            return np.array(self.sample_times, dtype=float)
        return self.t_max * np.arange(1, self.n_samples + 1) / self.n_samples

    def max_stable_dt(self, hspec: HamiltonianSpec, sys: ModeSystem) -> float:
        """Twenty steps per period of the fastest phase 2*omega0."""
        return (2 * math.pi / (2 * hspec.pump_frequency(sys))) / 20


@dataclass(frozen=True)
class ConvergenceCertificate:
    cutoff_used: int
    dt_used: Optional[float]
    max_relative_drift: float
    passed: bool = True
    step_drift: Optional[float] = None


@dataclass
class Trajectory:
    times: np.ndarray
    moments: list[MomentSet]
    states: Optional[list[DensityMatrix]] = None
    certificate: Optional[ConvergenceCertificate] = None

    def reports(self) -> list[WitnessReport]:
        from .witness import evaluate

        return [evaluate(m, self.certificate) for m in self.moments]


def relative_drift(reference, other) -> float:
    """max |reference - other| / max(1, |reference|), elementwise."""
    reference = np.asarray(reference, dtype=float)
    other = np.asarray(other, dtype=float)
    if reference.size == 0:
        return 0.0
    return float(np.max(np.abs(reference - other) / np.maximum(1.0, np.abs(reference))))


# ----------------------------------------------------------------- propagators


class InteractionPicturePropagator:
    """Exponential-midpoint propagator for the full interaction-picture Hamiltonian.

    H(t) = g0 cos(omega0 t) R(t) V R(t)^+ with R(t) = exp(i H0 t) diagonal and
    V = prod_i (e^{i theta_i} a_i + h.c.) fixed, so each midpoint exponential is
    R W exp(-i g0 cos(omega0 t_m) dt Lambda) W^+ R^+ with V = W Lambda W^+. Carrying
    the state in the rotating eigenbasis of V makes every step a single matrix
    product. When H(t) is periodic the propagator over one period is reused:
    U(k P + tau) = U(tau) U(P)^k.
    """

    def __init__(self, hspec: HamiltonianSpec, sys: ModeSystem, dt: float, use_period: bool = True):
        if hspec.variant != Variant.FULL:
            raise InvalidArgument(f"expected a {Variant.FULL.value} spec, got {hspec.variant.value}")
        if not dt > 0:
            raise InvalidArgument(f"dt must be positive, got {dt}")
        self.hspec = hspec
        self.sys = sys
        self.dt = float(dt)
        self.g0 = float(hspec.g0)
        self.omega0 = hspec.pump_frequency(sys)
        self.period = hamiltonian_period(hspec, sys) if use_period else None
        V = quadrature_product(sys).entries
        energies = sys.free_energies.astype(float)
        self.groups = block_groups(V != 0)
        self._lam, self._W, self._Wh, self._E = [], [], [], []
        for idx in self.groups:
            lam, W = np.linalg.eigh(gather_blocks(V, idx))
            self._lam.append(lam)
            self._W.append(W)
            self._Wh.append(W.conj().swapaxes(-1, -2))
            self._E.append(energies[idx])
        self._M = [self._free_in_eigenbasis(i, self.dt) for i in range(len(self.groups))]

    def _free_in_eigenbasis(self, i: int, x: float) -> np.ndarray:
        """W^+ exp(-i H0 x) W for block group i."""
        phase = np.exp(-1j * self._E[i] * x)
        return (self._Wh[i] * phase[:, None, :]) @ self._W[i]

    def _kick(self, i: int, t_mid: float, step: float) -> np.ndarray:
        return np.exp(-1j * self.g0 * math.cos(self.omega0 * t_mid) * step * self._lam[i])

    def _run(self, targets: Sequence[float]) -> Iterator[tuple[float, list[np.ndarray]]]:
        """Step from 0 through the sorted ``targets`` and yield U(target) blocks."""
        dt = self.dt
        ngroups = len(self.groups)
        # T_k = M_{dt/2} W^+ R(t_k)^+ U(t_k); at t = 0 this is M_{dt/2} W^+
        T = [self._free_in_eigenbasis(i, dt / 2) @ self._Wh[i] for i in range(ngroups)]
        k = 0
        for tau in targets:
            while (k + 1) * dt <= tau + 1e-12 * max(1.0, tau):
                t_mid = (k + 0.5) * dt
                for i in range(ngroups):
                    T[i] = self._M[i] @ (self._kick(i, t_mid, dt)[..., None] * T[i])
                k += 1
            t_k = k * dt
            delta = max(tau - t_k, 0.0)
            blocks = []
            for i in range(ngroups):
                # U(t_k + delta) = R(t_k + delta/2) W D(delta) M_{(delta - dt)/2} T_k
                Y = self._free_in_eigenbasis(i, (delta - dt) / 2) @ T[i]
                Y = self._W[i] @ (self._kick(i, t_k + delta / 2, delta)[..., None] * Y)
                rot = np.exp(1j * self._E[i] * (t_k + delta / 2))
                blocks.append(rot[..., None] * Y)
            yield tau, blocks

    def block_propagators(self, times: Sequence[float]) -> Iterator[tuple[float, list[np.ndarray]]]:
        """Yield ``(t, [U block stack per group])`` for each requested time, in the given order."""
        times = [float(t) for t in times]
        if any(t < 0 for t in times):
            raise InvalidArgument("times must be non-negative")
        P = self.period
        if P is None or not times or max(times) < P:
            cache = dict(self._run(sorted(set(times))))
            for t in times:
                yield t, cache[t]
            return
        split = []
        for t in times:
            k = int(math.floor(t / P + 1e-12))
            tau = t - k * P
            if tau < 0:
                tau = 0.0
            split.append((k, round(tau, 12)))
        offsets = sorted({tau for _, tau in split} | {P})
        item_bytes = sum(idx.shape[0] * idx.shape[1] ** 2 * 16 for idx in self.groups)
        if item_bytes * len(offsets) <= PROPAGATOR_MEMORY_BUDGET:
            stored = dict(self._run(offsets))
            UP = stored[P]
            lookup = stored.__getitem__
        else:
            UP = dict(self._run([P]))[P]
            lookup = None
        powers = [[np.broadcast_to(np.eye(idx.shape[1]), (idx.shape[0], idx.shape[1], idx.shape[1])) for idx in self.groups]]
        for _ in range(max(k for k, _ in split)):
            powers.append([u @ p for u, p in zip(UP, powers[-1])])
        if lookup is None:
            # low-memory path: regenerate offsets in sorted order, emit in that order
            by_offset: dict[float, list[int]] = {}
            for j, (_, tau) in enumerate(split):
                by_offset.setdefault(tau, []).append(j)
            results = {}
            for tau, blocks in self._run(sorted(by_offset)):
                for j in by_offset[tau]:
                    k = split[j][0]
                    results[j] = [b @ p for b, p in zip(blocks, powers[k])]
            for j, t in enumerate(times):
                yield t, results.pop(j)
            return
        for t, (k, tau) in zip(times, split):
            yield t, [b @ p for b, p in zip(lookup(tau), powers[k])]

    def propagator(self, t: float) -> np.ndarray:
        (_, blocks), = self.block_propagators([t])
        return assemble_blocks(self.groups, blocks, self.sys.dim)


def midpoint_step(hspec: HamiltonianSpec, sys: ModeSystem, t: float, dt: float) -> OperatorMatrix:
    """Single step exp(-i H(t + dt/2) dt) built directly from the full Hamiltonian matrix."""
    return hermitian_propagator(full_hamiltonian_at(hspec, sys, t + dt / 2), dt)


# ------------------------------------------------------------- column moments


@dataclass(frozen=True, eq=False)
class ColumnMoments:
    """Per-basis-state expectation values <n|U(t)^+ O U(t)|n> at each sample time.

    Shapes: ``abc`` (T, D) complex, ``n`` and ``nn`` (T, 3, D), ``nnn`` (T, D).
    """

    times: np.ndarray
    abc: np.ndarray
    n: np.ndarray
    nn: np.ndarray
    nnn: np.ndarray
    cutoff: int

    def weighted(self, weights: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """(<abc>, <N_i>, <N_jN_k>, <N_aN_bN_c>) time series for a diagonal initial state."""
        p = np.asarray(weights, dtype=float)
        return self.abc @ p, self.n @ p, self.nn @ p, self.nnn @ p

    def moment_sets(self, weights: np.ndarray) -> list[MomentSet]:
        abc, n, nn, nnn = self.weighted(weights)
        return [MomentSet(abc[j], n[j], nn[j], float(t), float(nnn[j])) for j, t in enumerate(self.times)]


class _ColumnEvaluator:
    def __init__(self, sys: ModeSystem, groups: list[np.ndarray]):
        self.sys = sys
        self.groups = groups
        occ = sys.occupations.astype(float)
        d = sys.cutoff
        self._occ = [occ[idx] for idx in groups]
        self._nn = [np.stack([o[..., j] * o[..., k] for j, k in PAIRS], axis=-1) for o in self._occ]
        self._nnn = [o.prod(axis=-1) for o in self._occ]
        # abc maps |m + (1,1,1)> to sqrt((m_a+1)(m_b+1)(m_c+1)) |m>; record the source row within the block
        self._src, self._coef = [], []
        for idx, o in zip(groups, self._occ):
            local = {int(g): (b, r) for b, row in enumerate(idx) for r, g in enumerate(row)}
            src = np.zeros(idx.shape, dtype=int)
            coef = np.zeros(idx.shape)
            for b, row in enumerate(idx):
                for r, g in enumerate(row):
                    na, nb, nc = sys.occupations[g]
                    if max(na, nb, nc) + 1 >= d:
                        continue
                    hit = local.get(sys.index(na + 1, nb + 1, nc + 1))
                    if hit is not None and hit[0] == b:
                        src[b, r] = hit[1]
                        coef[b, r] = math.sqrt((na + 1) * (nb + 1) * (nc + 1))
            self._src.append(src)
            self._coef.append(coef)

    def __call__(self, blocks: list[np.ndarray]):
        D = self.sys.dim
        abc = np.zeros(D, dtype=complex)
        n = np.zeros((3, D))
        nn = np.zeros((3, D))
        nnn = np.zeros(D)
        for idx, U, occ, nnv, n3, src, coef in zip(
            self.groups, blocks, self._occ, self._nn, self._nnn, self._src, self._coef
        ):
            P = np.abs(U) ** 2
            n[:, idx] = np.einsum("bmn,bmi->ibn", P, occ)
            nn[:, idx] = np.einsum("bmn,bmi->ibn", P, nnv)
            nnn[idx] = np.einsum("bmn,bm->bn", P, n3)
            raised = np.take_along_axis(U, src[..., None], axis=1) * coef[..., None]
            abc[idx] = np.einsum("bmn,bmn->bn", U.conj(), raised)
        return abc, n, nn, nnn


def _collect(sys: ModeSystem, groups, stream: Iterable[tuple[float, list[np.ndarray]]], times) -> ColumnMoments:
    evaluator = _ColumnEvaluator(sys, groups)
    T, D = len(times), sys.dim
    abc = np.zeros((T, D), dtype=complex)
    n = np.zeros((T, 3, D))
    nn = np.zeros((T, 3, D))
    nnn = np.zeros((T, D))
    for j, (_, blocks) in enumerate(stream):
        abc[j], n[j], nn[j], nnn[j] = evaluator(blocks)
    return ColumnMoments(np.asarray(times, dtype=float), abc, n, nn, nnn, sys.cutoff)


def static_column_moments(
    eig: HermitianEigensystem, sys: ModeSystem, times: Sequence[float], time_scale: float = 1.0
) -> ColumnMoments:
    """Column moments under exp(-i H t); ``time_scale`` lets one eigensystem of H/g0 serve every g0."""
    stream = ((t, eig.block_propagators(time_scale * t)) for t in times)
    return _collect(sys, eig.groups, stream, times)


def timedep_column_moments(
    hspec: HamiltonianSpec, sys: ModeSystem, times: Sequence[float], dt: float, use_period: bool = True
) -> ColumnMoments:
    prop = InteractionPicturePropagator(hspec, sys, dt, use_period)
    return _collect(sys, prop.groups, prop.block_propagators(times), times)


# ------------------------------------------------------------------ evolution


def _evolve_with(propagators: Iterable[tuple[float, np.ndarray]], rho0: DensityMatrix, sys, store_states: bool):
    p0 = rho0.purity()
    times, states, moment_sets = [], [], []
    for t, U in propagators:
        rho = U @ rho0.entries @ U.conj().T
        rho = 0.5 * (rho + rho.conj().T)
        tr = np.trace(rho).real
        if abs(tr - 1.0) > 1e-8:
            raise EvolutionError(f"trace drifted to {tr!r} at t={t}")
        state = DensityMatrix(rho, validate=False)
        if abs(state.purity() - p0) > 1e-8:
            raise EvolutionError(f"purity drifted by {state.purity() - p0:.3e} at t={t}")
        times.append(t)
        if sys is not None:
            moment_sets.append(moments(state, sys, t))
        if store_states:
            states.append(state)
    return np.array(times), moment_sets, (states if store_states else None)


def evolve_static(
    H: OperatorMatrix,
    rho0: DensityMatrix,
    cfg: EvolutionConfig,
    sys: Optional[ModeSystem] = None,
    store_states: bool = True,
) -> Trajectory:
    """rho(t) = U(t) rho0 U(t)^+ for time-independent H, one eigendecomposition for all times."""
    if H.dim != rho0.dim:
        raise InvalidArgument(f"dimension mismatch: H {H.dim}, state {rho0.dim}")
    eig = HermitianEigensystem(H)
    stream = ((t, eig.propagator(t)) for t in cfg.times)
    times, moment_sets, states = _evolve_with(stream, rho0, sys, store_states)
    cert = ConvergenceCertificate(sys.cutoff if sys else round(H.dim ** (1 / 3)), None, 0.0)
    return Trajectory(times, moment_sets, states, cert)


def evolve_timedep(
    hspec: HamiltonianSpec,
    sys: ModeSystem,
    rho0: DensityMatrix,
    cfg: EvolutionConfig,
    check_step: bool = True,
    store_states: bool = True,
    use_period: bool = True,
) -> Trajectory:
    """Midpoint-exponential evolution under the full Hamiltonian.

    With ``check_step`` the run is repeated at dt/2 and the final states must agree
    within ``cfg.convergence_tol`` (max-abs entry difference).
    """
    if rho0.dim != sys.dim:
        raise InvalidArgument(f"dimension mismatch: system {sys.dim}, state {rho0.dim}")
    bound = cfg.max_stable_dt(hspec, sys)
    if cfg.dt > bound:
        raise InvalidArgument(f"dt = {cfg.dt} exceeds the stability bound {bound:.4g}")
    prop = InteractionPicturePropagator(hspec, sys, cfg.dt, use_period)
    stream = ((t, assemble_blocks(prop.groups, b, sys.dim)) for t, b in prop.block_propagators(cfg.times))
    times, moment_sets, states = _evolve_with(stream, rho0, sys, store_states)
    step_drift = None
    if check_step and len(times):
        t_end = float(times[-1])
        fine = InteractionPicturePropagator(hspec, sys, cfg.dt / 2, use_period).propagator(t_end)
        coarse = prop.propagator(t_end)
        rho_c = coarse @ rho0.entries @ coarse.conj().T
        rho_f = fine @ rho0.entries @ fine.conj().T
        step_drift = float(np.max(np.abs(rho_c - rho_f)))
        if step_drift > cfg.convergence_tol:
            raise StepConvergenceError(rho_c, rho_f, step_drift, cfg.convergence_tol)
    cert = ConvergenceCertificate(sys.cutoff, cfg.dt, 0.0, True, step_drift)
    return Trajectory(times, moment_sets, states, cert)


@dataclass(frozen=True)
class OrderEstimate:
    """Error ratios of the midpoint rule from runs at dt, dt/2, dt/4.

    ``successive_ratio`` = |U_dt - U_dt/2| / |U_dt/2 - U_dt/4| tends to 4 for a
    second-order scheme; ``reference_ratio`` measures both deviations against the
    dt/4 run and tends to 5.
    """

    dt: float
    successive_ratio: float
    reference_ratio: float
    errors: tuple[float, float, float] = field(default=(0.0, 0.0, 0.0))

    @property
    def order(self) -> float:
        return math.log2(self.successive_ratio)


def midpoint_order_estimate(hspec: HamiltonianSpec, sys: ModeSystem, t: float, dt: float) -> OrderEstimate:
    Us = [InteractionPicturePropagator(hspec, sys, h, use_period=False).propagator(t) for h in (dt, dt / 2, dt / 4)]
    d01 = float(np.max(np.abs(Us[0] - Us[1])))
    d12 = float(np.max(np.abs(Us[1] - Us[2])))
    d02 = float(np.max(np.abs(Us[0] - Us[2])))
    return OrderEstimate(dt, d01 / d12, d02 / d12, (d01, d12, d02))


# ---------------------------------------------------------------- certification


def _flatten(values) -> np.ndarray:
    if isinstance(values, WitnessReport):
        return values.values()
    if isinstance(values, dict):
        return np.concatenate([np.ravel(np.asarray(v, dtype=float)) for v in values.values()])
    if isinstance(values, (list, tuple)) and values and isinstance(values[0], WitnessReport):
        return np.concatenate([r.values() for r in values])
    return np.ravel(np.asarray(values, dtype=float))


def certify_truncation(
    run: Callable[[ModeSystem], object],
    sys: ModeSystem,
    tol: float = 1e-3,
    max_escalations: int = 1,
    dt: Optional[float] = None,
) -> ConvergenceCertificate:
    """Check that ``run``'s witnesses are stable when the cutoff grows by 2.

    Compares cutoff d with d + 2; on failure escalates to (d + 2, d + 4) up to
    ``max_escalations`` times and raises ``TruncationError`` if still unconverged.
    The certificate's ``cutoff_used`` is the smaller cutoff of the passing pair.
    """
    values = {sys.cutoff: _flatten(run(sys))}
    cutoff = sys.cutoff
    drift = math.inf
    for _ in range(max_escalations + 1):
        values[cutoff + 2] = _flatten(run(sys.with_cutoff(cutoff + 2)))
        drift = relative_drift(values[cutoff], values[cutoff + 2])
        if drift < tol:
            return ConvergenceCertificate(cutoff, dt, drift, True)
        cutoff += 2
    raise TruncationError(values, drift, tol)
