"""Initial thermal states and the trilinear / double-SPDC Hamiltonians."""
from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache, reduce
from typing import Optional

import numpy as np

from .fock import (
    MIXED,
    DensityMatrix,
    InvalidArgument,
    ModeSystem,
    OperatorMatrix,
    mode_operators,
)

DEFAULT_TAIL_TOL = 1e-8
MODE_NAMES = ("a", "b", "c")


class CutoffTooSmall(InvalidArgument):
    """The truncated Fock space would drop too much thermal weight."""

    def __init__(self, mode: str, tail: float, tol: float, cutoff: int):
        self.mode = mode
        self.tail = tail
        super().__init__(
            f"cutoff {cutoff} too small for mode {mode}: truncated thermal tail {tail:.3e} >= {tol:.1e}"
        )


def thermal_occupation(beta_omega: float) -> float:
    """Bose-Einstein occupation 1/(exp(beta*omega) - 1)."""
    if not beta_omega > 0:
        raise InvalidArgument(f"beta*omega must be positive, got {beta_omega}")
    if math.isinf(beta_omega):
        return 0.0
    return 1.0 / math.expm1(beta_omega)


@dataclass(frozen=True)
class ThermalSpec:
    """Initial temperature expressed as beta*omega_a (math.inf means vacuum)."""

    beta_omega_a: float

    def __post_init__(self):
        if not self.beta_omega_a > 0:
            raise InvalidArgument(f"beta_omega_a must be positive, got {self.beta_omega_a}")

    def occupations(self, sys: ModeSystem) -> tuple[float, float, float]:
        return tuple(thermal_occupation(self.beta_omega_a * w) for w in sys.frequencies)


def mode_thermal_weights(beta_omega: float, cutoff: int) -> tuple[np.ndarray, float]:
    """Truncated, renormalized geometric distribution and the discarded tail weight."""
    if math.isinf(beta_omega):
        p = np.zeros(cutoff)
        p[0] = 1.0
        return p, 0.0
    q = math.exp(-beta_omega)
    p = q ** np.arange(cutoff, dtype=float)
    return p / p.sum(), q**cutoff


def thermal_weights(spec: ThermalSpec, sys: ModeSystem, tail_tol: float = DEFAULT_TAIL_TOL) -> np.ndarray:
    """Diagonal of the product thermal state in the flat Fock basis."""
    per_mode = []
    for name, w in zip(MODE_NAMES, sys.frequencies):
        p, tail = mode_thermal_weights(spec.beta_omega_a * w, sys.cutoff)
        if tail >= tail_tol:
            raise CutoffTooSmall(name, tail, tail_tol, sys.cutoff)
        per_mode.append(p)
    return np.kron(np.kron(per_mode[0], per_mode[1]), per_mode[2])


def thermal_state(spec: ThermalSpec, sys: ModeSystem, tail_tol: float = DEFAULT_TAIL_TOL) -> DensityMatrix:
    return DensityMatrix.from_diagonal(thermal_weights(spec, sys, tail_tol))


def vacuum_state(sys: ModeSystem) -> DensityMatrix:
    return thermal_state(ThermalSpec(math.inf), sys)


class Variant(str, enum.Enum):
    RWA = "rwa-trilinear"
    FULL = "full-interaction-picture"
    DOUBLE = "double-spdc"


@dataclass(frozen=True)
class HamiltonianSpec:
    """Coupling g0 (units of omega_a) and pump settings for one Hamiltonian variant.

    ``theta`` is the total phase of the RWA term and defaults to the sum of the
    mode phases; ``omega0`` defaults to the resonance omega_a + omega_b + omega_c.
    """

    variant: Variant
    g0: float
    theta: Optional[float] = None
    omega0: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        if not self.g0 >= 0:
            raise InvalidArgument(f"g0 must be non-negative, got {self.g0}")

    def total_phase(self, sys: ModeSystem) -> float:
        return float(sum(sys.phases)) if self.theta is None else float(self.theta)

    def pump_frequency(self, sys: ModeSystem) -> float:
        return float(sum(sys.frequencies)) if self.omega0 is None else float(self.omega0)

    def with_g0(self, g0: float) -> "HamiltonianSpec":
        return HamiltonianSpec(self.variant, g0, self.theta, self.omega0)


def _require(hspec: HamiltonianSpec, variant: Variant):
    if hspec.variant != variant:
        raise InvalidArgument(f"expected a {variant.value} Hamiltonian spec, got {hspec.variant.value}")


def free_hamiltonian(sys: ModeSystem) -> OperatorMatrix:
    return OperatorMatrix(np.diag(sys.free_energies.astype(complex)), True, (0, 0, 0))


def rwa_hamiltonian(hspec: HamiltonianSpec, sys: ModeSystem) -> OperatorMatrix:
    """(g0/2) (e^{i theta} abc + e^{-i theta} a+ b+ c+)."""
    _require(hspec, Variant.RWA)
    a, b, c = mode_operators(sys)
    lower = a @ b @ c
    theta = hspec.total_phase(sys)
    H = lower * (0.5 * hspec.g0 * np.exp(1j * theta)) + lower.dag() * (0.5 * hspec.g0 * np.exp(-1j * theta))
    return OperatorMatrix(H.entries, True, MIXED)


def double_spdc_hamiltonian(hspec: HamiltonianSpec, sys: ModeSystem) -> OperatorMatrix:
    """(g0/2) (ab + ac + a+ b+ + a+ c+): two two-mode squeezers sharing mode a."""
    _require(hspec, Variant.DOUBLE)
    a, b, c = mode_operators(sys)
    pairs = a @ b + a @ c
    H = (pairs + pairs.dag()) * (0.5 * hspec.g0)
    return OperatorMatrix(H.entries, True, MIXED)


@dataclass(frozen=True, eq=False)
class TrilinearTerm:
    """One of the eight ladder products in the full Hamiltonian.

    The term enters as ``g0 cos(omega0 t) exp(i (frequency t + phase)) * matrix``;
    ``shift`` is +1 for a creation operator on that mode and -1 for annihilation.
    """

    shift: tuple[int, int, int]
    frequency: float
    phase: float
    matrix: OperatorMatrix

    def coefficient(self, g0: float, omega0: float, t: float) -> complex:
        return g0 * math.cos(omega0 * t) * np.exp(1j * (self.frequency * t + self.phase))


def full_hamiltonian_terms(sys: ModeSystem) -> list[TrilinearTerm]:
    ops = mode_operators(sys)
    terms = []
    for signs in itertools.product((-1, 1), repeat=3):
        factors = [op if s < 0 else op.dag() for op, s in zip(ops, signs)]
        matrix = factors[0] @ factors[1] @ factors[2]
        freq = float(np.dot(signs, sys.frequencies))
        phase = -float(np.dot(signs, sys.phases))
        terms.append(TrilinearTerm(tuple(signs), freq, phase, matrix))
    return terms


@lru_cache(maxsize=16)
def quadrature_product(sys: ModeSystem) -> OperatorMatrix:
    """prod_i (e^{i theta_i} a_i + e^{-i theta_i} a_i^+): the lab-frame coupling operator."""
    out = None
    for op, theta in zip(mode_operators(sys), sys.phases):
        x = op * np.exp(1j * theta) + op.dag() * np.exp(-1j * theta)
        x = OperatorMatrix(x.entries, True, MIXED)
        out = x if out is None else out @ x
    return OperatorMatrix(out.entries, True, MIXED)


def full_hamiltonian_at(hspec: HamiltonianSpec, sys: ModeSystem, t: float) -> OperatorMatrix:
    """Interaction-picture Hamiltonian g0 cos(omega0 t) prod_i (e^{i theta_i} a_i e^{-i w_i t} + h.c.)."""
    _require(hspec, Variant.FULL)
    V = quadrature_product(sys).entries
    rot = np.exp(1j * sys.free_energies * t)
    H = hspec.g0 * math.cos(hspec.pump_frequency(sys) * t) * (rot[:, None] * V * rot.conj()[None, :])
    # exact Hermitian symmetrization removes rounding asymmetry from the phase products
    H = 0.5 * (H + H.conj().T)
    return OperatorMatrix(H, True, MIXED)


def _rational(x: float, max_den: int = 10**6) -> Optional[Fraction]:
    f = Fraction(x).limit_denominator(max_den)
    return f if abs(float(f) - x) <= 1e-12 * max(1.0, abs(x)) else None


def hamiltonian_period(hspec: HamiltonianSpec, sys: ModeSystem) -> Optional[float]:
    """Common period of every Fourier component of the full Hamiltonian, or None."""
    omega0 = hspec.pump_frequency(sys)
    freqs = set()
    for signs in itertools.product((-1, 1), repeat=3):
        f = float(np.dot(signs, sys.frequencies))
        freqs.update({abs(f + omega0), abs(f - omega0)})
    freqs = [f for f in freqs if f > 1e-12]
    if not freqs:
        return None
    fracs = [_rational(f) for f in freqs]
    if any(f is None for f in fracs):
        return None

    def gcd(x: Fraction, y: Fraction) -> Fraction:
        den = x.denominator * y.denominator // math.gcd(x.denominator, y.denominator)
        return Fraction(math.gcd(int(x * den), int(y * den)), den)

    return 2 * math.pi / float(reduce(gcd, fracs))


def time_averaged_hamiltonian(
    hspec: HamiltonianSpec, sys: ModeSystem, period: Optional[float] = None, n_points: int = 4096
) -> OperatorMatrix:
    """Average of the full Hamiltonian over ``period`` (default: its full common period).

    Uses the uniform-grid rectangle rule, which is exact for trigonometric
    polynomials whose frequencies are resolved by the grid.
    """
    _require(hspec, Variant.FULL)
    if period is None:
        period = hamiltonian_period(hspec, sys)
        if period is None:
            raise InvalidArgument("Hamiltonian is not periodic; pass an explicit averaging period")
    omega0 = hspec.pump_frequency(sys)
    ts = np.arange(n_points) * (period / n_points)
    total = np.zeros((sys.dim, sys.dim), dtype=complex)
    for term in full_hamiltonian_terms(sys):
        coeff = np.mean([term.coefficient(hspec.g0, omega0, t) for t in ts])
        total += coeff * term.matrix.entries
    return OperatorMatrix(total, False, MIXED)
