"""Moment sets and the third/fourth-order tripartite entanglement witnesses.

For a three-mode state the bipartition witness for the split i|jk is

    I_i = |<abc>| - sqrt(<N_i> <N_j N_k>)

and the genuine-entanglement witness subtracts all three bounds at once,

    G = |<abc>| - sum_i sqrt(<N_i> <N_j N_k>).

Index convention: I[0] is the a|bc split, I[1] is b|ac, I[2] is c|ab, and
``nn`` is stored in the matching order (<N_b N_c>, <N_a N_c>, <N_a N_b>).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Any, Optional

import numpy as np

from .fock import DensityMatrix, InvalidArgument, ModeSystem, OperatorMatrix, expectation, mode_operators

MOMENT_TOL = 1e-10
PAIRS = ((1, 2), (0, 2), (0, 1))
SPLITS = ("a|bc", "b|ac", "c|ab")


class InvalidMoment(InvalidArgument):
    """A number-operator moment is negative beyond rounding tolerance."""


@dataclass(frozen=True)
class MomentSet:
    """<abc>, <N_i> and <N_j N_k> at one time; ``nnn`` is <N_a N_b N_c> when known."""

    abc: complex
    n: tuple[float, float, float]
    nn: tuple[float, float, float]
    time: float = 0.0
    nnn: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "abc", complex(self.abc))
        object.__setattr__(self, "n", tuple(float(x) for x in self.n))
        object.__setattr__(self, "nn", tuple(float(x) for x in self.nn))

    def validate(self, tol: float = MOMENT_TOL) -> "MomentSet":
        values = self.n + self.nn + ((self.nnn,) if self.nnn is not None else ())
        if min(values) < -tol:
            raise InvalidMoment(f"negative number moment {min(values):.3e} at t={self.time}")
        if self.nnn is not None and abs(self.abc) ** 2 > self.nnn * (1 + 1e-9) + tol:
            raise InvalidMoment(
                f"|<abc>|^2 = {abs(self.abc) ** 2:.6e} exceeds <N_a N_b N_c> = {self.nnn:.6e}"
            )
        return self


@dataclass(frozen=True)
class WitnessReport:
    I: tuple[float, float, float]
    G: float
    time: float = 0.0
    certificate: Any = None

    @property
    def fully_inseparable(self) -> bool:
        return all(x > 0 for x in self.I)

    @property
    def genuine(self) -> bool:
        return self.G > 0

    def values(self) -> np.ndarray:
        return np.array([*self.I, self.G])


def _bounds(n: np.ndarray, nn: np.ndarray, tol: float = MOMENT_TOL) -> np.ndarray:
    """sqrt(<N_i><N_jN_k>) for the three splits; rounding-level negatives count as zero."""
    n = np.asarray(n, dtype=float)
    nn = np.asarray(nn, dtype=float)
    if n.size and min(n.min(), nn.min()) < -tol:
        raise InvalidMoment(f"negative number moment {min(n.min(), nn.min()):.3e}")
    return np.sqrt(np.clip(n, 0, None) * np.clip(nn, 0, None))


def witness_arrays(abs_abc, n, nn) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized I (..., 3) and G (...) from |<abc>| (...), n (..., 3), nn (..., 3)."""
    abs_abc = np.asarray(abs_abc, dtype=float)
    bounds = _bounds(n, nn)
    I = abs_abc[..., None] - bounds
    G = abs_abc - bounds.sum(axis=-1)
    return I, G


def witness_I(m: MomentSet) -> tuple[float, float, float]:
    m.validate()
    I, _ = witness_arrays(abs(m.abc), m.n, m.nn)
    return tuple(float(x) for x in I)


def witness_G(m: MomentSet) -> float:
    m.validate()
    _, G = witness_arrays(abs(m.abc), m.n, m.nn)
    return float(G)


def evaluate(m: MomentSet, certificate: Any = None) -> WitnessReport:
    return WitnessReport(witness_I(m), witness_G(m), m.time, certificate)


@dataclass(frozen=True)
class BoundCheck:
    """Both sides of the biseparability bound |<abc>| <= sum_i sqrt(<N_i><N_jN_k>)."""

    lhs: float
    rhs_terms: tuple[float, float, float]

    @property
    def rhs(self) -> float:
        return float(sum(self.rhs_terms))

    @property
    def slack(self) -> float:
        """lhs - rhs, equal to G; positive means the bound is violated."""
        return self.lhs - self.rhs


def biseparable_bound_check(m: MomentSet) -> BoundCheck:
    m.validate()
    terms = _bounds(m.n, m.nn)
    return BoundCheck(abs(m.abc), tuple(float(x) for x in terms))


@dataclass(frozen=True, eq=False)
class _MomentOperators:
    abc: OperatorMatrix
    n: tuple[OperatorMatrix, ...]
    nn: tuple[OperatorMatrix, ...]
    nnn: OperatorMatrix


@lru_cache(maxsize=8)
def moment_operators(sys: ModeSystem) -> _MomentOperators:
    a, b, c = mode_operators(sys)
    n = tuple(OperatorMatrix((op.dag() @ op).entries, True, (0, 0, 0)) for op in (a, b, c))
    nn = tuple(OperatorMatrix((n[j] @ n[k]).entries, True, (0, 0, 0)) for j, k in PAIRS)
    nnn = OperatorMatrix((n[0] @ n[1] @ n[2]).entries, True, (0, 0, 0))
    return _MomentOperators(a @ b @ c, n, nn, nnn)


def moments(rho: DensityMatrix, sys: ModeSystem, time: float = 0.0) -> MomentSet:
    if rho.dim != sys.dim:
        raise InvalidArgument(f"state dimension {rho.dim} does not match system dimension {sys.dim}")
    ops = moment_operators(sys)
    return MomentSet(
        abc=expectation(ops.abc, rho),
        n=tuple(expectation(op, rho) for op in ops.n),
        nn=tuple(expectation(op, rho) for op in ops.nn),
        time=time,
        nnn=expectation(ops.nnn, rho),
    )


SYMPLECTIC = np.kron(np.eye(3), np.array([[0.0, 1.0], [-1.0, 0.0]]))


@dataclass(frozen=True, eq=False)
class CovarianceMatrix:
    """Symmetrized quadrature covariances over (x_a, p_a, x_b, p_b, x_c, p_c)."""

    matrix: np.ndarray
    means: np.ndarray = field(default_factory=lambda: np.zeros(6))

    def uncertainty_min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.matrix + 0.5j * SYMPLECTIC)[0])

    def satisfies_uncertainty(self, tol: float = 1e-8) -> bool:
        return self.uncertainty_min_eigenvalue() >= -tol

    def max_offdiagonal(self) -> float:
        off = self.matrix - np.diag(np.diag(self.matrix))
        return float(np.max(np.abs(off)))


@lru_cache(maxsize=8)
def quadrature_operators(sys: ModeSystem) -> tuple[OperatorMatrix, ...]:
    out = []
    for op in mode_operators(sys):
        x = (op.entries + op.entries.conj().T) / np.sqrt(2)
        p = (op.entries - op.entries.conj().T) / (1j * np.sqrt(2))
        out += [OperatorMatrix(x, True), OperatorMatrix(p, True)]
    return tuple(out)


def covariance(rho: DensityMatrix, sys: ModeSystem) -> CovarianceMatrix:
    if rho.dim != sys.dim:
        raise InvalidArgument(f"state dimension {rho.dim} does not match system dimension {sys.dim}")
    quads = [q.entries for q in quadrature_operators(sys)]
    means = np.array([np.sum(rho.entries.T * q).real for q in quads])
    rho_q = [rho.entries @ q for q in quads]
    second = np.array([[np.sum(rq.T * q) for q in quads] for rq in rho_q])
    cov = second.real - np.outer(means, means)
    return CovarianceMatrix(0.5 * (cov + cov.T), means)


def product_across(split: int, single: np.ndarray, pair: np.ndarray, sys: ModeSystem) -> np.ndarray:
    """rho_i (x) rho_jk written in the (a, b, c) ordering.

    ``split`` picks the lone mode i (0 -> a|bc, 1 -> b|ac, 2 -> c|ab); ``pair``
    acts on the remaining two modes in increasing mode order.
    """
    d = sys.cutoff
    if single.shape != (d, d) or pair.shape != (d * d, d * d):
        raise InvalidArgument("single-mode / two-mode state shapes do not match the cutoff")
    order = [split, *PAIRS[split]]  # tensor slot -> mode
    t = np.kron(single, pair).reshape((d,) * 6)
    perm = [order.index(k) for k in range(3)]
    t = t.transpose(perm + [p + 3 for p in perm])
    return t.reshape(d**3, d**3)
