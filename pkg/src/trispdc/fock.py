"""Truncated three-mode Fock space, ladder operators and dense Hermitian linear algebra.

Basis ordering: a flat index ``i`` corresponds to the occupation triple
``(n_a, n_b, n_c) = np.unravel_index(i, (d, d, d))``, i.e. mode a is the slowest
index and every embedded operator is ``op_a (x) op_b (x) op_c``. Everything that
touches moments (witness formulas, covariance, block structure) relies on this.

Units: hbar = 1, frequencies in units of omega_a, times in units of 1/omega_a.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import Sequence, Union

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

HERMITIAN_TOL = 1e-12
TRACE_TOL = 1e-10
POSITIVITY_TOL = 1e-10

MIXED = "mixed"
Shift = Union[tuple[int, ...], str, None]


class InvalidArgument(ValueError):
    """Raised when an operation receives arguments violating its contract."""


@dataclass(frozen=True)
class ModeSystem:
    """Three bosonic modes truncated to ``cutoff`` Fock levels each."""

    frequencies: tuple[float, float, float] = (1.0, 2.0, 3.0)
    phases: tuple[float, float, float] = (0.0, 0.0, 0.0)
    cutoff: int = 8

    def __post_init__(self):
        freqs = tuple(float(w) for w in self.frequencies)
        phases = tuple(float(p) for p in self.phases)
        if len(freqs) != 3 or len(phases) != 3:
            raise InvalidArgument("exactly three frequencies and three phases are required")
        if any(w <= 0 for w in freqs):
            raise InvalidArgument(f"frequencies must be positive, got {freqs}")
        if freqs[0] != 1.0:
            raise InvalidArgument(f"frequencies are in units of omega_a, so frequencies[0] must be 1 (got {freqs[0]})")
        if int(self.cutoff) != self.cutoff or self.cutoff < 2:
            raise InvalidArgument(f"cutoff must be an integer >= 2, got {self.cutoff}")
        object.__setattr__(self, "frequencies", freqs)
        object.__setattr__(self, "phases", phases)
        object.__setattr__(self, "cutoff", int(self.cutoff))

    @property
    def dim(self) -> int:
        return self.cutoff**3

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.cutoff,) * 3

    def index(self, na: int, nb: int, nc: int) -> int:
        return int(np.ravel_multi_index((na, nb, nc), self.shape))

    def basis_state(self, na: int, nb: int, nc: int) -> np.ndarray:
        psi = np.zeros(self.dim, dtype=complex)
        psi[self.index(na, nb, nc)] = 1.0
        return psi

    def with_cutoff(self, cutoff: int) -> "ModeSystem":
        return ModeSystem(self.frequencies, self.phases, cutoff)

    @property
    def occupations(self) -> np.ndarray:
        """(D, 3) integer array of occupation numbers for every basis state."""
        return _occupations(self.cutoff)

    @property
    def free_energies(self) -> np.ndarray:
        """Diagonal of sum_i omega_i N_i."""
        return self.occupations @ np.asarray(self.frequencies)


@lru_cache(maxsize=None)
def _occupations(cutoff: int) -> np.ndarray:
    occ = np.array(np.unravel_index(np.arange(cutoff**3), (cutoff,) * 3)).T
    occ.setflags(write=False)
    return occ


def _max_abs(x: np.ndarray) -> float:
    return float(np.max(np.abs(x))) if x.size else 0.0


def _add_shifts(s1: Shift, s2: Shift) -> Shift:
    if s1 is None or s2 is None:
        return None
    if s1 == MIXED or s2 == MIXED:
        return MIXED
    if len(s1) != len(s2):
        raise InvalidArgument(f"shift length mismatch: {s1} vs {s2}")
    return tuple(a + b for a, b in zip(s1, s2))


@dataclass(frozen=True, eq=False)
class OperatorMatrix:
    """Dense operator on a truncated space with structural metadata.

    ``shift`` is the per-mode photon-number change of every nonzero element
    (``<m|O|n> != 0`` only if ``m - n == shift``), ``"mixed"`` when several shifts
    are present, or ``None`` when unknown.
    """

    entries: np.ndarray
    hermitian: bool = False
    shift: Shift = None

    def __post_init__(self):
        m = np.asarray(self.entries, dtype=complex)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise InvalidArgument(f"operator must be a square matrix, got shape {m.shape}")
        if self.hermitian:
            scale = max(_max_abs(m), 1.0)
            if _max_abs(m - m.conj().T) > HERMITIAN_TOL * scale:
                raise InvalidArgument("matrix flagged hermitian is not Hermitian")
        if self.shift is not None and self.shift != MIXED:
            object.__setattr__(self, "shift", tuple(int(s) for s in self.shift))
        object.__setattr__(self, "entries", m)

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    def dag(self) -> "OperatorMatrix":
        shift = self.shift
        if shift is not None and shift != MIXED:
            shift = tuple(-s for s in shift)
        return OperatorMatrix(self.entries.conj().T, self.hermitian, shift)

    def __matmul__(self, other: "OperatorMatrix") -> "OperatorMatrix":
        if not isinstance(other, OperatorMatrix):
            return NotImplemented
        if other.dim != self.dim:
            raise InvalidArgument(f"dimension mismatch: {self.dim} vs {other.dim}")
        return OperatorMatrix(self.entries @ other.entries, False, _add_shifts(self.shift, other.shift))

    def __add__(self, other: "OperatorMatrix") -> "OperatorMatrix":
        if not isinstance(other, OperatorMatrix):
            return NotImplemented
        if other.dim != self.dim:
            raise InvalidArgument(f"dimension mismatch: {self.dim} vs {other.dim}")
        if self.shift is None or other.shift is None:
            shift = None
        elif self.shift == other.shift:
            shift = self.shift
        else:
            shift = MIXED
        return OperatorMatrix(self.entries + other.entries, self.hermitian and other.hermitian, shift)

    def __mul__(self, scalar) -> "OperatorMatrix":
        scalar = complex(scalar)
        return OperatorMatrix(self.entries * scalar, self.hermitian and scalar.imag == 0, self.shift)

    __rmul__ = __mul__

    def shift_violation(self, occupations: np.ndarray) -> float:
        """Largest |entry| sitting where the declared shift says it must vanish."""
        if self.shift is None or self.shift == MIXED:
            return 0.0
        delta = occupations[:, None, :] - occupations[None, :, :]
        allowed = np.all(delta == np.asarray(self.shift), axis=-1)
        return _max_abs(np.where(allowed, 0.0, self.entries))


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    """Hermitian, positive semidefinite, unit-trace state. Validated on construction."""

    entries: np.ndarray
    validate: bool = field(default=True, repr=False)

    def __post_init__(self):
        m = np.asarray(self.entries, dtype=complex)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise InvalidArgument(f"density matrix must be square, got shape {m.shape}")
        object.__setattr__(self, "entries", m)
        if self.validate:
            if _max_abs(m - m.conj().T) > HERMITIAN_TOL * max(_max_abs(m), 1.0):
                raise InvalidArgument("density matrix is not Hermitian")
            tr = np.trace(m).real
            if abs(tr - 1.0) > TRACE_TOL:
                raise InvalidArgument(f"density matrix trace is {tr!r}, expected 1")
            if self.min_eigenvalue < -POSITIVITY_TOL:
                raise InvalidArgument(f"density matrix has eigenvalue {self.min_eigenvalue:.3e} < 0")

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    @cached_property
    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.entries)[0])

    @classmethod
    def from_pure(cls, psi: Sequence[complex]) -> "DensityMatrix":
        psi = np.asarray(psi, dtype=complex)
        psi = psi / np.linalg.norm(psi)
        return cls(np.outer(psi, psi.conj()))

    @classmethod
    def from_diagonal(cls, weights: Sequence[float]) -> "DensityMatrix":
        return cls(np.diag(np.asarray(weights, dtype=complex)))

    def purity(self) -> float:
        return float(np.real(np.vdot(self.entries, self.entries)))


def lowering_operator(cutoff: int) -> OperatorMatrix:
    """Single-mode annihilation operator with <n-1|a|n> = sqrt(n)."""
    if int(cutoff) != cutoff or cutoff < 2:
        raise InvalidArgument(f"cutoff must be an integer >= 2, got {cutoff}")
    return OperatorMatrix(np.diag(np.sqrt(np.arange(1, cutoff, dtype=float)), k=1), False, (-1,))


def raising_operator(cutoff: int) -> OperatorMatrix:
    return lowering_operator(cutoff).dag()


def number_operator(cutoff: int) -> OperatorMatrix:
    if int(cutoff) != cutoff or cutoff < 2:
        raise InvalidArgument(f"cutoff must be an integer >= 2, got {cutoff}")
    return OperatorMatrix(np.diag(np.arange(cutoff, dtype=float)), True, (0,))


def embed(op: OperatorMatrix, mode_index: int, sys: ModeSystem) -> OperatorMatrix:
    """Lift a single-mode operator to the three-mode space (mode a slowest)."""
    if mode_index not in (0, 1, 2):
        raise InvalidArgument(f"mode_index must be 0, 1 or 2, got {mode_index}")
    if op.dim != sys.cutoff:
        raise InvalidArgument(f"single-mode operator has dimension {op.dim}, cutoff is {sys.cutoff}")
    factors = [np.eye(sys.cutoff)] * 3
    factors[mode_index] = op.entries
    full = np.kron(np.kron(factors[0], factors[1]), factors[2])
    shift = op.shift
    if shift is not None and shift != MIXED:
        if len(shift) != 1:
            raise InvalidArgument(f"expected a single-mode shift, got {shift}")
        vec = [0, 0, 0]
        vec[mode_index] = shift[0]
        shift = tuple(vec)
    return OperatorMatrix(full, op.hermitian, shift)


@lru_cache(maxsize=16)
def mode_operators(sys: ModeSystem) -> tuple[OperatorMatrix, OperatorMatrix, OperatorMatrix]:
    """Embedded annihilation operators (a, b, c)."""
    low = lowering_operator(sys.cutoff)
    return tuple(embed(low, i, sys) for i in range(3))


def identity(sys: ModeSystem) -> OperatorMatrix:
    return OperatorMatrix(np.eye(sys.dim), True, (0, 0, 0))


def expectation(op: OperatorMatrix, rho: DensityMatrix) -> complex:
    """Tr[rho op]; Hermitian operators return a float after checking the imaginary part."""
    if op.dim != rho.dim:
        raise InvalidArgument(f"dimension mismatch: operator {op.dim}, state {rho.dim}")
    value = complex(np.sum(rho.entries.T * op.entries))
    if op.hermitian:
        if abs(value.imag) >= 1e-10:
            raise InvalidArgument(f"Hermitian expectation has imaginary part {value.imag:.3e}")
        return value.real
    return value


def block_groups(pattern: np.ndarray) -> list[np.ndarray]:
    """Connected components of a sparsity pattern, batched by size.

    Returns a list of integer arrays of shape (n_blocks, size); each row lists the
    basis indices of one invariant block.
    """
    n_comp, labels = connected_components(csr_matrix(pattern), directed=False)
    order = np.argsort(labels, kind="stable")
    bounds = np.flatnonzero(np.diff(labels[order])) + 1
    blocks = np.split(order, bounds)
    by_size: dict[int, list[np.ndarray]] = {}
    for b in blocks:
        by_size.setdefault(len(b), []).append(b)
    return [np.array(by_size[size]) for size in sorted(by_size)]


def gather_blocks(matrix: np.ndarray, idx: np.ndarray) -> np.ndarray:
    """Extract the diagonal blocks ``matrix[idx[k]][:, idx[k]]`` as one stacked array."""
    return matrix[idx[:, :, None], idx[:, None, :]]


class HermitianEigensystem:
    """Block-diagonalized eigendecomposition of a Hermitian operator.

    Blocks are the connected components of the operator's sparsity pattern, so a
    Hamiltonian with conserved quantities is diagonalized sector by sector and the
    propagator is exactly block diagonal.
    """

    def __init__(self, H: OperatorMatrix):
        m = H.entries
        if _max_abs(m - m.conj().T) > HERMITIAN_TOL * max(_max_abs(m), 1.0):
            raise InvalidArgument("operator is not Hermitian")
        self.dim = H.dim
        self.groups = block_groups(m != 0)
        self.values = []
        self.vectors = []
        for idx in self.groups:
            lam, W = np.linalg.eigh(gather_blocks(m, idx))
            self.values.append(lam)
            self.vectors.append(W)

    def block_propagators(self, t: float) -> list[np.ndarray]:
        """exp(-i H t) restricted to every block, stacked like ``self.groups``."""
        out = []
        for lam, W in zip(self.values, self.vectors):
            phase = np.exp(-1j * t * lam)
            out.append((W * phase[:, None, :]) @ W.conj().swapaxes(-1, -2))
        return out

    def propagator(self, t: float) -> np.ndarray:
        return assemble_blocks(self.groups, self.block_propagators(t), self.dim)


def assemble_blocks(groups: list[np.ndarray], blocks: list[np.ndarray], dim: int) -> np.ndarray:
    out = np.zeros((dim, dim), dtype=complex)
    for idx, blk in zip(groups, blocks):
        out[idx[:, :, None], idx[:, None, :]] = blk
    return out


def hermitian_propagator(H: OperatorMatrix, t: float) -> OperatorMatrix:
    """exp(-i H t) via eigendecomposition (hbar = 1)."""
    U = HermitianEigensystem(H).propagator(float(t))
    diagonal = isinstance(H.shift, tuple) and not any(H.shift)
    return OperatorMatrix(U, False, H.shift if diagonal else None)
