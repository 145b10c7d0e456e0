"""Truncated multi-mode Fock space algebra.

Modes are ordered; the first mode is the most significant index of the
tensor-product basis (``np.kron`` order). All matrices are dense complex.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

MAX_DIMENSION = 4096
HERMITIAN_TOL = 1e-10
TRACE_TOL = 1e-8
POSITIVITY_TOL = 1e-8


class FockError(ValueError):
    """Invalid layout, operator or state."""


class TruncationError(RuntimeError):
    """Population reached the top of a truncated Fock ladder."""


@dataclass(frozen=True)
class ModeLayout:
    modes: tuple[tuple[str, int], ...]
    max_dimension: int = MAX_DIMENSION

    def __post_init__(self):
        names = [name for name, _ in self.modes]
        if not names:
            raise FockError("layout needs at least one mode")
        if len(set(names)) != len(names):
            raise FockError(f"duplicate mode names in {names}")
        for name, cutoff in self.modes:
            if int(cutoff) != cutoff or cutoff < 2:
                raise FockError(f"mode {name!r}: cutoff must be an integer >= 2, got {cutoff}")
        object.__setattr__(self, "modes", tuple((str(n), int(c)) for n, c in self.modes))
        if self.dimension > self.max_dimension:
            raise FockError(
                f"total dimension {self.dimension} exceeds limit {self.max_dimension}"
            )

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.modes)

    @property
    def cutoffs(self) -> tuple[int, ...]:
        return tuple(int(c) for _, c in self.modes)

    @property
    def dimension(self) -> int:
        return int(np.prod(self.cutoffs))

    def index(self, mode_name: str) -> int:
        try:
            return self.names.index(mode_name)
        except ValueError:
            raise FockError(f"unknown mode {mode_name!r}; layout has {self.names}") from None

    def stride(self, mode_name: str) -> int:
        """Basis-index step between adjacent Fock levels of one mode."""
        k = self.index(mode_name)
        return int(np.prod(self.cutoffs[k + 1:], dtype=int))

    def occupations(self, mode_name: str) -> np.ndarray:
        """Fock level of ``mode_name`` for every basis index."""
        k = self.index(mode_name)
        return (np.arange(self.dimension) // self.stride(mode_name)) % self.cutoffs[k]


def make_layout(modes: Iterable[tuple[str, int]], max_dimension: int = MAX_DIMENSION) -> ModeLayout:
    return ModeLayout(tuple((n, c) for n, c in modes), max_dimension)


@dataclass(frozen=True, eq=False)
class Operator:
    layout: ModeLayout
    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        d = self.layout.dimension
        if m.shape != (d, d):
            raise FockError(f"operator shape {m.shape} does not match layout dimension {d}")
        if not np.all(np.isfinite(m)):
            raise FockError("operator has non-finite entries")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    def _check(self, other: "Operator"):
        if other.layout != self.layout:
            raise FockError("layout mismatch")

    def __matmul__(self, other: "Operator") -> "Operator":
        self._check(other)
        return Operator(self.layout, self.matrix @ other.matrix)

    def __add__(self, other: "Operator") -> "Operator":
        self._check(other)
        return Operator(self.layout, self.matrix + other.matrix)

    def __sub__(self, other: "Operator") -> "Operator":
        self._check(other)
        return Operator(self.layout, self.matrix - other.matrix)

    def __mul__(self, scalar: complex) -> "Operator":
        return Operator(self.layout, self.matrix * scalar)

    __rmul__ = __mul__

    def dag(self) -> "Operator":
        return Operator(self.layout, self.matrix.conj().T)

    def is_hermitian(self, tol: float = 1e-12) -> bool:
        return float(np.max(np.abs(self.matrix - self.matrix.conj().T))) < tol


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    layout: ModeLayout
    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        d = self.layout.dimension
        if m.shape != (d, d):
            raise FockError(f"state shape {m.shape} does not match layout dimension {d}")
        if not np.all(np.isfinite(m)):
            raise FockError("state has non-finite entries")
        if np.max(np.abs(m - m.conj().T)) > HERMITIAN_TOL:
            raise FockError("density matrix is not Hermitian")
        tr = np.trace(m).real
        if abs(tr - 1.0) > TRACE_TOL:
            raise FockError(f"density matrix trace {tr!r} != 1")
        if np.linalg.eigvalsh(m).min() < -POSITIVITY_TOL:
            raise FockError("density matrix has negative eigenvalues")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    def populations(self, mode_name: str) -> np.ndarray:
        """Reduced Fock-level distribution of one mode."""
        occ = self.layout.occupations(mode_name)
        cutoff = self.layout.cutoffs[self.layout.index(mode_name)]
        return np.bincount(occ, weights=np.diag(self.matrix).real, minlength=cutoff)


def _embed(layout: ModeLayout, mode_name: str, single: np.ndarray) -> np.ndarray:
    k = layout.index(mode_name)
    out = np.ones((1, 1), dtype=complex)
    for j, c in enumerate(layout.cutoffs):
        out = np.kron(out, single if j == k else np.eye(c))
    return out


def annihilation(layout: ModeLayout, mode_name: str) -> Operator:
    cutoff = layout.cutoffs[layout.index(mode_name)]
    single = np.diag(np.sqrt(np.arange(1, cutoff)), k=1)
    return Operator(layout, _embed(layout, mode_name, single))


def creation(layout: ModeLayout, mode_name: str) -> Operator:
    return annihilation(layout, mode_name).dag()


def number_op(layout: ModeLayout, mode_name: str) -> Operator:
    return Operator(layout, np.diag(layout.occupations(mode_name).astype(complex)))


def identity(layout: ModeLayout) -> Operator:
    return Operator(layout, np.eye(layout.dimension, dtype=complex))


def thermal_populations(occupancy: float, cutoff: int) -> np.ndarray:
    """Bose-Einstein level weights truncated to ``cutoff`` levels, renormalized."""
    if occupancy < 0:
        raise FockError(f"negative occupancy {occupancy}")
    if occupancy == 0:
        p = np.zeros(cutoff)
        p[0] = 1.0
        return p
    ratio = occupancy / (1.0 + occupancy)
    p = ratio ** np.arange(cutoff)
    return p / p.sum()


def thermal_state(layout: ModeLayout, occupancies: Sequence[float] | dict) -> DensityMatrix:
    if isinstance(occupancies, dict):
        unknown = set(occupancies) - set(layout.names)
        if unknown:
            raise FockError(f"unknown modes {sorted(unknown)}")
        occupancies = [occupancies.get(name, 0.0) for name in layout.names]
    if len(occupancies) != len(layout.modes):
        raise FockError("need one occupancy per mode")
    diag = np.ones(1)
    for occ, cutoff in zip(occupancies, layout.cutoffs):
        diag = np.kron(diag, thermal_populations(float(occ), cutoff))
    return DensityMatrix(layout, np.diag(diag / diag.sum()).astype(complex))


def vacuum(layout: ModeLayout) -> DensityMatrix:
    return thermal_state(layout, [0.0] * len(layout.modes))


def expectation(op: Operator, rho: DensityMatrix) -> complex:
    if op.layout != rho.layout:
        raise FockError("layout mismatch between operator and state")
    # Tr(A B) without forming the product
    return complex(np.einsum("ij,ji->", op.matrix, rho.matrix))


def top_level_population(layout: ModeLayout, matrix: np.ndarray) -> dict[str, float]:
    """Population in the highest retained level of each mode, relative to the trace."""
    diag = np.diag(matrix).real
    tr = diag.sum()
    out = {}
    for name, cutoff in layout.modes:
        occ = layout.occupations(name)
        out[name] = float(diag[occ == cutoff - 1].sum() / tr) if tr != 0 else 0.0
    return out


def check_truncation(layout: ModeLayout, matrix: np.ndarray, threshold: float = 1e-4):
    for name, pop in top_level_population(layout, matrix).items():
        if pop > threshold:
            raise TruncationError(
                f"mode {name!r}: top Fock level holds {pop:.3g} of the trace (limit {threshold:g});"
                " raise its cutoff"
            )
