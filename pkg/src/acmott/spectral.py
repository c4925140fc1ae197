"""Dense eigendecomposition, half-open energy windows and eigenbasis matrix elements."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .model import LatticeOperator


class DiagonalizationError(RuntimeError):
    pass


@dataclass(frozen=True)
class EigenSystem:
    energies: np.ndarray
    vectors: np.ndarray = field(repr=False)
    residual_tol: float

    @property
    def N(self) -> int:
        return self.energies.size


@dataclass(frozen=True)
class Interval:
    """Half-open interval ``(lo, hi]``."""

    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError(f"empty interval ({self.lo}, {self.hi}]")

    @property
    def length(self) -> float:
        return self.hi - self.lo

    def contains(self, x):
        return (x > self.lo) & (x <= self.hi)

    def disjoint(self, other: "Interval") -> bool:
        return self.hi <= other.lo or other.hi <= self.lo


@dataclass(frozen=True)
class EnergyWindows:
    """The Fermi-straddling windows used by the conductivity bounds.

    ``I_minus = (E_F - nu, E_F]``, ``I_plus = (E_F, E_F + nu]`` and the inner
    pair ``J_minus = (E_F - nu/2, E_F - nu/4]``, ``J_plus = (E_F + nu/4, E_F + nu/2]``.
    With ``shrunken=True`` the J pair is instead ``I_pm`` with a margin ``nu**4``
    removed at both ends.
    """

    E_F: float
    nu: float
    shrunken: bool = False

    def __post_init__(self):
        if not self.nu > 0:
            raise ValueError(f"frequency must be positive, got {self.nu!r}")

    @property
    def I_minus(self) -> Interval:
        return Interval(self.E_F - self.nu, self.E_F)

    @property
    def I_plus(self) -> Interval:
        return Interval(self.E_F, self.E_F + self.nu)

    @property
    def J_minus(self) -> Interval:
        if self.shrunken:
            m = self.nu**4
            return Interval(self.E_F - self.nu + m, self.E_F - m)
        return Interval(self.E_F - self.nu / 2, self.E_F - self.nu / 4)

    @property
    def J_plus(self) -> Interval:
        if self.shrunken:
            m = self.nu**4
            return Interval(self.E_F + m, self.E_F + self.nu - m)
        return Interval(self.E_F + self.nu / 4, self.E_F + self.nu / 2)

    @property
    def hull(self) -> Interval:
        return Interval(self.E_F - self.nu, self.E_F + self.nu)


def diagonalize(H: LatticeOperator, tol: float | None = None, *, index=None, seed=None) -> EigenSystem:
    """Full symmetric/Hermitian eigendecomposition with a residual check."""
    A = H.toarray()
    if H.real_symmetric:
        A = A.real
    try:
        energies, vectors = scipy.linalg.eigh(A, check_finite=True)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise DiagonalizationError(
            f"eigensolver failed for realization index={index} seed={seed}: {exc}"
        ) from exc
    if tol is None:
        tol = 1e-9 * max(1.0, float(np.abs(energies).max(initial=0.0)))
    resid = np.linalg.norm(A @ vectors - vectors * energies, axis=0)
    if np.any(resid > tol * (1.0 + np.abs(energies))):
        raise DiagonalizationError(
            f"eigenpair residual {resid.max():.3e} above tolerance for realization "
            f"index={index} seed={seed}"
        )
    energies.setflags(write=False)
    vectors.setflags(write=False)
    return EigenSystem(energies, vectors, float(tol))


def window_indices(eig: EigenSystem, interval: Interval) -> np.ndarray:
    """Indices ``n`` with ``E_n`` in ``(lo, hi]``; energies are sorted so this is a range."""
    start = np.searchsorted(eig.energies, interval.lo, side="right")
    stop = np.searchsorted(eig.energies, interval.hi, side="right")
    return np.arange(start, stop)


def count_in(energies: np.ndarray, edges: np.ndarray) -> np.ndarray:
    """Eigenvalue counts in the half-open bins ``(edges[k], edges[k+1]]`` of sorted ``energies``."""
    pos = np.searchsorted(energies, edges, side="right")
    return np.diff(pos)


def matrix_elements(eig: EigenSystem, A: LatticeOperator, rows=None, cols=None) -> np.ndarray:
    """``M[i, j] = <psi_rows[i], A psi_cols[j]>``."""
    if A.shape != (eig.N, eig.N):
        raise ValueError(f"operator shape {A.shape} does not match {eig.N} eigenvectors")
    psi = eig.vectors
    left = psi if rows is None else psi[:, np.asarray(rows, dtype=np.int64)]
    right = psi if cols is None else psi[:, np.asarray(cols, dtype=np.int64)]
    return left.conj().T @ (A.matrix @ right)


def position_elements(eig: EigenSystem, x1: np.ndarray, rows, cols) -> np.ndarray:
    """Matrix elements of a diagonal operator without forming it."""
    psi = eig.vectors
    left = psi[:, np.asarray(rows, dtype=np.int64)]
    right = psi[:, np.asarray(cols, dtype=np.int64)]
    return (left * x1[:, None]).conj().T @ right
