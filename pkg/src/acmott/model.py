"""Lattice geometry, iid disorder and the Anderson operators on a discrete torus.

The Hamiltonian is ``H = -Delta + V`` where, with the sign convention used
throughout this package, ``-Delta`` is the plain nearest-neighbour adjacency
operator of the torus.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

MAX_SITES = 2**31 - 1

VARIANTS = ("commutator", "current")


@dataclass(frozen=True)
class TorusLattice:
    """Periodic cube of side ``L`` in ``d`` dimensions, sites in row-major order."""

    d: int
    L: int

    @property
    def N(self) -> int:
        return self.L**self.d

    @cached_property
    def coords(self) -> np.ndarray:
        """Integer coordinates, shape ``(N, d)``; the first axis varies slowest."""
        grids = np.indices((self.L,) * self.d).reshape(self.d, -1)
        return grids.T.copy()

    @cached_property
    def centered_x1(self) -> np.ndarray:
        """First coordinate shifted so that it sums to zero along each line."""
        return self.coords[:, 0] - (self.L - 1) / 2.0

    def site_index(self, x) -> int:
        x = np.mod(np.asarray(x, dtype=np.int64), self.L)
        return int(np.ravel_multi_index(tuple(x), (self.L,) * self.d))

    @cached_property
    def neighbors(self) -> np.ndarray:
        """Neighbour table, shape ``(N, 2d)``: ``+e_j`` then ``-e_j`` for each axis j."""
        shape = (self.L,) * self.d
        out = np.empty((self.N, 2 * self.d), dtype=np.int64)
        for j in range(self.d):
            for k, step in enumerate((1, -1)):
                shifted = self.coords.copy()
                shifted[:, j] = (shifted[:, j] + step) % self.L
                out[:, 2 * j + k] = np.ravel_multi_index(tuple(shifted.T), shape)
        return out

    def graph_distance(self, origin: int = 0) -> np.ndarray:
        """Torus graph distance (minimum over windings) from ``origin`` to every site."""
        delta = np.abs(self.coords - self.coords[origin]) % self.L
        return np.minimum(delta, self.L - delta).sum(axis=1)


def build_lattice(d: int, L: int) -> TorusLattice:
    if int(d) != d or d < 1:
        raise ValueError(f"dimension must be a positive integer, got {d!r}")
    if int(L) != L or L < 3:
        raise ValueError(f"side length must be an integer >= 3, got {L!r}")
    d, L = int(d), int(L)
    if L**d > MAX_SITES:
        raise ValueError(f"L**d = {L}**{d} overflows the site index range")
    return TorusLattice(d, L)


@dataclass(frozen=True)
class DisorderModel:
    """Law of the iid single-site potential.

    Only the uniform family on ``[-W/2, W/2]`` is built in; its density height
    is exactly ``1/W``.
    """

    W: float
    master_seed: int = 0
    family: str = "uniform"

    def __post_init__(self):
        if self.family != "uniform":
            raise ValueError(f"unknown density family {self.family!r}")
        if not self.W > 0:
            raise ValueError(f"disorder width must be positive, got {self.W!r}")
        if not 0 <= int(self.master_seed) < 2**64:
            raise ValueError("master_seed must fit in an unsigned 64-bit integer")

    @property
    def support(self) -> tuple[float, float]:
        return (-self.W / 2.0, self.W / 2.0)

    @property
    def rho_sup(self) -> float:
        return 1.0 / self.W

    def seed_sequence(self, index: int, stream: int | None = None) -> np.random.SeedSequence:
        key = (int(index),) if stream is None else (int(stream), int(index))
        return np.random.SeedSequence(entropy=int(self.master_seed), spawn_key=key)

    def realization_seed(self, index: int, stream: int | None = None) -> int:
        return int(self.seed_sequence(index, stream).generate_state(1, np.uint64)[0])

    def draw(self, rng: np.random.Generator, n: int) -> np.ndarray:
        lo, hi = self.support
        return rng.uniform(lo, hi, n)


@dataclass(frozen=True)
class Realization:
    index: int
    seed: int
    potential: np.ndarray = field(repr=False)


def sample_potential(
    model: DisorderModel, index: int, lattice: TorusLattice, stream: int | None = None
) -> Realization:
    """Draw the potential of realization ``index``; stateless in ``(master_seed, index)``.

    ``stream`` selects an independent family of realizations (used to keep
    sweeps over different frequencies statistically independent).
    """
    if int(index) != index or index < 0:
        raise ValueError(f"realization index must be a nonnegative integer, got {index!r}")
    rng = np.random.default_rng(model.seed_sequence(index, stream))
    potential = model.draw(rng, lattice.N)
    potential.setflags(write=False)
    return Realization(int(index), model.realization_seed(index, stream), potential)


@dataclass(frozen=True)
class LatticeOperator:
    """Sparse Hermitian operator on the sites of a torus."""

    matrix: sp.csr_matrix
    real_symmetric: bool

    @property
    def shape(self):
        return self.matrix.shape

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()

    def diagonal(self) -> np.ndarray:
        return self.matrix.diagonal()

    def triples(self):
        """Off-diagonal ``(row, col, value)`` arrays."""
        coo = self.matrix.tocoo()
        off = coo.row != coo.col
        return coo.row[off], coo.col[off], coo.data[off]

    def is_hermitian(self, atol: float = 0.0) -> bool:
        diff = self.matrix - self.matrix.conj().T
        return diff.nnz == 0 or np.abs(diff.data).max() <= atol


def _adjacency(lattice: TorusLattice) -> sp.csr_matrix:
    rows = np.repeat(np.arange(lattice.N), 2 * lattice.d)
    cols = lattice.neighbors.ravel()
    vals = np.ones(rows.size)
    return sp.csr_matrix((vals, (rows, cols)), shape=(lattice.N, lattice.N))


def build_hamiltonian(lattice: TorusLattice, r: Realization | np.ndarray) -> LatticeOperator:
    potential = r.potential if isinstance(r, Realization) else np.asarray(r, dtype=float)
    if potential.shape != (lattice.N,):
        raise ValueError(
            f"potential has shape {potential.shape}, lattice needs ({lattice.N},)"
        )
    H = _adjacency(lattice) + sp.diags(potential, format="csr")
    H.sum_duplicates()
    return LatticeOperator(H.tocsr(), real_symmetric=True)


def position_operator(lattice: TorusLattice) -> LatticeOperator:
    """Diagonal operator of the centered first coordinate."""
    return LatticeOperator(sp.diags(lattice.centered_x1, format="csr"), real_symmetric=True)


def velocity_operator(
    lattice: TorusLattice, H: LatticeOperator, variant: str = "commutator"
) -> LatticeOperator:
    """First component of the velocity operator.

    ``commutator`` is the literal finite-volume ``i[H, X_1]`` (large entries on
    seam bonds); ``current`` replaces the coordinate difference by the signed,
    wrap-aware unit displacement along axis 1.
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown velocity variant {variant!r}; expected one of {VARIANTS}")
    if H.shape != (lattice.N, lattice.N):
        raise ValueError("Hamiltonian does not live on this lattice")
    rows, cols, vals = H.triples()
    if variant == "commutator":
        c = lattice.centered_x1
        disp = c[cols] - c[rows]
    else:
        step = (lattice.coords[cols, 0] - lattice.coords[rows, 0]) % lattice.L
        disp = np.where(step == 1, 1.0, np.where(step == lattice.L - 1, -1.0, 0.0))
    data = 1j * vals * disp
    keep = data != 0
    mat = sp.csr_matrix(
        (data[keep], (rows[keep], cols[keep])), shape=H.shape, dtype=complex
    )
    return LatticeOperator(mat, real_symmetric=False)
