import numpy as np
import pytest

from acmott.model import (
    DisorderModel,
    build_hamiltonian,
    build_lattice,
    sample_potential,
    velocity_operator,
)
from acmott.spectral import diagonalize


class Setup:
    def __init__(self, d, L, W, seed, index=0, variant="commutator"):
        self.lattice = build_lattice(d, L)
        self.model = DisorderModel(W, seed)
        self.real = sample_potential(self.model, index, self.lattice)
        self.H = build_hamiltonian(self.lattice, self.real)
        self.eig = diagonalize(self.H)
        self.x1 = self.lattice.centered_x1
        self.v = velocity_operator(self.lattice, self.H, variant)


@pytest.fixture
def make_setup():
    return Setup


def brute_matrix_element(psi_n, A, psi_m):
    """<psi_n, A psi_m> by an explicit double sum over sites."""
    total = 0j
    N = len(psi_n)
    for x in range(N):
        for y in range(N):
            if A[x, y] != 0:
                total += np.conj(psi_n[x]) * A[x, y] * psi_m[y]
    return total


def brute_sigma(eig, V, E_F, edges):
    """Double loop over all ordered eigenpairs; linear scan for the bin."""
    E, psi = eig.energies, eig.vectors
    N = len(E)
    masses = np.zeros(len(edges) - 1)
    for n in range(N):
        for m in range(N):
            if not (E[m] <= E_F < E[n]):
                continue
            gap = E[n] - E[m]
            vnm = brute_matrix_element(psi[:, n], V, psi[:, m])
            for k in range(len(edges) - 1):
                if edges[k] < gap <= edges[k + 1]:
                    masses[k] += np.pi * abs(vnm) ** 2 / (N * gap)
    return masses


def brute_psi(eig, x1, plus, minus):
    E, psi = eig.energies, eig.vectors
    total = 0.0
    for n in range(len(E)):
        if not plus.lo < E[n] <= plus.hi:
            continue
        for m in range(len(E)):
            if minus.lo < E[m] <= minus.hi:
                total += abs(sum(psi[x, n] * x1[x] * psi[x, m] for x in range(len(E)))) ** 2
    return total / len(E)


# one line per acceptance criterion, echoed at the end of the run
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
        terminalreporter.write_line(line)
