"""Finite-volume estimators of the density of states, the conductivity measure,
the correlation measure on energy rectangles, and the responses built on them.

Per-realization functions return plain arrays or floats; disorder averages are
formed with :func:`aggregate` (or by the harness, which reduces in realization
index order).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .model import LatticeOperator
from .spectral import (
    EigenSystem,
    Interval,
    count_in,
    matrix_elements,
    position_elements,
    window_indices,
)

DEGENERACY_GAP = 1e-12


def aggregate(samples) -> tuple[np.ndarray, np.ndarray | None]:
    """Mean and standard error along axis 0, in the given order.

    The standard error is ``None`` for a single sample.
    """
    arr = np.asarray(samples, dtype=float)
    if arr.shape[0] == 0:
        raise ValueError("cannot aggregate zero samples")
    mean = arr.sum(axis=0) / arr.shape[0]
    if arr.shape[0] < 2:
        return mean, None
    var = ((arr - mean) ** 2).sum(axis=0) / (arr.shape[0] - 1)
    return mean, np.sqrt(var / arr.shape[0])


@dataclass(frozen=True)
class BinnedMeasure:
    """Nonnegative measure on the half-open bins ``(edges[k], edges[k+1]]``.

    When ``even`` is set the stored bins describe the positive half only and
    the measure is understood as its mirror-symmetric extension.
    """

    edges: np.ndarray
    mass_mean: np.ndarray
    mass_stderr: np.ndarray | None = None
    n_realizations: int = 1
    even: bool = False
    diagnostics: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        edges = np.asarray(self.edges, dtype=float)
        if edges.ndim != 1 or edges.size < 2 or np.any(np.diff(edges) <= 0):
            raise ValueError("bin edges must be a strictly ascending array of length >= 2")
        if self.even and edges[0] < 0:
            raise ValueError("an even measure stores only bins on the positive half-line")
        mass = np.asarray(self.mass_mean, dtype=float)
        if mass.shape != (edges.size - 1,):
            raise ValueError("one mass per bin is required")
        if np.any(mass < 0):
            raise ValueError("measure masses must be nonnegative")
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "mass_mean", mass)

    @classmethod
    def from_samples(cls, edges, samples, even=False, **diagnostics) -> "BinnedMeasure":
        samples = np.asarray(samples, dtype=float)
        mean, stderr = aggregate(samples)
        return cls(edges, mean, stderr, samples.shape[0], even, dict(diagnostics))

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[:-1] + self.edges[1:])

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.edges)

    @property
    def total_mass_mean(self) -> float:
        """Mass of the whole measure, both halves when even."""
        total = float(self.mass_mean.sum())
        return 2.0 * total if self.even else total

    def mirrored(self) -> tuple[np.ndarray, np.ndarray]:
        """Bin centers and masses of the full (two-sided) measure."""
        c, m = self.centers, self.mass_mean
        if not self.even:
            return c, m
        return np.concatenate([-c[::-1], c]), np.concatenate([m[::-1], m])

    def mass_on(self, interval: Interval) -> float:
        """Mass of the bins lying inside ``interval``; its ends must be bin edges (or mirrored)."""
        lo, hi = interval.lo, interval.hi
        if self.even:
            pos = _bins_inside(self.edges, max(lo, 0.0), hi)
            neg = _bins_inside(self.edges, max(-hi, 0.0), -lo)
            return float(np.dot(self.mass_mean, pos) + np.dot(self.mass_mean, neg))
        return float(np.dot(self.mass_mean, _bins_inside(self.edges, lo, hi)))


def _bins_inside(edges, lo, hi):
    if hi <= lo:
        return np.zeros(edges.size - 1)
    return ((edges[:-1] >= lo - 1e-15) & (edges[1:] <= hi + 1e-15)).astype(float)


# -- density of states ----------------------------------------------------------


def dos_masses(eig: EigenSystem, edges) -> np.ndarray:
    """Normalized eigenvalue counting measure of one realization on the given bins."""
    edges = np.asarray(edges, dtype=float)
    if edges.size < 2:
        raise ValueError("empty bin grid")
    return count_in(eig.energies, edges) / eig.N


# -- conductivity measure -------------------------------------------------------


def straddling_sets(eig: EigenSystem, E_F: float, reach: float | None = None):
    """Indices of states above and at-or-below ``E_F``, optionally within ``reach`` of it."""
    E = eig.energies
    split = np.searchsorted(E, E_F, side="right")
    if reach is None:
        return np.arange(split, E.size), np.arange(0, split)
    top = np.searchsorted(E, E_F + reach, side="right")
    bottom = np.searchsorted(E, E_F - reach, side="right")
    return np.arange(split, top), np.arange(bottom, split)


class SigmaSample(NamedTuple):
    masses: np.ndarray
    degenerate_pairs: int


def sigma_masses(
    eig: EigenSystem, velocity: LatticeOperator, E_F: float, edges
) -> SigmaSample:
    """Positive-half masses of the conductivity measure for one realization.

    Every pair with ``E_m <= E_F < E_n`` deposits ``pi |<psi_n, v psi_m>|^2 / (N (E_n - E_m))``
    into the bin holding ``E_n - E_m``; the negative half is its mirror image.
    """
    edges = np.asarray(edges, dtype=float)
    if edges.size < 2 or edges[0] < 0 or np.any(np.diff(edges) <= 0):
        raise ValueError("frequency bins must be ascending and start at a nonnegative edge")
    upper, lower = straddling_sets(eig, E_F, reach=edges[-1])
    masses = np.zeros(edges.size - 1)
    if upper.size == 0 or lower.size == 0:
        return SigmaSample(masses, 0)
    gap = eig.energies[upper][:, None] - eig.energies[lower][None, :]
    weight = np.abs(matrix_elements(eig, velocity, upper, lower)) ** 2
    degenerate = gap < DEGENERACY_GAP
    ok = ~degenerate & (gap > edges[0]) & (gap <= edges[-1])
    deposit = np.pi * weight[ok] / (eig.N * gap[ok])
    k = np.searchsorted(edges, gap[ok], side="left") - 1
    np.add.at(masses, k, deposit)
    return SigmaSample(masses, int(degenerate.sum()))


def sigma_masses_by_energy(
    eig: EigenSystem, velocity: LatticeOperator, E_F: float, edges
) -> SigmaSample:
    """Same measure accumulated one occupied level at a time.

    This is the discrete counterpart of integrating ``pi/nu * phi(E + nu, E)`` over
    ``E`` in ``(E_F - nu, E_F]``, and serves as an independent accumulation order.
    """
    edges = np.asarray(edges, dtype=float)
    upper, lower = straddling_sets(eig, E_F, reach=edges[-1])
    masses = np.zeros(edges.size - 1)
    degenerate = 0
    for m in lower[::-1]:
        col = matrix_elements(eig, velocity, upper, [m])[:, 0]
        gap = eig.energies[upper] - eig.energies[m]
        for g, v in zip(gap, col):
            if g < DEGENERACY_GAP:
                degenerate += 1
                continue
            if not edges[0] < g <= edges[-1]:
                continue
            k = int(np.searchsorted(edges, g, side="left")) - 1
            masses[k] += np.pi * abs(v) ** 2 / (eig.N * g)
    return SigmaSample(masses, degenerate)


def sigma_measure(samples: list[SigmaSample], edges) -> BinnedMeasure:
    """Disorder average of per-realization conductivity-measure samples."""
    degenerate = sum(s.degenerate_pairs for s in samples)
    return BinnedMeasure.from_samples(
        edges, [s.masses for s in samples], even=True, degenerate_pairs=degenerate
    )


# -- correlation measure on rectangles --------------------------------------------


class PsiSample(NamedTuple):
    value: float
    degenerate_pairs: int


def psi_rectangle(
    eig: EigenSystem,
    plus: Interval,
    minus: Interval,
    *,
    x1: np.ndarray | None = None,
    velocity: LatticeOperator | None = None,
    estimator: str = "psi_position",
) -> PsiSample:
    """Trace per volume of ``P_- X_1 P_+ X_1 P_-`` for one realization.

    ``psi_position`` sums ``|<psi_n, X_1 psi_m>|^2``; ``psi_velocity`` sums
    ``|<psi_n, v psi_m>|^2 / (E_n - E_m)^2``, which is identical for the
    commutator velocity.
    """
    if not plus.disjoint(minus):
        raise ValueError("energy windows must be disjoint")
    up = window_indices(eig, plus)
    down = window_indices(eig, minus)
    if up.size == 0 or down.size == 0:
        return PsiSample(0.0, 0)
    if estimator == "psi_position":
        if x1 is None:
            raise ValueError("psi_position needs the position coordinates x1")
        elems = position_elements(eig, x1, up, down)
        return PsiSample(float(np.sum(np.abs(elems) ** 2)) / eig.N, 0)
    if estimator == "psi_velocity":
        if velocity is None:
            raise ValueError("psi_velocity needs a velocity operator")
        elems = np.abs(matrix_elements(eig, velocity, up, down)) ** 2
        gap = eig.energies[up][:, None] - eig.energies[down][None, :]
        bad = np.abs(gap) < DEGENERACY_GAP
        value = np.sum(elems[~bad] / gap[~bad] ** 2) / eig.N
        return PsiSample(float(value), int(bad.sum()))
    raise ValueError(f"unknown estimator {estimator!r}")


# -- conductivities -------------------------------------------------------------


def sigma_bar(measure: BinnedMeasure, nu: float) -> float:
    """Average in-phase conductivity ``Sigma((0, nu]) / nu``; ``nu`` must be a bin edge."""
    if not nu > 0:
        raise ValueError("nu must be positive")
    edges = measure.edges
    if edges[0] != 0.0:
        raise ValueError("the average conductivity needs bins starting at frequency 0")
    hit = np.flatnonzero(np.isclose(edges, nu, rtol=1e-12, atol=0.0))
    if hit.size == 0:
        raise ValueError(f"nu={nu!r} is not a bin edge; refusing to interpolate")
    k = int(hit[0])
    return float(measure.mass_mean[:k].sum()) / float(edges[k])


def cauchy_conductivity(measure: BinnedMeasure, eta: float, nu):
    """Regularized conductivity ``-(i/pi) * sum_k m_k / (lambda_k + nu - i eta)``."""
    if not eta > 0:
        raise ValueError("eta must be positive")
    lam, mass = measure.mirrored()
    nu_arr = np.asarray(nu, dtype=float)
    denom = lam[None, :] + nu_arr.reshape(-1, 1) - 1j * eta
    out = -1j / np.pi * (mass[None, :] / denom).sum(axis=1)
    return out.reshape(nu_arr.shape) if nu_arr.ndim else complex(out[0])


@dataclass(frozen=True)
class FieldProfile:
    """Fourier amplitudes of the electric field on a grid symmetric about zero."""

    nu: np.ndarray
    amplitude: np.ndarray

    def __post_init__(self):
        nu = np.asarray(self.nu, dtype=float)
        amp = np.asarray(self.amplitude, dtype=complex)
        if nu.ndim != 1 or nu.size < 3 or np.any(np.diff(nu) <= 0):
            raise ValueError("field grid must be strictly ascending with at least 3 nodes")
        if amp.shape != nu.shape:
            raise ValueError("one amplitude per grid node is required")
        if not np.array_equal(nu[::-1], -nu):
            raise ValueError("field grid must be symmetric about zero")
        if not np.array_equal(amp[::-1], np.conj(amp)):
            raise ValueError("amplitudes must satisfy E(-nu) = conj(E(nu))")
        object.__setattr__(self, "nu", nu)
        object.__setattr__(self, "amplitude", amp)

    @classmethod
    def from_function(cls, func, nu_max: float, n_half: int) -> "FieldProfile":
        """Sample ``func`` on ``[0, nu_max]`` with ``n_half`` steps and mirror it."""
        pos = np.linspace(0.0, nu_max, n_half + 1)
        vals = np.asarray(func(pos), dtype=complex) * np.ones_like(pos)
        vals[0] = vals[0].real
        nu = np.concatenate([-pos[:0:-1], pos])
        amp = np.concatenate([np.conj(vals[:0:-1]), vals])
        return cls(nu, amp)

    @property
    def step(self) -> float:
        return float(np.min(np.diff(self.nu)))

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        re = np.interp(x, self.nu, self.amplitude.real, left=0.0, right=0.0)
        im = np.interp(x, self.nu, self.amplitude.imag, left=0.0, right=0.0)
        return re + 1j * im


def _real_part(total, scale, what):
    if abs(total.imag) > 1e-9 * max(scale, 1e-300):
        raise ArithmeticError(f"{what} has a non-negligible imaginary part {total.imag:.3e}")
    return float(total.real)


def in_phase_current(measure: BinnedMeasure, field: FieldProfile, t) -> np.ndarray | float:
    """``J_in(t) = sum_k m_k exp(i lambda_k t) E(lambda_k)`` over the two-sided measure."""
    lam, mass = measure.mirrored()
    support = lam[mass > 0]
    if support.size and (support.min() < field.nu[0] or support.max() > field.nu[-1]):
        raise ValueError("field grid does not cover the support of the measure")
    amp = field(lam)
    t_arr = np.atleast_1d(np.asarray(t, dtype=float))
    terms = mass[None, :] * np.exp(1j * np.outer(t_arr, lam)) * amp[None, :]
    totals = terms.sum(axis=1)
    scales = np.abs(terms).sum(axis=1)
    out = np.array([_real_part(a, s, "in-phase current") for a, s in zip(totals, scales)])
    return out if np.ndim(t) else float(out[0])


def principal_value(field: FieldProfile, t: float, lam: np.ndarray) -> np.ndarray:
    """``PV int exp(i nu t) E(nu) / (nu - lambda) d nu`` on the field grid, per ``lambda``.

    The singularity is subtracted, ``g(nu) - g(lambda)`` is integrated by the
    trapezoid rule and ``g(lambda) log|(b - lambda)/(a - lambda)|`` is added back.
    At a node coinciding with ``lambda`` the integrand takes its limit ``g'(lambda)``.
    """
    nu = field.nu
    g = np.exp(1j * nu * t) * field.amplitude
    a, b = nu[0], nu[-1]
    lam = np.asarray(lam, dtype=float)
    g_lam = np.exp(1j * lam * t) * field(lam)
    w = np.empty_like(nu)
    dnu = np.diff(nu)
    w[0], w[-1] = dnu[0] / 2, dnu[-1] / 2
    w[1:-1] = (dnu[:-1] + dnu[1:]) / 2
    dg = np.gradient(g, nu)
    diff = nu[None, :] - lam[:, None]
    hit = np.abs(diff) <= 1e-12 * field.step
    safe = np.where(hit, 1.0, diff)
    integrand = np.where(hit, dg[None, :], (g[None, :] - g_lam[:, None]) / safe)
    smooth = integrand @ w
    out = smooth.astype(complex)
    nonzero = g_lam != 0
    at_end = np.isclose(lam, a, rtol=0, atol=1e-12 * field.step) | np.isclose(
        lam, b, rtol=0, atol=1e-12 * field.step
    )
    if np.any(nonzero & at_end):
        raise ValueError("principal value diverges: field is nonzero at the grid end")
    sel = nonzero & ~at_end
    out[sel] += g_lam[sel] * np.log(np.abs((b - lam[sel]) / (a - lam[sel])))
    return out


def out_phase_current(measure: BinnedMeasure, field: FieldProfile, t) -> np.ndarray | float:
    """``J_out(t) = 1/(pi i) sum_k m_k PV int exp(i nu t) E(nu) / (nu - lambda_k) d nu``."""
    lam, mass = measure.mirrored()
    keep = mass > 0
    lam, mass = lam[keep], mass[keep]
    t_arr = np.atleast_1d(np.asarray(t, dtype=float))
    out = np.empty(t_arr.size)
    for i, ti in enumerate(t_arr):
        if lam.size == 0:
            out[i] = 0.0
            continue
        pv = principal_value(field, ti, lam)
        terms = mass * pv / (np.pi * 1j)
        out[i] = _real_part(terms.sum(), np.abs(terms).sum(), "out-of-phase current")
    return out if np.ndim(t) else float(out[0])
