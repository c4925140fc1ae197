"""Monte Carlo checks of the estimates behind the conductivity bound.

Covers the Wegner and Minami bounds, the deterministic trace-chain inequality,
exponential decay of fractional Green's-function moments and of the Fermi
projection, and nearest-neighbour level-spacing statistics.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, asdict

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy import stats

from .measures import aggregate
from .model import LatticeOperator, TorusLattice
from .spectral import EigenSystem, Interval, position_elements, window_indices


@dataclass(frozen=True)
class BoundCheckReport:
    lhs_mean: float
    lhs_stderr: float | None
    rhs: float
    n_realizations: int
    interval: tuple[float, float]
    config: dict = field(default_factory=dict)

    @property
    def margin(self) -> float:
        return (self.rhs - self.lhs_mean) / self.rhs

    @property
    def passed(self) -> bool:
        return self.lhs_mean - 3.0 * (self.lhs_stderr or 0.0) <= self.rhs

    def as_dict(self) -> dict:
        out = asdict(self)
        out["interval"] = list(self.interval)
        out.update(margin=self.margin, passed=self.passed)
        return out


def wegner_rhs(rho_sup: float, length: float) -> float:
    return rho_sup * length


def minami_rhs(rho_sup: float, length: float, N: int) -> float:
    return np.pi**2 * rho_sup**2 * length**2 * float(N) ** 2


def finite_volume_mott_rhs(rho_sup: float, hull_length: float, L: int, d: int) -> float:
    """Bound on the trace per volume of ``P_- X_1 P_+ X_1 P_-`` for windows inside ``hull``."""
    return np.pi**2 / 4 * rho_sup**2 * hull_length**2 * float(L) ** (d + 2)


def eigen_count(eig: EigenSystem, interval: Interval) -> int:
    return int(window_indices(eig, interval).size)


def wegner_sample(eig: EigenSystem, interval: Interval) -> float:
    return eigen_count(eig, interval) / eig.N


def minami_sample(eig: EigenSystem, interval: Interval) -> float:
    T = eigen_count(eig, interval)
    return float(T * T - T)


def bound_report(samples, rhs: float, interval: Interval, **config) -> BoundCheckReport:
    mean, stderr = aggregate(samples)
    return BoundCheckReport(
        float(mean),
        None if stderr is None else float(stderr),
        float(rhs),
        len(samples),
        (interval.lo, interval.hi),
        config,
    )


@dataclass(frozen=True)
class ChainSample:
    lhs: float
    rhs: float
    n_plus: int
    n_minus: int

    @property
    def holds(self) -> bool:
        return self.lhs <= self.rhs * (1.0 + 1e-12)

    @property
    def margin(self) -> float:
        return (self.rhs - self.lhs) / self.rhs if self.rhs > 0 else 0.0


def trace_chain(eig: EigenSystem, x1: np.ndarray, plus: Interval, minus: Interval, L: int) -> ChainSample:
    """``tr(P_- X P_+ X P_-)`` against ``(L^2/4) tr(P_+) tr(P_-)`` for one realization."""
    if not plus.disjoint(minus):
        raise ValueError("energy windows must be disjoint")
    up = window_indices(eig, plus)
    down = window_indices(eig, minus)
    if up.size == 0 or down.size == 0:
        return ChainSample(0.0, 0.0, int(up.size), int(down.size))
    lhs = float(np.sum(np.abs(position_elements(eig, x1, up, down)) ** 2))
    rhs = L**2 / 4.0 * up.size * down.size
    return ChainSample(lhs, rhs, int(up.size), int(down.size))


# -- exponential decay fits -----------------------------------------------------


@dataclass(frozen=True)
class DecayFit:
    distances: np.ndarray
    mean: np.ndarray
    mean_stderr: np.ndarray | None
    log_K: float
    slope: float
    r2: float
    ell_stderr: float | None
    n_realizations: int
    s: float | None = None
    E: float | None = None
    eta: float | None = None
    fit_range: tuple[int, int] | None = None

    @property
    def log_means(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.mean)

    @property
    def ell(self) -> float:
        return -1.0 / self.slope if self.slope < 0 else float("nan")


def _ols(x, y):
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (intercept + slope * x)
    sst = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - np.sum(resid**2) / sst if sst > 0 else float("nan")
    return float(intercept), float(slope), float(r2)


def distance_means(profile: np.ndarray, dist: np.ndarray, max_distance: int) -> np.ndarray:
    """Average a per-site profile over the sites at each distance ``0..max_distance``."""
    sums = np.bincount(dist, weights=profile, minlength=max_distance + 1)[: max_distance + 1]
    counts = np.bincount(dist, minlength=max_distance + 1)[: max_distance + 1]
    return sums / counts


def fit_decay(per_realization: np.ndarray, min_distance: int = 2, floor: float | None = None,
              **meta) -> DecayFit:
    """Log-linear fit of the disorder mean of distance profiles.

    ``per_realization`` has shape ``(n, D + 1)`` with column ``r`` holding the
    mean over sites at distance ``r``. The fit runs over ``r >= min_distance``
    on the log of the mean, and the localization-length error is a jackknife
    over realizations. With ``floor`` set, the fit stops before the first
    distance whose mean drops below ``floor * mean[0]`` (values under the
    floating-point resolution of the estimator).
    """
    R = np.asarray(per_realization, dtype=float)
    n = R.shape[0]
    mean, stderr = aggregate(R)
    end = R.shape[1]
    if floor is not None:
        below = np.nonzero(mean < floor * mean[0])[0]
        if below.size:
            end = max(int(below[0]), min_distance)
    x = np.arange(R.shape[1], dtype=float)[min_distance:end]
    if x.size < 2 or np.any(mean[min_distance:end] <= 0):
        return DecayFit(np.arange(R.shape[1]), mean, stderr, float("nan"), float("nan"),
                        float("nan"), None, n, **meta)
    log_K, slope, r2 = _ols(x, np.log(mean[min_distance:end]))
    ell_stderr = None
    if n >= 3:
        total = R.sum(axis=0)
        ells = np.empty(n)
        for i in range(n):
            loo = (total - R[i]) / (n - 1)
            _, sl, _ = _ols(x, np.log(loo[min_distance:end]))
            ells[i] = -1.0 / sl
        ell_stderr = float(np.sqrt((n - 1) / n * np.sum((ells - ells.mean()) ** 2)))
    return DecayFit(np.arange(R.shape[1]), mean, stderr, log_K, slope, r2, ell_stderr, n,
                    fit_range=(min_distance, end - 1), **meta)


def default_max_distance(lattice: TorusLattice) -> int:
    return lattice.L // 2 - 2


class SolverBreakdown(RuntimeError):
    pass


def green_column(H: LatticeOperator, z: complex, source: int = 0, tol: float = 1e-10) -> np.ndarray:
    """Solve ``(H - z) u = delta_source`` by sparse LU and verify the residual."""
    N = H.shape[0]
    A = (H.matrix - z * sp.identity(N, format="csr")).tocsc()
    b = np.zeros(N, dtype=complex)
    b[source] = 1.0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", spla.MatrixRankWarning)
        u = spla.spsolve(A, b)
    if not np.all(np.isfinite(u)):
        raise SolverBreakdown("non-finite resolvent column")
    resid = np.linalg.norm(A @ u - b)
    if resid > tol:
        raise SolverBreakdown(f"resolvent residual {resid:.2e} above {tol:.0e}")
    return u


def green_moment_profile(
    lattice: TorusLattice, H: LatticeOperator, E: float, eta: float, s: float,
    max_distance: int, retries: int = 3,
) -> tuple[np.ndarray, int]:
    """Distance profile of ``|G(0, x; E + i eta)|^s`` for one realization, plus retry count."""
    if not 0 < s < 1:
        raise ValueError(f"fractional exponent must lie in (0, 1), got {s!r}")
    if eta == 0:
        raise ValueError("eta must be nonzero")
    dist = lattice.graph_distance(0)
    for attempt in range(retries + 1):
        try:
            u = green_column(H, E + 1j * eta * (1.0 + 1e-3 * attempt))
            break
        except SolverBreakdown:
            if attempt == retries:
                raise
    return distance_means(np.abs(u) ** s, dist, max_distance), attempt


def fermi_projection_row(eig: EigenSystem, E_F: float, source: int = 0) -> np.ndarray:
    """``P(source, x) = sum_{E_n <= E_F} psi_n(source) psi_n(x)``."""
    occ = np.searchsorted(eig.energies, E_F, side="right")
    psi = eig.vectors[:, :occ]
    return psi @ psi[source].conj()


def fermi_profile(lattice: TorusLattice, eig: EigenSystem, E_F: float, max_distance: int) -> np.ndarray:
    row = np.abs(fermi_projection_row(eig, E_F))
    return distance_means(row, lattice.graph_distance(0), max_distance)


# -- level spacings -------------------------------------------------------------


@dataclass(frozen=True)
class SpacingStats:
    spacings: np.ndarray
    hist_edges: np.ndarray
    hist_mass: np.ndarray
    ks_distance: float
    mean_level_count: float
    warning: str | None = None


MIN_SPACINGS = 1000


def spacing_stats(spectra, interval: Interval, n_bins: int = 40, hist_max: float = 5.0) -> SpacingStats:
    """Unfolded nearest-neighbour spacings inside ``interval`` pooled over realizations.

    Spacings are divided by the mean level spacing ``|I| / <count>``, with the
    count averaged over realizations, then compared with ``exp(-x)`` by a
    Kolmogorov-Smirnov distance.
    """
    counts, pooled = [], []
    for energies in spectra:
        E = np.asarray(energies, dtype=float)
        inside = E[interval.contains(E)]
        counts.append(inside.size)
        pooled.append(np.diff(np.sort(inside)))
    mean_count = float(np.mean(counts)) if counts else 0.0
    raw = np.concatenate(pooled) if pooled else np.empty(0)
    unfolded = raw * mean_count / interval.length if mean_count > 0 else raw
    edges = np.linspace(0.0, hist_max, n_bins + 1)
    if unfolded.size:
        hist = np.histogram(np.clip(unfolded, 0, hist_max), bins=edges)[0] / unfolded.size
        ks = float(stats.kstest(unfolded, "expon").statistic)
    else:
        hist = np.zeros(n_bins)
        ks = float("nan")
    warning = None
    if unfolded.size < MIN_SPACINGS:
        warning = f"only {unfolded.size} spacings (< {MIN_SPACINGS}); statistics are rough"
        warnings.warn(warning, RuntimeWarning, stacklevel=2)
    return SpacingStats(unfolded, edges, hist, ks, mean_count, warning)
