"""Frequency sweeps with volume coupled to frequency, and the log-power fit.

The fitted model is ``y = c * nu**2 * log(1/nu)**gamma``, estimated by weighted
least squares in the coordinates ``log(y / nu**2)`` versus ``log(log(1/nu))``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

PROOF_CONSTANT = 205
IMPROVED_CONSTANT = 36


def choose_L(nu: float, ell: float, factor: float = PROOF_CONSTANT) -> int:
    """Side length ``max(3, ceil(factor * ell * log(1/nu)))``."""
    if not 0 < nu < 1:
        raise ValueError(f"nu must lie in (0, 1), got {nu!r}")
    if not ell > 0:
        raise ValueError(f"localization length must be positive, got {ell!r}")
    # round first so that exact products such as 20 * 0.5 * 2 do not ceil upward
    raw = round(factor * ell * math.log(1.0 / nu), 9)
    return max(3, math.ceil(raw))


def bound_constant(C: float, d: int, rho_sup: float, ell: float, observable: str = "psi") -> float:
    """``C**(d+2) * pi**2 * rho_sup**2 * ell**(d+2)``, one more factor of pi for sigma_bar."""
    power = 3 if observable == "sigma_bar" else 2
    return C ** (d + 2) * math.pi**power * rho_sup**2 * ell ** (d + 2)


@dataclass(frozen=True)
class ScalingFit:
    nu: np.ndarray
    y: np.ndarray
    y_stderr: np.ndarray | None
    log_c: float
    gamma: float
    log_c_stderr: float
    gamma_stderr: float
    residuals: np.ndarray
    weakly_identified: bool

    @property
    def c(self) -> float:
        return math.exp(self.log_c)

    def bound_ratio(self, d: int) -> np.ndarray:
        """``y / (nu**2 log(1/nu)**(d+2))`` at every sampled frequency."""
        return self.y / (self.nu**2 * np.log(1.0 / self.nu) ** (d + 2))


def fit_mott(nu, y, y_stderr=None) -> ScalingFit:
    """Weighted least-squares fit of ``log(y/nu^2) = log c + gamma log log(1/nu)``.

    Weights are ``1/stderr^2`` transported to log space; points with zero or
    missing stderr fall back to an unweighted fit.
    """
    nu = np.asarray(nu, dtype=float)
    y = np.asarray(y, dtype=float)
    if nu.size < 2:
        raise ValueError("need at least two frequencies to fit")
    if np.any((nu <= 0) | (nu >= 1)):
        raise ValueError("fit uses only frequencies in (0, 1)")
    if np.any(y <= 0):
        raise ValueError("observations must be positive to be fitted in log space")
    order = np.argsort(-nu, kind="stable")
    nu, y = nu[order], y[order]
    se = None if y_stderr is None else np.asarray(y_stderr, dtype=float)[order]

    logs = np.log(1.0 / nu)
    weakly = bool(logs.max() / logs.min() < 2.0)
    if weakly:
        warnings.warn("log(1/nu) spans less than a factor 2; gamma is weakly identified",
                      RuntimeWarning, stacklevel=2)
    x = np.log(logs)
    t = np.log(y / nu**2)
    if se is not None and np.all(se > 0):
        w = (y / se) ** 2
    else:
        w = np.ones_like(y)
    A = np.column_stack([np.ones_like(x), x])
    Aw = A * np.sqrt(w)[:, None]
    tw = t * np.sqrt(w)
    coef, *_ = np.linalg.lstsq(Aw, tw, rcond=None)
    resid = t - A @ coef
    dof = max(nu.size - 2, 1)
    s2 = float(np.sum(w * resid**2) / dof)
    cov = s2 * np.linalg.inv(Aw.T @ Aw)
    return ScalingFit(
        nu, y, se, float(coef[0]), float(coef[1]),
        float(np.sqrt(cov[0, 0])), float(np.sqrt(cov[1, 1])), resid, weakly,
    )


@dataclass(frozen=True)
class BoundRow:
    nu: float
    ratio: float
    constant: float
    below: bool


def bound_report(fit_or_nu, y=None, *, ell: float, rho_sup: float, d: int,
                 constants=(PROOF_CONSTANT, IMPROVED_CONSTANT), observable: str = "psi") -> dict:
    """Compare ``y/(nu^2 log(1/nu)^(d+2))`` with the proof constants.

    Accepts either a :class:`ScalingFit` or raw ``(nu, y)`` arrays, so that a
    sweep with too few points to fit can still be reported.
    """
    if isinstance(fit_or_nu, ScalingFit):
        nu, yv = fit_or_nu.nu, fit_or_nu.y
    else:
        nu, yv = np.asarray(fit_or_nu, dtype=float), np.asarray(y, dtype=float)
    ratio = yv / (nu**2 * np.log(1.0 / nu) ** (d + 2)) if nu.size else np.empty(0)
    out = {"nu": nu.tolist(), "ratio": ratio.tolist(), "constants": {}}
    for C in constants:
        const = bound_constant(C, d, rho_sup, ell, observable)
        out["constants"][str(C)] = {
            "value": const,
            "all_below": bool(np.all(ratio <= const)),
            "relative": (ratio / const).tolist(),
        }
    if isinstance(fit_or_nu, ScalingFit):
        out["gamma"] = fit_or_nu.gamma
        out["gamma_stderr"] = fit_or_nu.gamma_stderr
        out["gamma_ci95"] = [fit_or_nu.gamma - 1.96 * fit_or_nu.gamma_stderr,
                             fit_or_nu.gamma + 1.96 * fit_or_nu.gamma_stderr]
        out["reference_gamma"] = {"mott": d + 1, "proved_bound": d + 2}
    return out
