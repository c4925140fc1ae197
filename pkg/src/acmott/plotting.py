"""Figures rendered next to the CSV output when a run sets ``plot = true``."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _column(res, name):
    i = res.columns.index(name)
    return np.array([np.nan if r[i] is None else float(r[i]) for r in res.rows])


def _bars(ax, res, ylabel):
    lo, hi = _column(res, "bin_lo"), _column(res, "bin_hi")
    mass = _column(res, "mass_mean" if "mass_mean" in res.columns else "mass")
    ax.bar(lo, mass / (hi - lo), width=hi - lo, align="edge", color="0.6", edgecolor="k", lw=0.3)
    ax.set_ylabel(ylabel)


def _plot_decay(ax, res):
    d = _column(res, "distance")
    ax.semilogy(d, _column(res, "mean"), "o", ms=3)
    r = res.results
    if np.isfinite(r.get("slope", np.nan)):
        ax.semilogy(d, np.exp(r["log_K"] + r["slope"] * d), "r-", lw=1,
                    label=rf"$\hat\ell$ = {r['ell']:.3g}, $R^2$ = {r['r2']:.4f}")
        ax.legend()
    ax.set_xlabel("graph distance")
    ax.set_ylabel("disorder mean")


def _plot_mott(ax, res):
    nu = _column(res, "nu")
    y, se = _column(res, "y_mean"), _column(res, "y_stderr")
    ax.errorbar(nu, y, yerr=np.nan_to_num(se), fmt="o", capsize=2)
    fit = res.results.get("fit")
    if fit:
        grid = np.geomspace(nu.min(), nu.max(), 100)
        ax.plot(grid, np.exp(fit["log_c"]) * grid**2 * np.log(1 / grid) ** fit["gamma"], "r-",
                label=rf"$\hat\gamma$ = {fit['gamma']:.2f} $\pm$ {fit['gamma_stderr']:.2f}")
        ax.legend()
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel(r"$\nu$")


def render(res, path) -> Path:
    """Draw a single-panel summary of ``res`` and save it to ``path``."""
    fig, ax = plt.subplots(figsize=(6, 4))
    cmd = res.command
    if cmd == "dos":
        _bars(ax, res, "density of states")
        ax.set_xlabel("energy")
    elif cmd == "sigma":
        _bars(ax, res, "conductivity measure / bin width")
        ax.set_xlabel(r"$\nu$")
    elif cmd == "spacings":
        _bars(ax, res, "spacing density")
        x = np.linspace(0, _column(res, "bin_hi").max(), 200)
        ax.plot(x, np.exp(-x), "r-", label="Poisson")
        ax.legend()
    elif cmd in ("green", "fermi-decay"):
        _plot_decay(ax, res)
    elif cmd == "mott":
        _plot_mott(ax, res)
    elif cmd == "respond":
        t = _column(res, "t")
        ax.plot(t, _column(res, "j_in"), label="in phase")
        ax.plot(t, _column(res, "j_out"), label="out of phase")
        ax.set_xlabel("t")
        ax.legend()
    elif cmd in ("wegner", "minami"):
        mid = 0.5 * (_column(res, "lo") + _column(res, "hi"))
        ax.errorbar(mid, _column(res, "lhs_mean"), yerr=3 * np.nan_to_num(_column(res, "lhs_stderr")),
                    fmt="o", label="lhs (3 stderr)")
        ax.plot(mid, _column(res, "rhs"), "r_", ms=15, label="bound")
        ax.set_xlabel("interval center")
        ax.legend()
    elif cmd == "chain":
        ax.plot(_column(res, "rhs"), _column(res, "lhs"), ".", ms=3)
        top = np.nanmax(_column(res, "rhs")) if res.rows else 1.0
        ax.plot([0, top], [0, top], "r-", lw=1)
        ax.set_xlabel("bound")
        ax.set_ylabel("trace")
    else:
        labels = [r[0] for r in res.rows]
        ax.bar(labels, _column(res, "value_mean"), yerr=np.nan_to_num(_column(res, "value_stderr")))
    ax.set_title(cmd)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
