"""Seeded Monte Carlo orchestration behind every subcommand.

Each subcommand maps a stateless per-realization task over realization
indices (optionally in worker processes), then reduces the results in
ascending index order so that outputs depend only on the configuration.
"""

from __future__ import annotations

import logging
import struct
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial
from pathlib import Path

import numpy as np

from . import __version__
from . import diagnostics as diag
from . import measures
from . import scaling
from .config import ExperimentConfig
from .io import read_field_csv, read_measure_csv, write_csv, write_json
from .model import (
    DisorderModel,
    build_hamiltonian,
    build_lattice,
    sample_potential,
    velocity_operator,
)
from .spectral import EnergyWindows, Interval, diagonalize

log = logging.getLogger(__name__)

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_EMPTY = 0, 2, 3, 4


class NumericalFailure(RuntimeError):
    pass


@dataclass
class RunResult:
    """What a subcommand produced: CSV table, JSON payload, envelope extras, exit code."""

    command: str
    columns: list
    rows: list
    results: dict
    seeds: list = field(default_factory=list)
    warnings: list = field(default_factory=list)
    exit_code: int = EXIT_OK


@dataclass(frozen=True)
class Partial:
    config_hash: str
    index: int
    seed: int
    value: object


def merge(partials, key=lambda v: v):
    """Mean and stderr of ``key(value)`` over partials, reduced in index order.

    Refuses partials from different configurations.
    """
    partials = list(partials)
    if not partials:
        raise ValueError("nothing to merge")
    hashes = {p.config_hash for p in partials}
    if len(hashes) > 1:
        raise ValueError(f"refusing to merge partials from {len(hashes)} different configurations")
    ordered = sorted(partials, key=lambda p: p.index)
    return measures.aggregate([key(p.value) for p in ordered])


def _stderr_list(stderr, n):
    return [None] * n if stderr is None else [float(v) for v in np.atleast_1d(stderr)]


# -- per-realization tasks (top level so they pickle) -------------------------


def _setup(cfg: ExperimentConfig, index: int, L: int | None = None, stream: int | None = None):
    lattice = build_lattice(cfg.d, cfg.L if L is None else L)
    model = DisorderModel(cfg.W, cfg.master_seed, cfg.density)
    real = sample_potential(model, index, lattice, stream)
    return lattice, model, real, build_hamiltonian(lattice, real)


def _eigen(cfg, index, L=None, stream=None):
    lattice, model, real, H = _setup(cfg, index, L, stream)
    eig = diagonalize(H, index=index, seed=real.seed)
    return lattice, model, real, H, eig


def task_dos(cfg, edges, index):
    _, _, real, _, eig = _eigen(cfg, index)
    return real.seed, measures.dos_masses(eig, edges)


def task_sigma(cfg, edges, index):
    lattice, _, real, H, eig = _eigen(cfg, index)
    v = velocity_operator(lattice, H, cfg.variant)
    return real.seed, measures.sigma_masses(eig, v, cfg.E_F, edges)


def task_psi(cfg, index):
    lattice, _, real, H, eig = _eigen(cfg, index)
    w = EnergyWindows(cfg.E_F, cfg.nu)
    x1 = lattice.centered_x1
    v = velocity_operator(lattice, H, "commutator")
    psi_I = measures.psi_rectangle(eig, w.I_plus, w.I_minus, x1=x1)
    psi_J = measures.psi_rectangle(eig, w.J_plus, w.J_minus, x1=x1)
    psi_Iv = measures.psi_rectangle(eig, w.I_plus, w.I_minus, velocity=v, estimator="psi_velocity")
    # the sandwich bounds relate psi to the commutator velocity only
    smp = measures.sigma_masses(eig, v, cfg.E_F, [0.0, cfg.nu])
    sbar = float(smp.masses[0]) / cfg.nu
    return real.seed, {
        "psi_I": psi_I.value,
        "psi_J": psi_J.value,
        "psi_I_velocity": psi_Iv.value,
        "sigma_bar": sbar,
        "degenerate_pairs": psi_Iv.degenerate_pairs + smp.degenerate_pairs,
    }


def task_counts(cfg, intervals, index):
    _, _, real, _, eig = _eigen(cfg, index)
    return real.seed, [diag.eigen_count(eig, iv) for iv in intervals]


def task_chain(cfg, index):
    lattice, _, real, _, eig = _eigen(cfg, index)
    w = EnergyWindows(cfg.E_F, cfg.nu)
    return real.seed, diag.trace_chain(eig, lattice.centered_x1, w.I_plus, w.I_minus, lattice.L)


def task_green(cfg, max_distance, index):
    lattice, _, real, H = _setup(cfg, index)
    profile, retries = diag.green_moment_profile(lattice, H, cfg.E_F, cfg.eta, cfg.s, max_distance)
    return real.seed, (profile, retries)


def task_fermi(cfg, max_distance, index):
    lattice, _, real, _, eig = _eigen(cfg, index)
    return real.seed, diag.fermi_profile(lattice, eig, cfg.E_F, max_distance)


def task_spectrum(cfg, index):
    _, _, real, _, eig = _eigen(cfg, index)
    return real.seed, np.array(eig.energies)


def task_mott(cfg, nu, L, stream, index):
    lattice, _, real, H, eig = _eigen(cfg, index, L=L, stream=stream)
    w = EnergyWindows(cfg.E_F, nu)
    if cfg.observable == "psi":
        out = measures.psi_rectangle(eig, w.I_plus, w.I_minus, x1=lattice.centered_x1)
        return real.seed, (out.value, out.degenerate_pairs)
    v = velocity_operator(lattice, H, cfg.variant)
    smp = measures.sigma_masses(eig, v, cfg.E_F, [0.0, nu])
    return real.seed, (float(smp.masses[0]) / nu, smp.degenerate_pairs)


def map_realizations(task, indices, workers: int):
    """Apply ``task`` to each index; results come back in input order."""
    indices = list(indices)
    if workers <= 1 or len(indices) < 2:
        return [task(i) for i in indices]
    chunk = max(1, len(indices) // (4 * workers))
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(task, indices, chunksize=chunk))


def _collect(cfg, task, indices=None):
    indices = range(cfg.n_realizations) if indices is None else indices
    out = map_realizations(task, indices, cfg.workers)
    parts = [Partial(cfg.hash, i, seed, value) for i, (seed, value) in zip(indices, out)]
    return parts


def _seeds(parts):
    return [int(p.seed) for p in sorted(parts, key=lambda p: p.index)]


# -- subcommands --------------------------------------------------------------


def energy_edges(cfg) -> np.ndarray:
    reach = 2 * cfg.d + cfg.W / 2
    lo = -reach - 1e-9 if cfg.energy_min is None else cfg.energy_min
    hi = reach + 1e-9 if cfg.energy_max is None else cfg.energy_max
    return np.linspace(lo, hi, cfg.n_energy_bins + 1)


def frequency_edges(cfg) -> np.ndarray:
    return np.linspace(0.0, cfg.nu_max, cfg.n_bins + 1)


def cmd_dos(cfg):
    edges = energy_edges(cfg)
    parts = _collect(cfg, partial(task_dos, cfg, edges))
    mean, stderr = merge(parts)
    se = _stderr_list(stderr, edges.size - 1)
    rho = 1.0 / cfg.W
    rows, wegner_ok = [], True
    for k in range(edges.size - 1):
        width = edges[k + 1] - edges[k]
        ok = mean[k] / width <= rho + 3 * (se[k] or 0.0) / width
        wegner_ok &= bool(ok)
        rows.append([edges[k], edges[k + 1], mean[k], se[k], len(parts)])
    results = {
        "total_mass_mean": float(mean.sum()),
        "rho_sup": rho,
        "wegner_consistent_all_bins": wegner_ok,
    }
    return RunResult("dos", ["bin_lo", "bin_hi", "mass_mean", "mass_stderr", "n"], rows,
                     results, _seeds(parts))


def check_measure_axioms(measure: measures.BinnedMeasure) -> dict:
    full_c, full_m = measure.mirrored()
    total = measure.total_mass_mean
    bins_total = float(full_m.sum())
    return {
        "nonnegative": bool(np.all(full_m >= 0)),
        "even": bool(np.array_equal(full_m, full_m[::-1]) and np.array_equal(full_c, -full_c[::-1])),
        "total_matches_bins": bool(abs(total - bins_total) <= 1e-10 * max(abs(total), 1e-300)),
    }


def cmd_sigma(cfg):
    edges = frequency_edges(cfg)
    parts = _collect(cfg, partial(task_sigma, cfg, edges))
    samples = [p.value for p in sorted(parts, key=lambda p: p.index)]
    meas = measures.sigma_measure(samples, edges)
    se = _stderr_list(meas.mass_stderr, edges.size - 1)
    rows = [[edges[k], edges[k + 1], meas.mass_mean[k], se[k], meas.n_realizations]
            for k in range(edges.size - 1)]
    degenerate = meas.diagnostics["degenerate_pairs"]
    axioms = check_measure_axioms(meas)
    results = {
        "symmetry": "even",
        "variant": cfg.variant,
        "total_mass_mean": meas.total_mass_mean,
        "sigma_bar": {repr(float(e)): measures.sigma_bar(meas, e) for e in edges[1:]},
        "degenerate_pairs": degenerate,
        "axioms": axioms,
    }
    res = RunResult("sigma", ["bin_lo", "bin_hi", "mass_mean", "mass_stderr", "n"], rows,
                    results, _seeds(parts))
    if degenerate:
        res.warnings.append(f"{degenerate} degenerate straddling pairs were skipped")
        res.exit_code = EXIT_NUMERICAL
    if not all(axioms.values()):
        res.warnings.append(f"measure axioms violated: {axioms}")
        res.exit_code = EXIT_NUMERICAL
    return res


PSI_KEYS = ("psi_I", "psi_J", "psi_I_velocity", "sigma_bar")


def cmd_psi(cfg):
    parts = _collect(cfg, partial(task_psi, cfg))
    rows, results = [], {"nu": cfg.nu, "E_F": cfg.E_F}
    for key in PSI_KEYS:
        mean, stderr = merge(parts, key=lambda v, k=key: v[k])
        se = None if stderr is None else float(stderr)
        rows.append([key, float(mean), se, len(parts)])
        results[key] = {"mean": float(mean), "stderr": se}
    violations = 0
    for p in parts:
        v = p.value
        if not (np.pi / 2 * v["psi_J"] <= v["sigma_bar"] * (1 + 1e-12)
                and v["sigma_bar"] <= np.pi * v["psi_I"] * (1 + 1e-12)):
            violations += 1
    degenerate = sum(p.value["degenerate_pairs"] for p in parts)
    results.update(sandwich_violations=violations, degenerate_pairs=degenerate)
    res = RunResult("psi", ["quantity", "value_mean", "value_stderr", "n"], rows, results,
                    _seeds(parts))
    if degenerate:
        res.warnings.append(f"{degenerate} degenerate pairs were skipped")
        res.exit_code = EXIT_NUMERICAL
    return res


def cmd_respond(cfg):
    meas = read_measure_csv(cfg.sigma_csv)
    fld = read_field_csv(cfg.field_csv)
    t = np.asarray(cfg.t_grid, dtype=float)
    j_in = measures.in_phase_current(meas, fld, t)
    j_out = measures.out_phase_current(meas, fld, t)
    rows = [[ti, a, b] for ti, a, b in zip(t, j_in, j_out)]
    results = {"sigma_csv": cfg.sigma_csv, "field_csv": cfg.field_csv,
               "total_mass": meas.total_mass_mean}
    return RunResult("respond", ["t", "j_in", "j_out"], rows, results)


def _intervals(cfg, default):
    pairs = cfg.intervals or default
    return [Interval(lo, hi) for lo, hi in pairs]


def _bound_command(cfg, name):
    intervals = _intervals(cfg, ((-0.1, 0.1),))
    parts = _collect(cfg, partial(task_counts, cfg, intervals))
    N = cfg.L**cfg.d
    rho = 1.0 / cfg.W
    rows, reports = [], []
    for k, iv in enumerate(intervals):
        if name == "wegner":
            samples = [p.value[k] / N for p in sorted(parts, key=lambda p: p.index)]
            rhs = diag.wegner_rhs(rho, iv.length)
        else:
            samples = [float(p.value[k] ** 2 - p.value[k]) for p in sorted(parts, key=lambda p: p.index)]
            rhs = diag.minami_rhs(rho, iv.length, N)
        rep = diag.bound_report(samples, rhs, iv, d=cfg.d, L=cfg.L, W=cfg.W)
        reports.append(rep.as_dict())
        rows.append([iv.lo, iv.hi, rep.lhs_mean, rep.lhs_stderr, rep.rhs, rep.margin,
                     rep.passed, rep.n_realizations])
    res = RunResult(name, ["lo", "hi", "lhs_mean", "lhs_stderr", "rhs", "margin", "pass", "n"],
                    rows, {"reports": reports, "rho_sup": rho}, _seeds(parts))
    if not all(r["passed"] for r in reports):
        res.warnings.append(f"{name} bound failed in at least one interval")
        res.exit_code = EXIT_NUMERICAL
    return res


def cmd_wegner(cfg):
    return _bound_command(cfg, "wegner")


def cmd_minami(cfg):
    return _bound_command(cfg, "minami")


def cmd_chain(cfg):
    parts = sorted(_collect(cfg, partial(task_chain, cfg)), key=lambda p: p.index)
    N = cfg.L**cfg.d
    rows = [[p.index, p.seed, p.value.lhs, p.value.rhs, p.value.n_plus, p.value.n_minus,
             p.value.holds] for p in parts]
    violations = sum(not p.value.holds for p in parts)
    margins = [p.value.margin for p in parts if p.value.rhs > 0]
    per_volume, stderr = merge(parts, key=lambda v: v.lhs / N)
    hull = EnergyWindows(cfg.E_F, cfg.nu).hull.length
    rhs = diag.finite_volume_mott_rhs(1.0 / cfg.W, hull, cfg.L, cfg.d)
    results = {
        "violations": violations,
        "worst_margin": min(margins) if margins else None,
        "per_volume_mean": float(per_volume),
        "per_volume_stderr": None if stderr is None else float(stderr),
        "finite_volume_bound": rhs,
        "finite_volume_bound_holds": bool(per_volume <= rhs),
    }
    res = RunResult("chain", ["index", "seed", "lhs", "rhs", "n_plus", "n_minus", "holds"], rows,
                    results, _seeds(parts))
    if violations:
        res.warnings.append(f"trace-chain inequality violated in {violations} realizations")
        res.exit_code = EXIT_NUMERICAL
    return res


def _decay_result(name, cfg, parts, fit, extra):
    log_means = fit.log_means
    se = _stderr_list(fit.mean_stderr, fit.mean.size)
    rows = [[int(r), float(fit.mean[r]), se[r], float(log_means[r])] for r in fit.distances]
    results = {
        "log_K": fit.log_K, "slope": fit.slope, "ell": fit.ell, "ell_stderr": fit.ell_stderr,
        "r2": fit.r2,
        "fit_min_distance": None if fit.fit_range is None else fit.fit_range[0],
        "fit_max_distance": None if fit.fit_range is None else fit.fit_range[1],
        **extra,
    }
    return RunResult(name, ["distance", "mean", "stderr", "log_mean"], rows, results, _seeds(parts))


def _max_distance(cfg):
    default = cfg.L // 2 - 2
    return default if cfg.max_distance is None else min(cfg.max_distance, default)


def cmd_green(cfg):
    md = _max_distance(cfg)
    parts = sorted(_collect(cfg, partial(task_green, cfg, md)), key=lambda p: p.index)
    fit = diag.fit_decay([p.value[0] for p in parts], s=cfg.s, E=cfg.E_F, eta=cfg.eta)
    retries = sum(p.value[1] for p in parts)
    res = _decay_result("green", cfg, parts, fit, {"s": cfg.s, "E": cfg.E_F, "eta": cfg.eta,
                                                   "solver_retries": retries})
    if retries:
        res.warnings.append(f"{retries} resolvent solves needed a perturbed eta")
    return res


# eigenvector entries carry absolute errors near machine epsilon, so
# projection entries below this fraction of P(0,0) are not resolved
FERMI_FLOOR = 1e-14


def cmd_fermi_decay(cfg):
    md = _max_distance(cfg)
    parts = sorted(_collect(cfg, partial(task_fermi, cfg, md)), key=lambda p: p.index)
    fit = diag.fit_decay([p.value for p in parts], floor=FERMI_FLOOR, E=cfg.E_F)
    return _decay_result("fermi-decay", cfg, parts, fit, {"E_F": cfg.E_F, "p": 1,
                                                          "resolution_floor": FERMI_FLOOR})


def cmd_spacings(cfg):
    iv = _intervals(cfg, ((-1.0, 1.0),))[0]
    parts = sorted(_collect(cfg, partial(task_spectrum, cfg)), key=lambda p: p.index)
    st = diag.spacing_stats([p.value for p in parts], iv)
    rows = [[st.hist_edges[k], st.hist_edges[k + 1], st.hist_mass[k]]
            for k in range(st.hist_mass.size)]
    results = {"ks_distance": st.ks_distance, "n_spacings": int(st.spacings.size),
               "mean_level_count": st.mean_level_count, "interval": [iv.lo, iv.hi]}
    res = RunResult("spacings", ["bin_lo", "bin_hi", "mass"], rows, results, _seeds(parts))
    if st.warning:
        res.warnings.append(st.warning)
    return res


def frequency_stream(nu: float) -> int:
    """Stream id tied to the value of ``nu`` so grid order does not matter."""
    return struct.unpack("<Q", struct.pack("<d", float(nu)))[0]


def mott_sweep(cfg, nu_grid=None):
    """Monte Carlo estimate of the observable at each frequency with ``L = choose_L(nu)``.

    Returns ``(table, warnings)`` where ``table`` rows are
    ``(nu, L, n, mean, stderr, seeds)`` sorted by decreasing frequency.
    """
    grid = sorted(set(cfg.nu_grid if nu_grid is None else nu_grid), reverse=True)
    table, notes = [], []
    for nu in grid:
        L = scaling.choose_L(nu, cfg.ell, cfg.L_factor)
        if L > cfg.L_cap:
            if cfg.L_rule == "drop":
                notes.append(f"nu={nu!r}: choose_L={L} exceeds L_cap={cfg.L_cap}; point dropped")
                log.warning(notes[-1])
                continue
            notes.append(f"nu={nu!r}: choose_L={L} exceeds L_cap={cfg.L_cap}; clamped to L_cap")
            log.warning(notes[-1])
            L = cfg.L_cap
        stream = frequency_stream(nu)
        parts = _collect(cfg, partial(task_mott, cfg, nu, L, stream))
        degenerate = sum(p.value[1] for p in parts)
        if degenerate:
            raise NumericalFailure(f"nu={nu!r}: {degenerate} degenerate pairs")
        mean, stderr = merge(parts, key=lambda v: v[0])
        table.append((nu, L, len(parts), float(mean),
                      None if stderr is None else float(stderr), _seeds(parts)))
    return table, notes


def cmd_mott(cfg):
    table, notes = mott_sweep(cfg)
    rho = 1.0 / cfg.W
    const = {C: scaling.bound_constant(C, cfg.d, rho, cfg.ell, cfg.observable)
             for C in (scaling.PROOF_CONSTANT, scaling.IMPROVED_CONSTANT)}
    rows = []
    for nu, L, n, mean, se, _ in table:
        r = mean / (nu**2 * np.log(1 / nu) ** (cfg.d + 2))
        rows.append([nu, L, n, mean, se, r / const[205], r / const[36]])
    results = {"observable": cfg.observable, "ell": cfg.ell, "rho_sup": rho,
               "constants": {str(k): v for k, v in const.items()}}
    if table:
        nu = np.array([t[0] for t in table])
        y = np.array([t[3] for t in table])
        results["bound"] = scaling.bound_report(nu, y, ell=cfg.ell, rho_sup=rho, d=cfg.d,
                                                observable=cfg.observable)
        if nu.size >= 2 and np.all(y > 0):
            se = [t[4] for t in table]
            fit = scaling.fit_mott(nu, y, None if any(s is None for s in se) else se)
            results["fit"] = {
                "gamma": fit.gamma, "gamma_stderr": fit.gamma_stderr,
                "log_c": fit.log_c, "log_c_stderr": fit.log_c_stderr,
                "weakly_identified": fit.weakly_identified,
                "reference_gamma": {"mott": cfg.d + 1, "proved_bound": cfg.d + 2},
            }
            if fit.weakly_identified:
                notes.append("log(1/nu) spans less than a factor 2; gamma is weakly identified")
    seeds = {repr(t[0]): t[5] for t in table}
    res = RunResult("mott", ["nu", "L", "n_real", "y_mean", "y_stderr", "ratio_205", "ratio_36"],
                    rows, results, seeds, notes)
    if not table:
        res.exit_code = EXIT_EMPTY
    return res


COMMANDS = {
    "dos": cmd_dos,
    "sigma": cmd_sigma,
    "psi": cmd_psi,
    "respond": cmd_respond,
    "wegner": cmd_wegner,
    "minami": cmd_minami,
    "chain": cmd_chain,
    "green": cmd_green,
    "fermi-decay": cmd_fermi_decay,
    "spacings": cmd_spacings,
    "mott": cmd_mott,
}


def envelope(cfg: ExperimentConfig, res: RunResult) -> dict:
    return {
        "tool": "acmott",
        "tool_version": __version__,
        "schema": f"{res.command}/1",
        "columns": res.columns,
        "config_hash": cfg.hash,
        "workers": cfg.workers,
        "seeds": res.seeds,
        "warnings": res.warnings,
        "exit_code": res.exit_code,
    }


def run(cfg: ExperimentConfig) -> tuple[RunResult, dict]:
    """Execute ``cfg.command`` and write ``<command>.csv`` / ``<command>.json`` to ``output_dir``.

    Wall-clock time goes to a separate ``<command>.timing.json`` so that the
    CSV and JSON outputs stay byte-identical across reruns.
    """
    cfg.validate()
    start = time.perf_counter()
    res = COMMANDS[cfg.command](cfg)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    env = envelope(cfg, res)
    stem = cfg.command
    paths = {
        "csv": write_csv(out / f"{stem}.csv", res.columns, res.rows, env),
        "json": write_json(out / f"{stem}.json", {"envelope": env, "config": cfg.as_dict(),
                                                  "results": res.results}),
    }
    if cfg.plot:
        from .plotting import render
        paths["png"] = render(res, out / f"{stem}.png")
    write_json(out / f"{stem}.timing.json", {"config_hash": cfg.hash,
                                             "wall_clock_s": time.perf_counter() - start})
    for note in res.warnings:
        log.warning(note)
    return res, paths
