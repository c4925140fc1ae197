"""Acceptance criteria 1-12, one test each.

Every test records a ``CRITERION n: PASS|FAIL`` line that is echoed in the
terminal summary, then asserts. Tolerances are the stated ones.
"""

import json
import math
import time

import numpy as np
import pytest

import conftest
from conftest import brute_psi, brute_sigma
from acmott import measures as M
from acmott import diagnostics as D
from acmott import scaling as S
from acmott.config import COMMANDS, ExperimentConfig
from acmott.io import write_field_csv
from acmott.model import (
    DisorderModel,
    build_hamiltonian,
    build_lattice,
    position_operator,
    sample_potential,
    velocity_operator,
)
from acmott.runner import check_measure_axioms, run
from acmott.spectral import EnergyWindows, Interval, diagonalize, matrix_elements


def verdict(n, ok, detail, start):
    line = f"CRITERION {n}: {'PASS' if ok else 'FAIL'} ({time.perf_counter() - start:.1f}s) {detail}"
    print(line)
    conftest.ACCEPTANCE.append(line)
    assert ok, line


def system(d, L, W, seed, index=0, variant="commutator"):
    lat = build_lattice(d, L)
    real = sample_potential(DisorderModel(W, seed), index, lat)
    H = build_hamiltonian(lat, real)
    return lat, H, diagonalize(H), velocity_operator(lat, H, variant)


def test_criterion_01_oracle_equivalence():
    t0 = time.perf_counter()
    worst = 0.0
    edges = np.linspace(0, 6, 25)
    for seed in range(5):
        lat, H, eig, v = system(1, 8, 4.0, seed)
        fast = M.sigma_masses(eig, v, 0.0, edges).masses
        worst = max(worst, np.max(np.abs(fast - brute_sigma(eig, v.toarray(), 0.0, edges))))
        for nu in (0.5, 1.5):
            w = EnergyWindows(0.0, nu)
            for plus, minus in ((w.I_plus, w.I_minus), (w.J_plus, w.J_minus)):
                got = M.psi_rectangle(eig, plus, minus, x1=lat.centered_x1).value
                worst = max(worst, abs(got - brute_psi(eig, lat.centered_x1, plus, minus)))
    verdict(1, worst <= 1e-12, f"max abs deviation {worst:.2e} (tol 1e-12)", t0)


def test_criterion_02_commutator_identity():
    t0 = time.perf_counter()
    worst = 0.0
    for seed in range(20):
        lat, H, eig, v = system(1, 16, 4.0, seed)
        Vnm = matrix_elements(eig, v)
        Xnm = matrix_elements(eig, position_operator(lat))
        dE = eig.energies[:, None] - eig.energies[None, :]
        worst = max(worst, np.max(np.abs(Vnm - 1j * dE * Xnm) / (1 + np.abs(dE))))
    verdict(2, worst <= 1e-9, f"max scaled deviation {worst:.2e} (tol 1e-9)", t0)


def test_criterion_03_sandwich():
    t0 = time.perf_counter()
    nus = (0.1, 0.2, 0.4)
    edges = np.array([0.0, 0.1, 0.2, 0.4])
    violations, checked = 0, 0
    for seed in range(50):
        lat, H, eig, v = system(1, 64, 4.0, seed)
        meas = M.BinnedMeasure(edges, M.sigma_masses(eig, v, 0.0, edges).masses, even=True)
        for nu in nus:
            w = EnergyWindows(0.0, nu)
            sb = M.sigma_bar(meas, nu)
            upper = np.pi * M.psi_rectangle(eig, w.I_plus, w.I_minus, x1=lat.centered_x1).value
            lower = np.pi / 2 * M.psi_rectangle(eig, w.J_plus, w.J_minus, x1=lat.centered_x1).value
            violations += not (lower <= sb <= upper)
            checked += 1
    verdict(3, violations == 0, f"{violations} violations in {checked} checks", t0)


def test_criterion_04_trace_chain():
    t0 = time.perf_counter()
    violations, worst = 0, np.inf
    for seed in range(200):
        lat, H, eig, _ = system(1, 32, 4.0, seed)
        for nu in (0.1, 0.5, 1.0):
            w = EnergyWindows(0.0, nu)
            c = D.trace_chain(eig, lat.centered_x1, w.I_plus, w.I_minus, 32)
            violations += not c.holds
            if c.rhs > 0:
                worst = min(worst, c.margin)
    verdict(4, violations == 0, f"{violations} violations in 600 checks, worst margin {worst:.3f}", t0)


CELLS = "-0.025:0.025,-0.1:0.1,1.475:1.525,1.4:1.6"


@pytest.mark.parametrize("n,command", [(5, "wegner"), (6, "minami")])
def test_criterion_05_06_wegner_minami(tmp_path, n, command):
    t0 = time.perf_counter()
    cfg = ExperimentConfig.from_mapping(dict(
        command=command, d=1, L=64, W=4.0, n_realizations=400, intervals=CELLS,
        master_seed=5, workers=1, output_dir=str(tmp_path)))
    res, _ = run(cfg)
    reports = res.results["reports"]
    ok = len(reports) == 4 and all(r["passed"] for r in reports)
    margins = ", ".join(f"{r['margin']:.3f}" for r in reports)
    verdict(n, ok, f"{command}: margins [{margins}] over 4 cells", t0)


def test_criterion_07_measure_axioms(tmp_path):
    t0 = time.perf_counter()
    failures = []
    edges = np.linspace(0, 2, 41)
    samples = []
    for seed in range(20):
        lat, H, eig, v = system(1, 64, 4.0, seed)
        smp = M.sigma_masses(eig, v, 0.0, edges)
        samples.append(smp)
        one = M.BinnedMeasure(edges, smp.masses, even=True)
        if not all(check_measure_axioms(one).values()):
            failures.append(f"realization {seed}")
    if not all(check_measure_axioms(M.sigma_measure(samples, edges)).values()):
        failures.append("aggregate")
    for variant, d in (("commutator", 1), ("current", 1), ("commutator", 2)):
        cfg = ExperimentConfig.from_mapping(dict(
            command="sigma", d=d, L=8 if d == 2 else 48, W=4.0, n_realizations=10,
            nu_max=1.5, n_bins=30, variant=variant, workers=1,
            output_dir=str(tmp_path / f"{variant}{d}")))
        res, _ = run(cfg)
        if not all(res.results["axioms"].values()):
            failures.append(f"run {variant} d={d}")
    verdict(7, not failures, f"failures: {failures or 'none'} (24 measures checked)", t0)


@pytest.fixture(scope="module")
def green_run(tmp_path_factory):
    cfg = ExperimentConfig.from_mapping(dict(
        command="green", d=1, L=512, W=10.0, E_F=0.0, eta=1e-3, s=0.2, n_realizations=200,
        master_seed=8, workers=1, output_dir=str(tmp_path_factory.mktemp("green"))))
    t0 = time.perf_counter()
    res, _ = run(cfg)
    return res.results, time.perf_counter() - t0


@pytest.mark.slow
def test_criterion_08_localization(green_run, tmp_path):
    t0 = time.perf_counter()
    g, g_time = green_run
    cfg = ExperimentConfig.from_mapping(dict(
        command="fermi-decay", d=1, L=256, W=10.0, E_F=0.0, n_realizations=100,
        master_seed=8, workers=1, output_dir=str(tmp_path)))
    f, _ = run(cfg)
    f = f.results
    checks = {
        "green R2>=0.98": g["r2"] >= 0.98,
        "green ell in (0,5)": 0 < g["ell"] < 5,
        "fermi R2>=0.98": f["r2"] >= 0.98,
    }
    detail = (f"green R2={g['r2']:.5f} ell={g['ell']:.3f}+-{g['ell_stderr']:.3f}; "
              f"fermi R2={f['r2']:.5f} ell_P={f['ell']:.3f} fit r={f['fit_min_distance']}..{f['fit_max_distance']}; "
              f"failed: {[k for k, v in checks.items() if not v] or 'none'}; "
              f"green took {g_time:.1f}s")
    verdict(8, all(checks.values()), detail, t0 - g_time)


def test_criterion_09_fit_round_trip():
    t0 = time.perf_counter()
    nu = np.geomspace(1e-3, 1e-1, 10)
    errors = []
    for c, gamma in ((1.0, 2.0), (0.5, 3.0)):
        fit = S.fit_mott(nu, c * nu**2 * np.log(1 / nu) ** gamma)
        errors.append(abs(fit.gamma - gamma))
    verdict(9, max(errors) <= 0.01, f"gamma errors {[f'{e:.1e}' for e in errors]} (tol 0.01)", t0)


@pytest.mark.slow
def test_criterion_10_mott_report(green_run, tmp_path):
    t0 = time.perf_counter()
    ell = green_run[0]["ell"]
    cfg = ExperimentConfig.from_mapping(dict(
        command="mott", d=1, W=10.0, E_F=0.0, nu_grid="0.05,0.1,0.2,0.3", ell=ell,
        L_cap=1024, L_rule="clamp", n_realizations=200, master_seed=10, workers=1,
        output_dir=str(tmp_path)))
    res, paths = run(cfg)
    first = {k: paths[k].read_bytes() for k in ("csv", "json")}
    run(cfg)
    same = all(paths[k].read_bytes() == first[k] for k in first)
    ratios = [r[5] for r in res.rows] + [r[6] for r in res.rows]
    finite = len(res.rows) == 4 and all(math.isfinite(r) and r >= 0 for r in ratios)
    fit = res.results.get("fit", {})
    table = "; ".join(f"nu={r[0]} L={r[1]} y={r[3]:.3e} r/205={r[5]:.3e} r/36={r[6]:.3e}"
                      for r in res.rows)
    detail = (f"gamma={fit.get('gamma', float('nan')):.2f}+-{fit.get('gamma_stderr', float('nan')):.2f} "
              f"(ell={ell:.3f}); {table}; byte-identical rerun={same}")
    verdict(10, finite and same and res.exit_code == 0, detail, t0)


def test_criterion_11_cauchy_symmetry(tmp_path):
    t0 = time.perf_counter()
    cfg = ExperimentConfig.from_mapping(dict(
        command="sigma", d=1, L=64, W=4.0, n_realizations=30, nu_max=2.0, n_bins=40,
        workers=1, output_dir=str(tmp_path)))
    run(cfg)
    from acmott.io import read_measure_csv
    meas = read_measure_csv(tmp_path / "sigma.csv")
    worst_sym, min_re = 0.0, np.inf
    for eta in (1e-3, 1e-2, 0.1, 1.0):
        for nu in np.linspace(0.01, 3, 25):
            a = M.cauchy_conductivity(meas, eta, nu)
            b = M.cauchy_conductivity(meas, eta, -nu)
            scale = max(1.0, abs(a))
            worst_sym = max(worst_sym, abs(a.real - b.real) / scale, abs(a.imag + b.imag) / scale)
            min_re = min(min_re, a.real, b.real)
    worst_atom = 0.0
    for lam0, eta in ((0.5, 0.1), (1.3, 1e-3), (2.0, 2.0)):
        atoms = M.BinnedMeasure([lam0 - 1e-3, lam0 + 1e-3], [1.0], even=True)
        got = M.cauchy_conductivity(atoms, eta, 0.0)
        worst_atom = max(worst_atom, abs(got - 2 * eta / (np.pi * (lam0**2 + eta**2))))
    ok = worst_sym <= 1e-10 and min_re >= 0 and worst_atom <= 1e-12
    verdict(11, ok, f"parity dev {worst_sym:.1e}, min Re {min_re:.2e}, two-atom dev {worst_atom:.1e}", t0)


REPRO = {
    "dos": {},
    "sigma": {"nu_max": 1.0, "n_bins": 10},
    "psi": {"nu": 0.4},
    "wegner": {"intervals": "-0.5:0.5,1:1.5"},
    "minami": {"intervals": "-0.5:0.5"},
    "chain": {"nu": 0.5},
    "green": {"W": 8.0, "L": 32},
    "fermi-decay": {"W": 8.0, "L": 32},
    "spacings": {"intervals": "-3:3"},
    "mott": {"nu_grid": "0.2,0.4", "ell": 0.05},
}


def _repro_cfg(command, out, workers, **extra):
    base = dict(command=command, L=24, W=4.0, n_realizations=8, master_seed=12,
                workers=workers, output_dir=str(out))
    base.update(REPRO.get(command, {}), **extra)
    return ExperimentConfig.from_mapping(base)


def _stat_fields(payload):
    env = dict(payload["envelope"])
    for key in ("workers", "config_hash"):
        env.pop(key)
    return env, payload["results"]


def test_criterion_12_reproducibility(tmp_path):
    t0 = time.perf_counter()
    sig = _repro_cfg("sigma", tmp_path / "src", 1)
    run(sig)
    field = tmp_path / "field.csv"
    write_field_csv(field, M.FieldProfile.from_function(lambda x: np.exp(-x**2), 2.0, 200))
    respond_extra = dict(sigma_csv=str(tmp_path / "src" / "sigma.csv"), field_csv=str(field),
                         t_grid="0,0.5,2")
    problems = []
    for command in COMMANDS:
        extra = respond_extra if command == "respond" else {}
        outs = {}
        for workers in (1, 2):
            cfg = _repro_cfg(command, tmp_path / f"{command}-{workers}", workers, **extra)
            _, paths = run(cfg)
            before = {k: paths[k].read_bytes() for k in ("csv", "json")}
            _, paths = run(cfg)
            if any(paths[k].read_bytes() != before[k] for k in before):
                problems.append(f"{command}: rerun differs (workers={workers})")
            payload = json.loads(before["json"])
            rows = [ln for ln in before["csv"].decode().splitlines() if not ln.startswith("#")]
            outs[workers] = (_stat_fields(payload), rows)
        if outs[1] != outs[2]:
            problems.append(f"{command}: statistics depend on worker count")
    verdict(12, not problems, f"{len(COMMANDS)} subcommands; problems: {problems or 'none'}", t0)
