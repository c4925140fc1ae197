import json

import numpy as np
import pytest

from acmott import cli
from acmott.config import ConfigError, ExperimentConfig
from acmott.io import read_csv, read_measure_csv, write_field_csv
from acmott.measures import FieldProfile
from acmott.runner import EXIT_EMPTY, Partial, merge, run


def small(command, tmp_path, **kw):
    base = dict(command=command, L=16, W=4.0, n_realizations=6, workers=1,
                output_dir=str(tmp_path))
    base.update(kw)
    return ExperimentConfig.from_mapping(base)


# -- config -------------------------------------------------------------------


def test_canonical_round_trip_and_hash():
    cfg = ExperimentConfig(command="sigma", nu_grid=(0.1, 0.2), intervals=((-1.0, 1.0),))
    text = cfg.canonical()
    keys = [ln.split(" = ")[0] for ln in text.splitlines()]
    assert keys == sorted(keys)
    again = ExperimentConfig.from_text(text)
    assert again == cfg and again.hash == cfg.hash
    assert cfg.with_(output_dir="elsewhere", plot=True).hash == cfg.hash
    assert cfg.with_(W=5.0).hash != cfg.hash


def test_from_text_comments_and_overrides():
    cfg = ExperimentConfig.from_text("# a run\nL = 32  # side\nW = 2.5\n", command="dos", L="48")
    assert (cfg.L, cfg.W, cfg.command) == (48, 2.5, "dos")


def test_validation_lists_every_problem():
    with pytest.raises(ConfigError) as err:
        ExperimentConfig.from_mapping({"command": "sigma", "n_realizations": 0, "L": 2,
                                       "s": 1.5, "variant": "bogus"})
    fields = {p.split(":")[0] for p in err.value.problems}
    assert {"n_realizations", "L", "s", "variant"} <= fields
    with pytest.raises(ConfigError, match="unknown key"):
        ExperimentConfig.from_mapping({"colour": "red"})
    with pytest.raises(ConfigError, match="ell"):
        ExperimentConfig.from_mapping({"command": "mott", "nu_grid": "0.1"})


def test_workers_env_default(monkeypatch):
    monkeypatch.setenv("ACMOTT_WORKERS", "3")
    assert ExperimentConfig().workers == 3


# -- merge --------------------------------------------------------------------


def test_merge_semantics():
    one = [Partial("h", 0, 1, 2.5)]
    assert merge(one) == (2.5, None)
    mean, se = merge([Partial("h", 0, 1, 2.0), Partial("h", 1, 2, 2.0)])
    assert mean == 2.0 and se == 0.0
    parts = [Partial("h", i, i, float(v)) for i, v in enumerate([0.1, 0.7, 0.3, 1e-9, 5.0])]
    a = merge(parts)
    b = merge(parts[::-1])
    c = merge([parts[k] for k in (3, 0, 4, 1, 2)])
    assert a == b == c
    with pytest.raises(ValueError, match="different"):
        merge([Partial("h", 0, 1, 1.0), Partial("g", 1, 2, 1.0)])


# -- runs ---------------------------------------------------------------------


@pytest.mark.parametrize("command,extra", [
    ("dos", {}),
    ("sigma", {"nu_max": 1.0, "n_bins": 10}),
    ("psi", {"nu": 0.4}),
    ("wegner", {"intervals": "-0.5:0.5"}),
    ("minami", {"intervals": "-0.5:0.5"}),
    ("chain", {"nu": 0.5}),
    ("green", {"W": 8.0, "L": 24}),
    ("fermi-decay", {"W": 8.0, "L": 24}),
    ("spacings", {"intervals": "-2:2"}),
])
def test_rerun_is_byte_identical(tmp_path, command, extra):
    cfg = small(command, tmp_path, **extra)
    run(cfg)
    first = {p: (tmp_path / f"{command}.{p}").read_bytes() for p in ("csv", "json")}
    run(cfg)
    for p, data in first.items():
        assert (tmp_path / f"{command}.{p}").read_bytes() == data
    header = (tmp_path / f"{command}.csv").read_text().splitlines()
    assert header[0] == "# tool: acmott"
    assert any(ln == f"# config_hash: {cfg.hash}" for ln in header)
    payload = json.loads(first["json"])
    assert payload["envelope"]["config_hash"] == cfg.hash
    assert len(payload["envelope"]["seeds"]) == cfg.n_realizations


@pytest.mark.parametrize("command", ["sigma", "psi", "chain"])
def test_worker_count_leaves_statistics_unchanged(tmp_path, command):
    outs = []
    for w in (1, 3):
        cfg = small(command, tmp_path / str(w), workers=w, n_realizations=7, nu=0.4)
        res, _ = run(cfg)
        outs.append(res)
    assert outs[0].rows == outs[1].rows
    assert outs[0].results == outs[1].results
    assert outs[0].seeds == outs[1].seeds


def test_mott_drops_every_point_loudly(tmp_path):
    cfg = small("mott", tmp_path, nu_grid="0.1,0.2", ell=1.0, L_cap=10)
    res, paths = run(cfg)
    assert res.exit_code == EXIT_EMPTY
    assert res.rows == [] and len(res.warnings) == 2
    header, rows = read_csv(paths["csv"])
    assert header == ["nu", "L", "n_real", "y_mean", "y_stderr", "ratio_205", "ratio_36"]
    assert rows == []


def test_mott_grid_order_irrelevant(tmp_path):
    a, _ = run(small("mott", tmp_path / "a", nu_grid="0.3,0.5", ell=0.05, n_realizations=3))
    b, _ = run(small("mott", tmp_path / "b", nu_grid="0.5,0.3", ell=0.05, n_realizations=3))
    assert a.rows == b.rows and a.rows[0][1] == 8
    assert np.all(np.isfinite([r[5] for r in a.rows]))


def test_mott_clamp_rule(tmp_path):
    res, _ = run(small("mott", tmp_path, nu_grid="0.1,0.3", ell=1.0, L_cap=12,
                       L_rule="clamp", n_realizations=2))
    assert [r[1] for r in res.rows] == [12, 12]
    assert any("clamped" in w for w in res.warnings)


def test_respond_round_trip(tmp_path):
    res, paths = run(small("sigma", tmp_path, nu_max=1.0, n_bins=10))
    meas = read_measure_csv(paths["csv"])
    np.testing.assert_array_equal(meas.mass_mean, [r[2] for r in res.rows])
    field_path = tmp_path / "field.csv"
    write_field_csv(field_path, FieldProfile.from_function(lambda x: np.exp(-x**2), 3.0, 300))
    cfg = small("respond", tmp_path, sigma_csv=str(paths["csv"]), field_csv=str(field_path),
                t_grid="0,0.5,1")
    out, _ = run(cfg)
    j_in = [r[1] for r in out.rows]
    lam, mass = meas.mirrored()
    for t, j in zip((0, 0.5, 1), j_in):
        exact = np.sum(mass * np.cos(lam * t) * np.exp(-lam**2))
        assert j == pytest.approx(exact, rel=1e-4)
    assert out.rows[0][2] == pytest.approx(0.0, abs=1e-12)


def test_cli_exit_codes_and_plot(tmp_path, capsys):
    assert cli.main(["sigma", "--n-realizations", "0", "--output-dir", str(tmp_path)]) == 2
    assert "n_realizations" in capsys.readouterr().err
    rc = cli.main(["dos", "--L", "12", "--n-realizations", "3", "--plot", "true",
                   "--output-dir", str(tmp_path)])
    assert rc == 0
    assert (tmp_path / "dos.png").stat().st_size > 0
    assert (tmp_path / "dos.csv").exists()
    rc = cli.main(["mott", "--nu-grid", "0.1", "--ell", "1", "--L-cap", "5",
                   "--output-dir", str(tmp_path)])
    assert rc == EXIT_EMPTY


def test_cli_config_file_and_print(tmp_path, capsys):
    conf = tmp_path / "run.cfg"
    conf.write_text("L = 20\nW = 6.0\n")
    assert cli.main(["green", "--config", str(conf), "--print-config"]) == 0
    out = capsys.readouterr().out
    assert "L = 20\n" in out and "W = 6.0\n" in out and "command = green\n" in out
