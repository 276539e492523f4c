import csv

import numpy as np
import pytest

from kminlab import cli
from kminlab.errors import ConfigError
from kminlab.fieldio import read_kfld, read_profile_csv, write_kfld, write_profile_csv
from kminlab.energy import Field
from kminlab.geometry import build_grid
from kminlab.harness import (
    RunConfig, SweepWriter, build_problem, cache_key, cached_ground_state, parse_b_grid, read_sweep, run_experiment,
)

BASE = """
# quick interior run
domain { shape="disk", center=[0, 0], radius=1, h=0.03125 }
potential { wells=[{x=[0, 0], p=2}], h="const:1" }
physics { beta_ratio=1 }
sweep { b_grid="1e-2:3e-3:geometric:3" }
flow { grad_tol=1e-8, max_iters=2000 }
seed = 0
"""


def test_parse_and_round_trip():
    cfg = RunConfig.parse(BASE)
    assert cfg.domain["h"] == 0.03125
    assert cfg.potential["wells"] == [{"x": [0, 0], "p": 2}]
    again = RunConfig.parse(cfg.serialize())
    assert again == cfg
    assert again.serialize() == cfg.serialize()


def test_b_grid_forms():
    assert parse_b_grid("1e-2:1e-5:geometric:4") == pytest.approx([1e-2, 1e-3, 1e-4, 1e-5])
    assert parse_b_grid("0.3:0.1:linear:3") == pytest.approx([0.3, 0.2, 0.1])
    cfg = RunConfig.parse(BASE.replace('b_grid="1e-2:3e-3:geometric:3"', "b_grid=[0.1, 0.05]"))
    assert cfg.b_values() == [0.1, 0.05]


@pytest.mark.parametrize("edit,fieldname,line", [
    ('b_grid="1e-2:3e-3:geometric:3"', "sweep.b_grid", 6),
    ('shape="disk"', "domain.shape", 3),
    ("beta_ratio=1", "physics", 5),
])
def test_config_errors_carry_location(edit, fieldname, line):
    bad = {"sweep.b_grid": "b_grid=[]", "domain.shape": 'shape="hexagon"', "physics": "beta_ratio=1, beta=3"}
    text = BASE.replace(edit, bad[fieldname])
    with pytest.raises(ConfigError) as exc:
        RunConfig.parse(text)
    assert exc.value.field.startswith(fieldname.split(".")[0])
    if fieldname != "physics":
        assert exc.value.line == line


def test_config_syntax_errors():
    with pytest.raises(ConfigError) as exc:
        RunConfig.parse(BASE.replace("seed = 0", "seed = 0\nbogus { a=1 }"))
    assert exc.value.field == "bogus" and exc.value.line == 9
    with pytest.raises(ConfigError) as exc:
        RunConfig.parse(BASE.replace("grad_tol=1e-8", "grad_tol=1e-8 $"))
    assert exc.value.line == 7
    with pytest.raises(ConfigError):
        RunConfig.parse(BASE.replace("physics { beta_ratio=1 }\n", ""))
    with pytest.raises(ConfigError) as exc:
        build_problem(RunConfig.parse(BASE.replace("x=[0, 0]", "x=[3, 0]")))
    assert exc.value.field == "potential.wells" and exc.value.line == 4


def test_cache_key():
    a = cache_key(BASE)
    assert a == cache_key(BASE)
    assert a == cache_key(BASE.replace(", ", " ,  ").replace("\n", "\n\n"))
    assert a == cache_key(BASE.replace("radius=1,", "radius=1.0,"))
    assert a != cache_key(BASE.replace("h=0.03125", "h=0.0625"))
    assert cache_key({"groundstate": {"r_max": 20}}) != cache_key({"groundstate": {"r_max": 21}})


def test_ground_state_cache(tmp_path, monkeypatch):
    monkeypatch.setenv("KMINLAB_CACHE_DIR", str(tmp_path / "gs"))
    p1 = cached_ground_state({"r_max": 12, "n_nodes": 2000, "shoot_tol": 1e-3}, tmp_path / "ignored")
    files = list((tmp_path / "gs").glob("groundstate-*.npz"))
    assert len(files) == 1 and not (tmp_path / "ignored").exists()
    p2 = cached_ground_state({"r_max": 12, "n_nodes": 2000, "shoot_tol": 1e-3}, tmp_path / "ignored")
    assert p2.mass == p1.mass and np.array_equal(p2.q_values, p1.q_values)


def test_kfld_round_trip(tmp_path):
    g = build_grid({"shape": "disk", "center": (0.5, -0.25), "radius": 1.0}, 1 / 16)
    rng = np.random.default_rng(0)
    u = Field(g, rng.random((g.ny, g.nx)))
    path = tmp_path / "u.kfld"
    write_kfld(path, u)
    vals, meta = read_kfld(path)
    assert np.array_equal(vals, u.values)
    assert (meta["nx"], meta["ny"], meta["hx"], meta["origin"]) == (g.nx, g.ny, g.hx, (-0.5, -1.25))
    header, data = path.read_bytes().split(b"\n", 1)
    assert header.split()[:4] == [b"KFLD", b"1", str(g.nx).encode(), str(g.ny).encode()]
    assert len(data) == 8 * g.nx * g.ny
    assert np.array_equal(np.frombuffer(data, "<f8").reshape(g.ny, g.nx), u.values)


def test_profile_csv_round_trip(tmp_path, profile):
    path = tmp_path / "q.csv"
    write_profile_csv(path, profile, [1, 2])
    back = read_profile_csv(path)
    assert back.mass == profile.mass and back.q_at_zero == profile.q_at_zero
    assert np.array_equal(back.q_values, profile.q_values)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["r", "Q", "Qprime"]
    assert [r[0] for r in rows[-6:]] == ["#mass", "#grad_norm", "#quartic", "#q0", "#m1", "#m2"]


def test_interrupted_sweep_keeps_finished_rows(tmp_path):
    path = tmp_path / "sweep.csv"
    w = SweepWriter(path)
    w.fh.write("0,0.01,11.7,-1.0")  # a row cut off mid-write
    w.fh.flush()
    w.close()
    assert read_sweep(path) == []


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    (out / "run.cfg").write_text(BASE)
    code = run_experiment(RunConfig.parse(BASE), out)
    return code, out


def test_run_experiment_artifacts(pipeline):
    code, out = pipeline
    assert code == 0
    for name in ("q_profile.csv", "sweep.csv", "report.csv", "field.kfld", "fit.csv"):
        assert (out / name).exists()
    rows = read_sweep(out / "sweep.csv")
    assert [r["index"] for r in rows] == [0, 1, 2]
    assert all(r["converged"] == 1 for r in rows)
    with open(out / "report.csv") as fh:
        header = next(csv.reader(fh))
    assert header[:11] == ["b", "e", "e_normalized", "predicted_limit", "eps", "eps_normalized", "dist",
                           "dist_normalized", "gn_ratio", "trial_upper", "converged"]


def test_rerun_is_bit_identical(pipeline, tmp_path):
    _, out = pipeline
    assert run_experiment(RunConfig.parse(BASE), tmp_path) == 0
    assert (tmp_path / "sweep.csv").read_bytes() == (out / "sweep.csv").read_bytes()


def test_independent_entries_match_serial(tmp_path):
    text = BASE.replace('b_grid="1e-2:3e-3:geometric:3"', 'b_grid="1e-2:3e-3:geometric:2", warm_start=false')
    serial = tmp_path / "serial"
    pooled = tmp_path / "pooled"
    assert run_experiment(RunConfig.parse(text), serial) == 0
    assert run_experiment(RunConfig.parse(text.replace("warm_start=false", "warm_start=false, workers=2")),
                          pooled) == 0
    assert (serial / "sweep.csv").read_bytes() == (pooled / "sweep.csv").read_bytes()


def test_cli_end_to_end(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("KMINLAB_CACHE_DIR", str(tmp_path / "cache"))
    cfgp = tmp_path / "run.cfg"
    cfgp.write_text(BASE)
    assert cli.main(["groundstate", "--out", str(tmp_path / "q.csv")]) == 0
    assert "beta_star=11.7008965" in capsys.readouterr().out
    assert cli.main(["minimize", "--config", str(cfgp), "--b", "1e-2", "--out", str(tmp_path / "f.kfld")]) == 0
    assert read_kfld(tmp_path / "f.kfld")[1]["nx"] == 65
    assert cli.main(["sweep", "--config", str(cfgp), "--b-grid", "1e-2:5e-3:geometric:2",
                     "--out", str(tmp_path / "s.csv")]) == 0
    assert len(read_sweep(tmp_path / "s.csv")) == 2
    assert cli.main(["analyze", "--sweep", str(tmp_path / "s.csv"), "--profile", str(tmp_path / "q.csv"),
                     "--config", str(cfgp), "--out", str(tmp_path / "r.csv")]) == 0
    assert cli.main(["analyze", "--sweep", str(tmp_path / "s.csv"), "--profile", str(tmp_path / "q.csv"),
                     "--regime", "CRIT_INTERIOR", "--p", "2", "--kappa", "1", "--lam", "1.04",
                     "--out", str(tmp_path / "r2.csv")]) == 0
    assert cli.main(["run", "--config", str(cfgp), "--out-dir", str(tmp_path / "full")]) == 0
    assert (tmp_path / "full" / "report.csv").exists()


def test_cli_config_error_exit_code(tmp_path, capsys):
    cfgp = tmp_path / "bad.cfg"
    cfgp.write_text(BASE.replace('b_grid="1e-2:3e-3:geometric:3"', "b_grid=[]"))
    assert cli.main(["run", "--config", str(cfgp)]) == 2
    err = capsys.readouterr().err
    assert "b_grid" in err and "line 6" in err


def test_tied_wells_run_once_per_well(tmp_path):
    text = """
domain { shape="rectangle", bounds=[0, 2, 0, 1], h=0.03125 }
potential { wells=[{x=[0.5, 0.5], p=2}, {x=[1.5, 0.5], p=2}], h="const:1" }
physics { beta_ratio=2 }
sweep { b_grid="2e-2:1e-2:geometric:2", aux_lattice=false }
flow { grad_tol=1e-8, max_iters=2000, init_width=0.15 }
seed = 0
"""
    assert run_experiment(RunConfig.parse(text), tmp_path) == 0
    rows = read_sweep(tmp_path / "sweep.csv")
    assert [(r["start_well"], r["well"]) for r in rows] == [(0, 0), (0, 0), (1, 1), (1, 1)]
    with open(tmp_path / "report.csv") as fh:
        report = list(csv.DictReader(fh))
    assert len(report) == 2
    for rec in report:
        pair = [r["energy"] for r in rows if r["b"] == float(rec["b"])]
        assert float(rec["e"]) == min(pair)
        assert rec["well"] in ("0", "1")
