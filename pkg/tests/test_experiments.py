import csv
import json
import math
from pathlib import Path

import pytest

from sharpdrop.experiments import (
    ConfigError,
    ExperimentConfig,
    apply_overrides,
    load_config,
    main,
    run,
    worker_count,
)

ROOT = Path(__file__).resolve().parents[1]


def write_cfg(path, text):
    path.write_text(text)
    return path


def read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_shipped_configs_parse():
    for p in sorted((ROOT / "configs").glob("*.toml")):
        cfg = load_config(p)
        assert cfg.experiment in p.stem


def test_overrides():
    d = {"experiment": "mass_scan", "potential": {"kind": "atomic", "Z": 1.0}}
    out = apply_overrides(d, ["potential.Z=2.5", "mass_scan.masses=[0.5, 1.0]", "output_dir=runs/x"])
    assert out["potential"]["Z"] == 2.5 and out["mass_scan"]["masses"] == [0.5, 1.0]
    assert out["output_dir"] == "runs/x" and d["potential"]["Z"] == 1.0
    with pytest.raises(ConfigError):
        apply_overrides(d, ["novalue"])
    with pytest.raises(ConfigError):
        apply_overrides(d, ["experiment.sub=1"])


def test_config_errors():
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"experiment": "nope"})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"experiment": "mass_scan", "bogus": 1})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"experiment": "mass_scan", "mass": -1})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"experiment": "mass_scan"}, experiment="recovery")
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"experiment": "mass_scan", "potential": {"kind": "atomic", "Z": -1}})


def test_cli_exit_codes(tmp_path):
    bad = write_cfg(tmp_path / "bad.toml", 'experiment = "mass_scan"\n[potential]\nkind = "atomic"\nZ = -1.0\n')
    assert main(["mass-scan", "--config", str(bad)]) == 2
    assert main(["mass-scan", "--config", str(tmp_path / "missing.toml")]) == 2
    coarse = write_cfg(tmp_path / "coarse.toml", f"""
experiment = "gamma_sweep"
mass = 1.0
eps_schedule = [0.2, 0.05]
output_dir = "{tmp_path / 'gs'}"
[potential]
kind = "atomic"
Z = 1.0
[grid]
kind = "radial"
r_max = 8.0
n = 256
""")
    assert main(["gamma-sweep", "--config", str(coarse)]) == 3


def mass_scan_cfg(tmp_path, Z, name="ms"):
    return write_cfg(tmp_path / f"{name}.toml", f"""
experiment = "mass_scan"
output_dir = "{tmp_path / name}"
workers = 2
[potential]
kind = "atomic"
Z = {Z}
[mass_scan]
masses = [0.2, 0.4, 0.6, 0.8, 1.0, 1.2, 1.4, 1.6, 1.8, 2.0]
n_points = 200
""")


def test_mass_scan_runs(tmp_path, capsys):
    assert main(["mass-scan", "--config", str(mass_scan_cfg(tmp_path, 1.0))]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["threshold_grid"] > 1.0 and summary["threshold_exceeds_Z"]
    man = json.loads((tmp_path / "ms" / "manifest.json").read_text())
    assert man["status"] == "ok"
    for p in man["outputs"]:
        assert Path(p).exists()
    rows = read_csv(tmp_path / "ms" / "mass_scan.csv")
    assert len(rows) == 10
    # 17 significant digits
    assert all(len(r["whole_energy"].lstrip("-").replace(".", "").split("e")[0].lstrip("0")) >= 15 for r in rows)


def test_mass_scan_zero_charge(tmp_path):
    cfg = load_config(mass_scan_cfg(tmp_path, 0.0, "z0"))
    man = run(cfg)
    assert 0 < man.summary["threshold_grid"] < math.inf
    assert 0 < man.summary["threshold_refined"] < 2.0


def test_determinism(tmp_path):
    a = load_config(mass_scan_cfg(tmp_path, 1.0, "a"))
    b = load_config(mass_scan_cfg(tmp_path, 1.0, "b"))
    run(a)
    run(b)
    for name in ("mass_scan.csv", "binding_margins.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_thread_cap(monkeypatch):
    monkeypatch.setenv("SHARPDROP_THREADS", "1")
    assert worker_count(8) == 1
    monkeypatch.setenv("SHARPDROP_THREADS", "3")
    assert worker_count(8) == 3 and worker_count(2) == 2
    monkeypatch.delenv("SHARPDROP_THREADS")
    assert worker_count(4) == 4


def test_recovery_run(tmp_path):
    cfg = load_config(ROOT / "configs" / "recovery.toml",
                      [f'output_dir="{tmp_path / "rec"}"', "eps_schedule=[0.1, 0.05, 0.025]", "recovery.n=2048"])
    man = run(cfg)
    rows = read_csv(tmp_path / "rec" / "recovery.csv")
    assert [float(r["eps"]) for r in rows] == [0.1, 0.05, 0.025]
    gaps = [float(r["L2_gap"]) for r in rows]
    assert gaps[0] > gaps[1] > gaps[2]
    assert man.summary["final_rel_error"] <= 0.05


def test_small_gamma_sweep(tmp_path):
    cfg = load_config(ROOT / "configs" / "gamma_sweep.toml",
                      [f'output_dir="{tmp_path / "gs"}"', "mass=1.0", "potential.Z=0.5",
                       "eps_schedule=[0.2, 0.1]", "grid.n=512", "grid.r_max=6.0", "solver.tol=1e-3"])
    man = run(cfg)
    rows = read_csv(tmp_path / "gs" / "gamma_sweep.csv")
    assert len(rows) == 2 and all(r["converged"] == "1" for r in rows)
    assert all(r["n_components"] == "1" for r in rows)
    assert man.summary["all_converged"]
    listed = set(json.loads((tmp_path / "gs" / "manifest.json").read_text())["outputs"])
    written = {str(p) for p in (tmp_path / "gs").iterdir() if p.name != "manifest.json"}
    assert listed == written


def split_cfg(tmp_path, extra=""):
    return write_cfg(tmp_path / "split.toml", f"""
experiment = "split_demo"
mass = 1.0
output_dir = "{tmp_path / 'split'}"
[potential]
kind = "atomic"
Z = 5.0
[grid]
kind = "cartesian"
L = 2.0
n = 32
[solver]
tol = 1e-3
max_iter = 3000
[split_demo]
eps = 0.2
seeds = [0]
init_radius = 1.0
{extra}
""")


def test_split_demo_small(tmp_path):
    man = run(load_config(split_cfg(tmp_path)))
    rows = read_csv(tmp_path / "split" / "split_demo.csv")
    assert len(rows) == 1 and rows[0]["n_components"] == "1"
    assert rows[0]["converged"] == "1" and rows[0]["lower_bound_holds"] == "1"
    comp = json.loads((tmp_path / "split" / "components_seed0.json").read_text())
    assert math.hypot(*comp["components"][0]["center"]) <= 0.25
    assert man.summary["converged"] == [True]


def test_split_demo_bad_budget(tmp_path):
    assert main(["split-demo", "--config", str(split_cfg(tmp_path, "annulus_budget = 0.0"))]) == 2
    radial = write_cfg(tmp_path / "r.toml", 'experiment = "split_demo"\n[grid]\nkind = "radial"\n')
    assert main(["split-demo", "--config", str(radial)]) == 2


def test_unwritable_output_dir(tmp_path):
    f = tmp_path / "file"
    f.write_text("")
    cfg = write_cfg(tmp_path / "c.toml", f'experiment = "mass_scan"\noutput_dir = "{f / "sub"}"\n')
    assert main(["mass-scan", "--config", str(cfg)]) == 2
