import json

import pytest

from smolkin import config as cf
from smolkin import report
from smolkin.cli import main

SIM = """
[model]
N = 200
alpha = 8.0
[domain]
kind = "torus"
[run]
T = 0.0625
engine = "encounter"
annihilation = true
times = [0.0, 0.03125, 0.0625]
snapshot_times = [0.0, 0.03125, 0.0625]
"""

STEP = """
[model]
N = 50
alpha = 2.0
diffusivity = {d1 = 1.0, exponent = -0.5}
[[model.profiles]]
mass = 1
value = 0.6667
[[model.profiles]]
mass = 2
value = 0.3333
[domain]
kind = "free_space"
[run]
T = 0.01
observers = ["alive", "tracer", "mass"]
times = [0.0, 0.005, 0.01]
snapshot_times = [0.0, 0.01]
"""

ODE = """
[ode]
M = 64
T = 2.0
beta = 1.0
init = [1.0]
"""

PDE = """
[model]
N = 1000
alpha = 8.0
[domain]
kind = "torus"
[pde]
shape = [8, 8, 8]
M = 3
T = 0.02
beta = 2.0
save_times = [0.0, 0.02]
"""

KERNEL = """
[model]
N = 1000
alpha = 8.0
diffusivity = {d1 = 1.0, exponent = -0.5}
[kernel]
M = 2
resolution = 64
field_pairs = [[1, 1]]
"""


def run_cli(tmp_path, name, text, cmd, *extra):
    cfg = tmp_path / f"{name}.toml"
    cfg.write_text(text)
    out = tmp_path / name
    code = main([cmd, "--config", str(cfg), "--seed", "7", "--out", str(out), *extra])
    return code, out


def manifest(out):
    return json.loads((out / "manifest.json").read_text())


def test_config_hash_ignores_key_order():
    a = {"model": {"N": 10, "alpha": 1.0}, "run": {"T": 1.0}}
    b = {"run": {"T": 1.0}, "model": {"alpha": 1.0, "N": 10}}
    assert cf.config_hash(a) == cf.config_hash(b)
    assert cf.config_hash(a) != cf.config_hash({**a, "run": {"T": 2.0}})


def test_unknown_key_rejected(tmp_path):
    with pytest.raises(cf.ConfigurationError):
        cf.validate_config({"model": {"N": 10, "alpah": 1.0}})
    code, _ = run_cli(tmp_path, "bad", "[run]\nTT = 1\n", "simulate")
    assert code == 2


def test_empty_results_are_not_run():
    recs = report.criterion_records({})
    assert len(recs) == 9 and all(r["status"] == "not run" for r in recs)
    assert report.format_line(recs[0]) == "[NOT RUN] criterion 1: kernel_crossval"


def test_simulate_outputs_and_manifest(tmp_path):
    code, out = run_cli(tmp_path, "sim", SIM, "simulate", "--replicas", "2")
    assert code == 0
    m = manifest(out)
    assert m["error"] is None and m["seed"] == 7 and len(m["replica_seeds"]["simulate"]) == 2
    for name, digest in m["files"].items():
        assert report.sha256_file(out / name) == digest
    assert m["config_hash"] == cf.config_hash(cf.load_config(tmp_path / "sim.toml"))
    rows = (out / "events.csv").read_text().splitlines()
    assert rows[0].startswith("replica,")


def test_simulate_is_byte_reproducible(tmp_path):
    _, a = run_cli(tmp_path, "a", SIM, "simulate", "--replicas", "2")
    _, b = run_cli(tmp_path, "b", SIM, "simulate", "--replicas", "2", "--workers", "2")
    for name in ("events.csv", "records.ndjson", "replica_0000.npz"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_saved_record_round_trip(tmp_path):
    _, out = run_cli(tmp_path, "sim", SIM, "simulate", "--replicas", "1")
    rec = report.SavedRecord.load(out / "replica_0000.npz")
    assert rec.N == 200 and rec.survival([0.0])[0] == 1.0


def test_stepper_and_analyze(tmp_path):
    code, out = run_cli(tmp_path, "step", STEP, "simulate", "--replicas", "2")
    assert code == 0
    ana = f'[model]\nN = 200\nalpha = 8.0\n[domain]\nkind = "torus"\n' \
          f'[analyze]\ninput = "{tmp_path / "sim"}"\ntimes = [0.0, 0.0625]\n'
    run_cli(tmp_path, "sim", SIM, "simulate", "--replicas", "2")
    code, out = run_cli(tmp_path, "ana", ana, "analyze")
    assert code == 0
    assert (out / "analysis.ndjson").read_text().strip()


def test_ode_pde_kernel(tmp_path):
    for name, text, cmd, files in (("ode", ODE, "ode", ["ode_concentrations.csv", "ode_totals.csv"]),
                                   ("pde", PDE, "pde", ["pde_states.npz", "pde_mass.csv"]),
                                   ("ker", KERNEL, "kernel", ["kernel_table.csv", "u_1_1.csv"])):
        code, out = run_cli(tmp_path, name, text, cmd)
        assert code == 0, name
        for f in files:
            assert (out / f).exists()
        assert manifest(out)["error"] is None


def test_failed_stage_recorded(tmp_path):
    code, out = run_cli(tmp_path, "fail", "[experiment]\nname = \"nope\"\n", "experiment")
    assert code != 0
    m = manifest(out) if (out / "manifest.json").exists() else None
    assert m is None or m["error"]


def test_workers_env(monkeypatch):
    from smolkin.ensemble import default_workers
    monkeypatch.setenv("SMOLKIN_WORKERS", "3")
    assert default_workers() == 3
