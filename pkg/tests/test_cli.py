import json

import pytest

from solo9.cli import run_cli
from solo9.dataset import fixture_trot_gait, load_dataset, save_dataset


@pytest.fixture
def solo8_file(tmp_path):
    return save_dataset(fixture_trot_gait(n_clips=2, n_frames=60), tmp_path / "solo8.mds")


def test_usage_errors(capsys):
    assert run_cli([]) == 1
    assert run_cli(["fly"]) == 1
    assert run_cli(["augment", "--in", "x", "--out", "y", "--bogus"]) == 1
    err = capsys.readouterr().err
    assert "usage:" in err and "--waist-index" in err


def test_augment(tmp_path, solo8_file, capsys):
    out = tmp_path / "solo9.mds"
    assert run_cli(["augment", "--in", str(solo8_file), "--out", str(out)]) == 0
    ds = load_dataset(out)
    assert ds.dof == 9 and ds.iteration == 0
    assert json.loads(capsys.readouterr().out)["dof"] == 9
    # augmenting a 9-DOF file is a runtime failure
    assert run_cli(["augment", "--in", str(out), "--out", str(tmp_path / "z.mds")]) == 2


def test_missing_input_is_runtime_error(tmp_path):
    assert run_cli(["augment", "--in", str(tmp_path / "nope.mds"), "--out", "x"]) == 2


def test_replay_and_plot(tmp_path, solo8_file):
    log = tmp_path / "replay.txt"
    assert run_cli(["replay", "--dataset", str(solo8_file), "--clip", "1", "--out", str(log)]) == 0
    rep = load_dataset(log)
    assert rep.channels[-12:] == [f"foot_{i}" for i in range(12)]
    png = tmp_path / "traj.png"
    assert run_cli(["plot", "--trajectory", str(log), "--out", str(png)]) == 0
    assert png.read_bytes()[:4] == b"\x89PNG"
    assert run_cli(["plot", "--out", str(png)]) == 1


def test_evaluate_table3_fixed(tmp_path):
    out = tmp_path / "r.json"
    code = run_cli(["evaluate", "--protocol", "tableIII", "--variant", "solo9_fixed",
                    "--episodes", "1", "--groups", "5", "--duration", "0.5", "--out", str(out)])
    assert code == 0
    rep = json.loads(out.read_text())
    assert rep["protocol"]["variant"] == "solo9_fixed"
    assert set(rep["by_magnitude"]) == {"0.5", "0.7", "1.0"}
    assert run_cli(["evaluate", "--protocol", "nonexistent"]) == 2


def test_train_twice_same_lineage(tmp_path, solo8_file):
    plan = tmp_path / "default.plan"
    plan.write_text("n_envs = 4\n[defaults]\nupdates = 1\nsteps = 8\nrollouts = 4\n"
                    "rollout_steps = 16\ntracking_gate = 10.0\n"
                    "[[iteration]]\nw_I = 0.3\n[[iteration]]\nw_I = 0.5\n"
                    "[disc]\nhidden = [16]\nbatch = 32\n[ppo]\nhidden = [16]\n")
    hashes = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert run_cli(["train", "--plan", str(plan), "--seed", "1", "--dataset",
                        str(solo8_file), "--out", str(out)]) == 0
        hashes.append([e["dataset_hash"] for e in json.loads((out / "lineage.json").read_text())])
    assert hashes[0] == hashes[1] and len(hashes[0]) == 3
    m = tmp_path / "a" / "metrics.csv"
    assert run_cli(["plot", "--metrics", str(m), "--keys", "reward", "r_I",
                    "--out", str(tmp_path / "m.png")]) == 0
    assert run_cli(["train", "--plan", str(plan), "--out", str(tmp_path / "c"),
                    "--set", "sim.nonsense=1"]) == 2
