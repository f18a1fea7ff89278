import json
import subprocess
import sys

import numpy as np
import pytest

from msmi.cli import build_parser, run
from msmi.datagen import read_csv
from msmi.gaussian import fit_gaussian, gaussian_msmi, sample_ridges
from msmi.knn import ksg_mi


def _leaves(parser, prefix=()):
    subs = [a for a in parser._actions if a.__class__.__name__ == "_SubParsersAction"]
    if not subs:
        yield prefix, parser
        return
    for name, child in subs[0].choices.items():
        yield from _leaves(child, prefix + (name,))


LEAVES = [path for path, _ in _leaves(build_parser())]


@pytest.fixture
def latent_csv(tmp_path):
    path = tmp_path / "latent.csv"
    assert run(["gen", "latent", "--d", "4", "--dprime", "2", "--n", "400", "--dependent", "--seed", "3",
                "--out", str(path)]) == 0
    return path


def _report(path):
    doc = json.loads(path.read_text())
    doc.pop("wall_time", None)
    return doc


@pytest.mark.parametrize("path", LEAVES, ids=["-".join(p) for p in LEAVES])
def test_help_exits_zero_and_documents_flags(path, capsys):
    assert run([*path, "--help"]) == 0
    text = capsys.readouterr().out
    leaf = dict(_leaves(build_parser()))[path]
    for action in leaf._actions:
        for opt in action.option_strings:
            assert opt in text
        if action.option_strings and action.dest != "help":
            assert action.help


def test_top_level_help_and_version(capsys):
    assert run(["--help"]) == 0
    assert "estimate" in capsys.readouterr().out
    assert run(["--version"]) == 0


@pytest.mark.parametrize("argv", [
    [],
    ["estimate"],
    ["estimate", "ksg"],
    ["estimate", "ksg", "--input", "a.csv", "--bogus", "1"],
    ["gen", "latent", "--n", "10"],
    ["gaussian", "msmi", "--input", "a.csv", "--k", "two"],
])
def test_usage_errors_exit_one(argv, capsys):
    assert run(argv) == 1
    assert "usage" in capsys.readouterr().err


def test_runtime_errors_exit_two(tmp_path, latent_csv, capsys):
    assert run(["estimate", "ksg", "--input", str(tmp_path / "missing.csv")]) == 2
    assert run(["gaussian", "msmi", "--input", str(latent_csv), "--k", "9"]) == 2
    assert "error" in capsys.readouterr().err


def test_gen_is_byte_identical(tmp_path):
    outs = []
    for name in ("a", "b"):
        path = tmp_path / f"{name}.csv"
        assert run(["gen", "latent", "--d", "10", "--dprime", "4", "--n", "1000", "--dependent", "--seed", "3",
                    "--out", str(path)]) == 0
        outs.append(path)
    assert outs[0].read_bytes() == outs[1].read_bytes()
    side = [p.with_name(p.stem + ".provenance.json").read_text() for p in outs]
    assert side[0] == side[1]


def test_gen_gaussian_from_model_file(tmp_path):
    model = tmp_path / "model.json"
    model.write_text(json.dumps({"mean_x": [1.0], "mean_y": [0.0], "cov_x": [[1.0]], "cov_y": [[1.0]],
                                 "cross_cov": [[0.5]]}))
    out = tmp_path / "g.csv"
    assert run(["gen", "gaussian", "--model", str(model), "--n", "5000", "--out", str(out)]) == 0
    ds = read_csv(out)
    assert abs(ds.x.mean() - 1.0) < 0.05


def test_round_trip_gen_then_estimate(tmp_path, latent_csv):
    out = tmp_path / "ksg.json"
    assert run(["estimate", "ksg", "--input", str(latent_csv), "--out", str(out)]) == 0
    ds = read_csv(latent_csv)
    doc = json.loads(out.read_text())
    assert doc["value_nats"] == ksg_mi(ds.x, ds.y)
    assert doc["schema"] == 1 and doc["method"] == "ksg" and "wall_time" in doc


def test_gaussian_msmi_prints_json(latent_csv, capsys):
    assert run(["gaussian", "msmi", "--input", str(latent_csv), "--k", "2"]) == 0
    doc = json.loads(capsys.readouterr().out)
    model = fit_gaussian(read_csv(latent_csv))
    expected = gaussian_msmi(model, 2, sample_ridges(model))
    assert doc["value_nats"] == pytest.approx(expected.value, abs=1e-12)
    assert np.asarray(doc["cca"]["a"]).shape == (4, 2)
    assert len(doc["cca"]["canonical_correlations"]) == 2


@pytest.mark.parametrize("quantity", ["cca", "mi", "msh"])
def test_other_gaussian_quantities(latent_csv, capsys, quantity):
    argv = ["gaussian", quantity, "--input", str(latent_csv)]
    assert run(argv) == 0
    assert np.isfinite(json.loads(capsys.readouterr().out)["value_nats"])


def test_config_file_with_flag_override(tmp_path, latent_csv):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"num_slices": 3, "k": 2, "seed": 5}))
    out = tmp_path / "r.json"
    assert run(["estimate", "asmi", "--input", str(latent_csv), "--config", str(cfg), "--k", "1",
                "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert doc["config"]["num_slices"] == 3 and doc["config"]["k"] == 1 and doc["seed"] == 5
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"nonsense": 1}))
    assert run(["estimate", "asmi", "--input", str(latent_csv), "--config", str(bad)]) == 1


def test_estimators_are_deterministic_and_write_only_named_paths(tmp_path, latent_csv, monkeypatch):
    work = tmp_path / "work"
    work.mkdir()
    monkeypatch.chdir(work)
    commands = [
        ["estimate", "msmi-neural", "--epochs", "2", "--k", "2"],
        ["estimate", "msmi-generalized", "--epochs", "2"],
        ["estimate", "msmi-lipo", "--budget", "20"],
        ["estimate", "asmi", "--num-slices", "4"],
        ["estimate", "asmi", "--num-slices", "2", "--neural", "--epochs", "1"],
        ["estimate", "kl-entropy", "--variable", "y"],
        ["estimate", "msh-lipo", "--budget", "10", "--k", "2"],
        ["gaussian", "cca", "--k", "2"],
    ]
    for i, cmd in enumerate(commands):
        outs = [work / f"{i}{tag}.json" for tag in "ab"]
        seed = [] if cmd[0] == "gaussian" else ["--seed", "7"]
        for out in outs:
            assert run([*cmd, "--input", str(latent_csv), *seed, "--out", str(out)]) == 0
        assert _report(outs[0]) == _report(outs[1])
    assert sorted(p.name for p in work.iterdir()) == sorted(f"{i}{t}.json" for i in range(len(commands)) for t in "ab")


def test_checkpoint_flag_writes_json(tmp_path, latent_csv):
    ckpt = tmp_path / "c.json"
    assert run(["estimate", "msmi-neural", "--input", str(latent_csv), "--epochs", "1", "--checkpoint", str(ckpt),
                "--out", str(tmp_path / "r.json")]) == 0
    assert json.loads(ckpt.read_text())["schema"] == 1


def test_study_commands_write_json_and_csv(tmp_path):
    out, csv = tmp_path / "s.json", tmp_path / "s.csv"
    assert run(["study", "auc", "--d", "3", "--dprime", "1", "--n", "60", "--trials", "10", "--budget", "10",
                "--method", "asmi-mc", "--num-slices", "4", "--out", str(out), "--out-csv", str(csv)]) == 0
    doc = json.loads(out.read_text())
    assert doc["study"] == "auc" and doc["metadata"]["config"]["trials_per_class"] == 10
    assert csv.read_text().startswith("# study: auc")
    assert run(["study", "timing", "--n", "300", "--epochs", "1", "--num-slices", "2",
                "--out", str(tmp_path / "t.json")]) == 0
    assert run(["study", "convergence", "--n", "200", "--seeds", "0", "--steps", "2",
                "--out", str(tmp_path / "c.json")]) == 0


def test_console_script_entry_point(tmp_path):
    out = tmp_path / "c.csv"
    proc = subprocess.run([sys.executable, "-m", "msmi.cli", "gen", "correlated", "--n", "10", "--out", str(out)],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout == ""
    assert out.exists()


@pytest.mark.slow
def test_neural_estimate_on_generated_csv(tmp_path):
    data, out = tmp_path / "data.csv", tmp_path / "report.json"
    assert run(["gen", "correlated", "--rho", "0.5", "--n", "10000", "--seed", "1", "--out", str(data)]) == 0
    assert run(["estimate", "msmi-neural", "--input", str(data), "--k", "1", "--seed", "7", "--out", str(out)]) == 0
    assert 0.10 <= json.loads(out.read_text())["value_nats"] <= 0.18
