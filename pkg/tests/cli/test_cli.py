import copy
import csv
import importlib
import json

import numpy as np
import pytest
import yaml

from SSDN_Lab.cli import ExperimentConfig, execute, load_datasets, load_target, read_metrics
from SSDN_Lab.cli.config import parse_config
from SSDN_Lab.shifts import gen_synthetic, save_cifar10_binary
from tests.conftest import TINY_CONFIG, TINY_SPEC, write_idx

cli = importlib.import_module("SSDN_Lab.cli.cli")


def _merge(base: dict, changes: dict) -> dict:
    merged = copy.deepcopy(base)
    for key, value in changes.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged


@pytest.fixture
def write_config(tmp_path):
    def write(**changes):
        path = tmp_path / "experiment.yaml"
        path.write_text(yaml.safe_dump(_merge(TINY_CONFIG, changes)), encoding="utf-8")
        return path

    yield write


def _run(kind, config, out, *extra):
    return cli.main([kind, "--config", str(config), "--out", str(out), "--quiet", *extra])



@pytest.fixture
def mnist_target(tmp_path):
    # 6x6 grayscale digits next to the 8x8 colour training images
    rng = np.random.default_rng(5)
    pixels = rng.integers(0, 256, size=(8, 6, 6), dtype=np.uint8)
    labels = rng.integers(0, 4, size=8, dtype=np.uint8)
    write_idx(tmp_path / "target-images.idx", 0x803, (8, 6, 6), pixels.tobytes())
    write_idx(tmp_path / "target-labels.idx", 0x801, (8,), labels.tobytes())
    paths = {"test_images": "target-images.idx", "test_labels": "target-labels.idx"}
    yield {"source": "mnist", "paths": paths, "name": "mnist"}


@pytest.fixture
def cifar_target(tmp_path):
    save_cifar10_binary(gen_synthetic(TINY_SPEC, seed=7, name="target"), tmp_path / "target.bin")
    yield {"source": "cifar10", "paths": {"test": "target.bin"}}


# Argument handling
def test_no_arguments_prints_usage(capsys):
    assert cli.main([]) == 2
    assert "usage: ssdn-lab" in capsys.readouterr().err


@pytest.mark.parametrize("argv", [["eval", "--bogus"], ["fly"], ["eval", "--seed", "x"]])
def test_bad_arguments(argv):
    assert cli.main(argv) == 2


def test_help_exits_cleanly(capsys):
    assert cli.main(["--help"]) == 0
    out = capsys.readouterr().out
    for kind in ("train", "eval", "sensitivity", "ablation", "alphas"):
        assert kind in out


def test_seed_override_and_default_config(mocker, tmp_path):
    run = mocker.patch.object(cli, "run", return_value=0)
    assert cli.main(["ablation", "--seed", "7", "--out", str(tmp_path / "out"), "--quiet"]) == 0
    config, out = run.call_args[0][:2]
    assert config == ExperimentConfig(kind="ablation", seeds=(7,))
    assert out == tmp_path / "out"


def test_spinner_reports_the_run(mocker, write_config, tmp_path):
    mocker.patch.object(cli, "run", return_value=0)
    spinner = mocker.patch.object(cli, "yaspin")
    assert cli.main(["train", "--config", str(write_config()), "--out", str(tmp_path / "out")]) == 0
    sp = spinner.return_value.__enter__.return_value
    sp.ok.assert_called_once()
    assert "train" in sp.ok.call_args[0][0]


def test_config_error_exit_code(write_config, tmp_path, capsys):
    config = write_config(bridge={"brigde_g1": True})
    assert _run("eval", config, tmp_path / "out") == 1
    err = capsys.readouterr().err
    assert "bridge.brigde_g1" in err
    assert not (tmp_path / "out").exists()


def test_missing_config_file(tmp_path, capsys):
    assert _run("eval", tmp_path / "missing.yaml", tmp_path / "out") == 1
    assert "ssdn-lab: error:" in capsys.readouterr().err


def test_missing_output_directory(write_config, capsys):
    assert cli.main(["eval", "--config", str(write_config()), "--quiet"]) == 1
    assert "output" in capsys.readouterr().err


# End-to-end runs of the tiny setup
def test_eval_run(write_config, tmp_path, capsys):
    config = write_config(regime="Standard", seeds=[0, 1])
    out = tmp_path / "out"
    assert _run("eval", config, out) == 0
    assert capsys.readouterr().err == ""

    rows = read_metrics(out / "metrics.csv")
    assert [(r.regime, r.shift, r.severity, r.seed) for r in rows] == [
        ("Standard", "clean", 0, 0),
        ("Standard", "clean", 0, 1),
    ]
    assert all(0.0 <= r.main_error_pct <= 100.0 and r.wall_ms == 0 for r in rows)
    # ss error stays at its untrained level without the rotation loss, but is still measured
    assert all(0.0 <= r.ss_error_pct <= 100.0 for r in rows)

    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["kind"] == "eval"
    assert manifest["seeds"] == [0, 1]
    assert {"metrics.csv", "losses.csv", "checkpoints/Standard-seed0.ckpt"} <= set(manifest["files"])
    assert parse_config(yaml.safe_dump(manifest["config"])) == parse_config(config.read_text(), kind="eval")
    assert (out / "losses.csv").read_text().startswith("regime,seed,step,loss,main_loss,ss_loss\n")
    with open(out / "losses.csv", newline="") as f:
        losses = list(csv.reader(f))
    assert losses[1][:3] == ["Standard", "0", "0"]
    assert all(len(row) == 6 for row in losses)
    assert len(losses[1][3].split(".")[1]) == 6


def test_runs_are_deterministic(write_config, tmp_path):
    config = write_config(corruptions=[{"kind": "shot_noise", "severity": 4}])
    assert _run("eval", config, tmp_path / "a") == 0
    assert _run("eval", config, tmp_path / "b") == 0
    first = (tmp_path / "a" / "metrics.csv").read_bytes()
    assert first == (tmp_path / "b" / "metrics.csv").read_bytes()
    assert len(first.splitlines()) == 3
    assert (tmp_path / "a" / "losses.csv").read_bytes() == (tmp_path / "b" / "losses.csv").read_bytes()


def test_existing_output_directory_is_refused(write_config, tmp_path, capsys):
    out = tmp_path / "out"
    out.mkdir()
    (out / "keep.txt").write_text("precious")
    assert _run("train", write_config(), out) == 1
    assert "already exists" in capsys.readouterr().err
    assert (out / "keep.txt").read_text() == "precious"


def test_ablation_run(write_config, tmp_path):
    out = tmp_path / "out"
    assert _run("ablation", write_config(), out) == 0
    rows = read_metrics(out / "metrics.csv")
    assert len(rows) == 7
    assert len({r.regime for r in rows}) == 7
    assert all(r.regime.startswith("SSDNOnePass[") for r in rows)
    assert len(list((out / "checkpoints").iterdir())) == 7


def test_sensitivity_run(write_config, tmp_path):
    config = write_config(
        seeds=[0, 1],
        corruptions=[{"kind": "gaussian_blur", "severity": 5}],
        analysis={"blocks": ["G1", "G4"], "tune_steps": 2, "probe_size": 8},
    )
    out = tmp_path / "out"
    assert _run("sensitivity", config, out) == 0
    lines = (out / "sensitivity.csv").read_text().splitlines()
    assert lines[0] == "block,corruption,score,seed"
    # two blocks x two seeds, then one control pair per block
    assert len(lines) == 1 + 4 + 2
    assert sum(line.endswith(",-1") for line in lines) == 2


def test_sensitivity_single_seed_warns(write_config, tmp_path, caplog):
    config = write_config(
        corruptions=[{"kind": "contrast", "severity": 5}],
        analysis={"blocks": ["G2"], "tune_steps": 1, "probe_size": 4},
    )
    out = tmp_path / "out"
    assert _run("sensitivity", config, out) == 0
    assert "control band" in caplog.text
    assert len((out / "sensitivity.csv").read_text().splitlines()) == 2


def test_alphas_run(write_config, tmp_path):
    config = write_config(
        corruptions=[{"kind": "gaussian_noise", "severity": 5}, {"kind": "brightness", "severity": 5}]
    )
    out = tmp_path / "out"
    assert _run("alphas", config, out) == 0
    lines = (out / "alphas-seed0.csv").read_text().splitlines()
    assert lines[0] == "sample,pc1,pc2,shift,silhouette"
    # 12 clean test images plus 12 per corruption
    assert len(lines) == 1 + 36
    assert {line.split(",")[3] for line in lines[1:]} == {"clean", "gaussian_noise-5", "brightness-5"}
    assert [r.regime for r in read_metrics(out / "metrics.csv")] == ["SSDNOnePass"] * 3


def test_alphas_per_layer_run(write_config, tmp_path):
    config = write_config(
        bridge={"bridge_c0": True},
        corruptions=[{"kind": "gaussian_noise", "severity": 5}, {"kind": "brightness", "severity": 5}],
        analysis={"per_layer": True},
    )
    out = tmp_path / "out"
    assert _run("alphas", config, out) == 0
    files = sorted(p.name for p in out.glob("alphas-*.csv"))
    # one projection per bridged layer, never a pooled one
    assert files == ["alphas-seed0-C0.csv", "alphas-seed0-G1_B0_C1.csv", "alphas-seed0-G1_B0_C2.csv"]
    for name in files:
        lines = (out / name).read_text().splitlines()
        assert len(lines) == 1 + 36
        assert {line.split(",")[3] for line in lines[1:]} == {"clean", "gaussian_noise-5", "brightness-5"}
    assert set(files) <= set(json.loads((out / "manifest.json").read_text())["files"])


def test_alphas_run_includes_target(write_config, cifar_target, tmp_path):
    config = write_config(dataset={"target": cifar_target}, corruptions=[{"kind": "gaussian_noise", "severity": 5}])
    out = tmp_path / "out"
    assert _run("alphas", config, out) == 0
    shifts = [line.split(",")[3] for line in (out / "alphas-seed0.csv").read_text().splitlines()[1:]]
    assert shifts.count("target") == 16
    assert [r.shift for r in read_metrics(out / "metrics.csv")] == ["clean", "gaussian_noise", "target"]


# Covariate-shifted target sets
def test_eval_run_with_mnist_target(write_config, mnist_target, tmp_path):
    config = write_config(dataset={"target": mnist_target}, corruptions=[{"kind": "contrast", "severity": 2}])
    out = tmp_path / "out"
    assert _run("eval", config, out) == 0
    rows = read_metrics(out / "metrics.csv")
    assert [(r.shift, r.severity) for r in rows] == [("clean", 0), ("contrast", 2), ("mnist", 0)]
    assert all(0.0 <= r.main_error_pct <= 100.0 for r in rows)
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["dataset"]["target"]["name"] == "mnist"


def test_eval_run_with_cifar_target(write_config, cifar_target, tmp_path):
    out = tmp_path / "out"
    assert _run("eval", write_config(seeds=[0, 1], dataset={"target": cifar_target}), out) == 0
    rows = read_metrics(out / "metrics.csv")
    assert [(r.shift, r.seed) for r in rows] == [("clean", 0), ("target", 0), ("clean", 1), ("target", 1)]


def test_train_run_skips_target(write_config, cifar_target, tmp_path):
    out = tmp_path / "out"
    assert _run("train", write_config(dataset={"target": cifar_target}), out) == 0
    assert [r.shift for r in read_metrics(out / "metrics.csv")] == ["clean"]


def test_load_target_matches_the_training_layout(write_config, mnist_target, tmp_path):
    config = parse_config(write_config(dataset={"target": mnist_target}).read_text(), kind="eval", base_dir=tmp_path)
    train, _ = load_datasets(config, 0)
    target = load_target(config, train)
    assert target.image_shape == train.image_shape == (3, 8, 8)
    assert len(target) == 8 and target.name == "mnist" and target.class_count == 4
    assert np.array_equal(target.images[:, 0], target.images[:, 2])
    assert load_target(config.with_overrides(dataset=ExperimentConfig().dataset), train) is None


def test_target_labels_outside_the_classes(write_config, mnist_target, tmp_path, capsys):
    write_idx(tmp_path / "target-labels.idx", 0x801, (8,), bytes([0, 1, 2, 3, 4, 5, 6, 7]))
    assert _run("eval", write_config(dataset={"target": mnist_target}), tmp_path / "out") == 1
    assert "not below 4" in capsys.readouterr().err


def test_alphas_needs_signal_bridge(write_config, tmp_path, capsys):
    config = write_config(bridge={"enable_signal_bridge": False})
    assert _run("alphas", config, tmp_path / "out") == 1
    assert "bridge.enable_signal_bridge" in capsys.readouterr().err


def test_timing_fills_wall_ms(write_config, tmp_path):
    config = parse_config(write_config(timing=True).read_text(), kind="train")
    out = execute(config, tmp_path / "out", quiet=True)
    manifest = json.loads((out / "manifest.json").read_text())
    assert "total" in manifest["timings_s"]
    assert manifest["versions"]["ssdn_lab"]
