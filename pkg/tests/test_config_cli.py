from __future__ import annotations

import json

import numpy as np
import pytest

from patchae import ConfigError, RunConfig, load_run_config, save_run_config
from patchae.cli import main
from patchae.config import run_config_from_dict, run_config_to_dict


def test_config_roundtrip_equality(tmp_path):
    cfg = run_config_from_dict(
        {
            "data": {"root": "somewhere", "class_name": "bottle"},
            "encoder": {
                "input_size": 64,
                "backbone": "scratch-tiny",
                "c1": 32,
                "c2": 64,
                "c3": 48,
            },
            "loss": {"alpha": 0.75},
            "training": {"epochs": 5, "learning_rate": 0.001},
        }
    )
    path = tmp_path / "run.yaml"
    save_run_config(cfg, path)
    again = load_run_config(path)
    assert again == cfg
    # and once more through plain dicts
    assert run_config_from_dict(run_config_to_dict(again)) == cfg


def test_empty_config_is_all_defaults(tmp_path):
    path = tmp_path / "empty.yaml"
    path.write_text("")
    assert load_run_config(path) == RunConfig()


def test_unknown_keys_rejected():
    with pytest.raises(ConfigError, match="unknown"):
        run_config_from_dict({"data": {"root": ".", "typo_key": 1}})
    with pytest.raises(ConfigError, match="unknown"):
        run_config_from_dict({"no_such_section": {}})


def test_scientific_notation_string_accepted():
    # yaml 1.1 parses bare 1e-4 as a string; the loader coerces it
    cfg = run_config_from_dict({"training": {"learning_rate": "1e-4"}})
    assert cfg.training.learning_rate == 1e-4


def test_bad_values_rejected():
    with pytest.raises(ConfigError):
        run_config_from_dict({"training": {"epochs": "five"}})
    with pytest.raises(ConfigError):
        run_config_from_dict({"loss": {"alpha": 2.0}})
    with pytest.raises(ConfigError):
        run_config_from_dict({"bank": {"coreset_fraction": 0.0}})


@pytest.fixture(scope="module")
def toy_run(tmp_path_factory):
    """One tiny CLI pipeline shared by the command tests."""
    root = tmp_path_factory.mktemp("cli")
    data_dir = root / "data"
    config_path = root / "run.yaml"
    rc = main(
        [
            "gen-toy-data",
            "--out",
            str(data_dir),
            "--seed",
            "3",
            "--n-train",
            "8",
            "--n-test-good",
            "4",
            "--n-test-defect",
            "4",
            "--write-config",
            str(config_path),
        ]
    )
    assert rc == 0
    cfg = load_run_config(config_path)
    import dataclasses

    cfg = dataclasses.replace(
        cfg,
        data=dataclasses.replace(cfg.data, work_dir=str(root / "work")),
        training=dataclasses.replace(cfg.training, epochs=2, batch_size=4),
    )
    save_run_config(cfg, config_path)
    rc = main(["train", "--config", str(config_path), "--seed", "1"])
    assert rc == 0
    checkpoint = root / "work" / "checkpoint.npz"
    rc = main(["build-bank", "--config", str(config_path), "--checkpoint", str(checkpoint)])
    assert rc == 0
    return {
        "root": root,
        "config": config_path,
        "checkpoint": checkpoint,
        "bank": root / "work" / "bank.pae",
    }


def test_cli_train_outputs_exist(toy_run):
    assert toy_run["checkpoint"].is_file()
    history = (toy_run["root"] / "work" / "loss_history.csv").read_text().strip().splitlines()
    assert history[0] == "epoch,mean_loss"
    assert len(history) == 3  # header + 2 epochs


def test_cli_bank_counts(toy_run):
    from patchae import load_bank

    bank = load_bank(toy_run["bank"])
    assert bank.size == 8 * 64  # 8 train images, 8x8 grid
    assert bank.dim == 48


def test_cli_bank_rebuild_is_byte_identical(toy_run):
    out = toy_run["root"] / "bank2.pae"
    rc = main(
        [
            "build-bank",
            "--config",
            str(toy_run["config"]),
            "--checkpoint",
            str(toy_run["checkpoint"]),
            "--out",
            str(out),
        ]
    )
    assert rc == 0
    assert out.read_bytes() == toy_run["bank"].read_bytes()


def test_cli_coreset_fraction_flag(toy_run):
    out = toy_run["root"] / "bank_small.pae"
    rc = main(
        [
            "build-bank",
            "--config",
            str(toy_run["config"]),
            "--checkpoint",
            str(toy_run["checkpoint"]),
            "--out",
            str(out),
            "--coreset-fraction",
            "0.25",
        ]
    )
    assert rc == 0
    from patchae import load_bank

    assert load_bank(out).size == round(0.25 * 8 * 64)


def test_cli_evaluate_report_and_heatmaps(toy_run):
    report_path = toy_run["root"] / "report.json"
    heat_dir = toy_run["root"] / "heat"
    rc = main(
        [
            "evaluate",
            "--config",
            str(toy_run["config"]),
            "--checkpoint",
            str(toy_run["checkpoint"]),
            "--bank",
            str(toy_run["bank"]),
            "--report",
            str(report_path),
            "--heatmaps",
            str(heat_dir),
        ]
    )
    assert rc == 0
    report = json.loads(report_path.read_text())
    assert 0.0 <= report["auroc"] <= 1.0
    assert report["n_images"] == 8
    assert len(report["images"]) == 8
    # one raw map and one rendering per test sample
    assert len(list(heat_dir.glob("*_scores.npy"))) == 8
    assert len(list(heat_dir.glob("*_heatmap.png"))) == 8
    raw = np.load(next(iter(sorted(heat_dir.glob("*_scores.npy")))))
    assert raw.shape == (8, 8)


def test_cli_evaluate_reweight_flag(toy_run):
    rc = main(
        [
            "evaluate",
            "--config",
            str(toy_run["config"]),
            "--checkpoint",
            str(toy_run["checkpoint"]),
            "--bank",
            str(toy_run["bank"]),
            "--report",
            str(toy_run["root"] / "report_rw.json"),
            "--reweight",
        ]
    )
    assert rc == 0


def test_cli_missing_config_exits_1(tmp_path):
    assert main(["train", "--config", str(tmp_path / "none.yaml")]) == 1


def test_cli_missing_data_path_exits_2_and_names_path(tmp_path, capsys):
    cfg_path = tmp_path / "run.yaml"
    save_run_config(
        run_config_from_dict(
            {
                "data": {"root": str(tmp_path / "nowhere"), "class_name": "toy"},
                "encoder": {
                    "input_size": 64,
                    "backbone": "scratch-tiny",
                    "c1": 32,
                    "c2": 64,
                    "c3": 48,
                },
            }
        ),
        cfg_path,
    )
    rc = main(["train", "--config", str(cfg_path)])
    assert rc == 2
    err = capsys.readouterr().err
    assert "nowhere" in err


def test_cli_corrupt_bank_exits_2(toy_run, tmp_path):
    bad = tmp_path / "bad.pae"
    raw = bytearray(toy_run["bank"].read_bytes())
    raw[:8] = b"XXXXXXXX"
    bad.write_bytes(bytes(raw))
    rc = main(
        [
            "evaluate",
            "--config",
            str(toy_run["config"]),
            "--checkpoint",
            str(toy_run["checkpoint"]),
            "--bank",
            str(bad),
        ]
    )
    assert rc == 2


def test_cli_config_checkpoint_mismatch_refused(toy_run, tmp_path, capsys):
    import dataclasses

    cfg = load_run_config(toy_run["config"])
    cfg = dataclasses.replace(cfg, encoder=dataclasses.replace(cfg.encoder, c3=40))
    other = tmp_path / "other.yaml"
    save_run_config(cfg, other)
    rc = main(
        [
            "build-bank",
            "--config",
            str(other),
            "--checkpoint",
            str(toy_run["checkpoint"]),
            "--out",
            str(tmp_path / "x.pae"),
        ]
    )
    assert rc == 1
    assert "does not match" in capsys.readouterr().err


def test_cli_usage_error_exits_1():
    assert main(["no-such-command"]) == 1
    assert main(["train"]) == 1  # missing --config


def test_cli_numerical_failure_exits_3(toy_run, tmp_path, capsys):
    import dataclasses

    cfg = load_run_config(toy_run["config"])
    cfg = dataclasses.replace(
        cfg,
        data=dataclasses.replace(cfg.data, work_dir=str(tmp_path / "work")),
        training=dataclasses.replace(
            cfg.training, optimizer="sgd-momentum", learning_rate=1e16, epochs=4
        ),
    )
    diverging = tmp_path / "diverge.yaml"
    save_run_config(cfg, diverging)
    rc = main(["train", "--config", str(diverging)])
    assert rc == 3
    assert "non-finite" in capsys.readouterr().err
