"""CLI smoke tests over tiny fixtures, including exit codes."""

import dataclasses
import json

import numpy as np
import pytest

from nightrain.cli import main
from nightrain.config import AppConfig
from nightrain.denoise import Checkpoint, NetworkArch, init_network, save_checkpoint
from nightrain.harness.pipeline import build_scene_suite, fit_suite_classifier
from nightrain.imgcore import save_image
from nightrain.rng import make_rng


@pytest.fixture(scope="module")
def small_cfg_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "small.toml"
    path.write_text(
        "[eval]\n"
        "n_scenes = 6\n"
        "n_frames = 24\n"
        "scene_width = 96\n"
        "scene_height = 64\n"
        "[train]\n"
        "steps_per_stage = 5\ncandidates = 1\n"
        "batch_size = 2\n"
        "patch_size = 32\n"
    )
    return path


@pytest.fixture(scope="module")
def suite_dir(tmp_path_factory, small_cfg_file):
    out = tmp_path_factory.mktemp("suite")
    rc = main(["script", "--config", str(small_cfg_file), "--seed", "5",
               "--out", str(out), "--corrupt-stage", "3"])
    assert rc == 0
    return out


@pytest.fixture(scope="module")
def init_ckpt_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("ckpt")
    net = init_network(NetworkArch(), seed=1)
    save_checkpoint(Checkpoint(network=net), out)
    return out


@pytest.fixture(scope="module")
def classifier_file(tmp_path_factory, suite_dir, small_cfg_file):
    from nightrain.config import load_config
    from nightrain.imgcore import load_dataset

    cfg = load_config(small_cfg_file)
    model = fit_suite_classifier(load_dataset(suite_dir / "clean"), cfg)
    path = tmp_path_factory.mktemp("model") / "classifier.json"
    model.save(path)
    return path


def test_script_emits_clean_and_corrupted(suite_dir):
    assert (suite_dir / "clean" / "scenes").is_dir()
    assert (suite_dir / "stage3" / "scenes").is_dir()
    clean_pngs = list((suite_dir / "clean").rglob("*.png"))
    noisy_pngs = list((suite_dir / "stage3").rglob("*.png"))
    assert len(clean_pngs) == len(noisy_pngs) == 6 * 24


def test_synth_and_train_and_denoise(tmp_path, small_cfg_file, suite_dir):
    rc = main(["synth", "--config", str(small_cfg_file), "--seed", "9",
               "--clean", str(suite_dir / "clean"), "--out", str(tmp_path / "curr")])
    assert rc == 0
    manifest = json.loads((tmp_path / "curr" / "manifest.json").read_text())
    assert {e["stage"] for e in manifest["entries"]} == {1, 2, 3, 4, 5}

    rc = main(["train", "--config", str(small_cfg_file), "--seed", "4",
               "--curriculum", str(tmp_path / "curr"), "--out", str(tmp_path / "ck")])
    assert rc == 0
    assert (tmp_path / "ck" / "weights.bin").exists()
    assert (tmp_path / "ck" / "train_log.csv").exists()

    in_dir = tmp_path / "frames"
    rng = make_rng(8)
    for i in range(2):
        save_image(rng.uniform(0, 1, (64, 64)), in_dir / f"f{i}.png")
    rc = main(["denoise", "--ckpt", str(tmp_path / "ck"), "--in", str(in_dir),
               "--out", str(tmp_path / "restored")])
    assert rc == 0
    assert len(list((tmp_path / "restored").glob("*.png"))) == 2


def test_quality_subcommand(tmp_path):
    rng = make_rng(9)
    for i in range(3):
        img = rng.uniform(0, 1, (32, 32))
        save_image(img, tmp_path / "a" / f"p{i}.png")
        save_image(np.clip(img + 0.02, 0, 1), tmp_path / "b" / f"p{i}.png")
    rc = main(["quality", "--restored", str(tmp_path / "a"),
               "--reference", str(tmp_path / "b"), "--out", str(tmp_path / "q")])
    assert rc == 0
    text = (tmp_path / "q" / "report.csv").read_text()
    assert text.splitlines()[0] == "name,psnr_db,ssim,l1,mse,rmse,mae"
    assert len(text.splitlines()) == 5  # header + 3 pairs + mean


def test_detect_then_track(tmp_path, small_cfg_file, suite_dir, init_ckpt_dir,
                           classifier_file):
    scene_dir = sorted((suite_dir / "clean" / "scenes").iterdir())[0]
    rc = main(["detect", "--config", str(small_cfg_file), "--model",
               str(classifier_file), "--in", str(scene_dir),
               "--out", str(tmp_path / "det")])
    assert rc == 0
    det = json.loads((tmp_path / "det" / "detections.json").read_text())
    assert det["frames"]
    assert any(fr["proposals"] for fr in det["frames"])

    rc = main(["track", "--detections", str(tmp_path / "det" / "detections.json"),
               "--out", str(tmp_path / "trk")])
    assert rc == 0
    trk = json.loads((tmp_path / "trk" / "tracks.json").read_text())
    assert len(trk["frames"]) == len(det["frames"])
    assert any(fr["tracks"] for fr in trk["frames"])


def test_eval_subcommand(tmp_path, small_cfg_file, suite_dir, init_ckpt_dir,
                         classifier_file):
    rc = main(["eval", "--config", str(small_cfg_file),
               "--suite", str(suite_dir / "stage3"),
               "--train-suite", str(suite_dir / "clean"),
               "--ckpt", str(init_ckpt_dir),
               "--model", str(classifier_file),
               "--out", str(tmp_path / "ev")])
    assert rc == 0
    report = (tmp_path / "ev" / "report.csv").read_text().splitlines()
    assert len(report) == 3
    assert (tmp_path / "ev" / "timing.csv").exists()
    assert (tmp_path / "ev" / "report.svg").exists()
    assert (tmp_path / "ev" / "raw" / "per_scene.csv").exists()
    assert (tmp_path / "ev" / "denoised" / "per_scene.csv").exists()
    raw_row, den_row = report[1].split(","), report[2].split(",")
    assert raw_row[1] == den_row[1]  # same config hash


def test_gradcheck_subcommand(capsys):
    rc = main(["gradcheck", "--seed", "1", "--params", "10", "--patch", "16"])
    assert rc == 0
    out = capsys.readouterr().out
    assert "max relative error" in out


def test_exit_code_2_on_validation_error(tmp_path):
    rc = main(["denoise", "--ckpt", str(tmp_path / "missing"),
               "--in", str(tmp_path), "--out", str(tmp_path / "o")])
    assert rc == 2
    rc = main(["synth", "--clean", str(tmp_path / "nothing"),
               "--out", str(tmp_path / "o2")])
    assert rc == 2
    bad_cfg = tmp_path / "bad.toml"
    bad_cfg.write_text("= not toml")
    rc = main(["script", "--config", str(bad_cfg), "--out", str(tmp_path / "o3")])
    assert rc == 2
