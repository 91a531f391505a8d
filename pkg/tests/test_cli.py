"""Command-line interface: exit codes and a full pipeline walk."""

import json

import numpy as np
import pytest
import yaml

from melosvc.cli import main


@pytest.fixture(scope="module")
def ws(tmp_path_factory):
    """Shared directory for the sequential pipeline test."""
    return tmp_path_factory.mktemp("cli")


@pytest.fixture(scope="module")
def config_path(ws):
    cfg = {
        "seed": 11,
        "data": {
            "manifest": str(ws / "manifest.jsonl"),
            "labels_dir": str(ws / "labels"),
        },
        "backbone": {"dim": 16, "layers": 2},
        "melody": {
            "blocks": 1, "kernel": 3, "ff_dim": 32, "feature_dim": 16,
            "dropout": 0.0, "lr": 1e-3, "batch_size": 2, "crop_seconds": 0.6,
            "log_every": 1, "bgm_prob": 0.0,
        },
        "svc": {
            "dim": 16, "enc_blocks": 1, "dec_blocks": 1, "kernel": 3,
            "ff_dim": 32, "dropout": 0.0, "batch_size": 2, "crop_frames": 32,
            "steps": 2, "log_every": 1,
        },
        "eval": {"snr_levels": [0, 10]},
    }
    path = ws / "config.yaml"
    path.write_text(yaml.safe_dump(cfg))
    return path


def test_pipeline_subcommands(ws, config_path, capsys):
    """synth-corpus -> prepare-data -> label -> train -> convert -> synthesize."""
    corpus = ws / "corpus"
    assert main([
        "synth-corpus", "--out", str(corpus), "--songs", "6", "--singers", "3",
        "--duration", "1.2", "--seed", "21",
    ]) == 0
    assert len(list(corpus.glob("song*/vocal.wav"))) == 6

    manifest = ws / "manifest.jsonl"
    assert main([
        "prepare-data", "--corpus", str(corpus), "--out", str(manifest), "--seed", "5",
    ]) == 0
    assert manifest.exists()
    assert "6 entries" in capsys.readouterr().out

    assert main(["label", "--manifest", str(manifest), "--out", str(ws / "labels")]) == 0
    assert (ws / "labels" / "index.jsonl").exists()

    melody_dir = ws / "melody_run"
    assert main([
        "train-melody", "--config", str(config_path), "--condition", "single-fft",
        "--steps", "2", "--out", str(melody_dir),
    ]) == 0
    melody_ckpt = melody_dir / "checkpoint.pt"
    assert melody_ckpt.exists()
    assert (melody_dir / "config.yaml").exists()

    weights_csv = ws / "weights.csv"
    assert main([
        "report-weights", "--ckpt", f"single-fft={melody_ckpt}", "--out", str(weights_csv),
    ]) == 0
    assert weights_csv.read_text().startswith("label,layer,weight")

    testset_dir = ws / "testset"
    assert main([
        "make-testset", "--config", str(config_path), "--levels", "0,10",
        "--out", str(testset_dir),
    ]) == 0
    assert (testset_dir / "testset.jsonl").exists()

    report_path = ws / "identity.json"
    assert main([
        "evaluate", "--testset", str(testset_dir / "testset.jsonl"), "--identity",
        "--out", str(report_path),
    ]) == 0
    report = json.loads(report_path.read_text())
    assert report["n_scored"] >= 1

    svc_dir = ws / "svc_run"
    assert main([
        "train-svc", "--config", str(config_path), "--melody-ckpt", str(melody_ckpt),
        "--steps", "2", "--out", str(svc_dir),
    ]) == 0
    svc_ckpt = svc_dir / "svc.pt"
    assert svc_ckpt.exists()

    source = sorted(corpus.glob("song*/vocal.wav"))[0]
    mel_path = ws / "converted.npz"
    assert main([
        "convert", "--input", str(source), "--melody-ckpt", str(melody_ckpt),
        "--svc-ckpt", str(svc_ckpt), "--out", str(mel_path),
    ]) == 0
    with np.load(mel_path) as data:
        assert data["mel"].shape[1] == 80

    wav_path = ws / "synthesized.wav"
    assert main([
        "synthesize", "--mel", str(mel_path), "--vocoder", "fallback:3",
        "--out", str(wav_path),
    ]) == 0
    assert wav_path.stat().st_size > 1000

    e2e_path = ws / "e2e.wav"
    assert main([
        "end-to-end", "--input", str(source), "--melody-ckpt", str(melody_ckpt),
        "--svc-ckpt", str(svc_ckpt), "--vocoder", "fallback:3",
        "--out", str(e2e_path),
    ]) == 0
    assert e2e_path.exists()
    assert (ws / "e2e.wav.json").exists()

    mix_path = ws / "mixed.wav"
    song = sorted(corpus.glob("song*"))[0]
    assert main([
        "mix", "--vocal", str(song / "vocal.wav"), "--bgm", str(song / "bgm.wav"),
        "--snr", "5", "--out", str(mix_path),
    ]) == 0
    assert "measured 5.000" in capsys.readouterr().out

    perturbed = ws / "fast.wav"
    assert main([
        "perturb", "--input", str(source), "--rate", "1.1", "--out", str(perturbed),
    ]) == 0

    ablate_dir = ws / "ablate"
    assert main([
        "ablate", "--config", str(config_path), "--conditions", "raw-single",
        "--steps", "1", "--out", str(ablate_dir),
    ]) == 0
    table = (ablate_dir / "ablation_table.csv").read_text().splitlines()
    assert len(table) == 2


class TestExitCodes:
    def test_config_error_exits_2(self, tmp_path):
        assert main([
            "train-melody", "--config", str(tmp_path / "absent.yaml"),
            "--out", str(tmp_path / "run"),
        ]) == 2

    def test_unknown_condition_exits_2(self, ws, config_path):
        assert main([
            "train-melody", "--config", str(config_path), "--condition", "bogus",
            "--out", str(ws / "never"),
        ]) == 2

    def test_data_error_exits_3(self, tmp_path):
        missing = tmp_path / "nope.wav"
        assert main([
            "mix", "--vocal", str(missing), "--bgm", str(missing),
            "--snr", "5", "--out", str(tmp_path / "out.wav"),
        ]) == 3

    def test_stage_error_exits_4(self, tmp_path):
        assert main([
            "evaluate", "--testset", str(tmp_path / "absent.jsonl"), "--identity",
            "--out", str(tmp_path / "r.json"),
        ]) == 4

    def test_evaluate_without_mode_exits_2(self, ws, config_path, tmp_path):
        # needs a real test set so it gets past loading
        testset_dir = ws / "testset"
        if not (testset_dir / "testset.jsonl").exists():
            pytest.skip("pipeline test has not built the test set yet")
        assert main([
            "evaluate", "--testset", str(testset_dir / "testset.jsonl"),
            "--out", str(tmp_path / "r.json"),
        ]) == 2

    def test_missing_checkpoint_exits_3(self, tmp_path, ws):
        source = sorted((ws / "corpus").glob("song*/vocal.wav"))
        if not source:
            pytest.skip("pipeline test has not built the corpus yet")
        assert main([
            "convert", "--input", str(source[0]),
            "--svc-ckpt", str(tmp_path / "absent.pt"),
            "--out", str(tmp_path / "m.npz"),
        ]) == 3
