import argparse
from pathlib import Path

import numpy as np
import pytest

from tsbsmamba.commands.train import training_config
from tsbsmamba.main import main
from tsbsmamba.models.config_models import ModelConfig, RunConfig
from tsbsmamba.services.separator import build_model, force_identity
from tsbsmamba.utils.audio_io import read_wav, write_wav
from tsbsmamba.utils.checkpoint import save_model
from tsbsmamba.utils.exports import read_rows

SOURCES = ["vocals", "bass", "drums", "other"]


@pytest.fixture
def identity_checkpoint(tmp_path):
    return save_model(tmp_path / "identity.tsbm", force_identity(build_model(ModelConfig.toy(), seed=0)))


def test_info_prints_table(capsys):
    assert main(["info", "--preset", "lightweight"]) == 0
    out = capsys.readouterr().out
    assert "stage 1" in out and "total" in out and "27.71" in out


def test_info_writes_identity_checkpoint(tmp_path, capsys):
    path = tmp_path / "id.tsbm"
    assert main(["info", "--preset", "toy", "--write-identity", str(path)]) == 0
    assert path.exists()
    assert "instantiated" in capsys.readouterr().out


def test_separate_with_identity_checkpoint(tmp_path, identity_checkpoint):
    rate = ModelConfig.toy().stft.sample_rate
    mixture = np.random.default_rng(0).uniform(-0.5, 0.5, (2, 2 * rate))
    source = write_wav(tmp_path / "mix.wav", mixture, rate, subtype="float")
    out = tmp_path / "out"

    code = main(["--out", str(out), "separate", str(source), "--checkpoint", str(identity_checkpoint),
                 "--subtype", "float", "--export-stage1", "--spectrogram-csv"])
    assert code == 0
    for name in SOURCES:
        audio, _ = read_wav(out / f"mix.{name}.wav", expected_rate=rate)
        assert np.max(np.abs(audio - mixture)) < 1e-4
        assert (out / f"mix.{name}.stage1.wav").exists()
        assert (out / f"mix.{name}.spec.ch0.csv").exists()
    assert (out / "mix.mixture.spec.ch1.csv").exists()


def test_separate_rejects_mono(tmp_path, identity_checkpoint):
    rate = ModelConfig.toy().stft.sample_rate
    mono = write_wav(tmp_path / "mono.wav", np.zeros((1, rate)), rate)
    assert main(["--out", str(tmp_path), "separate", str(mono), "--checkpoint", str(identity_checkpoint)]) == 1


def test_eval_scores_existing_estimates(tmp_path):
    rate = 8000
    rng = np.random.default_rng(1)
    for song in ("a", "b"):
        for name in SOURCES:
            ref = rng.uniform(-0.5, 0.5, (2, 2 * rate))
            write_wav(tmp_path / "refs" / song / f"{name}.wav", ref, rate, subtype="float")
            write_wav(tmp_path / "ests" / song / f"{name}.wav", 0.5 * ref, rate, subtype="float")

    code = main(["--out", str(tmp_path / "report"), "eval", str(tmp_path / "refs"),
                 "--estimates", str(tmp_path / "ests"), "--sample-rate", str(rate)])
    assert code == 0
    rows = read_rows(tmp_path / "report" / "sdr_report.csv")
    assert [r["source"] for r in rows] == SOURCES
    for row in rows:
        assert float(row["usdr"]) == pytest.approx(6.0206, abs=1e-3)
    assert len(read_rows(tmp_path / "report" / "sdr_chunks.csv")) == 2 * 2 * len(SOURCES)


def test_eval_needs_exactly_one_estimate_source(tmp_path):
    (tmp_path / "refs" / "a").mkdir(parents=True)
    assert main(["eval", str(tmp_path / "refs")]) == 1


def test_eval_on_synthetic_songs_writes_both_reports(tmp_path, identity_checkpoint):
    out = tmp_path / "report"
    code = main(["--out", str(out), "eval", "--synthetic", "7", "--checkpoint", str(identity_checkpoint),
                 "--songs", "1", "--seconds", "3"])
    assert code == 0
    separated = read_rows(out / "sdr_report.csv")
    baseline = read_rows(out / "baseline" / "sdr_report.csv")
    assert [r["source"] for r in separated] == SOURCES
    for ours, mixture in zip(separated, baseline):
        assert float(ours["usdr"]) == pytest.approx(float(mixture["usdr"]), abs=1e-3)


def test_eval_synthetic_rejects_stems(tmp_path, identity_checkpoint):
    (tmp_path / "refs").mkdir()
    assert main(["eval", str(tmp_path / "refs"), "--synthetic", "1", "--checkpoint", str(identity_checkpoint)]) == 1
    assert main(["eval", "--synthetic", "1"]) == 1


def test_train_keeps_config_seed_unless_overridden(tmp_path):
    seeded = tmp_path / "seeded.toml"
    seeded.write_text("seed = 17\nepochs = 1\n")
    plain = tmp_path / "plain.toml"
    plain.write_text("epochs = 1\n")
    args = argparse.Namespace(seed=None, epochs=None, steps=2)

    cfg = training_config(args, RunConfig(subcommand="train", config_path=seeded, seed=3))
    assert cfg.seed == 17
    assert cfg.steps_per_epoch == 2
    assert training_config(args, RunConfig(subcommand="train", config_path=plain, seed=5)).seed == 5

    args.seed = 3
    assert training_config(args, RunConfig(subcommand="train", config_path=seeded, seed=3)).seed == 3


def test_missing_config_file_fails():
    assert main(["--config", "does-not-exist.toml", "info"]) == 1


@pytest.mark.slow
def test_verify_reports_injected_fault(tmp_path):
    assert main(["--precision", "f64", "--out", str(tmp_path), "verify", "--perturb-dual", "1e-3"]) == 1
    rows = {r["name"]: r for r in read_rows(tmp_path / "verify_report.csv")}
    assert rows["dual_form"]["passed"] == "False"
    assert rows["round_trip"]["passed"] == "True"


@pytest.mark.slow
def test_train_toy_config(tmp_path):
    config = Path(__file__).resolve().parent.parent / "configs" / "train_toy.toml"
    assert main(["--config", str(config), "--out", str(tmp_path), "train", "--epochs", "1", "--steps", "5"]) == 0
    rows = read_rows(tmp_path / "train_log.csv")
    assert len(rows) == 5
    assert (tmp_path / "checkpoints" / "epoch-001.tsbm").exists()

    report = tmp_path / "held-out"
    assert main(["--out", str(report), "eval", "--synthetic", "2024", "--checkpoint",
                 str(tmp_path / "checkpoints" / "epoch-001.tsbm"), "--songs", "1", "--seconds", "4"]) == 0
    assert len(read_rows(report / "baseline" / "sdr_report.csv")) == len(read_rows(report / "sdr_report.csv"))
