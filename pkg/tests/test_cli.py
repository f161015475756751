import json

import numpy as np
import pytest

from neuromatch import trainer
from neuromatch.cli import main
from neuromatch.data_io import load_manifest, read_tensor, write_tensor

FAST = ["--epochs", "2", "--set", "model.conv1_maps=4", "--set", "model.conv2_maps=4", "--set", "model.hidden=4"]


@pytest.fixture(scope="module")
def natural(tmp_path_factory):
    root = tmp_path_factory.mktemp("nat")
    assert main(["synth", "--out", str(root), "--seed", "3", "--subjects", "1", "--trials", "6", "--seconds", "8",
                 "--channels", "16"]) == 0
    return root / "manifest.jsonl"


def test_missing_seed_is_usage_error(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["synth", "--out", str(tmp_path)])
    assert exc.value.code == 2 and "--seed" in capsys.readouterr().err


def test_bad_override_is_usage_error(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["synth", "--out", str(tmp_path), "--seed", "1", "--set", "synth.delay_ms=-5"])
    assert exc.value.code == 2


def test_synth_dichotic(tmp_path, capsys):
    args = ["synth", "--mode", "dichotic", "--trials", "30", "--subjects", "1", "--seconds", "4", "--channels", "8",
            "--seed", "7"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert capsys.readouterr().out.strip() == str(tmp_path / "a" / "manifest.jsonl")
    ds = load_manifest(tmp_path / "a" / "manifest.jsonl")
    assert ds.protocol == "dichotic" and len(ds.trials) == 30
    main(args + ["--out", str(tmp_path / "b")])
    for p in (tmp_path / "a").rglob("*.nmtb"):
        assert p.read_bytes() == (tmp_path / "b" / p.relative_to(tmp_path / "a")).read_bytes()


def test_preprocess_reports_corrupt_channel(tmp_path):
    main(["synth", "--out", str(tmp_path / "raw"), "--seed", "2", "--subjects", "1", "--trials", "2", "--seconds", "6",
          "--channels", "64", "--eeg-rate", "512"])
    path = tmp_path / "raw" / "eeg" / "s01_t01.nmtb"
    eeg = read_tensor(path)
    eeg[5] *= 50.0
    write_tensor(path, eeg)
    for run in ("a", "b"):
        assert main(["preprocess", "--manifest", str(tmp_path / "raw" / "manifest.jsonl"),
                     "--out", str(tmp_path / run), "--seed", "0"]) == 0
    rows = [json.loads(line) for line in (tmp_path / "a" / "preprocess_report.jsonl").read_text().splitlines()]
    assert rows[0]["rejected"] == [5] and rows[1]["rejected"] == []
    ds = load_manifest(tmp_path / "a" / "manifest.jsonl")
    assert all(r.rate == 64 for r in ds.eeg_records())
    assert ds.load_eeg(ds.eeg_records()[0]).samples.shape == (64, 384)
    for p in (tmp_path / "a").rglob("*"):
        if p.is_file():
            assert p.read_bytes() == (tmp_path / "b" / p.relative_to(tmp_path / "a")).read_bytes()


def test_train_writes_checkpoint_per_fold(natural, tmp_path, capsys):
    assert main(["train", "--manifest", str(natural), "--out", str(tmp_path), "--seed", "1", "--protocol", "natural",
                 "--folds", "3", "--test-per-fold", "2", *FAST]) == 0
    assert sorted(p.name for p in tmp_path.glob("fold_*.ckpt")) == ["fold_0.ckpt", "fold_1.ckpt", "fold_2.ckpt"]
    assert len(json.loads((tmp_path / "folds.json").read_text())) == 3
    assert capsys.readouterr().out.count("fold ") == 3


def test_protocol_mismatch(natural, tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["train", "--manifest", str(natural), "--out", str(tmp_path), "--seed", "1", "--protocol", "dichotic"])
    assert exc.value.code == 2


def test_fixed_lambda_envelope_only(natural, tmp_path, monkeypatch):
    seen = []
    real = trainer.batch_loss

    def spy(model, batch, lam, variant):
        seen.append(lam)
        return real(model, batch, lam, variant)

    monkeypatch.setattr(trainer, "batch_loss", spy)
    assert main(["train", "--manifest", str(natural), "--out", str(tmp_path), "--seed", "1", "--folds", "2",
                 "--test-per-fold", "2", "--lambda", "fixed=1", *FAST]) == 0
    assert seen and set(seen) == {1.0}


def test_nan_loss_exits_with_fold(natural, tmp_path, monkeypatch, capsys):
    import torch

    monkeypatch.setattr(trainer, "batch_loss",
                        lambda *a: (torch.tensor(float("nan"), requires_grad=True), None, None))
    assert main(["train", "--manifest", str(natural), "--out", str(tmp_path), "--seed", "1", "--folds", "2",
                 "--test-per-fold", "2", *FAST]) == 1
    assert "fold 0" in capsys.readouterr().err


def test_evaluate_lambda_table(natural, tmp_path):
    assert main(["evaluate", "--manifest", str(natural), "--out", str(tmp_path), "--seed", "1", "--folds", "2",
                 "--test-per-fold", "2", "--lambdas", "0,0.2,0.4,0.5,0.6,0.8,1", *FAST]) == 0
    rows = (tmp_path / "lambda_accuracy.tsv").read_text().splitlines()
    assert [r.split("\t")[0] for r in rows[1:]] == ["0", "0.2", "0.4", "0.5", "0.6", "0.8", "1"]
    assert {p.name for p in tmp_path.glob("scatter_*.tsv")} == {
        "scatter_lambda_0.tsv", "scatter_lambda_0.5.tsv", "scatter_lambda_1.tsv"}


def test_evaluate_regions_and_boundaries(tmp_path):
    main(["synth", "--out", str(tmp_path / "d"), "--seed", "4", "--subjects", "1", "--trials", "4", "--seconds", "6",
          "--channels", "64"])
    assert main(["evaluate", "--manifest", str(tmp_path / "d" / "manifest.jsonl"), "--out", str(tmp_path / "r"),
                 "--seed", "1", "--folds", "2", "--test-per-fold", "1", "--epochs", "1", "--regions", "all",
                 "--word-boundaries", "random:4", "--set", "model.conv1_maps=2", "--set", "model.conv2_maps=2",
                 "--set", "model.hidden=2"]) == 0
    regions = (tmp_path / "r" / "region_accuracy.tsv").read_text().splitlines()
    assert [r.split("\t")[0] for r in regions[1:]] == ["frontal", "central", "parietal", "temporal", "occipital"]
    bounds = (tmp_path / "r" / "boundary_ablation.tsv").read_text().splitlines()
    assert [r.split("\t")[0] for r in bounds[1:]] == ["true", "random:4"]


def test_evaluate_from_checkpoints(natural, tmp_path):
    main(["train", "--manifest", str(natural), "--out", str(tmp_path / "ck"), "--seed", "5", "--folds", "2",
          "--test-per-fold", "2", *FAST])
    assert main(["evaluate", "--manifest", str(natural), "--out", str(tmp_path / "ev"), "--checkpoints",
                 str(tmp_path / "ck"), *FAST]) == 0
    rows = (tmp_path / "ev" / "lambda_accuracy.tsv").read_text().splitlines()
    assert rows[1].split("\t")[3] == "2"


def test_missing_manifest_is_runtime_error(tmp_path, capsys):
    assert main(["train", "--manifest", str(tmp_path / "nope.jsonl"), "--out", str(tmp_path), "--seed", "1"]) == 1
    assert "neuromatch: error:" in capsys.readouterr().err
