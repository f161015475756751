import json
import math

import numpy as np
import pytest
import torch

from helpers import random_pairs
from neuromatch.model import ModelConfig, load_checkpoint
from neuromatch.pairs import derive_rng
from neuromatch.trainer import (AdamState, FoldSpec, TrainConfig, TrainingDivergence, adam_step, fold_split,
                                make_folds, train, train_model)

SMALL = ModelConfig(n_channels=4, hidden=8, conv1_maps=4, conv2_maps=8)


def by_trial(n_trials=6, per_trial=8, seed=0):
    out = {}
    for t in range(n_trials):
        out[f"t{t:02d}"] = random_pairs(per_trial, seed=seed + t, channels=4, n_frames=40, trial=f"t{t:02d}")
    return out


class TestFolds:
    def test_twenty_trials_six_folds(self):
        folds = make_folds([f"t{i}" for i in range(20)], 6, 3, np.random.default_rng(0))
        tests = [set(f.test) for f in folds]
        assert len(folds) == 6 and all(len(t) == 3 for t in tests)
        assert len(set().union(*tests)) == 18
        assert all(not (set(f.train) & set(f.test)) for f in folds)

    def test_exact_partition(self):
        ids = [f"t{i}" for i in range(30)]
        folds = make_folds(ids, 10, 3, np.random.default_rng(0))
        assert sorted(t for f in folds for t in f.test) == sorted(ids)

    def test_seeded(self):
        ids = [f"t{i}" for i in range(20)]
        a = make_folds(ids, 6, 3, np.random.default_rng(4))
        b = make_folds(ids, 6, 3, np.random.default_rng(4))
        assert [f.test for f in a] == [f.test for f in b]

    def test_capacity(self):
        with pytest.raises(ValueError):
            make_folds([f"t{i}" for i in range(10)], 6, 3, np.random.default_rng(0))
        folds = make_folds([f"t{i}" for i in range(10)], 6, 3, np.random.default_rng(0), allow_overlap=True)
        assert len(folds) == 6 and all(not (set(f.train) & set(f.test)) for f in folds)

    def test_overlap_rejected_by_fold_spec(self):
        with pytest.raises(ValueError):
            FoldSpec(0, ["a", "b"], ["b"])


class TestAdam:
    def test_first_step(self):
        p, s = adam_step({"w": torch.tensor([0.0], dtype=torch.float64)},
                         {"w": torch.tensor([1.0], dtype=torch.float64)}, AdamState(), lr=0.001)
        assert p["w"].item() == pytest.approx(-0.001 / (1 + 1e-8), rel=1e-12)
        assert s.step == 1

    def test_zero_gradient_fixed_point(self):
        theta = torch.tensor([0.3, -2.0], dtype=torch.float64)
        p, _ = adam_step({"w": theta}, {"w": torch.zeros(2, dtype=torch.float64)}, AdamState())
        assert torch.equal(p["w"], theta)

    def test_quadratic_bowl(self):
        # lr 0.001 cannot cover a unit distance in 500 steps (|step| <= lr); 0.05 does
        p, s = {"w": torch.tensor([1.0], dtype=torch.float64)}, AdamState()
        for _ in range(500):
            p, s = adam_step(p, {"w": 2 * p["w"]}, s, lr=0.05)
        assert abs(p["w"].item()) < 1e-3

    def test_coupled_weight_decay(self):
        theta = torch.tensor([2.0], dtype=torch.float64)
        p, s = adam_step({"w": theta}, {"w": torch.zeros(1, dtype=torch.float64)}, AdamState(), weight_decay=0.1)
        assert s.m["w"].item() == pytest.approx(0.1 * 0.2)  # (1 - beta1) * wd * theta
        assert p["w"].item() < 2.0

    def test_inputs_not_modified(self):
        theta = torch.tensor([1.0])
        adam_step({"w": theta}, {"w": torch.tensor([1.0])}, AdamState())
        assert theta.item() == 1.0

    def test_nan_gradient(self):
        with pytest.raises(TrainingDivergence, match="w"):
            adam_step({"w": torch.zeros(1)}, {"w": torch.tensor([math.nan])}, AdamState())


class TestConfig:
    def test_lambda_parse(self):
        assert TrainConfig.parse_lambda("fixed=1") == {"lambda_policy": "fixed", "lambda_value": 1.0}
        assert TrainConfig.parse_lambda("sampled") == {"lambda_policy": "sampled"}
        with pytest.raises(ValueError):
            TrainConfig.parse_lambda("often")

    def test_invalid(self):
        with pytest.raises(ValueError):
            TrainConfig(lambda_policy="fixed", lambda_value=1.5)
        with pytest.raises(ValueError):
            TrainConfig(batch_size=0)


class TestTraining:
    def test_fixed_lambda_one_freezes_text_branch(self):
        data = by_trial(3)
        seen = []

        def check(epoch, group, lam, model):
            seen.append(lam)
            for p in model.branch("text"):
                assert torch.count_nonzero(p.grad) == 0
            assert any(torch.count_nonzero(p.grad) for p in model.branch("speech"))

        train_model(data["t00"] + data["t01"], data["t02"], SMALL,
                    TrainConfig(epochs=1, lambda_policy="fixed", lambda_value=1.0), seed=0, on_batch=check)
        assert seen and set(seen) == {1.0}

    def test_sampled_lambda_gradients(self):
        data = by_trial(4)
        seen = set()

        def check(epoch, group, lam, model):
            seen.add(lam)
            text = sum(int(torch.count_nonzero(p.grad)) for p in model.branch("text"))
            speech = sum(int(torch.count_nonzero(p.grad)) for p in model.branch("speech"))
            if lam == 1.0:
                assert text == 0 and speech > 0
            elif lam == 0.0:
                assert speech == 0 and text > 0
            else:
                assert speech > 0 and text > 0

        train_model([p for t in ("t00", "t01", "t02") for p in data[t]], data["t03"], SMALL,
                    TrainConfig(epochs=6, batch_size=4), seed=1, on_batch=check)
        assert seen == {0.0, 0.5, 1.0}

    def test_deterministic_loss_curves(self):
        data = by_trial(4, per_trial=16)
        folds = [FoldSpec(0, ["t00", "t01", "t02"], ["t03"])]
        cfg = TrainConfig(epochs=2, seed=3)
        a = train(data, folds, SMALL, cfg)
        b = train(data, folds, SMALL, cfg)
        assert a[0].history == b[0].history
        assert all(torch.equal(p, q) for p, q in zip(a[0].model.parameters(), b[0].model.parameters()))

    def test_test_trials_never_trained(self):
        data = by_trial(6)
        folds = make_folds(sorted(data), 2, 2, np.random.default_rng(0))
        trained = {}

        def log_batch(epoch, group, lam, model):
            trained.setdefault(id(model), set()).update(p.trial_id for p in group)

        results = train(data, folds, SMALL, TrainConfig(epochs=2), on_batch=log_batch)
        for r, (_, trials) in zip(results, trained.items()):
            assert not trials & set(r.test_trials)

    def test_early_stopping_and_outputs(self, tmp_path):
        data = by_trial(5)
        folds = [FoldSpec(0, ["t00", "t01", "t02", "t03"], ["t04"])]
        res = train(data, folds, SMALL, TrainConfig(epochs=50, patience=2, learning_rate=0.05), out_dir=tmp_path)
        epochs = {h["epoch"] for h in res[0].history}
        assert len(epochs) < 50
        rows = [json.loads(line) for line in (tmp_path / "history.jsonl").read_text().splitlines()]
        assert {tuple(sorted(r)) for r in rows} == {("accuracy", "epoch", "fold", "loss", "split")}
        model, meta = load_checkpoint(tmp_path / "fold_0.ckpt")
        assert meta["test"] == ["t04"]
        # the checkpoint holds the best-validation weights that produced the predictions
        assert all(torch.equal(p, q) for p, q in zip(model.parameters(), res[0].model.parameters()))
        assert set(res[0].predictions) == {0.0, 0.5, 1.0}
        # rerunning into the same directory rewrites history rather than appending
        train(data, folds, SMALL, TrainConfig(epochs=50, patience=2, learning_rate=0.05), out_dir=tmp_path)
        assert len((tmp_path / "history.jsonl").read_text().splitlines()) == len(rows)

    def test_divergence_reports_fold(self, monkeypatch):
        import neuromatch.trainer as tr
        data = by_trial(3)
        monkeypatch.setattr(tr, "mm_loss", lambda a, b: (a.sum() + b.sum()) * math.nan)
        with pytest.raises(TrainingDivergence) as err:
            train(data, [FoldSpec(7, ["t00", "t01"], ["t02"])], SMALL, TrainConfig(epochs=1))
        assert err.value.fold == 7 and "fold 7" in str(err.value)

    def test_train_limit_and_validation_split(self):
        data = by_trial(6)
        spec = FoldSpec(0, ["t00", "t01", "t02", "t03", "t04"], ["t05"])
        tr_pairs, val_pairs, test_pairs = fold_split(data, spec, TrainConfig())
        assert len(val_pairs) == 8 and len(tr_pairs) == 32 and len(test_pairs) == 8
        assert not {p.trial_id for p in tr_pairs} & {p.trial_id for p in val_pairs}
        seen = set()
        train(data, [spec], SMALL, TrainConfig(epochs=1, batch_size=64), train_limit={0: 10},
              on_batch=lambda e, g, lam, m: seen.update(id(p) for p in g))
        assert len(seen) == 10
