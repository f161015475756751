"""Fold construction, Adam, batching and the training loop."""
from __future__ import annotations

import copy
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
import torch

from .model import MatchMismatchNet, ModelConfig, mm_loss, pair_scores, pool_matrix, save_checkpoint
from .pairs import MmPair, derive_rng, sample_lambda, swap_labels
from .stimulus import pooled_frames

log = logging.getLogger(__name__)


class TrainingDivergence(RuntimeError):
    def __init__(self, message: str, fold: Optional[int] = None):
        super().__init__(message if fold is None else f"fold {fold}: {message}")
        self.fold = fold


@dataclass
class TrainConfig:
    batch_size: int = 32
    learning_rate: float = 0.001
    weight_decay: float = 0.0001
    lambda_policy: str = "sampled"  # or "fixed"
    lambda_value: float = 0.5
    epochs: int = 50
    patience: int = 5
    val_fraction: float = 0.1
    seed: int = 0
    sim_variant: int = 1
    context: str = "recurrent"
    eval_lambdas: tuple = (0.0, 0.5, 1.0)
    label_control: bool = False  # swap matched/mismatched at random in training data

    def __post_init__(self):
        if self.batch_size < 1 or self.learning_rate <= 0 or self.weight_decay < 0 or self.epochs < 1:
            raise ValueError("batch_size, learning_rate and epochs must be positive, weight_decay >= 0")
        if self.lambda_policy not in ("sampled", "fixed"):
            raise ValueError(f"unknown lambda policy {self.lambda_policy!r}")
        if self.lambda_policy == "fixed" and not 0.0 <= self.lambda_value <= 1.0:
            raise ValueError("fixed lambda must lie in [0, 1]")

    @classmethod
    def parse_lambda(cls, text: str) -> dict:
        """``sampled`` or ``fixed=V`` -> keyword arguments."""
        if text == "sampled":
            return {"lambda_policy": "sampled"}
        if text.startswith("fixed="):
            return {"lambda_policy": "fixed", "lambda_value": float(text.split("=", 1)[1])}
        raise ValueError(f"bad lambda policy {text!r}")


@dataclass
class FoldSpec:
    fold: int
    train: list
    test: list

    def __post_init__(self):
        if set(self.train) & set(self.test):
            raise ValueError(f"fold {self.fold}: train and test trials overlap")


def make_folds(trial_ids: Sequence, k: int, test_per_fold: int, rng: np.random.Generator,
               allow_overlap: bool = False) -> list[FoldSpec]:
    """k folds of ``test_per_fold`` randomly chosen test trials each.

    Test sets are disjoint when ``k * test_per_fold <= len(trial_ids)``;
    otherwise ``allow_overlap`` must be set and trials are reused.
    """
    ids = sorted(trial_ids)
    if k < 1 or test_per_fold < 1:
        raise ValueError("k and test_per_fold must be positive")
    if k * test_per_fold > len(ids) and not allow_overlap:
        raise ValueError(f"{len(ids)} trials cannot fill {k} disjoint folds of {test_per_fold}")
    if test_per_fold >= len(ids):
        raise ValueError("every fold needs at least one training trial")
    order = [ids[i] for i in rng.permutation(len(ids))]
    folds = []
    for f in range(k):
        if (f + 1) * test_per_fold <= len(order):
            test = order[f * test_per_fold:(f + 1) * test_per_fold]
        else:
            test = [ids[i] for i in rng.choice(len(ids), test_per_fold, replace=False)]
        folds.append(FoldSpec(f, [t for t in ids if t not in set(test)], sorted(test)))
    return folds


# -- Adam ----------------------------------------------------------------------------

@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState, lr: float = 0.001, weight_decay: float = 0.0,
              betas=(0.9, 0.999), eps: float = 1e-8):
    """One bias-corrected Adam update with coupled L2 decay (``g + wd * theta``).

    Returns new parameter and state objects; the inputs are not modified.
    """
    b1, b2 = betas
    step = state.step + 1
    new_params, m_new, v_new = {}, {}, {}
    for name, theta in params.items():
        g = grads[name]
        if not torch.isfinite(g).all():
            raise TrainingDivergence(f"non-finite gradient in {name} at step {step}")
        if g.shape != theta.shape:
            raise ValueError(f"gradient shape {tuple(g.shape)} does not match {name} {tuple(theta.shape)}")
        if weight_decay:
            g = g + weight_decay * theta
        m = b1 * state.m.get(name, torch.zeros_like(theta)) + (1 - b1) * g
        v = b2 * state.v.get(name, torch.zeros_like(theta)) + (1 - b2) * g * g
        m_hat = m / (1 - b1 ** step)
        v_hat = v / (1 - b2 ** step)
        new_params[name] = theta - lr * m_hat / (torch.sqrt(v_hat) + eps)
        m_new[name], v_new[name] = m, v
    return new_params, AdamState(step, m_new, v_new)


# -- batching --------------------------------------------------------------------------

@dataclass
class Batch:
    eeg: torch.Tensor
    eeg_len: torch.Tensor
    pos_env: torch.Tensor
    neg_env: torch.Tensor
    pos_pool: torch.Tensor
    pos_count: torch.Tensor
    neg_pool: torch.Tensor
    neg_count: torch.Tensor
    pos_words: torch.Tensor
    pos_nwords: torch.Tensor
    neg_words: torch.Tensor
    neg_nwords: torch.Tensor


def _pad_stack(arrays: list[np.ndarray], length: int, dtype) -> torch.Tensor:
    shape = (len(arrays),) + arrays[0].shape[:-1] + (length,)
    out = np.zeros(shape, dtype=np.float64)
    for i, a in enumerate(arrays):
        out[i, ..., : a.shape[-1]] = a
    return torch.as_tensor(out, dtype=dtype)


def _word_stack(mats: list[np.ndarray], dtype):
    n = max(1, max(len(m) for m in mats))
    dim = mats[0].shape[1]
    out = np.zeros((len(mats), n, dim), dtype=np.float64)
    for i, m in enumerate(mats):
        out[i, : len(m)] = m
    return torch.as_tensor(out, dtype=dtype), torch.tensor([len(m) for m in mats], dtype=torch.long)


def collate(pairs: Sequence[MmPair], dtype=torch.float32) -> Batch:
    """Pad a list of pairs to the longest segment; pooling and word counts carry the masks."""
    t_max = max(p.eeg.shape[1] for p in pairs)
    n3 = pooled_frames(t_max)
    pos_pool, pos_count = pool_matrix([p.pos_windows for p in pairs], n3, dtype)
    neg_pool, neg_count = pool_matrix([p.neg_windows for p in pairs], n3, dtype)
    pos_words, pos_n = _word_stack([p.pos.embeddings for p in pairs], dtype)
    neg_words, neg_n = _word_stack([p.neg.embeddings for p in pairs], dtype)
    return Batch(
        eeg=_pad_stack([p.eeg for p in pairs], t_max, dtype),
        eeg_len=torch.tensor([p.eeg.shape[1] for p in pairs], dtype=torch.long),
        pos_env=_pad_stack([p.pos.envelope for p in pairs], t_max, dtype),
        neg_env=_pad_stack([p.neg.envelope for p in pairs], t_max, dtype),
        pos_pool=pos_pool, pos_count=pos_count, neg_pool=neg_pool, neg_count=neg_count,
        pos_words=pos_words, pos_nwords=pos_n, neg_words=neg_words, neg_nwords=neg_n,
    )


def make_batches(pairs: Sequence[MmPair], batch_size: int, rng: np.random.Generator | None = None) -> list[list[MmPair]]:
    idx = np.arange(len(pairs)) if rng is None else rng.permutation(len(pairs))
    return [[pairs[i] for i in idx[s:s + batch_size]] for s in range(0, len(pairs), batch_size)]


# -- evaluation ------------------------------------------------------------------------

@dataclass
class PredictionRecord:
    pair_id: str
    lam: float
    sim_pos: float
    sim_neg: float

    @property
    def correct(self) -> bool:
        return self.sim_pos > self.sim_neg


@torch.no_grad()
def embed_pairs(model: MatchMismatchNet, pairs: Sequence[MmPair], batch_size: int = 64) -> dict:
    model.eval()
    chunks: dict[str, list] = {}
    for group in make_batches(pairs, batch_size):
        emb = model(collate(group))
        for k, v in emb.items():
            chunks.setdefault(k, []).append(v)
    return {k: torch.cat(v) for k, v in chunks.items()}


def predict(model: MatchMismatchNet, pairs: Sequence[MmPair], lambdas: Sequence[float], variant: int = 1,
            embeddings: dict | None = None) -> dict[float, list[PredictionRecord]]:
    emb = embed_pairs(model, pairs) if embeddings is None else embeddings
    out = {}
    for lam in lambdas:
        pos, neg = pair_scores(emb, float(lam), variant)
        out[float(lam)] = [PredictionRecord(p.pair_id, float(lam), float(a), float(b))
                           for p, a, b in zip(pairs, pos.tolist(), neg.tolist())]
    return out


def batch_loss(model: MatchMismatchNet, batch: Batch, lam: float, variant: int):
    emb = model(batch)
    pos, neg = pair_scores(emb, lam, variant)
    return mm_loss(pos, neg), pos, neg


@torch.no_grad()
def evaluate_loss(model, pairs, lambdas, variant, batch_size=64) -> tuple[float, float]:
    """Mean loss and accuracy (%) over ``lambdas``."""
    if not pairs:
        return math.nan, math.nan
    emb = embed_pairs(model, pairs, batch_size)
    losses, accs = [], []
    for lam in lambdas:
        pos, neg = pair_scores(emb, lam, variant)
        losses.append(float(mm_loss(pos, neg)))
        accs.append(100.0 * float((pos > neg).double().mean()))
    return float(np.mean(losses)), float(np.mean(accs))


# -- training ----------------------------------------------------------------------------

@dataclass
class FoldResult:
    fold: int
    model: MatchMismatchNet
    history: list
    predictions: dict  # lam -> list[PredictionRecord]
    test_trials: list

    def accuracy(self, lam: float) -> float:
        from .stats import mm_accuracy
        return mm_accuracy(self.predictions[float(lam)])


def _lambdas(config: TrainConfig) -> tuple:
    return (config.lambda_value,) if config.lambda_policy == "fixed" else (0.0, 0.5, 1.0)


def train_model(train_pairs: Sequence[MmPair], val_pairs: Sequence[MmPair], model_config: ModelConfig,
                config: TrainConfig, seed: int, fold: int = 0,
                on_batch: Optional[Callable] = None) -> tuple[MatchMismatchNet, list]:
    """Train one model with early stopping on the validation loss.

    ``on_batch(epoch, batch_pairs, lam, model)`` is called after every backward
    pass, before the update (tests use it to inspect gradients).
    """
    if not train_pairs:
        raise ValueError(f"fold {fold}: no training pairs")
    torch.manual_seed(seed)
    rng = derive_rng(seed, "batches")
    model = MatchMismatchNet(model_config, seed=seed)
    names = [n for n, _ in model.named_parameters()]
    state = AdamState()
    history = []
    best, best_loss, stale = None, math.inf, 0
    val_lams = _lambdas(config)
    for epoch in range(config.epochs):
        model.train()
        losses = []
        for group in make_batches(train_pairs, config.batch_size, rng):
            lam = sample_lambda(rng) if config.lambda_policy == "sampled" else config.lambda_value
            model.zero_grad(set_to_none=False)
            loss, _, _ = batch_loss(model, collate(group), lam, config.sim_variant)
            if not torch.isfinite(loss):
                raise TrainingDivergence(f"loss became {loss.item()} in epoch {epoch}", fold)
            loss.backward()
            if on_batch is not None:
                on_batch(epoch, group, lam, model)
            params = dict(model.named_parameters())
            grads = {n: params[n].grad for n in names}
            try:
                new, state = adam_step({n: params[n].detach() for n in names}, grads, state,
                                       config.learning_rate, config.weight_decay)
            except TrainingDivergence as exc:
                raise TrainingDivergence(str(exc), fold) from None
            with torch.no_grad():
                for n in names:
                    params[n].copy_(new[n])
            losses.append(loss.item())
        train_loss = float(np.mean(losses))
        val_loss, val_acc = evaluate_loss(model, val_pairs, val_lams, config.sim_variant)
        history.append({"fold": fold, "epoch": epoch, "split": "train", "loss": train_loss, "accuracy": None})
        history.append({"fold": fold, "epoch": epoch, "split": "val", "loss": val_loss, "accuracy": val_acc})
        log.info("fold %d epoch %d train %.4f val %.4f acc %.1f", fold, epoch, train_loss, val_loss, val_acc)
        monitor = val_loss if val_pairs else train_loss
        if monitor < best_loss - 1e-6:
            best_loss, stale = monitor, 0
            best = copy.deepcopy(model.state_dict())
        else:
            stale += 1
            if stale >= config.patience:
                break
    if best is not None:
        model.load_state_dict(best)
    model.eval()
    return model, history


def split_validation(train_trials: Sequence, fraction: float, rng: np.random.Generator):
    ids = sorted(train_trials)
    n_val = max(1, int(round(fraction * len(ids)))) if fraction > 0 and len(ids) > 1 else 0
    val = set(ids[i] for i in rng.permutation(len(ids))[:n_val])
    return [t for t in ids if t not in val], sorted(val)


def fold_split(pairs_by_trial: dict, spec: FoldSpec, config: TrainConfig):
    """(train, validation, test) pairs of one fold; the validation trials come out of ``spec.train``."""
    rng = derive_rng(config.seed, "fold", spec.fold)
    train_ids, val_ids = split_validation(spec.train, config.val_fraction, rng)
    train_pairs = [p for t in train_ids for p in pairs_by_trial.get(t, [])]
    val_pairs = [p for t in val_ids for p in pairs_by_trial.get(t, [])]
    test_pairs = [p for t in spec.test for p in pairs_by_trial.get(t, [])]
    return train_pairs, val_pairs, test_pairs


def train(pairs_by_trial: dict, folds: Sequence[FoldSpec], model_config: ModelConfig, config: TrainConfig,
          out_dir: Optional[Path] = None, on_batch: Optional[Callable] = None,
          train_limit: Optional[dict] = None) -> list[FoldResult]:
    """Cross-validated training; one model per fold, evaluated on its test trials.

    ``train_limit`` maps fold id to a maximum number of training pairs
    (seeded subsample, used to balance groups).  Test pairs are never dropped.
    """
    results = []
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "history.jsonl").write_text("")
    for spec in folds:
        train_pairs, val_pairs, test_pairs = fold_split(pairs_by_trial, spec, config)
        if not train_pairs or not test_pairs:
            raise ValueError(f"fold {spec.fold}: empty train or test set")
        limit = (train_limit or {}).get(spec.fold)
        if limit is not None and len(train_pairs) > limit:
            keep = np.sort(derive_rng(config.seed, "balance", spec.fold).choice(len(train_pairs), limit, replace=False))
            train_pairs = [train_pairs[i] for i in keep]
        if config.label_control:
            swap_rng = derive_rng(config.seed, "swap", spec.fold)
            train_pairs, val_pairs = swap_labels(train_pairs, swap_rng), swap_labels(val_pairs, swap_rng)
        seed = int(derive_rng(config.seed, "init", spec.fold).integers(2**31))
        model, history = train_model(train_pairs, val_pairs, model_config, config, seed, spec.fold, on_batch)
        lambdas = sorted(set(config.eval_lambdas) | set(_lambdas(config)))
        preds = predict(model, test_pairs, lambdas, config.sim_variant)
        results.append(FoldResult(spec.fold, model, history, preds, list(spec.test)))
        if out_dir is not None:
            save_checkpoint(model, out_dir / f"fold_{spec.fold}.ckpt",
                            {"fold": spec.fold, "seed": config.seed, "train": list(spec.train), "test": list(spec.test)})
            with open(out_dir / "history.jsonl", "a") as fh:
                for row in history:
                    fh.write(json.dumps(row, sort_keys=True) + "\n")
    return results
