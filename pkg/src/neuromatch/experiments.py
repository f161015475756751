"""Dataset -> pairs -> cross-validated runs, plus the region, ear and boundary analyses."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .data_io import Dataset
from .dichotic import region_channels, select_trials, split_by_ear, subset_pairs
from .eeg_preproc import PreprocError, rereference
from .model import ModelConfig
from .montage import REGIONS
from .pairs import DichoticTrial, Session, derive_rng, make_dichotic_pairs, make_natural_pairs, with_boundaries
from .sigproc import zscore
from .stats import mm_accuracy
from .stimulus import FEATURE_RATE
from .trainer import FoldSpec, TrainConfig, fold_split, make_folds, train

log = logging.getLogger(__name__)


@dataclass
class PairSet:
    by_trial: dict  # fold key (trial id, or "split:trial" for subject splits) -> list[MmPair]
    records: list = field(default_factory=list)  # TrialRecord of every kept dichotic trial
    selection: Optional[object] = None
    skipped: list = field(default_factory=list)
    subject_split: bool = False

    @property
    def n_pairs(self) -> int:
        return sum(len(v) for v in self.by_trial.values())

    @property
    def n_channels(self) -> int:
        for pairs in self.by_trial.values():
            if pairs:
                return pairs[0].eeg.shape[0]
        raise ValueError("no pairs")


def model_eeg(ds: Dataset, rec) -> np.ndarray:
    """Scalp EEG at 64 Hz, z-scored per channel; other rates must be preprocessed first."""
    ts = ds.load_eeg(rec)
    if float(ts.rate) != FEATURE_RATE:
        raise PreprocError("input", f"{rec.subject}/{rec.trial} is at {ts.rate} Hz; run `neuromatch preprocess` first")
    montage = ds.montage()
    if montage is not None and montage.mastoids and ts.n_channels == len(montage):
        if not ds.meta.get("referenced", False):
            ts = rereference(ts, montage)
        keep = montage.scalp
        ts = ts.replace(ts.samples[keep])
    return zscore(ts).samples


def build_pairs(ds: Dataset, seed: int) -> PairSet:
    """All MM pairs of a dataset, grouped by the unit used to build folds."""
    subject_split = any(r.split == "test" for r in ds.eeg_records())
    out = PairSet({}, subject_split=subject_split)

    def key(rec):
        return f"{'test' if rec.split == 'test' else 'train'}:{rec.trial}" if subject_split else rec.trial

    if ds.protocol == "dichotic":
        sel = select_trials([ds.behavior[k] for k in sorted(ds.behavior)])
        out.selection, out.records = sel, list(sel.kept)
        for r in sel.kept:
            rec = ds.eeg[r.subject_id, r.trial_id]
            streams = {ear: ds.stream(r.trial_id, ear) for ear in ("left", "right")}
            pairs = make_dichotic_pairs(DichoticTrial(r, model_eeg(ds, rec), streams), out.skipped)
            out.by_trial.setdefault(key(rec), []).extend(pairs)
    else:
        for rec in ds.eeg_records():
            names = ds.streams_of(rec.trial)
            if not names:
                out.skipped.append({"subject": rec.subject, "trial": rec.trial, "reason": "no stimulus"})
                continue
            session = Session(rec.subject, rec.trial, model_eeg(ds, rec), ds.stream(rec.trial, names[0]))
            pairs = make_natural_pairs(session, derive_rng(seed, "pairs", rec.subject, rec.trial))
            out.by_trial.setdefault(key(rec), []).extend(pairs)
    return out


def folds_for(pairs: PairSet, k: int, test_per_fold: int, seed: int, allow_overlap: bool = False) -> list[FoldSpec]:
    keys = sorted(pairs.by_trial)
    if pairs.subject_split:
        return [FoldSpec(0, [t for t in keys if t.startswith("train:")], [t for t in keys if t.startswith("test:")])]
    return make_folds(keys, k, test_per_fold, derive_rng(seed, "folds"), allow_overlap)


def transform_pairs(by_trial: dict, fn) -> dict:
    return {t: fn(ps) for t, ps in by_trial.items()}


def apply_boundaries(by_trial: dict, mode: str, seed: int) -> dict:
    if mode == "true":
        return by_trial
    return transform_pairs(by_trial, lambda ps: [
        with_boundaries(p, mode, derive_rng(seed, "boundaries", mode, p.pair_id)) for p in ps])


def run_cv(by_trial: dict, folds: Sequence[FoldSpec], model_config: ModelConfig, config: TrainConfig,
           out_dir=None, train_limit=None):
    first = next(ps[0] for ps in by_trial.values() if ps)
    cfg = replace(model_config, n_channels=first.eeg.shape[0], text_dim=first.pos.embeddings.shape[1],
                  context=config.context)
    return train(by_trial, folds, cfg, config, out_dir=out_dir, train_limit=train_limit)


def fold_predictions(results) -> list[dict]:
    return [r.predictions for r in results]


def region_analysis(ds: Dataset, pairs: PairSet, folds, model_config, config, lam: float = 0.5,
                    regions: Sequence[str] = REGIONS) -> dict:
    """Retrain on each region's channels; returns region -> {n_channels, accuracies}."""
    montage = ds.montage()
    if montage is None:
        raise ValueError("region analysis needs a montage")
    scalp = montage.without_mastoids() if montage.mastoids else montage
    if len(scalp) != pairs.n_channels:
        raise ValueError(f"montage has {len(scalp)} scalp channels but EEG has {pairs.n_channels}")
    out = {}
    for region in regions:
        chans = region_channels(scalp, region)
        sub = transform_pairs(pairs.by_trial, lambda ps: subset_pairs(ps, chans))
        results = run_cv(sub, folds, model_config, config)
        out[region] = {"n_channels": len(chans), "accuracies": [r.accuracy(lam) for r in results]}
    return out


def boundary_analysis(pairs: PairSet, folds, model_config, config, modes: Sequence[str], lam: float = 0.5,
                      seed: int = 0) -> dict:
    """Retrain under each word-boundary mode; returns mode -> per-fold accuracies."""
    out = {}
    for mode in (["true"] + [m for m in modes if m != "true"]):
        results = run_cv(apply_boundaries(pairs.by_trial, mode, seed), folds, model_config, config)
        out[mode] = [r.accuracy(lam) for r in results]
    return out


def ear_analysis(pairs: PairSet, model_config, config, k: int, test_per_fold: int, seed: int,
                 lambdas=(0.0, 0.5, 1.0), allow_overlap: bool = False) -> dict:
    """Separate CV per attended ear with training pairs balanced to the smaller group."""
    if pairs.selection is None:
        raise ValueError("ear analysis needs dichotic data")
    groups = split_by_ear(pairs.records)
    by_group = {}
    for ear, recs in groups.items():
        members = {(r.subject_id, r.trial_id) for r in recs}
        by_group[ear] = {t: [p for p in ps if (p.subject_id, p.trial_id) in members]
                         for t, ps in pairs.by_trial.items()}
        by_group[ear] = {t: ps for t, ps in by_group[ear].items() if ps}
    folds = {ear: make_folds(sorted(bt), k, test_per_fold, derive_rng(seed, "folds", ear), allow_overlap)
             for ear, bt in by_group.items()}
    counts = {ear: [len(fold_split(by_group[ear], spec, config)[0]) for spec in folds[ear]] for ear in by_group}
    limits = {f: min(counts[ear][f] for ear in by_group) for f in range(k)}
    out = {}
    for label, ear in (("S1", "left"), ("S2", "right")):
        results = run_cv(by_group[ear], folds[ear], model_config, config, train_limit=limits)
        ret = pairs.selection.retention[ear]
        out[label] = {
            "ear": ear, "n_train_pairs": int(np.mean(list(limits.values()))), "retained": ret["kept"], "total": ret["total"],
            "accuracies": {float(lam): [mm_accuracy(r.predictions[float(lam)]) for r in results] for lam in lambdas},
        }
    return out
