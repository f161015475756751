"""Behavioural trial selection, scalp-region subsets and attended-ear grouping."""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .montage import REGIONS, Montage
from .pairs import MmPair, TrialRecord
from .sigproc import TimeSeries

ATTENDED_MIN = 0.6
UNATTENDED_MAX = 0.4
EARS = ("left", "right")


@dataclass
class Selection:
    kept: list
    dropped: list
    retention: dict  # ear -> {"kept", "total", "percent"}


def select_trials(records: Sequence[TrialRecord], attended_min: float = ATTENDED_MIN,
                  unattended_max: float = UNATTENDED_MAX) -> Selection:
    """Keep trials whose behaviour confirms attention (both bounds inclusive)."""
    kept, dropped = [], []
    for r in records:
        ok = r.attended_score >= attended_min - 1e-12 and r.unattended_score <= unattended_max + 1e-12
        (kept if ok else dropped).append(r)
    retention = {}
    for ear in EARS:
        total = sum(r.attended_ear == ear for r in records)
        k = sum(r.attended_ear == ear for r in kept)
        retention[ear] = {"kept": k, "total": total, "percent": 100.0 * k / total if total else float("nan")}
    return Selection(kept, dropped, retention)


def region_channels(montage: Montage, region: str) -> list[int]:
    """Indices of the scalp channels labelled ``region`` (mastoids excluded)."""
    if region not in REGIONS:
        raise ValueError(f"unknown region {region!r}; expected one of {REGIONS}")
    mastoids = set(montage.mastoids)
    return [i for i, r in enumerate(montage.regions) if r == region and i not in mastoids]


def subset_eeg(eeg, channels: Sequence[int]):
    """Row subset of an EEG matrix or TimeSeries, in the given channel order."""
    idx = list(channels)
    if not idx:
        raise ValueError("channel subset is empty")
    if isinstance(eeg, TimeSeries):
        labels = [eeg.channel_labels[i] for i in idx] if eeg.channel_labels else None
        return TimeSeries(eeg.samples[idx], eeg.rate, labels, dict(eeg.flags))
    arr = np.asarray(eeg)
    if max(idx) >= arr.shape[0] or min(idx) < 0:
        raise ValueError(f"channel index out of range for {arr.shape[0]} channels")
    return arr[idx]


def subset_pairs(pairs: Sequence[MmPair], channels: Sequence[int]) -> list[MmPair]:
    return [replace(p, eeg=subset_eeg(p.eeg, channels)) for p in pairs]


def split_by_ear(records: Sequence[TrialRecord]) -> dict[str, list[TrialRecord]]:
    """Group trials by attended ear: ``left`` is S1, ``right`` is S2."""
    groups = {ear: [r for r in records if r.attended_ear == ear] for ear in EARS}
    empty = [ear for ear, g in groups.items() if not g]
    if empty:
        raise ValueError(f"no trials attending the {'/'.join(empty)} ear")
    return groups


def balance(groups: dict[str, list], rng: np.random.Generator) -> dict[str, list]:
    """Downsample every group to the smallest group's size; original order is kept."""
    n = min(len(g) for g in groups.values())
    out = {}
    for key in sorted(groups):
        g = groups[key]
        idx = np.sort(rng.choice(len(g), n, replace=False)) if len(g) > n else np.arange(len(g))
        out[key] = [g[i] for i in idx]
    return out
