"""EEG preprocessing chain.

lowpass(32 Hz) -> highpass(0.5 Hz) -> resample(64 Hz) -> variance-based channel
rejection and spherical-spline interpolation -> mastoid re-reference -> z-score.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numpy.polynomial import legendre

from .montage import Montage
from .sigproc import TimeSeries, design_butterworth, filtfilt, resample, zscore

log = logging.getLogger(__name__)


class PreprocError(RuntimeError):
    """A preprocessing stage failed; ``stage`` names which one."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


@dataclass
class PreprocConfig:
    lowpass_hz: float = 32.0
    highpass_hz: float = 0.5
    filter_order: int = 4
    target_rate: float = 64.0
    reject_multiplier: float = 10.0
    max_reject_fraction: float = 0.25
    rereference: bool = True  # False for data that arrive already referenced
    drop_mastoids: bool = True
    allowed_rates: tuple = (512.0, 8192.0)


@dataclass
class PreprocReport:
    rejected: list[int] = field(default_factory=list)
    variances: list[float] = field(default_factory=list)
    stages: list[dict] = field(default_factory=list)

    def log(self, stage: str, **info) -> None:
        self.stages.append({"stage": stage, **info})

    def to_dict(self) -> dict:
        return {"rejected": list(self.rejected), "variances": list(self.variances), "stages": list(self.stages)}


def reject_channels(ts: TimeSeries, multiplier: float = 10.0, max_fraction: float = 0.25):
    """Flag channels whose variance exceeds ``multiplier`` x the median channel variance.

    Returns ``(bad, report)``; raises :class:`PreprocError` when more than
    ``max_fraction`` of the channels are flagged.
    """
    if ts.n_channels < 8:
        raise PreprocError("reject", f"need at least 8 channels, got {ts.n_channels}")
    variances = ts.samples.var(axis=1)
    threshold = multiplier * float(np.median(variances))
    bad = [int(i) for i in np.flatnonzero(variances > threshold)]
    report = PreprocReport(rejected=bad, variances=[float(v) for v in variances])
    if len(bad) > max_fraction * ts.n_channels:
        raise PreprocError("reject", f"{len(bad)} of {ts.n_channels} channels exceed the variance threshold")
    return bad, report


def _spline_kernel(cosines: np.ndarray, order: int = 4, n_terms: int = 7) -> np.ndarray:
    n = np.arange(n_terms + 1, dtype=np.float64)
    coef = np.zeros(n_terms + 1)
    coef[1:] = (2 * n[1:] + 1) / (n[1:] * (n[1:] + 1)) ** order
    return legendre.legval(np.clip(cosines, -1.0, 1.0), coef) / (4 * np.pi)


def spline_weights(good_pos: np.ndarray, target_pos: np.ndarray, order: int = 4, n_terms: int = 7) -> np.ndarray:
    """Matrix mapping good-channel values to values at ``target_pos`` (Perrin spherical spline)."""
    g = _spline_kernel(good_pos @ good_pos.T, order, n_terms)
    n = len(good_pos)
    system = np.zeros((n + 1, n + 1))
    system[:n, :n] = g
    system[:n, n] = 1.0
    system[n, :n] = 1.0
    inv = np.linalg.pinv(system)
    g_target = _spline_kernel(target_pos @ good_pos.T, order, n_terms)
    return np.hstack([g_target, np.ones((len(target_pos), 1))]) @ inv[:, :n]


def interpolate_channels(ts: TimeSeries, bad, montage: Montage) -> TimeSeries:
    bad = sorted(int(b) for b in bad)
    if not bad:
        raise PreprocError("interpolate", "no bad channels given")
    if len(montage) != ts.n_channels:
        raise PreprocError("interpolate", f"montage has {len(montage)} positions for {ts.n_channels} channels")
    good = [i for i in range(ts.n_channels) if i not in set(bad)]
    if len(good) < 2:
        raise PreprocError("interpolate", "at least two good channels are required")
    weights = spline_weights(montage.positions[good], montage.positions[bad])
    out = ts.samples.copy()
    out[bad] = weights @ ts.samples[good]
    return ts.replace(out)


def rereference(ts: TimeSeries, montage: Montage) -> TimeSeries:
    """Subtract the per-frame mean of the mastoid channels from every channel."""
    if not montage.mastoids:
        raise PreprocError("rereference", "montage defines no mastoid channels")
    ref = ts.samples[montage.mastoids].mean(axis=0, keepdims=True)
    return ts.replace(ts.samples - ref)


def preprocess(ts: TimeSeries, montage: Optional[Montage], config: PreprocConfig | None = None):
    """Run the full chain on one trial. Returns ``(ts_64hz, report)``."""
    config = config or PreprocConfig()
    report = PreprocReport()
    if float(ts.rate) not in {float(r) for r in config.allowed_rates}:
        raise PreprocError("input", f"unsupported input rate {ts.rate} Hz")

    stage = "lowpass"
    try:
        lp = design_butterworth("lowpass", config.lowpass_hz, config.filter_order, ts.rate)
        ts = filtfilt(lp, ts)
        report.log(stage, cutoff_hz=config.lowpass_hz, order=config.filter_order)

        stage = "highpass"
        hp = design_butterworth("highpass", config.highpass_hz, config.filter_order, ts.rate)
        ts = filtfilt(hp, ts)
        report.log(stage, cutoff_hz=config.highpass_hz, order=config.filter_order)

        stage = "resample"
        source_rate = ts.rate
        ts = resample(ts, config.target_rate)
        report.log(stage, from_hz=source_rate, to_hz=config.target_rate, frames=ts.n_frames)
    except PreprocError:
        raise
    except ValueError as exc:
        raise PreprocError(stage, str(exc)) from exc

    # rejection runs on the downsampled data
    bad, rej = reject_channels(ts, config.reject_multiplier, config.max_reject_fraction)
    report.rejected, report.variances = rej.rejected, rej.variances
    report.log("reject", rejected=list(bad), multiplier=config.reject_multiplier)
    if bad:
        if montage is None:
            raise PreprocError("interpolate", "bad channels found but no montage was supplied")
        ts = interpolate_channels(ts, bad, montage)
        log.info("interpolated channels %s", bad)
    report.log("interpolate", channels=list(bad))

    if config.rereference:
        if montage is None:
            raise PreprocError("rereference", "no montage supplied")
        ts = rereference(ts, montage)
        if config.drop_mastoids and montage.mastoids:
            keep = montage.scalp
            ts = TimeSeries(ts.samples[keep], ts.rate, [ts.channel_labels[i] for i in keep], dict(ts.flags))
        report.log("rereference", mastoids=list(montage.mastoids), dropped=config.drop_mastoids)
    else:
        report.log("rereference", skipped=True)

    ts = zscore(ts)
    report.log("zscore", zero_variance=ts.flags.get("zero_variance", []))
    return ts, report
