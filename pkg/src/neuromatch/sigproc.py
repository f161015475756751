"""DSP primitives: Butterworth design, zero-phase filtering, resampling,
Hilbert envelopes and per-channel z-scoring."""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np
from scipy import signal

MAX_ORDER = 12


class SignalError(ValueError):
    """Raised when a DSP primitive receives input it cannot handle."""


@dataclass
class TimeSeries:
    """Multichannel samples (channels x frames) at a fixed rate."""

    samples: np.ndarray
    rate: float
    channel_labels: list[str] = field(default_factory=list)
    flags: dict = field(default_factory=dict)

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim == 1:
            samples = samples[np.newaxis, :]
        if samples.ndim != 2 or samples.shape[1] < 1:
            raise SignalError(f"expected channels x frames with frames >= 1, got shape {samples.shape}")
        if not self.rate > 0:
            raise SignalError(f"rate must be positive, got {self.rate}")
        self.samples = samples
        if not self.channel_labels:
            self.channel_labels = [f"ch{i}" for i in range(samples.shape[0])]
        if len(self.channel_labels) != samples.shape[0]:
            raise SignalError("channel_labels length does not match channel count")

    @property
    def n_channels(self) -> int:
        return self.samples.shape[0]

    @property
    def n_frames(self) -> int:
        return self.samples.shape[1]

    def replace(self, samples: np.ndarray, rate: Optional[float] = None, **flags) -> "TimeSeries":
        merged = dict(self.flags)
        merged.update(flags)
        return TimeSeries(samples, self.rate if rate is None else rate, list(self.channel_labels), merged)


@dataclass(frozen=True)
class IirFilter:
    """Direct-form coefficients plus the second-order-section cascade they came from.

    ``sos`` is kept because very low cutoffs at high sampling rates (0.5 Hz at
    8192 Hz) put poles within 4e-4 of the unit circle, where running the
    expanded polynomials loses precision.
    """

    b: np.ndarray
    a: np.ndarray
    kind: str = "identity"
    cutoff_hz: float = 0.0
    order: int = 0
    rate: float = 0.0
    sos: Optional[np.ndarray] = None

    @classmethod
    def identity(cls) -> "IirFilter":
        return cls(np.array([1.0]), np.array([1.0]))

    def poles(self) -> np.ndarray:
        if self.sos is not None:
            return np.concatenate([np.roots(sec[3:]) for sec in self.sos])
        return np.roots(self.a)

    def is_stable(self) -> bool:
        return bool(np.all(np.abs(self.poles()) < 1.0))

    def response(self, freqs_hz: Sequence[float]) -> np.ndarray:
        """Complex frequency response at the given frequencies."""
        freqs = np.atleast_1d(np.asarray(freqs_hz, dtype=np.float64))
        if self.sos is not None:
            _, h = signal.sosfreqz(self.sos, worN=freqs, fs=self.rate)
        else:
            rate = self.rate or 1.0
            _, h = signal.freqz(self.b, self.a, worN=freqs, fs=rate)
        return h


def design_butterworth(kind: str, cutoff_hz: float, order: int, rate: float) -> IirFilter:
    """Design a digital Butterworth lowpass or highpass filter (bilinear transform)."""
    if kind not in ("lowpass", "highpass"):
        raise SignalError(f"unknown filter kind {kind!r}")
    if order < 1:
        raise SignalError(f"filter order must be >= 1, got {order}")
    if order > MAX_ORDER:
        raise SignalError(f"filter order {order} exceeds the supported maximum of {MAX_ORDER}")
    if not (0 < cutoff_hz < rate / 2):
        raise SignalError(f"invalid design: cutoff {cutoff_hz} Hz must lie in (0, {rate / 2}) Hz")
    sos = signal.butter(order, cutoff_hz, btype=kind, fs=rate, output="sos")
    b, a = signal.sos2tf(sos)
    return IirFilter(b=b, a=a, kind=kind, cutoff_hz=float(cutoff_hz), order=int(order), rate=float(rate), sos=sos)


def filtfilt(filt: IirFilter, ts: TimeSeries) -> TimeSeries:
    """Zero-phase forward-backward filtering with odd reflection of 3*order samples."""
    order = filt.order if filt.sos is not None else max(len(filt.a), len(filt.b)) - 1
    if order == 0:
        gain = (filt.b[0] / filt.a[0]) ** 2
        return ts.replace(ts.samples * gain)
    padlen = 3 * order
    if ts.n_frames <= padlen:
        raise SignalError(f"input of {ts.n_frames} frames is too short for a order-{order} filter (need > {padlen})")
    if filt.sos is not None:
        out = signal.sosfiltfilt(filt.sos, ts.samples, axis=1, padtype="odd", padlen=padlen)
    else:
        out = signal.filtfilt(filt.b, filt.a, ts.samples, axis=1, padtype="odd", padlen=padlen)
    return ts.replace(out)


def resample(ts: TimeSeries, target_rate: float) -> TimeSeries:
    """Polyphase decimation to ``target_rate``.

    The anti-alias FIR has its cutoff at 0.45 x target rate, i.e. 90 % of the
    target Nyquist frequency.
    """
    if target_rate > ts.rate:
        raise SignalError(f"upsampling from {ts.rate} Hz to {target_rate} Hz is not supported")
    if target_rate == ts.rate:
        return ts.replace(ts.samples.copy())
    ratio = Fraction(str(target_rate)) / Fraction(str(ts.rate))
    up, down = ratio.numerator, ratio.denominator
    if max(up, down) > 4096:
        raise SignalError(f"rate ratio {ts.rate}/{target_rate} is not a small rational")
    half_len = 10 * max(up, down)
    cutoff = 0.45 * target_rate / (ts.rate * up)  # in units of the upsampled Nyquist / 2
    taps = signal.firwin(2 * half_len + 1, 2 * cutoff, window=("kaiser", 5.0))
    taps *= up / taps.sum()
    out = signal.resample_poly(ts.samples, up, down, axis=1, window=taps, padtype="line")
    n_out = int(round(ts.n_frames * up / down))
    out = out[:, :n_out]
    return ts.replace(out, rate=float(target_rate))


def hilbert_envelope(x: np.ndarray, rate: float | None = None) -> np.ndarray:
    """Magnitude of the analytic signal of a real vector."""
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        raise SignalError("cannot take the envelope of an empty signal")
    if x.ndim != 1:
        raise SignalError("hilbert_envelope expects a 1-D signal")
    if x.size < 16:
        raise SignalError(f"signal of length {x.size} is shorter than the 16-sample minimum")
    return np.abs(signal.hilbert(x))


def zscore(ts: TimeSeries) -> TimeSeries:
    """Per-channel standardisation with the population standard deviation.

    Zero-variance channels come back as zeros and are listed under
    ``flags['zero_variance']`` instead of turning into NaN.
    """
    x = ts.samples
    mean = x.mean(axis=1, keepdims=True)
    centered = x - mean
    std = np.sqrt(np.mean(centered**2, axis=1, keepdims=True))
    flat = (std[:, 0] <= 1e-12 * np.maximum(1.0, np.abs(mean[:, 0])))
    std[flat] = 1.0
    out = centered / std
    out[flat] = 0.0
    return ts.replace(out, zero_variance=[int(i) for i in np.flatnonzero(flat)])
