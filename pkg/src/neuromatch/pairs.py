"""Matched / mismatched example construction for both listening protocols."""
from __future__ import annotations

import logging
import zlib
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .stimulus import (FEATURE_RATE, AlignmentError, SentenceStimulus, WordToken, boundaries_to_frames,
                       pooled_frames, random_windows, whole_window)

log = logging.getLogger(__name__)

LAMBDA_CHOICES = (0.0, 0.5, 1.0)


def derive_rng(seed: int, *keys) -> np.random.Generator:
    """Independent generator for (seed, key...) with string keys hashed stably."""
    ints = [int(seed)] + [k if isinstance(k, int) else zlib.crc32(str(k).encode()) for k in keys]
    return np.random.default_rng(ints)


@dataclass
class SentenceInfo:
    sentence_id: str
    start_s: float
    end_s: float


@dataclass
class Stream:
    """One continuous stimulus stream of a trial at the 64 Hz feature rate.

    ``tokens`` carry absolute times within the trial and ``vectors`` holds
    one embedding row per token.
    """

    trial_id: str
    name: str
    envelope: np.ndarray
    tokens: list[WordToken]
    vectors: np.ndarray
    sentences: list[SentenceInfo] = field(default_factory=list)

    def span(self, start_s: float, end_s: float, sentence_id: str = "", n_frames: int | None = None) -> SentenceStimulus:
        f0 = int(round(start_s * FEATURE_RATE))
        n = int(round((end_s - start_s) * FEATURE_RATE)) if n_frames is None else int(n_frames)
        env = np.zeros(n)
        avail = self.envelope[f0:f0 + n]
        env[:len(avail)] = avail
        dur = n / FEATURE_RATE
        t0 = f0 / FEATURE_RATE
        lo, hi = t0, min(end_s, t0 + dur)
        toks, rows = [], []
        for i, tok in enumerate(self.tokens):
            s, e = max(tok.start_s, lo), min(tok.end_s, hi)
            if e - s <= 1e-9:
                continue
            toks.append(WordToken(tok.text, s - t0, e - t0))
            rows.append(self.vectors[i])
        vecs = np.array(rows, dtype=np.float32).reshape(len(rows), self.vectors.shape[1])
        return SentenceStimulus(env, toks, vecs, sentence_id, self.trial_id, self.name, t0)


def fit_length(stim: SentenceStimulus, n_frames: int) -> SentenceStimulus:
    """Truncate or zero-pad a stimulus to ``n_frames``; words past the end are dropped or clipped."""
    env = np.zeros(n_frames)
    m = min(n_frames, stim.n_frames)
    env[:m] = stim.envelope[:m]
    dur = n_frames / FEATURE_RATE
    toks, rows = [], []
    for tok, vec in zip(stim.tokens, stim.embeddings):
        if tok.start_s >= dur - 1e-9:
            break
        toks.append(WordToken(tok.text, tok.start_s, min(tok.end_s, dur)))
        rows.append(vec)
    vecs = np.array(rows, dtype=np.float32).reshape(len(rows), stim.embeddings.shape[1])
    return SentenceStimulus(env, toks, vecs, stim.sentence_id, stim.trial_id, stim.stream, stim.onset_s)


@dataclass
class MmPair:
    eeg: np.ndarray  # (channels, T) at 64 Hz
    pos: SentenceStimulus
    neg: SentenceStimulus
    protocol: str
    trial_id: str
    subject_id: str
    lam: float = 0.5
    pos_windows: list = field(default_factory=list)
    neg_windows: list = field(default_factory=list)

    @property
    def pair_id(self) -> str:
        return f"{self.subject_id}/{self.trial_id}/{self.pos.sentence_id}"

    def __post_init__(self):
        if self.pos.sentence_id == self.neg.sentence_id and self.pos.stream == self.neg.stream:
            raise ValueError("matched and mismatched stimuli are the same sentence")
        n = pooled_frames(self.eeg.shape[1])
        if not self.pos_windows:
            self.pos_windows = boundaries_to_frames(self.pos.tokens, n_frames=n)
        if not self.neg_windows:
            self.neg_windows = boundaries_to_frames(self.neg.tokens, n_frames=n)


@dataclass
class Session:
    """EEG of one subject for one natural-listening trial plus the stimulus stream."""

    subject_id: str
    trial_id: str
    eeg: np.ndarray
    stream: Stream


def eeg_slice(eeg: np.ndarray, start_s: float, n_frames: int) -> np.ndarray:
    f0 = int(round(start_s * FEATURE_RATE))
    if f0 + n_frames > eeg.shape[1]:
        raise AlignmentError(f"EEG has {eeg.shape[1]} frames, segment needs up to {f0 + n_frames}")
    return eeg[:, f0:f0 + n_frames]


def make_natural_pairs(session: Session, rng: np.random.Generator) -> list[MmPair]:
    """One pair per sentence; the mismatch is another sentence of the same session."""
    sentences = session.stream.sentences
    if len(sentences) < 2:
        log.warning("session %s/%s has fewer than two sentences; skipped", session.subject_id, session.trial_id)
        return []
    pairs = []
    for i, info in enumerate(sentences):
        pos = session.stream.span(info.start_s, info.end_s, info.sentence_id)
        j = int(rng.integers(len(sentences) - 1))
        j += j >= i
        other = sentences[j]
        neg = fit_length(session.stream.span(other.start_s, other.end_s, other.sentence_id), pos.n_frames)
        eeg = eeg_slice(session.eeg, info.start_s, pos.n_frames)
        pairs.append(MmPair(eeg, pos, neg, "natural", session.trial_id, session.subject_id))
    return pairs


@dataclass
class TrialRecord:
    trial_id: str
    subject_id: str
    attended_ear: str
    attended_score: float
    unattended_score: float

    def __post_init__(self):
        if self.attended_ear not in ("left", "right"):
            raise ValueError(f"attended_ear must be left or right, got {self.attended_ear!r}")
        for s in (self.attended_score, self.unattended_score):
            if not 0.0 <= s <= 1.0:
                raise ValueError(f"behavioural score {s} outside [0, 1]")


@dataclass
class DichoticTrial:
    record: TrialRecord
    eeg: np.ndarray
    streams: dict  # ear -> Stream (or None when a transcript is missing)


def make_dichotic_pairs(trial: DichoticTrial, report: Optional[list] = None) -> list[MmPair]:
    """Attended-stream sentences as matches, the overlapping unattended span as mismatch."""
    rec = trial.record
    other_ear = "right" if rec.attended_ear == "left" else "left"
    att, unatt = trial.streams.get(rec.attended_ear), trial.streams.get(other_ear)
    if att is None or unatt is None:
        if report is not None:
            report.append({"subject": rec.subject_id, "trial": rec.trial_id, "reason": "missing transcript"})
        return []
    pairs = []
    for info in att.sentences:
        pos = att.span(info.start_s, info.end_s, info.sentence_id)
        neg = unatt.span(info.start_s, info.end_s, f"{other_ear}@{info.sentence_id}", n_frames=pos.n_frames)
        if not neg.tokens:
            if report is not None:
                report.append({"subject": rec.subject_id, "trial": rec.trial_id,
                               "sentence": info.sentence_id, "reason": "no unattended words in span"})
            continue
        eeg = eeg_slice(trial.eeg, info.start_s, pos.n_frames)
        pairs.append(MmPair(eeg, pos, neg, "dichotic", rec.trial_id, rec.subject_id))
    return pairs


def sample_lambda(rng: np.random.Generator) -> float:
    return LAMBDA_CHOICES[int(rng.integers(len(LAMBDA_CHOICES)))]


def with_boundaries(pair: MmPair, mode: str, rng: np.random.Generator | None = None) -> MmPair:
    """Replace the pooling windows: ``true``, ``none`` (one sentence-wide window) or ``random:k``."""
    n = pooled_frames(pair.eeg.shape[1])
    if mode == "true":
        pos = boundaries_to_frames(pair.pos.tokens, n_frames=n)
        neg = boundaries_to_frames(pair.neg.tokens, n_frames=n)
    elif mode == "none":
        pos = neg = whole_window(n)
    elif mode.startswith("random:"):
        k = int(mode.split(":", 1)[1])
        if k < 1:
            raise ValueError(f"random boundary count must be >= 1, got {k}")
        if rng is None:
            raise ValueError("random boundaries need an rng")
        pos, neg = random_windows(n, k, rng), random_windows(n, k, rng)
    else:
        raise ValueError(f"unknown word-boundary mode {mode!r}")
    return replace(pair, pos_windows=pos, neg_windows=neg)


def swap_labels(pairs: list[MmPair], rng: np.random.Generator) -> list[MmPair]:
    """Control condition: exchange matched and mismatched candidates with probability 1/2."""
    out = []
    for p in pairs:
        if rng.random() < 0.5:
            p = replace(p, pos=p.neg, neg=p.pos, pos_windows=p.neg_windows, neg_windows=p.pos_windows)
        out.append(p)
    return out
