"""Synthetic speech/EEG datasets with exactly known stimulus-response coupling.

Audio is a train of word-length tone bursts, each with a half-sine amplitude
bump, so the envelope and word boundaries are known in closed form.  EEG
channel c is

    acoustic_gain * w_c * env(t - delay)
  + semantic_gain * (P v_word(t))_c
  + pink noise at the requested SNR

with ``w`` a mixing vector, ``P`` a fixed projection of the 300-d word
vectors and ``v_word(t)`` the vector of the word being heard at time t.
In dichotic mode the unattended stream enters at ``unattended_gain``.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .data_io import write_manifest, write_tensor
from .montage import Montage, builtin_montage, make_cap_montage, save_montage
from .pairs import derive_rng
from .stimulus import EMBEDDING_DIM, EmbeddingTable, save_embedding_table


@dataclass
class SynthConfig:
    seed: int
    mode: str = "natural"
    n_subjects: int = 2
    n_trials: int = 4
    trial_seconds: float = 12.0
    channels: int = 64
    eeg_rate: float = 64.0
    audio_rate: float = 16000.0
    delay_ms: float = 100.0
    acoustic_gain: float = 1.0
    semantic_gain: float = 1.0
    snr_db: Optional[float] = 0.0  # None switches the noise off
    vocab_size: int = 200
    mixing: str = "random"  # or "identity"
    unattended_gain: float = 0.25
    lapse_rate: float = 0.0
    mastoids: bool = False
    common_noise: float = 0.5
    words_per_sentence: tuple = (4, 8)

    def __post_init__(self):
        if self.seed is None:
            raise ValueError("a seed is required")
        if self.mode not in ("natural", "dichotic"):
            raise ValueError(f"mode must be natural or dichotic, got {self.mode!r}")
        if self.snr_db is not None and not math.isfinite(self.snr_db):
            raise ValueError("snr_db must be finite (use None for no noise)")
        if self.delay_ms < 0:
            raise ValueError("delay must be non-negative")
        if self.mixing not in ("random", "identity"):
            raise ValueError(f"unknown mixing {self.mixing!r}")
        if self.n_subjects < 1 or self.n_trials < 1 or self.trial_seconds < 2 or self.channels < 1:
            raise ValueError("subjects, trials, channels must be positive and trials at least 2 s long")
        if not 0.0 <= self.lapse_rate <= 1.0:
            raise ValueError("lapse_rate must lie in [0, 1]")


@dataclass
class Word:
    index: int
    start: float
    end: float
    amplitude: float
    carrier: float


def schedule_stream(rng: np.random.Generator, seconds: float, vocab_size: int, words_per_sentence=(4, 8)):
    """Sentences of tone-burst words filling ``seconds`` (minus a short tail)."""
    sentences, t = [], 0.3 + rng.uniform(0, 0.2)
    limit = seconds - 0.25
    while True:
        n = int(rng.integers(words_per_sentence[0], words_per_sentence[1] + 1))
        words, cur = [], t
        for _ in range(n):
            dur = rng.uniform(0.2, 0.45)
            if cur + dur > limit:
                break
            words.append(Word(int(rng.integers(vocab_size)), round(cur, 4), round(cur + dur, 4),
                              float(rng.uniform(0.3, 1.0)), float(rng.uniform(200.0, 800.0))))
            cur += dur + rng.uniform(0.03, 0.12)
        if len(words) >= 2:
            sentences.append(words)
        if len(words) < n:
            break
        t = words[-1].end + rng.uniform(0.25, 0.45)
    return sentences


def envelope_at(words: list[Word], rate: float, n: int, delay: float = 0.0) -> np.ndarray:
    """Closed-form envelope sampled at ``rate`` (optionally delayed)."""
    t = np.arange(n) / rate - delay
    env = np.zeros(n)
    for w in words:
        sel = (t >= w.start) & (t < w.end)
        env[sel] = w.amplitude * np.sin(np.pi * (t[sel] - w.start) / (w.end - w.start))
    return env


def render_audio(words: list[Word], rate: float, n: int) -> np.ndarray:
    t = np.arange(n) / rate
    audio = np.zeros(n)
    for w in words:
        i0, i1 = int(math.ceil(w.start * rate)), int(math.ceil(w.end * rate))
        tt = t[i0:i1]
        audio[i0:i1] = (w.amplitude * np.sin(np.pi * (tt - w.start) / (w.end - w.start))
                        * np.sin(2 * np.pi * w.carrier * (tt - w.start)))
    return audio


def word_matrix(words: list[Word], rate: float, n: int, projected: np.ndarray) -> np.ndarray:
    """(channels, n) piecewise-constant projection of the current word's vector."""
    out = np.zeros((projected.shape[0], n))
    t = np.arange(n) / rate
    for w in words:
        sel = (t >= w.start) & (t < w.end)
        out[:, sel] = projected[:, w.index][:, None]
    return out


def pink_noise(rng: np.random.Generator, shape: tuple) -> np.ndarray:
    """Unit-variance 1/f noise along the last axis (spectrally shaped white noise)."""
    n = shape[-1]
    spec = np.fft.rfft(rng.standard_normal(shape), axis=-1)
    f = np.fft.rfftfreq(n)
    f[0] = f[1] if n > 1 else 1.0
    x = np.fft.irfft(spec / np.sqrt(f), n=n, axis=-1)
    x -= x.mean(axis=-1, keepdims=True)
    return x / np.maximum(x.std(axis=-1, keepdims=True), 1e-12)


def choose_montage(cfg: SynthConfig) -> Montage:
    if cfg.channels == 128 and cfg.mastoids:
        return builtin_montage("biosemi128")
    if cfg.channels == 64 and not cfg.mastoids:
        return builtin_montage("biosemi64")
    return make_cap_montage(cfg.channels, mastoids=cfg.mastoids)


def generate_synthetic(cfg: SynthConfig, out_dir) -> Path:
    """Write a complete dataset (manifest, blobs, embeddings, montage, truth log) to ``out_dir``."""
    out = Path(out_dir)
    (out / "audio").mkdir(parents=True, exist_ok=True)
    (out / "eeg").mkdir(parents=True, exist_ok=True)
    rng = derive_rng(cfg.seed, "codebook")
    codebook = rng.standard_normal((cfg.vocab_size, EMBEDDING_DIM)).astype(np.float32)
    vocab = [f"w{i:04d}" for i in range(cfg.vocab_size)]
    save_embedding_table(EmbeddingTable(dict(zip(vocab, codebook))), out / "embeddings.bin")

    montage = choose_montage(cfg)
    save_montage(montage, out / "montage.tsv")
    n_scalp = len(montage.scalp)
    rng = derive_rng(cfg.seed, "mixing")
    mix = np.ones(n_scalp) if cfg.mixing == "identity" else rng.standard_normal(n_scalp)
    proj = rng.standard_normal((n_scalp, EMBEDDING_DIM)) / math.sqrt(EMBEDDING_DIM)
    projected = proj @ codebook.T.astype(np.float64)  # (channels, vocab)

    streams = ("left", "right") if cfg.mode == "dichotic" else ("main",)
    trials = [f"t{i + 1:02d}" for i in range(cfg.n_trials)]
    subjects = [f"s{i + 1:02d}" for i in range(cfg.n_subjects)]
    records = [{"kind": "meta", "protocol": cfg.mode, "embeddings": "embeddings.bin", "montage": "montage.tsv",
                "referenced": not cfg.mastoids, "eeg_rate": cfg.eeg_rate}]
    truth = {"config": asdict(cfg), "mixing": mix.tolist(), "streams": {}, "trials": {}}
    n_audio = int(round(cfg.trial_seconds * cfg.audio_rate))
    n_eeg = int(round(cfg.trial_seconds * cfg.eeg_rate))
    delay = cfg.delay_ms / 1000.0

    components = {}
    for trial in trials:
        for name in streams:
            srng = derive_rng(cfg.seed, "stream", trial, name)
            sentences = schedule_stream(srng, cfg.trial_seconds, cfg.vocab_size, cfg.words_per_sentence)
            words = [w for s in sentences for w in s]
            path = f"audio/{trial}_{name}.nmtb"
            write_tensor(out / path, render_audio(words, cfg.audio_rate, n_audio))
            records.append({"kind": "audio", "trial": trial, "stream": name, "path": path, "rate": cfg.audio_rate})
            for k, sent in enumerate(sentences):
                records.append({
                    "kind": "sentence", "id": f"{trial}_{name}_s{k:02d}", "trial": trial, "stream": name,
                    "start_s": sent[0].start, "end_s": sent[-1].end,
                    "tokens": [[vocab[w.index], w.start, w.end] for w in sent],
                })
            truth["streams"][f"{trial}/{name}"] = [[asdict(w) for w in s] for s in sentences]
            components[trial, name] = (
                mix[:, None] * envelope_at(words, cfg.eeg_rate, n_eeg, delay)[None, :],
                word_matrix(words, cfg.eeg_rate, n_eeg, projected),
            )

    for si, subject in enumerate(subjects):
        ear = "left" if si < (cfg.n_subjects + 1) // 2 else "right"
        for trial in trials:
            erng = derive_rng(cfg.seed, "eeg", subject, trial)
            lapse = cfg.mode == "dichotic" and erng.random() < cfg.lapse_rate
            if cfg.mode == "dichotic":
                other = "right" if ear == "left" else "left"
                g_att, g_un = (0.5, 0.5) if lapse else (1.0, cfg.unattended_gain)
                gains = {ear: g_att, other: g_un}
            else:
                gains = {"main": 1.0}
            signal = np.zeros((n_scalp, n_eeg))
            for name, g in gains.items():
                ac, sem = components[trial, name]
                signal += g * (cfg.acoustic_gain * ac + cfg.semantic_gain * sem)
            power = float(np.mean(signal**2))
            if cfg.snr_db is not None and power > 0:
                signal += pink_noise(erng, signal.shape) * math.sqrt(power / 10 ** (cfg.snr_db / 10))
            if cfg.mastoids:
                common = pink_noise(erng, (1, n_eeg)) * math.sqrt(cfg.common_noise * max(power, 1e-12))
                full = np.zeros((len(montage), n_eeg))
                full[montage.scalp] = signal + common
                own = pink_noise(erng, (len(montage.mastoids), n_eeg)) * 0.1 * math.sqrt(max(power, 1e-12))
                full[montage.mastoids] = common + own
                signal = full
            path = f"eeg/{subject}_{trial}.nmtb"
            write_tensor(out / path, signal)
            records.append({"kind": "eeg", "subject": subject, "trial": trial, "split": "train",
                            "path": path, "rate": cfg.eeg_rate})
            if cfg.mode == "dichotic":
                att, un = (0.5, 0.5) if lapse else (0.8, 0.2)
                records.append({"kind": "behavior", "subject": subject, "trial": trial, "attended_ear": ear,
                                "attended_score": att, "unattended_score": un})
                truth["trials"][f"{subject}/{trial}"] = {"attended_ear": ear, "lapse": bool(lapse)}

    write_manifest(out / "manifest.jsonl", records)
    (out / "truth.json").write_text(json.dumps(truth, sort_keys=True))
    return out / "manifest.jsonl"
