"""Acoustic and semantic stimulus features aligned to word boundaries."""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .sigproc import SignalError, TimeSeries, hilbert_envelope, resample

FEATURE_RATE = 64.0
WORD_FRAME_RATE = FEATURE_RATE / 3
EMBEDDING_DIM = 300


class AlignmentError(ValueError):
    """A word window does not fit inside the feature sequence."""


class EmbeddingFormatError(ValueError):
    pass


@dataclass(frozen=True)
class WordToken:
    text: str
    start_s: float
    end_s: float

    def __post_init__(self):
        if not (0 <= self.start_s < self.end_s):
            raise ValueError(f"bad token times for {self.text!r}: [{self.start_s}, {self.end_s})")


@dataclass
class SentenceStimulus:
    """Envelope (64 Hz), word tokens relative to the sentence onset and their vectors."""

    envelope: np.ndarray
    tokens: list[WordToken]
    embeddings: np.ndarray
    sentence_id: str = ""
    trial_id: str = ""
    stream: str = "main"
    onset_s: float = 0.0

    def __post_init__(self):
        self.envelope = np.asarray(self.envelope, dtype=np.float64)
        emb = np.asarray(self.embeddings, dtype=np.float32)
        self.embeddings = emb.reshape(len(self.tokens), emb.shape[-1] if emb.ndim == 2 else -1)
        if len(self.tokens) and self.tokens[-1].end_s > self.duration_s + 1e-9:
            raise AlignmentError(f"sentence {self.sentence_id}: tokens extend past the envelope")

    @property
    def n_frames(self) -> int:
        return len(self.envelope)

    @property
    def duration_s(self) -> float:
        return self.n_frames / FEATURE_RATE


@dataclass
class EmbeddingTable:
    vectors: dict[str, np.ndarray] = field(default_factory=dict)
    dim: int = EMBEDDING_DIM

    def __post_init__(self):
        for word, vec in self.vectors.items():
            if np.shape(vec) != (self.dim,):
                raise EmbeddingFormatError(f"vector for {word!r} has shape {np.shape(vec)}, expected ({self.dim},)")

    def __contains__(self, word: str) -> bool:
        return word in self.vectors

    def __len__(self) -> int:
        return len(self.vectors)

    def get(self, word: str):
        return self.vectors.get(word)


def save_embedding_table(table: EmbeddingTable, path) -> None:
    """word2vec-style binary: ``"count dim\\n"`` then ``word<space><dim float32 LE>\\n`` per entry."""
    with open(path, "wb") as fh:
        fh.write(f"{len(table.vectors)} {table.dim}\n".encode())
        for word, vec in table.vectors.items():
            fh.write(word.encode("utf-8") + b" ")
            fh.write(np.asarray(vec, dtype="<f4").tobytes())
            fh.write(b"\n")


def load_embedding_table(path) -> EmbeddingTable:
    data = Path(path).read_bytes()
    nl = data.find(b"\n")
    try:
        count, dim = (int(v) for v in data[:nl].split())
    except ValueError as exc:
        raise EmbeddingFormatError(f"{path}: bad header") from exc
    pos = nl + 1
    vectors: dict[str, np.ndarray] = {}
    for i in range(count):
        while pos < len(data) and data[pos:pos + 1] in (b"\n", b" "):
            pos += 1
        space = data.find(b" ", pos)
        if space < 0 or space + 1 + 4 * dim > len(data):
            raise EmbeddingFormatError(f"{path}: truncated at record {i}")
        word = data[pos:space].decode("utf-8")
        vec = np.frombuffer(data, dtype="<f4", count=dim, offset=space + 1).astype(np.float32)
        vectors[word] = vec
        pos = space + 1 + 4 * dim
    return EmbeddingTable(vectors, dim)


def sample_vocabulary() -> EmbeddingTable:
    """Small English vocabulary with random vectors, shipped for tests and demos."""
    from importlib.resources import files
    return load_embedding_table(files("neuromatch") / "data" / "test_vocab.bin")


_PUNCT = re.compile(r"[^\w'-]+")


def normalize_word(text: str) -> str:
    return _PUNCT.sub("", text.lower())


def embed_words(tokens: Sequence[WordToken], table: EmbeddingTable):
    """Look up each token (lower-cased, punctuation stripped).

    Out-of-vocabulary words give a zero row and a ``True`` flag so that word
    counts stay in step with the boundary windows.
    """
    if len(tokens) < 1:
        raise ValueError("embed_words needs at least one token")
    out = np.zeros((len(tokens), table.dim), dtype=np.float32)
    oov = np.zeros(len(tokens), dtype=bool)
    for i, tok in enumerate(tokens):
        vec = table.get(normalize_word(tok.text))
        if vec is None:
            oov[i] = True
        else:
            out[i] = vec
    return out, oov


def compute_envelope(audio: np.ndarray, audio_rate: float, allowed_rates: Iterable[float] = (16000.0, 48000.0)) -> np.ndarray:
    """Hilbert envelope of ``audio`` decimated to 64 Hz."""
    audio = np.asarray(audio, dtype=np.float64)
    if audio.size == 0:
        raise SignalError("empty audio")
    if float(audio_rate) not in {float(r) for r in allowed_rates}:
        raise SignalError(f"unsupported audio rate {audio_rate}")
    env = hilbert_envelope(audio, audio_rate)
    env = resample(TimeSeries(env, audio_rate), FEATURE_RATE).samples[0]
    return np.maximum(env, 0.0)


def boundaries_to_frames(tokens: Sequence[WordToken], frame_rate: float = WORD_FRAME_RATE,
                         n_frames: int | None = None) -> list[tuple[int, int]]:
    """Map token times to half-open frame windows on a ``frame_rate`` grid.

    Each window is at least one frame wide and starts no earlier than the
    previous one ends.
    """
    windows = []
    prev_end = 0
    prev_start = -math.inf
    for i, tok in enumerate(tokens):
        if tok.start_s < prev_start:
            raise AlignmentError(f"token {i} starts before token {i - 1}")
        prev_start = tok.start_s
        start = max(int(math.floor(tok.start_s * frame_rate + 1e-9)), prev_end)
        end = max(start + 1, int(math.floor(tok.end_s * frame_rate + 1e-9)))
        if n_frames is not None and end > n_frames:
            raise AlignmentError(f"token {i} ({tok.text!r}) ends at frame {end} beyond {n_frames} frames")
        windows.append((start, end))
        prev_end = end
    return windows


def pooled_frames(n_frames: int) -> int:
    """Length of the 64/3 Hz grid for ``n_frames`` samples at 64 Hz."""
    return -(-n_frames // 3)


def random_windows(n_frames: int, k: int, rng: np.random.Generator) -> list[tuple[int, int]]:
    """Split ``[0, n_frames)`` into ``k`` contiguous windows with uniform random cut points."""
    k = max(1, min(k, n_frames))
    cuts = np.sort(rng.choice(np.arange(1, n_frames), size=k - 1, replace=False)) if k > 1 else np.array([], int)
    edges = [0, *cuts.tolist(), n_frames]
    return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:])]


def whole_window(n_frames: int) -> list[tuple[int, int]]:
    return [(0, n_frames)]
