"""Dataset manifest (JSON lines) and the TensorBlob binary format.

TensorBlob layout, all little-endian::

    b"NMTB" | u32 version | u32 dtype tag (1 = float32) | u32 rank | u64 x rank shape | payload

Manifest records, one JSON object per line, keyed by ``kind``:

``meta``      protocol, embeddings / montage paths, ``referenced`` flag
``audio``     trial, stream, path, rate
``sentence``  id, trial, stream, start_s, end_s, tokens ([word, start_s, end_s] in trial time)
``eeg``       subject, trial, split, path, rate
``behavior``  subject, trial, attended_ear, attended_score, unattended_score

Relative paths resolve against the manifest's directory.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .montage import Montage, builtin_montage, load_montage
from .pairs import SentenceInfo, Stream, TrialRecord
from .sigproc import TimeSeries
from .stimulus import EmbeddingTable, WordToken, compute_envelope, embed_words, load_embedding_table

BLOB_MAGIC = b"NMTB"
BLOB_VERSION = 1
DTYPE_F32 = 1
KINDS = ("meta", "audio", "sentence", "eeg", "behavior")


class FormatError(ValueError):
    pass


class ManifestError(ValueError):
    pass


def write_tensor(path, tensor) -> None:
    arr = np.ascontiguousarray(np.asarray(tensor, dtype="<f4"))
    if not np.all(np.isfinite(arr)):
        raise FormatError("refusing to write non-finite values")
    with open(path, "wb") as fh:
        fh.write(BLOB_MAGIC)
        fh.write(struct.pack("<III", BLOB_VERSION, DTYPE_F32, arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        fh.write(arr.tobytes())


def read_tensor(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < 16 or data[:4] != BLOB_MAGIC:
        raise FormatError(f"{path}: not a tensor blob")
    version, dtype, rank = struct.unpack("<III", data[4:16])
    if version != BLOB_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if dtype != DTYPE_F32:
        raise FormatError(f"{path}: unsupported dtype tag {dtype}")
    end = 16 + 8 * rank
    if len(data) < end:
        raise FormatError(f"{path}: truncated shape table")
    shape = struct.unpack(f"<{rank}Q", data[16:end])
    n = int(np.prod(shape)) if rank else 1
    if len(data) != end + 4 * n:
        raise FormatError(f"{path}: payload has {len(data) - end} bytes, expected {4 * n}")
    return np.frombuffer(data, dtype="<f4", count=n, offset=end).reshape(shape).copy()


@dataclass
class EegRecord:
    subject: str
    trial: str
    path: Path
    rate: float
    split: str = "train"


@dataclass
class Dataset:
    root: Path
    meta: dict = field(default_factory=dict)
    eeg: dict = field(default_factory=dict)  # (subject, trial) -> EegRecord
    audio: dict = field(default_factory=dict)  # (trial, stream) -> (path, rate)
    sentences: dict = field(default_factory=dict)  # (trial, stream) -> list[dict]
    behavior: dict = field(default_factory=dict)  # (subject, trial) -> TrialRecord
    _streams: dict = field(default_factory=dict, repr=False)
    _table: Optional[EmbeddingTable] = field(default=None, repr=False)

    @property
    def protocol(self) -> str:
        return self.meta.get("protocol", "natural")

    @property
    def trials(self) -> list[str]:
        return sorted({t for _, t in self.eeg})

    @property
    def subjects(self) -> list[str]:
        return sorted({s for s, _ in self.eeg})

    def eeg_records(self) -> list[EegRecord]:
        return [self.eeg[k] for k in sorted(self.eeg)]

    def load_eeg(self, rec: EegRecord) -> TimeSeries:
        return TimeSeries(read_tensor(rec.path).astype(np.float64), rec.rate)

    def streams_of(self, trial: str) -> list[str]:
        return sorted({s for t, s in self.sentences if t == trial} | {s for t, s in self.audio if t == trial})

    def embedding_table(self) -> EmbeddingTable:
        if self._table is None:
            path = self.meta.get("embeddings")
            self._table = load_embedding_table(self.root / path) if path else EmbeddingTable({})
        return self._table

    def montage(self) -> Optional[Montage]:
        name = self.meta.get("montage")
        if not name:
            return None
        path = self.root / name
        return load_montage(path) if path.exists() else builtin_montage(name)

    def stream(self, trial: str, name: str) -> Optional[Stream]:
        """Envelope (64 Hz, scaled to unit RMS), tokens and word vectors of one stream."""
        key = (trial, name)
        if key in self._streams:
            return self._streams[key]
        if key not in self.sentences or key not in self.audio:
            return None
        path, rate = self.audio[key]
        env = compute_envelope(read_tensor(path).astype(np.float64), rate)
        rms = float(np.sqrt(np.mean(env**2)))
        if rms > 0:
            env = env / rms
        infos, tokens = [], []
        for rec in sorted(self.sentences[key], key=lambda r: r["start_s"]):
            infos.append(SentenceInfo(rec["id"], float(rec["start_s"]), float(rec["end_s"])))
            tokens.extend(WordToken(w, float(a), float(b)) for w, a, b in rec["tokens"])
        vectors, _ = embed_words(tokens, self.embedding_table()) if tokens else (np.zeros((0, 300), np.float32), None)
        stream = Stream(trial, name, env, tokens, vectors, infos)
        self._streams[key] = stream
        return stream


def _require(rec: dict, keys, lineno: int):
    missing = [k for k in keys if k not in rec]
    if missing:
        raise ManifestError(f"line {lineno}: {rec.get('kind')} record missing {missing}")


def load_manifest(path) -> Dataset:
    """Parse a manifest; duplicate ids and missing files raise with the line number."""
    path = Path(path)
    root = path.parent
    ds = Dataset(root)
    seen = {}
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ManifestError(f"line {lineno}: invalid JSON ({exc})") from exc
        kind = rec.get("kind")
        if kind not in KINDS:
            raise ManifestError(f"line {lineno}: unknown record kind {kind!r}")
        if kind == "meta":
            ds.meta.update({k: v for k, v in rec.items() if k != "kind"})
            continue
        if kind == "audio":
            _require(rec, ("trial", "stream", "path", "rate"), lineno)
            key = (str(rec["trial"]), str(rec["stream"]))
        elif kind == "sentence":
            _require(rec, ("id", "trial", "stream", "start_s", "end_s", "tokens"), lineno)
            key = str(rec["id"])
        else:
            _require(rec, ("subject", "trial"), lineno)
            key = (str(rec["subject"]), str(rec["trial"]))
        if (kind, key) in seen:
            raise ManifestError(f"line {lineno}: duplicate {kind} id {key} (first on line {seen[kind, key]})")
        seen[kind, key] = lineno
        if "path" in rec:
            file = root / rec["path"]
            if not file.exists():
                raise ManifestError(f"line {lineno}: referenced file {rec['path']} does not exist")
        if "rate" in rec and not float(rec["rate"]) > 0:
            raise ManifestError(f"line {lineno}: rate must be positive")
        if kind == "audio":
            ds.audio[key] = (root / rec["path"], float(rec["rate"]))
        elif kind == "sentence":
            ds.sentences.setdefault((str(rec["trial"]), str(rec["stream"])), []).append(rec)
        elif kind == "eeg":
            _require(rec, ("path", "rate"), lineno)
            ds.eeg[key] = EegRecord(key[0], key[1], root / rec["path"], float(rec["rate"]), rec.get("split", "train"))
        elif kind == "behavior":
            _require(rec, ("attended_ear", "attended_score", "unattended_score"), lineno)
            try:
                ds.behavior[key] = TrialRecord(key[1], key[0], rec["attended_ear"],
                                               float(rec["attended_score"]), float(rec["unattended_score"]))
            except ValueError as exc:
                raise ManifestError(f"line {lineno}: {exc}") from exc
    for key in ds.sentences:
        ds.sentences[key].sort(key=lambda r: (r["start_s"], r["id"]))
    for key in sorted(ds.behavior):
        if key not in ds.eeg:
            raise ManifestError(f"line {seen['behavior', key]}: behavior record for {key[0]}/{key[1]} has no eeg record")
    return ds


def write_manifest(path, records: list[dict]) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
