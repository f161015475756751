"""Three-branch match-mismatch network (EEG, speech envelope, word vectors).

EEG:    conv1d(k=8) -> conv2d(k=(maps, 9), stride (1, 3)) -> word pooling -> context
speech: conv2d(k=(1, 16), stride (1, 3)) -> word pooling -> context
text:   two stacked context layers over word vectors

Both convolutional branches land on the same 64/3 Hz grid (``ceil(T / 3)``
frames), so one list of word windows serves the EEG and the envelope.
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .stimulus import AlignmentError, pooled_frames

EPS = 1e-7
SIM_VARIANTS = (1, 2, 3)
CHECKPOINT_MAGIC = b"NMCK"
CHECKPOINT_VERSION = 1


class CheckpointFormatError(ValueError):
    pass


@dataclass
class ModelConfig:
    n_channels: int = 128
    conv1_maps: int = 16
    conv1_kernel: int = 8
    conv2_maps: int = 32
    conv2_kernel: int = 9
    speech_kernel: int = 16
    stride: int = 3
    hidden: int = 32
    text_dim: int = 300
    context: str = "recurrent"  # or "transformer"
    heads: int = 4
    ff_dim: int = 64
    positional: bool = True
    dropout: float = 0.2
    leak: float = 0.01
    init_gain: float = 0.5

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


# -- padding / pooling helpers ---------------------------------------------------

def strided_same_pad(x: torch.Tensor, kernel: int, stride: int) -> torch.Tensor:
    """Pad the last axis so a (kernel, stride) conv yields ceil(T / stride) frames.

    The left pad is fixed at (kernel - stride) // 2 so every output frame
    sees the same input span whatever the (batch-padded) length is.
    """
    t = x.shape[-1]
    left = max((kernel - stride) // 2, 0)
    n_out = -(-t // stride)
    right = max((n_out - 1) * stride + kernel - t - left, 0)
    return F.pad(x, (left, right))


def pool_matrix(windows: Sequence[Sequence[tuple[int, int]]], n_frames: int, dtype=torch.float32):
    """Averaging matrices for a batch of window lists.

    Returns ``(M, counts)`` where ``M[b, w, t] = 1 / width`` inside window w of
    sample b, so ``M @ features`` gives the per-window means.
    """
    n_words = max(len(w) for w in windows)
    m = np.zeros((len(windows), n_words, n_frames))
    for b, wins in enumerate(windows):
        for w, (start, end) in enumerate(wins):
            if not (0 <= start < end <= n_frames):
                raise AlignmentError(f"window {w} = [{start}, {end}) outside [0, {n_frames})")
            m[b, w, start:end] = 1.0 / (end - start)
    counts = torch.tensor([len(w) for w in windows], dtype=torch.long)
    return torch.as_tensor(m, dtype=dtype), counts


def sinusoidal_positions(n: int, dim: int, dtype=torch.float32) -> torch.Tensor:
    pos = torch.arange(n, dtype=torch.float64)[:, None]
    i = torch.arange(0, dim, 2, dtype=torch.float64)
    angle = pos / torch.pow(10000.0, i / dim)
    pe = torch.zeros(n, dim, dtype=torch.float64)
    pe[:, 0::2] = torch.sin(angle)
    pe[:, 1::2] = torch.cos(angle[:, : dim // 2])
    return pe.to(dtype)


def last_valid(seq: torch.Tensor, counts: torch.Tensor) -> torch.Tensor:
    return seq[torch.arange(seq.shape[0]), counts - 1]


# -- context layers ----------------------------------------------------------------

class RecurrentContext(nn.Module):
    """LSTM over word vectors; the embedding is the output at the last real word."""

    def __init__(self, in_dim: int, hidden: int, layers: int = 1, dropout: float = 0.0):
        super().__init__()
        self.lstm = nn.LSTM(in_dim, hidden, num_layers=layers, batch_first=True,
                            dropout=dropout if layers > 1 else 0.0)
        self.drop = nn.Dropout(dropout)

    def forward(self, seq: torch.Tensor, counts: torch.Tensor) -> torch.Tensor:
        if seq.shape[1] == 0 or int(counts.min()) < 1:
            raise ValueError("context layer needs at least one word per sample")
        out, _ = self.lstm(seq)
        return self.drop(last_valid(out, counts))


class TransformerContext(nn.Module):
    """Encoder layer(s) with sinusoidal positions, mean-pooled over real words."""

    def __init__(self, in_dim: int, dim: int, heads: int, ff_dim: int, layers: int = 1,
                 dropout: float = 0.0, positional: bool = True):
        super().__init__()
        self.proj = nn.Linear(in_dim, dim) if in_dim != dim else None
        self.layers = nn.ModuleList(
            nn.TransformerEncoderLayer(dim, heads, ff_dim, dropout=dropout, batch_first=True)
            for _ in range(layers)
        )
        self.positional = positional
        self.drop = nn.Dropout(dropout)
        self.dim = dim

    def forward(self, seq: torch.Tensor, counts: torch.Tensor) -> torch.Tensor:
        if seq.shape[1] == 0 or int(counts.min()) < 1:
            raise ValueError("context layer needs at least one word per sample")
        x = self.proj(seq) if self.proj is not None else seq
        if self.positional:
            x = x + sinusoidal_positions(x.shape[1], self.dim, x.dtype)
        pad = torch.arange(x.shape[1])[None, :] >= counts[:, None]
        for layer in self.layers:
            x = layer(x, src_key_padding_mask=pad)
        keep = (~pad).to(x.dtype)[..., None]
        pooled = (x * keep).sum(1) / keep.sum(1)
        return self.drop(pooled)


def make_context(cfg: ModelConfig, in_dim: int, layers: int) -> nn.Module:
    if cfg.context == "recurrent":
        return RecurrentContext(in_dim, cfg.hidden, layers, cfg.dropout)
    if cfg.context == "transformer":
        return TransformerContext(in_dim, cfg.hidden, cfg.heads, cfg.ff_dim, layers, cfg.dropout, cfg.positional)
    raise ValueError(f"unknown context kind {cfg.context!r}")


# -- the network -------------------------------------------------------------------

class MatchMismatchNet(nn.Module):
    def __init__(self, config: ModelConfig | None = None, seed: int = 0):
        super().__init__()
        self.config = cfg = config or ModelConfig()
        self.eeg_conv1 = nn.Conv1d(cfg.n_channels, cfg.conv1_maps, cfg.conv1_kernel)
        self.eeg_conv2 = nn.Conv2d(1, cfg.conv2_maps, (cfg.conv1_maps, cfg.conv2_kernel), stride=(1, cfg.stride))
        self.eeg_context = make_context(cfg, cfg.conv2_maps, 1)
        self.speech_conv = nn.Conv2d(1, cfg.conv2_maps, (1, cfg.speech_kernel), stride=(1, cfg.stride))
        self.speech_context = make_context(cfg, cfg.conv2_maps, 1)
        self.text_context = make_context(cfg, cfg.text_dim, 2)
        self.drop = nn.Dropout(cfg.dropout)
        self.reset_parameters(seed)

    def reset_parameters(self, seed: int) -> None:
        """Uniform fan-in init, drawn from a generator seeded with ``seed``; zero biases."""
        gen = torch.Generator().manual_seed(int(seed))
        with torch.no_grad():
            for name, p in self.named_parameters():
                if "bias" in name or p.dim() == 1:
                    if "norm" in name:
                        p.fill_(1.0 if name.endswith("weight") else 0.0)
                    else:
                        p.zero_()
                    continue
                fan_in = int(np.prod(p.shape[1:]))
                bound = self.config.init_gain / math.sqrt(fan_in)
                p.copy_((torch.rand(p.shape, generator=gen, dtype=torch.float64) * 2 - 1) * bound)

    def branch(self, name: str) -> list[nn.Parameter]:
        prefixes = {"eeg": ("eeg_",), "speech": ("speech_",), "text": ("text_",)}[name]
        return [p for n, p in self.named_parameters() if n.startswith(prefixes)]

    # frame-level features ---------------------------------------------------------
    def eeg_frames(self, eeg: torch.Tensor, lengths: torch.Tensor | None = None) -> torch.Tensor:
        """(B, C, T) at 64 Hz -> (B, maps, ceil(T / 3))."""
        cfg = self.config
        k = cfg.conv1_kernel
        x = F.pad(eeg, ((k - 1) // 2, k - 1 - (k - 1) // 2))
        x = self.drop(F.leaky_relu(self.eeg_conv1(x), cfg.leak))
        if lengths is not None:
            valid = torch.arange(x.shape[-1])[None, :] < lengths[:, None]
            x = x * valid[:, None, :].to(x.dtype)
        x = strided_same_pad(x.unsqueeze(1), cfg.conv2_kernel, cfg.stride)
        x = self.eeg_conv2(x).squeeze(2)
        return self.drop(F.leaky_relu(x, cfg.leak))

    def speech_conv_out(self, envelope: torch.Tensor) -> torch.Tensor:
        """Linear part of the speech branch: (B, T) -> (B, maps, ceil(T / 3))."""
        cfg = self.config
        x = strided_same_pad(envelope[:, None, None, :], cfg.speech_kernel, cfg.stride)
        return self.speech_conv(x).squeeze(2)

    def speech_frames(self, envelope: torch.Tensor) -> torch.Tensor:
        return self.drop(F.leaky_relu(self.speech_conv_out(envelope), self.config.leak))

    @staticmethod
    def pool(frames: torch.Tensor, matrix: torch.Tensor) -> torch.Tensor:
        """(B, maps, F) x (B, W, F) -> (B, W, maps) word-level sequence."""
        return matrix @ frames.transpose(1, 2)

    # embeddings -----------------------------------------------------------------
    def eeg_embed(self, frames: torch.Tensor, matrix: torch.Tensor, counts: torch.Tensor) -> torch.Tensor:
        return self.eeg_context(self.pool(frames, matrix), counts)

    def speech_embed(self, envelope: torch.Tensor, matrix: torch.Tensor, counts: torch.Tensor) -> torch.Tensor:
        return self.speech_context(self.pool(self.speech_frames(envelope), matrix), counts)

    def text_embed(self, vectors: torch.Tensor, counts: torch.Tensor) -> torch.Tensor:
        if vectors.shape[1] == 0:
            raise ValueError("text branch needs at least one word")
        return self.text_context(vectors, counts)

    def forward(self, batch) -> dict[str, torch.Tensor]:
        """Embeddings for the matched (``pos``) and mismatched (``neg``) candidates.

        The EEG is pooled twice, once with each candidate's word windows.
        """
        frames = self.eeg_frames(batch.eeg, batch.eeg_len)
        env = torch.cat([batch.pos_env, batch.neg_env])
        pools = torch.cat(_pad_words(batch.pos_pool, batch.neg_pool))
        counts = torch.cat([batch.pos_count, batch.neg_count])
        r_s = self.speech_embed(env, pools, counts)
        words = torch.cat(_pad_words(batch.pos_words, batch.neg_words))
        r_t = self.text_embed(words, torch.cat([batch.pos_nwords, batch.neg_nwords]))
        r_e = self.eeg_embed(torch.cat([frames, frames]), pools, counts)
        b = batch.eeg.shape[0]
        return {
            "e_pos": r_e[:b], "e_neg": r_e[b:],
            "s_pos": r_s[:b], "s_neg": r_s[b:],
            "t_pos": r_t[:b], "t_neg": r_t[b:],
        }


def _pad_words(a: torch.Tensor, b: torch.Tensor):
    n = max(a.shape[1], b.shape[1])
    return F.pad(a, (0, 0, 0, n - a.shape[1])), F.pad(b, (0, 0, 0, n - b.shape[1]))


# -- similarity, fusion, loss --------------------------------------------------------

def similarity(a, b):
    """exp(-||a - b||_1) over the last axis."""
    a = torch.as_tensor(a)
    b = torch.as_tensor(b)
    if a.shape[-1] != b.shape[-1]:
        raise ValueError(f"dimension mismatch: {a.shape[-1]} vs {b.shape[-1]}")
    return torch.exp(-(a - b).abs().sum(-1))


def fuse(variant: int, r_s, r_t, r_e, lam: float):
    """Combine acoustic and semantic similarity; ``lam`` weights the acoustic side."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"fusion weight must lie in [0, 1], got {lam}")
    if variant == 1:
        return lam * similarity(r_s, r_e) + (1 - lam) * similarity(r_t, r_e)
    if variant == 2:
        return similarity(r_s, r_e) ** lam + similarity(r_t, r_e) ** (1 - lam)
    if variant == 3:
        return similarity(lam * torch.as_tensor(r_s) + (1 - lam) * torch.as_tensor(r_t), r_e)
    raise ValueError(f"unknown similarity variant {variant!r}")


def pair_scores(emb: dict, lam: float, variant: int = 1):
    """(sim_pos, sim_neg) for a batch of embeddings from :meth:`MatchMismatchNet.forward`."""
    pos = fuse(variant, emb["s_pos"], emb["t_pos"], emb["e_pos"], lam)
    neg = fuse(variant, emb["s_neg"], emb["t_neg"], emb["e_neg"], lam)
    return pos, neg


def mm_loss(sim_pos, sim_neg, eps: float = EPS):
    """Binary cross-entropy with targets 1 (matched) and 0 (mismatched), batch mean."""
    sp = torch.clamp(torch.as_tensor(sim_pos), eps, 1 - eps)
    sn = torch.clamp(torch.as_tensor(sim_neg), eps, 1 - eps)
    return (0.5 * (-torch.log(sp) - torch.log1p(-sn))).mean()


# -- checkpoints -------------------------------------------------------------------

def save_checkpoint(model: MatchMismatchNet, path, meta: dict | None = None) -> None:
    """Magic ``NMCK``, u32 version, u32 header length, JSON header, float32 LE payload."""
    state = model.state_dict()
    header = {
        "config": asdict(model.config),
        "tensors": [[name, list(t.shape)] for name, t in state.items()],
        "meta": meta or {},
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(blob)))
        fh.write(blob)
        for t in state.values():
            fh.write(t.detach().cpu().numpy().astype("<f4").tobytes())


def load_checkpoint(path) -> tuple[MatchMismatchNet, dict]:
    data = Path(path).read_bytes()
    if data[:4] != CHECKPOINT_MAGIC:
        raise CheckpointFormatError(f"{path}: bad magic")
    if len(data) < 12:
        raise CheckpointFormatError(f"{path}: truncated header")
    version, hlen = struct.unpack("<II", data[4:12])
    if version != CHECKPOINT_VERSION:
        raise CheckpointFormatError(f"{path}: unsupported version {version}")
    try:
        header = json.loads(data[12:12 + hlen])
    except ValueError as exc:
        raise CheckpointFormatError(f"{path}: corrupt header") from exc
    model = MatchMismatchNet(ModelConfig.from_dict(header["config"]))
    offset = 12 + hlen
    state = {}
    for name, shape in header["tensors"]:
        n = int(np.prod(shape))
        if offset + 4 * n > len(data):
            raise CheckpointFormatError(f"{path}: truncated payload at {name}")
        arr = np.frombuffer(data, dtype="<f4", count=n, offset=offset).reshape(shape)
        state[name] = torch.from_numpy(arr.copy())
        offset += 4 * n
    model.load_state_dict(state)
    return model, header["meta"]
