"""Small synthetic pairs for model and trainer tests."""
import numpy as np

from neuromatch.pairs import MmPair
from neuromatch.stimulus import SentenceStimulus, WordToken


def stimulus(rng, n_frames, n_words, dim, sid, stream="main"):
    dur = n_frames / 64
    edges = np.sort(rng.uniform(0, dur, 2 * n_words))
    edges[0] = min(edges[0], dur * 0.05)
    toks = []
    step = dur / n_words
    for w in range(n_words):
        toks.append(WordToken(f"w{w}", w * step, w * step + 0.8 * step))
    return SentenceStimulus(rng.random(n_frames), toks, rng.standard_normal((n_words, dim)), sid, "t1", stream)


def random_pair(rng, n_frames=60, n_words=3, channels=4, dim=300, subject="s1", trial="t1", idx=0):
    pos = stimulus(rng, n_frames, n_words, dim, f"p{idx}")
    neg = stimulus(rng, n_frames, n_words, dim, f"n{idx}")
    return MmPair(rng.standard_normal((channels, n_frames)), pos, neg, "natural", trial, subject)


def random_pairs(n, seed=0, **kw):
    rng = np.random.default_rng(seed)
    return [random_pair(rng, idx=i, **kw) for i in range(n)]
