import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.stats import chisquare

from neuromatch.pairs import (LAMBDA_CHOICES, DichoticTrial, SentenceInfo, Session, Stream, TrialRecord,
                              make_dichotic_pairs, make_natural_pairs, sample_lambda, swap_labels, with_boundaries)
from neuromatch.stimulus import WordToken, pooled_frames


def make_stream(n_sent, name="main", trial="t1", seconds=None, seed=0):
    rng = np.random.default_rng(seed)
    tokens, infos, t = [], [], 0.2
    for s in range(n_sent):
        start = t
        for w in range(3):
            tokens.append(WordToken(f"{name}{s}_{w}", t, t + 0.3))
            t += 0.35
        infos.append(SentenceInfo(f"{trial}_{name}_s{s}", start, t - 0.05))
        t += 0.3
    total = int(np.ceil((seconds or t + 1) * 64))
    return Stream(trial, name, rng.random(total), tokens, rng.standard_normal((len(tokens), 300)).astype(np.float32),
                  infos)


def session(n_sent, seed=0):
    st_ = make_stream(n_sent, seed=seed)
    return Session("s1", "t1", np.random.default_rng(seed).standard_normal((4, len(st_.envelope))), st_)


class TestNatural:
    def test_two_sentences(self):
        pairs = make_natural_pairs(session(2), np.random.default_rng(0))
        assert [(p.pos.sentence_id, p.neg.sentence_id) for p in pairs] == [("t1_main_s0", "t1_main_s1"),
                                                                           ("t1_main_s1", "t1_main_s0")]

    def test_single_sentence_skipped(self, caplog):
        assert make_natural_pairs(session(1), np.random.default_rng(0)) == []
        assert "fewer than two" in caplog.text

    def test_seeded(self):
        a = make_natural_pairs(session(8), np.random.default_rng(5))
        b = make_natural_pairs(session(8), np.random.default_rng(5))
        assert [p.neg.sentence_id for p in a] == [p.neg.sentence_id for p in b]

    def test_negatives_uniform(self):
        sess = session(20)
        rng = np.random.default_rng(9)
        counts = np.zeros(19)
        ids = [s.sentence_id for s in sess.stream.sentences]
        for _ in range(500):
            for i, p in enumerate(make_natural_pairs(sess, rng)):
                j = ids.index(p.neg.sentence_id)
                counts[j - (j > i)] += 1
        assert counts.sum() == 10_000
        sigma = np.sqrt(10_000 * (1 / 19) * (18 / 19))
        assert np.all(np.abs(counts - 10_000 / 19) < 3 * sigma + 1)
        assert chisquare(counts).pvalue > 1e-3

    def test_invariants(self):
        for p in make_natural_pairs(session(6), np.random.default_rng(1)):
            assert p.pos.sentence_id != p.neg.sentence_id
            assert p.pos.trial_id == p.neg.trial_id == p.trial_id
            assert p.neg.n_frames == p.pos.n_frames == p.eeg.shape[1]
            n = pooled_frames(p.eeg.shape[1])
            assert all(0 <= a < b <= n for a, b in p.pos_windows + p.neg_windows)


class TestDichotic:
    def trial(self, ear="left"):
        left = make_stream(4, "left", seconds=12)
        right = make_stream(5, "right", seconds=12, seed=1)
        # shift right-stream word times so spans differ
        right.tokens = [WordToken(t.text, t.start_s + 0.1, t.end_s + 0.1) for t in right.tokens]
        rec = TrialRecord("t1", "s1", ear, 0.8, 0.2)
        eeg = np.random.default_rng(0).standard_normal((4, 12 * 64))
        return DichoticTrial(rec, eeg, {"left": left, "right": right})

    def test_pos_from_attended(self):
        pairs = make_dichotic_pairs(self.trial("left"))
        assert pairs and all(p.pos.stream == "left" and p.neg.stream == "right" for p in pairs)

    def test_time_alignment(self):
        tr = self.trial()
        for p, info in zip(make_dichotic_pairs(tr), tr.streams["left"].sentences):
            f0 = int(round(info.start_s * 64))
            assert np.array_equal(p.eeg, tr.eeg[:, f0:f0 + p.pos.n_frames])
            assert p.neg.onset_s == p.pos.onset_s
            assert np.array_equal(p.neg.envelope, tr.streams["right"].envelope[f0:f0 + p.pos.n_frames])

    def test_swap_ear_swaps_roles(self):
        a = make_dichotic_pairs(self.trial("left"))
        report = []
        b = make_dichotic_pairs(self.trial("right"), report)
        assert {p.pos.stream for p in b} == {"right"} and {p.neg.stream for p in b} == {"left"}
        assert a[0].pos_windows == b[0].neg_windows and a[0].neg_windows == b[0].pos_windows
        # the fifth right-ear sentence has no overlapping left-ear words
        assert len(a) == 4 and len(b) == 4
        assert report == [{"subject": "s1", "trial": "t1", "sentence": "t1_right_s4",
                           "reason": "no unattended words in span"}]

    def test_missing_transcript(self):
        tr = self.trial()
        tr.streams["right"] = None
        report = []
        assert make_dichotic_pairs(tr, report) == []
        assert report[0]["reason"] == "missing transcript"


class TestLambda:
    def test_uniform(self):
        rng = np.random.default_rng(0)
        draws = [sample_lambda(rng) for _ in range(30_000)]
        assert set(draws) <= set(LAMBDA_CHOICES)
        sigma = np.sqrt(30_000 / 3 * 2 / 3)
        for v in LAMBDA_CHOICES:
            assert abs(draws.count(v) - 10_000) < 3 * sigma

    def test_seeded(self):
        a = [sample_lambda(np.random.default_rng(3)) for _ in range(5)]
        assert a == [sample_lambda(np.random.default_rng(3)) for _ in range(5)]


class TestBoundaryModes:
    @given(st.sampled_from(["none", "random:2", "random:3", "random:5"]), st.integers(0, 1000))
    def test_windows_valid(self, mode, seed):
        p = make_natural_pairs(session(3), np.random.default_rng(0))[0]
        q = with_boundaries(p, mode, np.random.default_rng(seed))
        n = pooled_frames(p.eeg.shape[1])
        for wins in (q.pos_windows, q.neg_windows):
            assert wins[0][0] == 0 and wins[-1][1] == n
        if mode == "none":
            assert q.pos_windows == [(0, n)]

    def test_bad_mode(self):
        p = make_natural_pairs(session(3), np.random.default_rng(0))[0]
        with pytest.raises(ValueError):
            with_boundaries(p, "random:0", np.random.default_rng(0))
        with pytest.raises(ValueError):
            with_boundaries(p, "fuzzy")

    def test_swap_labels(self):
        pairs = make_natural_pairs(session(10), np.random.default_rng(0))
        swapped = swap_labels(pairs, np.random.default_rng(1))
        n_swapped = sum(s.pos is p.neg for s, p in zip(swapped, pairs))
        assert 0 < n_swapped < len(pairs)
        for s, p in zip(swapped, pairs):
            if s.pos is p.neg:
                assert s.pos_windows == p.neg_windows
