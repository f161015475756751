import numpy as np
import pytest
from hypothesis import given, strategies as st

from neuromatch.sigproc import SignalError
from neuromatch.stimulus import (AlignmentError, EmbeddingFormatError, EmbeddingTable, SentenceStimulus, WordToken,
                                 boundaries_to_frames, compute_envelope, embed_words, load_embedding_table,
                                 random_windows, save_embedding_table, sample_vocabulary)


class TestEnvelope:
    def test_tone(self):
        t = np.arange(16000) / 16000
        env = compute_envelope(np.sin(2 * np.pi * 400 * t), 16000)
        assert len(env) == 64
        assert np.allclose(env[6:-6], 1.0, rtol=0.02)

    def test_silence(self):
        assert np.array_equal(compute_envelope(np.zeros(16000), 16000), np.zeros(64))

    def test_am_tone(self):
        t = np.arange(32000) / 16000
        mod = 1 + 0.5 * np.cos(2 * np.pi * 2 * t)
        env = compute_envelope(mod * np.sin(2 * np.pi * 400 * t), 16000)
        ref = 1 + 0.5 * np.cos(2 * np.pi * 2 * np.arange(128) / 64)
        assert np.corrcoef(env, ref)[0, 1] > 0.98

    def test_48k(self):
        assert len(compute_envelope(np.ones(48000 * 2), 48000)) == 128

    def test_rate_and_empty(self):
        with pytest.raises(SignalError):
            compute_envelope(np.zeros(100), 22050)
        with pytest.raises(SignalError):
            compute_envelope(np.zeros(0), 16000)

    @given(st.floats(0.5, 3.0))
    def test_length_rule(self, seconds):
        n = int(seconds * 16000)
        assert len(compute_envelope(np.zeros(n), 16000)) == round(n / 16000 * 64)


class TestEmbeddings:
    def table(self):
        rng = np.random.default_rng(0)
        return EmbeddingTable({w: rng.standard_normal(300).astype(np.float32) for w in ("the", "cat", "sat")})

    def test_lookup_bit_identical(self):
        tab = self.table()
        mat, oov = embed_words([WordToken("Cat,", 0, 0.2), WordToken("the", 0.2, 0.4)], tab)
        assert np.array_equal(mat[0], tab.vectors["cat"]) and not oov.any()

    def test_oov_zero_row(self):
        mat, oov = embed_words([WordToken("dog", 0, 0.2)], self.table())
        assert not mat.any() and oov.tolist() == [True]

    def test_repeated(self):
        mat, _ = embed_words([WordToken("sat", 0, 0.1), WordToken("sat", 0.1, 0.2)], self.table())
        assert np.array_equal(mat[0], mat[1])

    def test_empty(self):
        with pytest.raises(ValueError):
            embed_words([], self.table())

    def test_file_round_trip(self, tmp_path):
        tab = self.table()
        save_embedding_table(tab, tmp_path / "e.bin")
        back = load_embedding_table(tmp_path / "e.bin")
        assert list(back.vectors) == list(tab.vectors)
        assert all(np.array_equal(back.vectors[w], tab.vectors[w]) for w in tab.vectors)
        data = (tmp_path / "e.bin").read_bytes()
        assert data.startswith(b"3 300\n") and len(data) == len(b"3 300\n") + sum(len(w) + 2 + 1200 for w in tab.vectors)

    def test_truncated_file(self, tmp_path):
        save_embedding_table(self.table(), tmp_path / "e.bin")
        (tmp_path / "t.bin").write_bytes((tmp_path / "e.bin").read_bytes()[:-700])
        with pytest.raises(EmbeddingFormatError):
            load_embedding_table(tmp_path / "t.bin")

    def test_wrong_dimension(self):
        with pytest.raises(EmbeddingFormatError):
            EmbeddingTable({"a": np.zeros(10)})

    def test_shipped_vocabulary(self):
        voc = sample_vocabulary()
        assert len(voc) > 50 and voc.dim == 300 and "the" in voc


class TestBoundaries:
    def test_exact_frame(self):
        assert boundaries_to_frames([WordToken("a", 0.75, 1.5)]) == [(16, 32)]

    def test_short_token(self):
        assert boundaries_to_frames([WordToken("a", 0.75, 0.76)]) == [(16, 17)]

    def test_adjacent(self):
        assert boundaries_to_frames([WordToken("a", 0, 0.3), WordToken("b", 0.3, 0.6)]) == [(0, 6), (6, 12)]

    def test_beyond_sequence(self):
        with pytest.raises(AlignmentError, match="token 1"):
            boundaries_to_frames([WordToken("a", 0, 0.3), WordToken("b", 0.3, 0.6)], n_frames=10)

    @given(st.lists(st.tuples(st.floats(0.001, 0.5), st.floats(0.0, 0.2)), min_size=1, max_size=12))
    def test_monotone_disjoint(self, layout):
        toks, t = [], 0.0
        for dur, gap in layout:
            toks.append(WordToken("w", t, t + dur))
            t += dur + gap
        wins = boundaries_to_frames(toks)
        assert len(wins) == len(toks)
        assert all(a < b for a, b in wins)
        assert all(wins[i][1] <= wins[i + 1][0] for i in range(len(wins) - 1))

    @given(st.integers(1, 200), st.integers(1, 6), st.integers(0, 10**6))
    def test_random_windows_cover(self, n, k, seed):
        wins = random_windows(n, k, np.random.default_rng(seed))
        assert wins[0][0] == 0 and wins[-1][1] == n and len(wins) == min(k, n)
        assert all(a < b for a, b in wins) and all(wins[i][1] == wins[i + 1][0] for i in range(len(wins) - 1))


class TestTypes:
    def test_token_validation(self):
        with pytest.raises(ValueError):
            WordToken("a", 0.5, 0.5)
        with pytest.raises(ValueError):
            WordToken("a", -0.1, 0.5)

    def test_sentence_tokens_inside(self):
        with pytest.raises(AlignmentError):
            SentenceStimulus(np.zeros(64), [WordToken("a", 0.5, 1.5)], np.zeros((1, 300)))
