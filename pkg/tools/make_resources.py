"""Regenerate the montage files and test vocabulary shipped under src/neuromatch/data."""
from collections import Counter
from pathlib import Path

import numpy as np

from neuromatch.montage import make_1010_montage, make_cap_montage, save_montage
from neuromatch.stimulus import EMBEDDING_DIM, EmbeddingTable, save_embedding_table

DATA = Path(__file__).resolve().parents[1] / "src" / "neuromatch" / "data"

WORDS = ("the a of and to in is was he she it that for on with as his her at by they from this had "
         "not but what all were when we there can said an which one do their if will up out about "
         "then them these so some would into has more two like him see time could no make than first "
         "been its who now people my made over did down only way find use may water long little very "
         "after words called just where most know").split()

if __name__ == "__main__":
    for name, montage in (("biosemi128", make_cap_montage(128, mastoids=True)), ("biosemi64", make_1010_montage())):
        save_montage(montage, DATA / f"{name}.tsv")
        print(name, len(montage), Counter(montage.regions[i] for i in montage.scalp))
    rng = np.random.default_rng(20240601)
    vectors = (rng.standard_normal((len(WORDS), EMBEDDING_DIM)) * 0.1).astype(np.float32)
    save_embedding_table(EmbeddingTable(dict(zip(WORDS, vectors))), DATA / "test_vocab.bin")
    print("test_vocab", len(WORDS))
