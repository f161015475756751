"""MM accuracy and Wilcoxon tests (exact for small samples, normal approximation above)."""
from __future__ import annotations

import itertools
import math
from typing import Iterable, Sequence

import numpy as np
from scipy.stats import rankdata

ALPHA = 0.01
EXACT_LIMIT = 12
_TOL = 1e-9


class StatsError(ValueError):
    pass


def _sims(rec):
    if isinstance(rec, (tuple, list)):
        return float(rec[0]), float(rec[1])
    return float(rec.sim_pos), float(rec.sim_neg)


def mm_accuracy(records: Iterable) -> float:
    """Percentage of records with sim_pos > sim_neg; ties count as errors."""
    pairs = [_sims(r) for r in records]
    if not pairs:
        raise StatsError("accuracy of an empty prediction set is undefined")
    return 100.0 * sum(p > n for p, n in pairs) / len(pairs)


def _normal_two_sided(dev: float, sd: float) -> float:
    if sd <= 0:
        return 1.0
    z = max(abs(dev) - 0.5, 0.0) / sd
    return min(1.0, math.erfc(z / math.sqrt(2.0)))


def _tie_term(ranks: np.ndarray) -> float:
    _, counts = np.unique(ranks, return_counts=True)
    return float(np.sum(counts.astype(float) ** 3 - counts))


def wilcoxon_signed_rank(a: Sequence[float], b: Sequence[float]) -> tuple[float, float]:
    """Paired test on ``a - b``. Returns (W+, two-sided p).

    Zero differences are dropped and tied magnitudes get average ranks.  The
    p value is P(|W - E[W]| >= |w - E[W]|) under random signs: exact by
    enumerating all 2**n sign patterns for n <= 12, else a continuity- and
    tie-corrected normal approximation.
    """
    d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    if d.ndim != 1:
        raise StatsError("paired samples must be 1-D and of equal length")
    d = d[d != 0]
    n = len(d)
    if n < 3:
        raise StatsError(f"signed-rank test needs at least 3 nonzero differences, got {n}")
    ranks = rankdata(np.abs(d))
    w = float(ranks[d > 0].sum())
    mean = ranks.sum() / 2.0
    if n <= EXACT_LIMIT:
        signs = ((np.arange(2**n)[:, None] >> np.arange(n)) & 1).astype(float)
        dist = signs @ ranks
        p = float(np.mean(np.abs(dist - mean) >= abs(w - mean) - _TOL))
        return w, p
    var = n * (n + 1) * (2 * n + 1) / 24.0 - _tie_term(ranks) / 48.0
    return w, _normal_two_sided(w - mean, math.sqrt(var))


def wilcoxon_rank_sum(a: Sequence[float], b: Sequence[float]) -> tuple[float, float]:
    """Mann-Whitney form of the rank-sum test. Returns (U of ``a``, two-sided p).

    Exact by enumerating every assignment of pooled ranks to ``a`` when
    ``len(a) + len(b) <= 12``, else a tie-corrected normal approximation.
    """
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    na, nb = len(a), len(b)
    if na == 0 or nb == 0:
        raise StatsError("rank-sum test needs two nonempty groups")
    ranks = rankdata(np.concatenate([a, b]))
    offset = na * (na + 1) / 2.0
    u = float(ranks[:na].sum() - offset)
    mean = na * nb / 2.0
    n = na + nb
    if n <= EXACT_LIMIT:
        dist = np.array([ranks[list(c)].sum() - offset for c in itertools.combinations(range(n), na)])
        p = float(np.mean(np.abs(dist - mean) >= abs(u - mean) - _TOL))
        return u, p
    var = na * nb / 12.0 * ((n + 1) - _tie_term(ranks) / (n * (n - 1)))
    return u, _normal_two_sided(u - mean, math.sqrt(var))


def significant(p: float, alpha: float = ALPHA) -> bool:
    return p is not None and not math.isnan(p) and p < alpha
