"""Tab-separated result tables.

Every table has a header row; floats use fixed formats so reruns on the same
inputs are byte-identical.  Schemas (one file each):

``lambda_accuracy.tsv``     lambda, mean_accuracy, std_accuracy, n_folds, p_vs_ref, significant
``scatter_lambda_<l>.tsv``  pair_id, sim_pos, sim_neg, correct
``region_accuracy.tsv``     region, n_channels, mean_accuracy, std_accuracy, n_folds, p_vs_chance, significant
``ear_accuracy.tsv``        group, ear, n_train_pairs, retained, total, retention_percent, lambda, mean_accuracy, std_accuracy
``boundary_ablation.tsv``   condition, mean_accuracy, std_accuracy, n_folds, p_vs_true, significant

``p_vs_ref`` is a signed-rank test across folds against the reference
lambda; ``p_vs_true`` a rank-sum test against the true-boundary folds.
Untestable comparisons are written as ``NA``.
"""
from __future__ import annotations

import math
from pathlib import Path
from typing import Sequence

import numpy as np

from .stats import ALPHA, StatsError, mm_accuracy, significant, wilcoxon_rank_sum, wilcoxon_signed_rank

CHANCE = 50.0


def _fmt(v) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return "NA"
    if isinstance(v, bool):
        return "yes" if v else "no"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.6f}"
    return str(v)


def write_table(path, header: Sequence[str], rows: Sequence[Sequence]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = ["\t".join(header)] + ["\t".join(_fmt(v) for v in row) for row in rows]
    path.write_text("\n".join(lines) + "\n")
    return path


def _summary(accs: Sequence[float]):
    a = np.asarray(accs, dtype=float)
    return float(a.mean()), float(a.std(ddof=1)) if len(a) > 1 else 0.0, len(a)


def _p_flag(test, *args):
    try:
        _, p = test(*args)
    except StatsError:
        return None, None
    return p, significant(p, ALPHA)


def lambda_key(lam: float) -> str:
    return f"{float(lam):g}"


def fold_accuracies(fold_predictions: Sequence[dict], lam: float) -> list[float]:
    return [mm_accuracy(fp[float(lam)]) for fp in fold_predictions]


def lambda_report(out_dir, fold_predictions: Sequence[dict], lambdas: Sequence[float], reference: float = 1.0) -> Path:
    """Per-lambda accuracy; ``fold_predictions`` holds one {lam: records} dict per fold."""
    ref = fold_accuracies(fold_predictions, reference) if float(reference) in fold_predictions[0] else None
    rows = []
    for lam in sorted(float(x) for x in lambdas):
        accs = fold_accuracies(fold_predictions, lam)
        p, flag = (None, None) if ref is None or lam == float(reference) else _p_flag(wilcoxon_signed_rank, accs, ref)
        rows.append((lambda_key(lam), *_summary(accs), p, flag))
    return write_table(Path(out_dir) / "lambda_accuracy.tsv",
                       ("lambda", "mean_accuracy", "std_accuracy", "n_folds", "p_vs_ref", "significant"), rows)


def scatter_reports(out_dir, fold_predictions: Sequence[dict], lambdas=(0.0, 0.5, 1.0)) -> list[Path]:
    paths = []
    for lam in lambdas:
        recs = sorted((r for fp in fold_predictions for r in fp[float(lam)]), key=lambda r: r.pair_id)
        rows = [(r.pair_id, r.sim_pos, r.sim_neg, r.correct) for r in recs]
        paths.append(write_table(Path(out_dir) / f"scatter_lambda_{lambda_key(lam)}.tsv",
                                 ("pair_id", "sim_pos", "sim_neg", "correct"), rows))
    return paths


def region_report(out_dir, regions: dict) -> Path:
    """``regions``: name -> {"n_channels": int, "accuracies": per-fold list}."""
    rows = []
    for name, info in regions.items():
        accs = info["accuracies"]
        p, flag = _p_flag(wilcoxon_signed_rank, accs, [CHANCE] * len(accs))
        rows.append((name, info["n_channels"], *_summary(accs), p, flag))
    return write_table(Path(out_dir) / "region_accuracy.tsv",
                       ("region", "n_channels", "mean_accuracy", "std_accuracy", "n_folds", "p_vs_chance",
                        "significant"), rows)


def ear_report(out_dir, groups: dict) -> Path:
    """``groups``: label -> {"ear", "n_train_pairs", "retained", "total", "accuracies": {lam: list}}."""
    rows = []
    for label, info in groups.items():
        pct = 100.0 * info["retained"] / info["total"] if info["total"] else None
        for lam in sorted(info["accuracies"]):
            mean, std, _ = _summary(info["accuracies"][lam])
            rows.append((label, info["ear"], info["n_train_pairs"], info["retained"], info["total"], pct,
                         lambda_key(lam), mean, std))
    return write_table(Path(out_dir) / "ear_accuracy.tsv",
                       ("group", "ear", "n_train_pairs", "retained", "total", "retention_percent", "lambda",
                        "mean_accuracy", "std_accuracy"), rows)


def boundary_report(out_dir, conditions: dict) -> Path:
    """``conditions``: mode (``true``, ``none``, ``random:k``) -> per-fold accuracies."""
    ref = conditions.get("true")
    rows = []
    for name, accs in conditions.items():
        p, flag = (None, None) if ref is None or name == "true" else _p_flag(wilcoxon_rank_sum, ref, accs)
        rows.append((name, *_summary(accs), p, flag))
    return write_table(Path(out_dir) / "boundary_ablation.tsv",
                       ("condition", "mean_accuracy", "std_accuracy", "n_folds", "p_vs_true", "significant"), rows)


def emit_reports(kind: str, data, out_dir, **options) -> list[Path]:
    """Write the report files for one analysis kind: lambda, region, ear or boundary."""
    if kind == "lambda":
        lambdas = options.get("lambdas") or sorted(data[0])
        paths = [lambda_report(out_dir, data, lambdas, options.get("reference", 1.0))]
        scatter = [lam for lam in (0.0, 0.5, 1.0) if lam in data[0]]
        return paths + scatter_reports(out_dir, data, scatter)
    if kind == "region":
        return [region_report(out_dir, data)]
    if kind == "ear":
        return [ear_report(out_dir, data)]
    if kind == "boundary":
        return [boundary_report(out_dir, data)]
    raise ValueError(f"unknown report kind {kind!r}")
