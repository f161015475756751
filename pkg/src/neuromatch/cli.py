"""``neuromatch {synth|preprocess|train|evaluate}``.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import json
import logging
import shutil
import sys
from dataclasses import fields, replace
from pathlib import Path

import torch

from .data_io import FormatError, ManifestError, load_manifest, write_manifest, write_tensor
from .eeg_preproc import PreprocConfig, PreprocError, preprocess
from .experiments import (boundary_analysis, build_pairs, ear_analysis, folds_for, fold_predictions, region_analysis,
                          run_cv)
from .model import CheckpointFormatError, ModelConfig, load_checkpoint
from .montage import REGIONS, save_montage
from .reports import emit_reports
from .synth import SynthConfig, generate_synthetic
from .trainer import TrainConfig, TrainingDivergence, predict

log = logging.getLogger("neuromatch")


class UsageError(ValueError):
    pass


def _value(text: str):
    try:
        return json.loads(text)
    except ValueError:
        return text


def parse_overrides(items) -> dict:
    """``section.key=value`` strings -> {section: {key: value}}."""
    out: dict = {}
    for item in items or []:
        key, sep, val = item.partition("=")
        section, dot, name = key.partition(".")
        if not sep or not dot or section not in ("synth", "preprocess", "model", "train"):
            raise UsageError(f"override {item!r} must look like synth|preprocess|model|train.key=value")
        out.setdefault(section, {})[name] = _value(val)
    return out


def _apply(obj, overrides: dict):
    names = {f.name for f in fields(obj)}
    unknown = sorted(set(overrides) - names)
    if unknown:
        raise UsageError(f"unknown setting(s) {unknown} for {type(obj).__name__}")
    try:
        return replace(obj, **overrides)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc


def _lambdas(text: str) -> list[float]:
    try:
        vals = [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise UsageError(f"bad lambda list {text!r}") from exc
    if not vals or any(not 0.0 <= v <= 1.0 for v in vals):
        raise UsageError("lambdas must lie in [0, 1]")
    return vals


# -- subcommands ---------------------------------------------------------------------

def cmd_synth(args) -> int:
    kw = dict(seed=args.seed, mode=args.mode, n_subjects=args.subjects, n_trials=args.trials,
              trial_seconds=args.seconds, channels=args.channels, eeg_rate=args.eeg_rate,
              delay_ms=args.delay_ms, acoustic_gain=args.acoustic_gain, semantic_gain=args.semantic_gain,
              snr_db=None if args.snr_db == "off" else float(args.snr_db), vocab_size=args.vocab,
              mastoids=args.mastoids, lapse_rate=args.lapse_rate)
    try:
        cfg = _apply(SynthConfig(**kw), args.overrides.get("synth", {}))
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    print(generate_synthetic(cfg, args.out))
    return 0


def cmd_preprocess(args) -> int:
    ds = load_manifest(args.manifest)
    cfg = _apply(PreprocConfig(rereference=not ds.meta.get("referenced", False)), args.overrides.get("preprocess", {}))
    montage = ds.montage()
    out = Path(args.out)
    (out / "eeg").mkdir(parents=True, exist_ok=True)
    src = Path(args.manifest).parent
    records = [{"kind": "meta", **ds.meta, "referenced": True, "eeg_rate": cfg.target_rate}]
    scalp = montage.without_mastoids() if montage is not None and montage.mastoids and cfg.drop_mastoids else montage
    if scalp is not None:
        save_montage(scalp, out / "montage.tsv")
        records[0]["montage"] = "montage.tsv"
    if ds.meta.get("embeddings"):
        _copy(src / ds.meta["embeddings"], out / ds.meta["embeddings"])
    for (trial, stream), (path, rate) in sorted(ds.audio.items()):
        rel = path.relative_to(src)
        _copy(path, out / rel)
        records.append({"kind": "audio", "trial": trial, "stream": stream, "path": rel.as_posix(), "rate": rate})
    for key in sorted(ds.sentences):
        records.extend({"kind": "sentence", **{k: v for k, v in r.items() if k != "kind"}} for r in ds.sentences[key])
    report_lines = []
    for rec in ds.eeg_records():
        ts, report = preprocess(ds.load_eeg(rec), montage, cfg)
        rel = f"eeg/{rec.subject}_{rec.trial}.nmtb"
        write_tensor(out / rel, ts.samples)
        records.append({"kind": "eeg", "subject": rec.subject, "trial": rec.trial, "split": rec.split,
                        "path": rel, "rate": ts.rate})
        row = {"subject": rec.subject, "trial": rec.trial, **report.to_dict()}
        if montage is not None:
            row["rejected_labels"] = [montage.labels[i] for i in report.rejected]
        report_lines.append(json.dumps(row, sort_keys=True))
        if report.rejected:
            log.warning("%s/%s: interpolated channels %s", rec.subject, rec.trial, row.get("rejected_labels"))
    for key in sorted(ds.behavior):
        r = ds.behavior[key]
        records.append({"kind": "behavior", "subject": r.subject_id, "trial": r.trial_id,
                        "attended_ear": r.attended_ear, "attended_score": r.attended_score,
                        "unattended_score": r.unattended_score})
    write_manifest(out / "manifest.jsonl", records)
    (out / "preprocess_report.jsonl").write_text("".join(line + "\n" for line in report_lines))
    print(out / "manifest.jsonl")
    return 0


def _copy(a: Path, b: Path):
    b.parent.mkdir(parents=True, exist_ok=True)
    if a.resolve() != b.resolve():
        shutil.copyfile(a, b)


def _configs(args):
    ov = args.overrides
    kw = dict(seed=args.seed, sim_variant=args.sim, context=args.context)
    for name in ("epochs", "patience", "batch_size"):
        if getattr(args, name, None) is not None:
            kw[name] = getattr(args, name)
    kw.update(TrainConfig.parse_lambda(args.lambda_policy) if args.lambda_policy else {})
    if getattr(args, "label_control", False):
        kw["label_control"] = True
    try:
        tc = _apply(TrainConfig(**kw), ov.get("train", {}))
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    mc = _apply(ModelConfig(context=args.context), ov.get("model", {}))
    return mc, tc


def _load_pairs(args):
    ds = load_manifest(args.manifest)
    if args.protocol and args.protocol != ds.protocol:
        raise UsageError(f"--protocol {args.protocol} but the manifest holds {ds.protocol} data")
    pairs = build_pairs(ds, args.seed)
    if pairs.n_pairs == 0:
        raise ValueError("the dataset yields no matched/mismatched pairs")
    for item in pairs.skipped:
        log.warning("skipped %s", item)
    if pairs.selection is not None:
        log.info("trial selection kept %d of %d", len(pairs.selection.kept),
                 len(pairs.selection.kept) + len(pairs.selection.dropped))
    return ds, pairs


def cmd_train(args) -> int:
    mc, tc = _configs(args)
    ds, pairs = _load_pairs(args)
    by_trial = pairs.by_trial
    if args.word_boundaries and args.word_boundaries != "true":
        from .experiments import apply_boundaries
        by_trial = apply_boundaries(by_trial, args.word_boundaries, args.seed)
    folds = folds_for(pairs, args.folds, args.test_per_fold, args.seed, args.allow_overlap)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "folds.json").write_text(json.dumps([{"fold": f.fold, "train": f.train, "test": f.test} for f in folds],
                                               sort_keys=True, indent=1) + "\n")
    results = run_cv(by_trial, folds, mc, tc, out_dir=out)
    for r in results:
        print(f"fold {r.fold}: " + " ".join(f"lambda={lam:g} {r.accuracy(lam):.2f}%" for lam in sorted(r.predictions)))
    return 0


def cmd_evaluate(args) -> int:
    if args.seed is None and not args.checkpoints:
        raise UsageError("--seed is required unless --checkpoints is given")
    ckpts = sorted(Path(args.checkpoints).glob("fold_*.ckpt"), key=lambda p: int(p.stem.split("_")[1])) \
        if args.checkpoints else []
    if args.checkpoints and not ckpts:
        raise ValueError(f"no fold_*.ckpt files in {args.checkpoints}")
    if args.seed is None:
        args.seed = int(load_checkpoint(ckpts[0])[1].get("seed", 0))
    mc, tc = _configs(args)
    lambdas = _lambdas(args.lambdas)
    tc = replace(tc, eval_lambdas=tuple(lambdas))
    ds, pairs = _load_pairs(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    # folds are only needed for retraining; checkpoint evaluation uses each checkpoint's own test trials
    needs_cv = not ckpts or args.regions or args.word_boundaries
    folds = folds_for(pairs, args.folds, args.test_per_fold, args.seed, args.allow_overlap) if needs_cv else None
    written = []
    if ckpts:
        preds = []
        for path in ckpts:
            model, meta = load_checkpoint(path)
            test = [p for t in meta["test"] for p in pairs.by_trial.get(t, [])]
            if not test:
                raise ValueError(f"{path.name}: none of its test trials are in the dataset")
            preds.append(predict(model, test, lambdas, args.sim))
    else:
        preds = fold_predictions(run_cv(pairs.by_trial, folds, mc, tc))
    written += emit_reports("lambda", preds, out, lambdas=lambdas, reference=1.0 if 1.0 in lambdas else lambdas[-1])
    if args.regions:
        regions = list(REGIONS) if args.regions == "all" else args.regions.split(",")
        bad = sorted(set(regions) - set(REGIONS))
        if bad:
            raise UsageError(f"unknown region(s) {bad}")
        written += emit_reports("region", region_analysis(ds, pairs, folds, mc, tc, args.report_lambda, regions), out)
    if args.word_boundaries:
        modes = args.word_boundaries.split(",")
        written += emit_reports("boundary", boundary_analysis(pairs, folds, mc, tc, modes, args.report_lambda,
                                                              args.seed), out)
    if args.ears:
        written += emit_reports("ear", ear_analysis(pairs, mc, tc, args.folds, args.test_per_fold, args.seed,
                                                    lambdas, args.allow_overlap), out)
    for p in written:
        print(p)
    return 0


# -- argument parsing ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="neuromatch", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, seed_required, manifest=True):
        if manifest:
            p.add_argument("--manifest", required=True, type=Path)
        p.add_argument("--out", required=True, type=Path)
        p.add_argument("--seed", type=int, required=seed_required, default=None if seed_required else 0)
        p.add_argument("--set", dest="set", action="append", default=[], metavar="SECTION.KEY=VALUE")
        p.add_argument("--jobs", type=int, default=1, help="cap on worker threads")

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    common(p, True, manifest=False)
    p.add_argument("--mode", choices=("natural", "dichotic"), default="natural")
    p.add_argument("--subjects", type=int, default=2)
    p.add_argument("--trials", type=int, default=4)
    p.add_argument("--seconds", type=float, default=12.0)
    p.add_argument("--channels", type=int, default=64)
    p.add_argument("--eeg-rate", type=float, default=64.0)
    p.add_argument("--delay-ms", type=float, default=100.0)
    p.add_argument("--acoustic-gain", type=float, default=1.0)
    p.add_argument("--semantic-gain", type=float, default=1.0)
    p.add_argument("--snr-db", default="0", help="noise level in dB, or 'off'")
    p.add_argument("--vocab", type=int, default=200)
    p.add_argument("--lapse-rate", type=float, default=0.0)
    p.add_argument("--mastoids", action="store_true")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("preprocess", help="filter, resample, repair and re-reference EEG")
    common(p, False)
    p.set_defaults(func=cmd_preprocess)

    def model_opts(p):
        p.add_argument("--protocol", choices=("natural", "dichotic"))
        p.add_argument("--folds", type=int, default=6)
        p.add_argument("--test-per-fold", type=int, default=3)
        p.add_argument("--allow-overlap", action="store_true")
        p.add_argument("--lambda", dest="lambda_policy", default="sampled", help="sampled or fixed=V")
        p.add_argument("--sim", type=int, choices=(1, 2, 3), default=1)
        p.add_argument("--context", choices=("recurrent", "transformer"), default="recurrent")
        p.add_argument("--epochs", type=int)
        p.add_argument("--patience", type=int)
        p.add_argument("--batch-size", type=int)

    p = sub.add_parser("train", help="cross-validated training")
    common(p, True)
    model_opts(p)
    p.add_argument("--word-boundaries", default="true", help="true, none or random:k")
    p.add_argument("--label-control", action="store_true", help="randomly swap matched/mismatched in training")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="accuracy reports and analyses")
    common(p, False)
    p.set_defaults(seed=None)
    model_opts(p)
    p.add_argument("--checkpoints", type=Path, help="directory written by `train`")
    p.add_argument("--lambdas", default="0,0.5,1")
    p.add_argument("--report-lambda", type=float, default=0.5, help="lambda used by the region/boundary tables")
    p.add_argument("--regions", help="'all' or a comma list")
    p.add_argument("--word-boundaries", help="comma list of true, none, random:k")
    p.add_argument("--ears", action="store_true", help="per attended ear analysis (dichotic)")
    p.set_defaults(func=cmd_evaluate)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.jobs < 1:
        parser.error("--jobs must be >= 1")
    torch.set_num_threads(args.jobs)
    try:
        args.overrides = parse_overrides(args.set)
        return args.func(args)
    except UsageError as exc:
        parser.error(str(exc))
    except TrainingDivergence as exc:
        print(f"neuromatch: training diverged: {exc}", file=sys.stderr)
        return 1
    except (PreprocError, ManifestError, FormatError, CheckpointFormatError, ValueError, OSError) as exc:
        print(f"neuromatch: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
