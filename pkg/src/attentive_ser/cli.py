"""Command-line entry point: features, annotate, train, analyze, report."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import analyze as A
from . import annotate as AN
from . import dsp
from . import train as T
from .config import dump_config, load_config
from .labels import EMOTION_ORDER, Emotion

log = logging.getLogger("attentive_ser")

MANIFEST_COLUMNS = ("id", "speaker", "path")
PREDICTION_COLUMNS = ("utterance_id", "speaker", "true_label", "predicted_label", "fold",
                      "duration") + tuple(f"p_{e.value.lower()}" for e in EMOTION_ORDER)


class CommandError(Exception):
    pass


# --- helpers --------------------------------------------------------------------


def read_manifest(cfg) -> list:
    path = Path(cfg.manifest)
    if not path.exists():
        raise CommandError(f"manifest not found: {path}")
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(MANIFEST_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise CommandError(f"{path}: missing manifest columns {sorted(missing)}")
        rows = [dict(r) for r in reader]
    if not rows:
        raise CommandError("no utterances in manifest")
    ids = [r["id"] for r in rows]
    if len(set(ids)) != len(ids):
        raise CommandError(f"{path}: duplicate utterance ids")
    base = Path(cfg.audio_dir) if cfg.audio_dir else path.parent
    for r in rows:
        r["path"] = str(base / r["path"])
    return rows


def feature_path(cfg, utt_id: str) -> Path:
    return cfg.out_dir / "features" / f"{utt_id}.npz"


def _cache_is_fresh(cache: Path, source: Path, fingerprint: str) -> bool:
    if not cache.exists():
        return False
    try:
        header = dsp.read_feature_header(cache)
    except Exception:
        return False
    return (header.get("dsp_fingerprint") == fingerprint
            and header.get("source") == str(source)
            and source.exists()
            and cache.stat().st_mtime >= source.stat().st_mtime)


def _write_json(path: Path, obj) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if path.exists() and path.read_text() == text:
        return  # leave unchanged files untouched so reruns rewrite nothing
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _write_confusion(path: Path, cm) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["true\\predicted"] + [e.value for e in EMOTION_ORDER])
        for e, row in zip(EMOTION_ORDER, cm):
            w.writerow([e.value] + [int(v) for v in row])


# --- commands ---------------------------------------------------------------------


def cmd_features(cfg) -> int:
    rows = read_manifest(cfg)
    fingerprint = cfg.dsp.fingerprint()
    fb = dsp.mel_filterbank(cfg.dsp)
    written, skipped, errors = 0, 0, []
    for r in rows:
        src, cache = Path(r["path"]), feature_path(cfg, r["id"])
        if _cache_is_fresh(cache, src, fingerprint):
            skipped += 1
            continue
        try:
            u = dsp.load_utterance(src, r["id"], r["speaker"], cfg.dsp)
            spec = dsp.extract(u, cfg.dsp, fb)
            duration = float(r["duration"]) if r.get("duration") else u.duration
            dsp.save_features(cache, spec, cfg.dsp, r["id"], r["speaker"], duration, str(src))
            written += 1
        except Exception as exc:  # any unreadable file becomes an error entry
            errors.append({"id": r["id"], "path": str(src), "error": f"{type(exc).__name__}: {exc}"})
    _write_json(cfg.out_dir / "features" / "errors.json", errors)
    summary = {"written": written, "skipped": skipped, "failed": len(errors)}
    print(json.dumps(summary, sort_keys=True))
    for e in errors:
        print(json.dumps(e, sort_keys=True), file=sys.stderr)
    return 1 if errors else 0


def cmd_annotate(cfg) -> int:
    vote_sets = AN.read_votes(cfg.votes)
    labels = [AN.aggregate_votes(vs, cfg.split_policy) for vs in vote_sets]
    outdir = cfg.out_dir / "annotate"
    AN.write_labels(outdir / "labels.csv", labels)
    summary = AN.class_summary(labels)
    discarded = sum(not a.accepted for a in labels)
    (outdir / "class_summary.csv").write_text(AN.summary_csv(summary))
    text = AN.summary_text(summary, discarded)
    (outdir / "class_summary.txt").write_text(text)
    print(text, end="")
    return 0


def load_dataset(cfg) -> T.Dataset:
    rows = read_manifest(cfg)
    label_of = {}
    if any(r.get("label") for r in rows):
        label_of = {r["id"]: Emotion.parse(r["label"]) for r in rows if r.get("label")}
    else:
        lp = cfg.labels_path()
        if not lp.exists():
            raise CommandError(f"no labels: manifest has no label column and {lp} is missing; "
                               "run `annotate` first or set `labels`")
        label_of = {a.utterance_id: a.label for a in AN.read_labels(lp) if a.accepted}

    ids, speakers, feats, ys, durs, missing = [], [], [], [], [], []
    fingerprint = cfg.dsp.fingerprint()
    for r in rows:
        if r["id"] not in label_of:
            continue
        fp = feature_path(cfg, r["id"])
        if not fp.exists():
            missing.append(r["id"])
            continue
        spec, header = dsp.load_features(fp)
        if header["dsp_fingerprint"] != fingerprint:
            raise CommandError(f"{fp} was extracted with different DSP settings; rerun `features`")
        ids.append(r["id"])
        speakers.append(r["speaker"])
        feats.append(spec.values)
        ys.append(label_of[r["id"]].index)
        durs.append(header["duration"])
    if missing:
        raise CommandError(f"feature cache missing for {len(missing)} utterance(s) "
                           f"(e.g. {missing[0]}); run the `features` command first")
    if not ids:
        raise CommandError("no labelled utterances with cached features")
    skipped = sum(r["id"] not in label_of for r in rows)
    if skipped:
        log.info("skipping %d utterance(s) without an accepted label", skipped)
    return T.Dataset(ids, speakers, np.stack(feats), np.array(ys), np.array(durs, dtype=float))


def cmd_train(cfg) -> int:
    d = load_dataset(cfg)
    outdir = cfg.out_dir / "train"
    outdir.mkdir(parents=True, exist_ok=True)
    report = T.cross_validate(d, cfg.model, cfg.train, checkpoint_dir=outdir / "checkpoints")
    doc = report.to_dict()
    doc["n_utterances"] = len(d)
    doc["seed"] = cfg.train.seed
    doc["architecture"] = cfg.model.fingerprint()
    _write_json(outdir / "report.json", doc)
    _write_confusion(outdir / "confusion_pooled.csv", report.pooled_confusion)
    for f in report.folds:
        _write_confusion(outdir / f"confusion_fold{f.fold}.csv", f.confusion)

    with open(outdir / "predictions.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PREDICTION_COLUMNS)
        pos = {u: i for i, u in enumerate(d.ids)}
        rows = []
        for f in report.folds:
            for u, p in zip(f.test_ids, f.test_probs):
                i = pos[u]
                rows.append([u, d.speakers[i], EMOTION_ORDER[d.labels[i]].value,
                             EMOTION_ORDER[int(np.argmax(p))].value, f.fold, repr(float(d.durations[i]))]
                            + [repr(float(x)) for x in p])
        w.writerows(sorted(rows, key=lambda r: pos[r[0]]))

    lines = [f"mean UA over {len(report.folds)} folds: {report.mean_ua:.4f}"]
    lines += [f"  fold {f.fold}: UA {f.ua:.4f} after {len(f.epoch_losses)} epoch(s)" for f in report.folds]
    lines.append("pooled confusion (rows = ground truth):")
    lines += ["  " + e.value.ljust(8) + " ".join(f"{int(v):5d}" for v in row)
              for e, row in zip(EMOTION_ORDER, report.pooled_confusion)]
    text = "\n".join(lines) + "\n"
    (outdir / "report.txt").write_text(text)
    print(text, end="")
    return 0


def read_predictions(path) -> list:
    path = Path(path)
    if not path.exists():
        raise CommandError(f"predictions not found: {path}; run `train` first or set `predictions`")
    out = []
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            probs = tuple(float(r[f"p_{e.value.lower()}"]) for e in EMOTION_ORDER)
            out.append(A.UtterancePrediction(r["utterance_id"], r["speaker"], r["predicted_label"],
                                             probs, float(r["duration"])))
    return out


REPORT_FILES = {"csv": "electoral_report.csv", "json": "electoral_report.json",
                "svg_bars": "electoral_report.svg"}


def cmd_analyze(cfg) -> int:
    preds = read_predictions(cfg.predictions_path())
    shares = A.all_emotion_shares(preds, cfg.weighting)
    records = A.load_electoral_records(cfg.electoral or None)
    rep = A.electoral_report(shares, records)
    outdir = cfg.out_dir / "analyze"
    outdir.mkdir(parents=True, exist_ok=True)
    with open(outdir / "shares.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("speaker",) + A.SHARE_COLUMNS)
        for s in shares:
            w.writerow([s.speaker] + [repr(float(v)) for v in s.as_row()])
    _write_json(outdir / "unmatched.json", {"shares_without_record": rep.unmatched_shares,
                                            "records_without_shares": rep.unmatched_records})
    if rep.rows:
        for fmt, name in REPORT_FILES.items():
            (outdir / name).write_bytes(A.render_report(rep.rows, fmt))
    print(json.dumps({"speakers": len(shares), "joined": len(rep.rows),
                      "unmatched_shares": rep.unmatched_shares,
                      "unmatched_records": rep.unmatched_records}, sort_keys=True))
    return 0


def cmd_report(cfg, fmt_list=None, source=None) -> int:
    src = Path(source) if source else cfg.out_dir / "analyze" / REPORT_FILES["csv"]
    if not src.exists():
        raise CommandError(f"report table not found: {src}; run `analyze` first")
    rows = A.parse_report(src.read_bytes(), "json" if src.suffix == ".json" else "csv")
    outdir = cfg.out_dir / "report"
    outdir.mkdir(parents=True, exist_ok=True)
    for fmt in fmt_list or list(REPORT_FILES):
        (outdir / REPORT_FILES[fmt]).write_bytes(A.render_report(rows, fmt))
    train_report = cfg.out_dir / "train" / "report.txt"
    if train_report.exists():
        print(train_report.read_text(), end="")
    print(A.render_report(rows, "csv").decode(), end="")
    return 0


# --- entry point ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="attentive-ser", description=__doc__)
    p.add_argument("--config", help="flat key = value run config")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out", help="override the output directory")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("features", help="extract log-mel features for every manifest entry")
    sub.add_parser("annotate", help="aggregate listener votes and summarise per class")
    sub.add_parser("train", help="k-fold cross-validated training and evaluation")
    sub.add_parser("analyze", help="per-speaker emotion shares joined with electoral records")
    rp = sub.add_parser("report", help="re-render the electoral report table")
    rp.add_argument("--format", action="append", choices=sorted(REPORT_FILES), dest="formats")
    rp.add_argument("--input", help="report table (.csv or .json); defaults to the analyze output")
    sub.add_parser("config", help="print the effective configuration with every default")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, {"seed": args.seed, "out": args.out})
        if args.command == "config":
            print(dump_config(cfg), end="")
            return 0
        if args.command == "report":
            return cmd_report(cfg, args.formats, args.input)
        return {"features": cmd_features, "annotate": cmd_annotate, "train": cmd_train,
                "analyze": cmd_analyze}[args.command](cfg)
    except (CommandError, AN.VoteError, ValueError, OSError) as exc:
        print(json.dumps({"command": args.command, "error": str(exc)}), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
