"""Aggregation of four listeners' (emotion, confidence) votes into one label.

Rules, applied per utterance:
  1. a label with strictly more votes than any other wins; its confidence is
     the mean score of the voters who chose it;
  2. a 2-2 split goes to the label with the higher mean confidence, which also
     becomes the confidence; equal means leave the clip discarded;
  3. four different labels: discarded.
A 2-1-1 split is resolved by the plurality policy: "plurality" applies rule 1
to the 2-vote label, "discard" drops the clip.
"""

from __future__ import annotations

import csv
import io
import logging
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

from .labels import EMOTION_ORDER, Emotion

log = logging.getLogger(__name__)

N_EVALUATORS = 4
ACCEPTED = "accepted"
DISCARDED = "discarded"
VOTE_COLUMNS = ("utterance_id", "evaluator", "label", "confidence")
LABEL_COLUMNS = ("utterance_id", "status", "label", "confidence", "rule")


class VoteError(ValueError):
    pass


@dataclass(frozen=True)
class Vote:
    evaluator: str
    label: Emotion
    confidence: int

    def __post_init__(self):
        object.__setattr__(self, "label", Emotion.parse(self.label))
        c = self.confidence
        if isinstance(c, bool) or int(c) != c or not 1 <= c <= 5:
            raise VoteError(f"confidence must be an integer 1..5, got {c!r}")
        object.__setattr__(self, "confidence", int(c))


@dataclass(frozen=True)
class VoteSet:
    utterance_id: str
    votes: tuple

    def validate(self) -> "VoteSet":
        if len(self.votes) != N_EVALUATORS:
            raise VoteError(
                f"{self.utterance_id}: expected {N_EVALUATORS} votes, got {len(self.votes)}"
            )
        evaluators = [v.evaluator for v in self.votes]
        if len(set(evaluators)) != len(evaluators):
            raise VoteError(f"{self.utterance_id}: duplicate evaluator in {evaluators}")
        return self


@dataclass(frozen=True)
class AggregatedLabel:
    utterance_id: str
    status: str
    label: Emotion | None = None
    confidence: float | None = None
    rule: str = ""

    @property
    def accepted(self) -> bool:
        return self.status == ACCEPTED


def _mean(scores):
    return sum(scores) / len(scores)


def aggregate_votes(vs: VoteSet, split_policy: str = "plurality") -> AggregatedLabel:
    vs.validate()
    if split_policy not in ("plurality", "discard"):
        raise ValueError(f"unknown split policy {split_policy!r}")
    uid = vs.utterance_id
    scores = {}
    for v in vs.votes:
        scores.setdefault(v.label, []).append(v.confidence)
    counts = sorted((len(s) for s in scores.values()), reverse=True)

    if counts == [1, 1, 1, 1]:
        return AggregatedLabel(uid, DISCARDED, rule="no-consensus")
    if counts == [2, 2]:
        (la, sa), (lb, sb) = sorted(scores.items(), key=lambda kv: kv[0].index)
        ma, mb = _mean(sa), _mean(sb)
        if ma == mb:
            log.warning("%s: 2-2 tie between %s and %s with equal mean confidence %.3f; discarded",
                        uid, la.value, lb.value, ma)
            return AggregatedLabel(uid, DISCARDED, rule="tie-equal-confidence")
        label, mean = (la, ma) if ma > mb else (lb, mb)
        return AggregatedLabel(uid, ACCEPTED, label, mean, rule="tie-break")
    if counts == [2, 1, 1] and split_policy == "discard":
        return AggregatedLabel(uid, DISCARDED, rule="plurality-discarded")
    # shapes 4, 3+1 and (plurality) 2+1+1: a unique most-voted label
    label = max(scores, key=lambda e: len(scores[e]))
    return AggregatedLabel(uid, ACCEPTED, label, _mean(scores[label]), rule="majority")


def confidence_percent(score: float) -> float:
    if not 1.0 <= score <= 5.0:
        raise ValueError(f"confidence score {score} outside 1..5")
    return score / 5.0 * 100.0


@dataclass(frozen=True)
class ClassSummary:
    label: Emotion
    count: int
    mean_confidence: float | None
    confidence_pct: float | None


def class_summary(labels) -> dict:
    """Per-emotion count, mean confidence and confidence % over accepted labels."""
    accepted = [a for a in labels if a.accepted]
    if not accepted:
        raise ValueError("no accepted labels to summarise (every utterance was discarded)")
    out = {}
    for e in EMOTION_ORDER:
        conf = [a.confidence for a in accepted if a.label == e]
        if conf:
            m = _mean(conf)
            out[e] = ClassSummary(e, len(conf), m, confidence_percent(m))
        else:
            out[e] = ClassSummary(e, 0, None, None)
    return out


# --- file formats ----------------------------------------------------------------
# votes.csv:   utterance_id,evaluator,label,confidence   (one row per evaluator)
# labels.csv:  utterance_id,status,label,confidence,rule (label/confidence empty
#              when discarded)


def read_votes(path) -> list:
    """Group vote rows by utterance, in order of first appearance.

    Raises VoteError listing every malformed row or utterance.
    """
    problems = []
    grouped = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(VOTE_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise VoteError(f"{path}: missing columns {sorted(missing)}")
        for lineno, row in enumerate(reader, start=2):
            try:
                conf_text = (row["confidence"] or "").strip()
                vote = Vote(row["evaluator"].strip(), row["label"], int(conf_text))
            except (ValueError, TypeError, AttributeError) as exc:
                problems.append(f"line {lineno}: {exc}")
                continue
            grouped.setdefault(row["utterance_id"].strip(), []).append(vote)
    sets = []
    for uid, votes in grouped.items():
        vs = VoteSet(uid, tuple(votes))
        try:
            sets.append(vs.validate())
        except VoteError as exc:
            problems.append(str(exc))
    if problems:
        raise VoteError("; ".join(problems))
    return sets


def write_labels(path, labels) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LABEL_COLUMNS)
        for a in labels:
            w.writerow([
                a.utterance_id, a.status,
                a.label.value if a.label else "",
                repr(a.confidence) if a.confidence is not None else "",
                a.rule,
            ])


def read_labels(path) -> list:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            if row["status"] == ACCEPTED:
                out.append(AggregatedLabel(row["utterance_id"], ACCEPTED, Emotion.parse(row["label"]),
                                           float(row["confidence"]), row.get("rule", "")))
            else:
                out.append(AggregatedLabel(row["utterance_id"], DISCARDED, rule=row.get("rule", "")))
    return out


def summary_csv(summary: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["emotion", "samples", "confidence_score", "confidence_pct"])
    for s in summary.values():
        w.writerow([
            s.label.value, s.count,
            "" if s.mean_confidence is None else f"{s.mean_confidence:.4f}",
            "" if s.confidence_pct is None else f"{s.confidence_pct:.4f}",
        ])
    return buf.getvalue()


def summary_text(summary: dict, n_discarded: int = 0) -> str:
    lines = [f"{'Emotion':<10}{'Samples':>9}{'Confidence (1-5)':>19}{'Confidence %':>15}"]
    for s in summary.values():
        mc = "-" if s.mean_confidence is None else f"{s.mean_confidence:.4f}"
        pc = "-" if s.confidence_pct is None else f"{s.confidence_pct:.4f}"
        lines.append(f"{s.label.value:<10}{s.count:>9}{mc:>19}{pc:>15}")
    total = sum(s.count for s in summary.values())
    lines.append(f"accepted {total}, discarded {n_discarded}")
    return "\n".join(lines) + "\n"
