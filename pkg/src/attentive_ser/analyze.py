"""Per-speaker emotion shares, electoral joins and report rendering."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from importlib import resources
from xml.sax.saxutils import escape

from .labels import EMOTION_ORDER, Emotion

REPORT_FORMAT_VERSION = 1
SHARE_COLUMNS = tuple(f"{e.value.lower()}_pct" for e in EMOTION_ORDER)
REPORT_COLUMNS = ("speaker",) + SHARE_COLUMNS + ("vote_share", "margin")


@dataclass(frozen=True)
class UtterancePrediction:
    utterance_id: str
    speaker: str
    label: Emotion
    probs: tuple
    duration: float

    def __post_init__(self):
        object.__setattr__(self, "label", Emotion.parse(self.label))
        if not self.duration > 0:
            raise ValueError(f"{self.utterance_id}: duration must be positive")
        if self.probs and abs(sum(self.probs) - 1.0) > 1e-6:
            raise ValueError(f"{self.utterance_id}: probabilities sum to {sum(self.probs)}")


@dataclass(frozen=True)
class EmotionShares:
    speaker: str
    shares: dict  # Emotion -> percent

    def as_row(self) -> list:
        return [self.shares[e] for e in EMOTION_ORDER]


@dataclass(frozen=True)
class ElectoralRecord:
    speaker: str
    vote_share: float
    margin: float  # negative = defeat margin

    def __post_init__(self):
        if not 0.0 <= self.vote_share <= 100.0:
            raise ValueError(f"{self.speaker}: vote share {self.vote_share} outside 0..100")


def emotion_shares(preds, speaker: str, weighting: str = "duration") -> EmotionShares:
    """Percent of a speaker's material predicted as each emotion.

    ``duration`` weights each utterance by its length in seconds; ``count``
    weights all utterances equally.
    """
    if weighting not in ("duration", "count"):
        raise ValueError(f"unknown weighting {weighting!r}")
    mine = [p for p in preds if p.speaker == speaker]
    if not mine:
        raise ValueError(f"no utterances for speaker {speaker!r}")
    totals = dict.fromkeys(EMOTION_ORDER, 0.0)
    for p in mine:
        totals[p.label] += p.duration if weighting == "duration" else 1.0
    whole = sum(totals.values())
    return EmotionShares(speaker, {e: totals[e] / whole * 100.0 for e in EMOTION_ORDER})


def all_emotion_shares(preds, weighting: str = "duration") -> list:
    speakers = sorted({p.speaker for p in preds})
    return [emotion_shares(preds, s, weighting) for s in speakers]


@dataclass(frozen=True)
class ReportRow:
    speaker: str
    angry_pct: float
    happy_pct: float
    neutral_pct: float
    sad_pct: float
    vote_share: float
    margin: float

    @property
    def shares(self) -> list:
        return [self.angry_pct, self.happy_pct, self.neutral_pct, self.sad_pct]


@dataclass
class ElectoralReport:
    rows: list
    unmatched_shares: list = field(default_factory=list)  # speaker names
    unmatched_records: list = field(default_factory=list)


def electoral_report(shares, records) -> ElectoralReport:
    """Join shares to electoral records by speaker; nothing is dropped silently."""
    by_speaker = {}
    for r in records:
        if r.speaker in by_speaker:
            raise ValueError(f"duplicate electoral record for speaker {r.speaker!r}")
        by_speaker[r.speaker] = r
    seen = set()
    rows, unmatched = [], []
    for s in shares:
        if s.speaker in seen:
            raise ValueError(f"duplicate shares for speaker {s.speaker!r}")
        seen.add(s.speaker)
        rec = by_speaker.get(s.speaker)
        if rec is None:
            unmatched.append(s.speaker)
            continue
        rows.append(ReportRow(s.speaker, *s.as_row(), rec.vote_share, rec.margin))
    leftover = [r.speaker for r in records if r.speaker not in seen]
    return ElectoralReport(rows, unmatched, leftover)


def load_electoral_records(path=None) -> list:
    """Read speaker,vote_share,margin rows; defaults to the shipped fixture."""
    if path is None:
        text = resources.files("attentive_ser").joinpath("data/electoral_records.csv").read_text()
    else:
        with open(path, newline="") as fh:
            text = fh.read()
    rows = csv.DictReader(io.StringIO(text))
    return [ElectoralRecord(r["speaker"].strip(), float(r["vote_share"]), float(r["margin"]))
            for r in rows]


# --- rendering -------------------------------------------------------------------
# csv:  header REPORT_COLUMNS, floats in shortest round-trip form
# json: {"format_version": 1, "columns": [...], "rows": [{column: value}, ...]}
# svg:  grouped bar chart, one group per speaker, one bar per emotion


def render_report(rows, fmt: str) -> bytes:
    rows = list(rows)
    if not rows:
        raise ValueError("cannot render an empty report")
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for r in rows:
            w.writerow([r.speaker] + [repr(float(v)) for v in list(asdict(r).values())[1:]])
        return buf.getvalue().encode()
    if fmt == "json":
        doc = {
            "format_version": REPORT_FORMAT_VERSION,
            "columns": list(REPORT_COLUMNS),
            "rows": [asdict(r) for r in rows],
        }
        return (json.dumps(doc, indent=2) + "\n").encode()
    if fmt == "svg_bars":
        return _svg_bars(rows).encode()
    raise ValueError(f"unknown report format {fmt!r}")


def parse_report(data: bytes, fmt: str) -> list:
    text = data.decode()
    if fmt == "csv":
        return [
            ReportRow(r["speaker"], *(float(r[c]) for c in REPORT_COLUMNS[1:]))
            for r in csv.DictReader(io.StringIO(text))
        ]
    if fmt == "json":
        doc = json.loads(text)
        if doc.get("format_version") != REPORT_FORMAT_VERSION:
            raise ValueError(f"unsupported report format version {doc.get('format_version')}")
        return [ReportRow(**r) for r in doc["rows"]]
    raise ValueError(f"cannot parse format {fmt!r}")


_COLORS = ("#d62728", "#ff7f0e", "#7f7f7f", "#1f77b4")


def _svg_bars(rows) -> str:
    bar, gap, left, top, height = 14, 18, 50, 30, 200
    group = bar * len(EMOTION_ORDER) + gap
    width = left + group * len(rows) + 20
    total_h = top + height + 60
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{total_h}" '
        f'viewBox="0 0 {width} {total_h}" font-family="sans-serif" font-size="10">',
        f'<line x1="{left}" y1="{top + height}" x2="{width - 10}" y2="{top + height}" stroke="black"/>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + height}" stroke="black"/>',
    ]
    for tick in range(0, 101, 25):
        y = top + height - height * tick / 100
        out.append(f'<text x="{left - 6}" y="{y + 3:.2f}" text-anchor="end">{tick}%</text>')
    for i, r in enumerate(rows):
        x0 = left + gap / 2 + i * group
        for j, (e, v) in enumerate(zip(EMOTION_ORDER, r.shares)):
            h = height * v / 100
            out.append(
                f'<rect x="{x0 + j * bar:.2f}" y="{top + height - h:.2f}" width="{bar - 1}" '
                f'height="{h:.2f}" fill="{_COLORS[j]}"><title>{escape(r.speaker)} '
                f'{e.value}: {v:.2f}%</title></rect>'
            )
        cx = x0 + bar * len(EMOTION_ORDER) / 2
        out.append(f'<text x="{cx:.2f}" y="{top + height + 14}" text-anchor="middle">{escape(r.speaker)}</text>')
        out.append(
            f'<text x="{cx:.2f}" y="{top + height + 27}" text-anchor="middle">'
            f'{r.vote_share:.2f} / {r.margin:+.2f}</text>'
        )
    for j, e in enumerate(EMOTION_ORDER):
        x = left + j * 80
        out.append(f'<rect x="{x}" y="8" width="10" height="10" fill="{_COLORS[j]}"/>')
        out.append(f'<text x="{x + 14}" y="17">{e.value}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
