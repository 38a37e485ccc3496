import csv
import io
import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from attentive_ser import analyze as Z
from attentive_ser.labels import EMOTION_ORDER

ANGRY, HAPPY, NEUTRAL, SAD = EMOTION_ORDER

# speaker -> (vote share %, margin %) from the electoral observations; defeats negative
REFERENCE_RECORDS = {
    "NI": (63.60, 45.20), "RH": (56.64, 31.07), "AH": (69.58, 43.32), "JG": (33.70, 8.58),
    "RI": (64.64, 39.51), "AL": (61.10, 28.35), "SY": (1.62, -54.39), "MH": (46.25, -6.00),
}


def pred(uid, speaker, label, duration=1.0):
    probs = [0.0] * 4
    probs[EMOTION_ORDER.index(label)] = 1.0
    return Z.UtterancePrediction(uid, speaker, label, tuple(probs), duration)


def test_singleton_share():
    s = Z.emotion_shares([pred("a", "NI", ANGRY, 4.2)], "NI")
    assert s.shares == {ANGRY: 100.0, HAPPY: 0.0, NEUTRAL: 0.0, SAD: 0.0}


def test_one_of_each_class():
    preds = [pred(str(i), "x", e, 3.0) for i, e in enumerate(EMOTION_ORDER)]
    assert Z.emotion_shares(preds, "x").as_row() == [25.0] * 4


def test_duration_weighting():
    preds = [pred("a", "x", ANGRY, 30.0), pred("b", "x", NEUTRAL, 10.0)]
    s = Z.emotion_shares(preds, "x")
    assert s.shares[ANGRY] == pytest.approx(75.0) and s.shares[NEUTRAL] == pytest.approx(25.0)
    c = Z.emotion_shares(preds, "x", weighting="count")
    assert c.shares[ANGRY] == 50.0


def test_share_errors():
    with pytest.raises(ValueError, match="no utterances"):
        Z.emotion_shares([pred("a", "x", SAD)], "y")
    with pytest.raises(ValueError):
        Z.emotion_shares([pred("a", "x", SAD)], "x", weighting="energy")
    with pytest.raises(ValueError):
        pred("a", "x", SAD, duration=0.0)
    with pytest.raises(ValueError):
        Z.UtterancePrediction("a", "x", SAD, (0.5, 0.2, 0.2, 0.2), 1.0)


pred_lists = st.lists(
    st.tuples(st.sampled_from(["NI", "RH", "SY"]), st.sampled_from(EMOTION_ORDER),
              st.floats(0.01, 1e4, allow_nan=False)),
    min_size=1, max_size=60,
)


@settings(max_examples=200, deadline=None)
@given(pred_lists, st.sampled_from(["duration", "count"]))
def test_shares_sum_to_100(items, weighting):
    preds = [pred(str(i), s, e, d) for i, (s, e, d) in enumerate(items)]
    for share in Z.all_emotion_shares(preds, weighting):
        assert abs(sum(share.as_row()) - 100.0) < 1e-9
        assert all(v >= 0 for v in share.as_row())


@settings(max_examples=100, deadline=None)
@given(pred_lists, st.floats(0.1, 100))
def test_equal_durations_make_weightings_agree(items, d):
    preds = [pred(str(i), s, e, d) for i, (s, e, _) in enumerate(items)]
    for a, b in zip(Z.all_emotion_shares(preds, "duration"), Z.all_emotion_shares(preds, "count")):
        for e in EMOTION_ORDER:
            assert a.shares[e] == pytest.approx(b.shares[e], abs=1e-9)


def test_shipped_fixture_matches_electoral_observations():
    recs = Z.load_electoral_records()
    assert {r.speaker: (r.vote_share, r.margin) for r in recs} == REFERENCE_RECORDS


def fixture_shares():
    return [Z.EmotionShares(s, dict(zip(EMOTION_ORDER, [10.0 + i, 20.0, 30.0, 40.0 - i])))
            for i, s in enumerate(sorted(REFERENCE_RECORDS))]


def test_join_all_eight():
    rep = Z.electoral_report(fixture_shares(), Z.load_electoral_records())
    assert len(rep.rows) == 8 and not rep.unmatched_shares and not rep.unmatched_records
    for row in rep.rows:
        assert (row.vote_share, row.margin) == REFERENCE_RECORDS[row.speaker]


def test_join_is_lossless():
    shares = fixture_shares()[:5] + [Z.EmotionShares("ZZ", dict.fromkeys(EMOTION_ORDER, 25.0))]
    recs = Z.load_electoral_records()
    rep = Z.electoral_report(shares, recs)
    assert rep.unmatched_shares == ["ZZ"]
    assert len(rep.rows) + len(rep.unmatched_shares) == len(shares)
    assert len(rep.rows) + len(rep.unmatched_records) == len(recs)
    empty = Z.electoral_report(shares, [])
    assert empty.rows == [] and len(empty.unmatched_shares) == len(shares)


def test_duplicate_record_rejected():
    recs = [Z.ElectoralRecord("NI", 60, 5), Z.ElectoralRecord("NI", 61, 6)]
    with pytest.raises(ValueError, match="duplicate"):
        Z.electoral_report(fixture_shares(), recs)
    with pytest.raises(ValueError):
        Z.ElectoralRecord("X", 101.0, 0.0)


def report_rows():
    return Z.electoral_report(fixture_shares(), Z.load_electoral_records()).rows


def test_csv_round_trip():
    rows = report_rows()
    data = Z.render_report(rows, "csv")
    assert Z.parse_report(data, "csv") == rows
    header = next(csv.reader(io.StringIO(data.decode())))
    assert tuple(header) == Z.REPORT_COLUMNS


def test_json_round_trip_and_precision():
    rows = [Z.ReportRow("NI", 12.3456, 0.0001, 50.0, 37.6543, 63.60, 45.20)]
    data = Z.render_report(rows, "json")
    back = Z.parse_report(data, "json")
    assert back == rows
    doc = json.loads(data)
    assert doc["format_version"] == 1
    assert round(doc["rows"][0]["angry_pct"], 4) == 12.3456
    assert round(doc["rows"][0]["happy_pct"], 4) == 0.0001


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 100, allow_nan=False), min_size=6, max_size=6))
def test_round_trip_any_values(vals):
    rows = [Z.ReportRow("S", *vals)]
    for fmt in ("csv", "json"):
        assert Z.parse_report(Z.render_report(rows, fmt), fmt) == rows


def test_svg_is_deterministic():
    a = Z.render_report(report_rows(), "svg_bars")
    b = Z.render_report(report_rows(), "svg_bars")
    assert a == b
    text = a.decode()
    assert text.startswith("<svg") and text.rstrip().endswith("</svg>")
    assert text.count("<title>") == 8 * 4


def test_render_errors():
    with pytest.raises(ValueError, match="empty"):
        Z.render_report([], "csv")
    with pytest.raises(ValueError):
        Z.render_report(report_rows(), "png")
