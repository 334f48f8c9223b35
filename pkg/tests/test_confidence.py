import io
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lossyserve.confidence import (
    ABOVE_ALL, CalibrationTable, ModelTrace, arbitrate, calibrate, combined_accuracy,
)
from lossyserve.errors import EmptyTrace, TraceError, UnsatisfiableRequirement

TOY = ModelTrace.from_rows([
    ["a", 0.0, 0.9, 1, 1], ["b", 0.0, 0.8, 0, 1], ["c", 0.0, 0.4, 1, 0], ["d", 0.0, 0.2, 0, 1]])


def brute_force(conf, front, back, a):
    """Smallest candidate threshold with end-to-end accuracy >= a (None if none)."""
    cands = sorted({0.0, *[c for c in conf if c > 0], ABOVE_ALL})
    n = len(conf)
    for t in cands:
        acc = sum(f if c >= t else b for c, f, b in zip(conf, front, back)) / n
        if acc >= a:
            return t, acc
    return None, None


def test_toy_examples():
    assert combined_accuracy(TOY, 0.5) == 0.5
    assert combined_accuracy(TOY, 0.0) == 0.5          # all frontend
    assert combined_accuracy(TOY, ABOVE_ALL) == 0.75   # all backend
    tab = calibrate(TOY, [0.75, 0.5, 1.0])
    e = tab.entry(0.75)
    # t=0 and t=0.2 give 0.5; t=0.4 sends row d to the backend: (1+0+1+1)/4
    assert e.threshold == 0.4 and e.predicted_accuracy == 0.75
    assert e.predicted_frontend_fraction == 0.75
    assert tab.entry(0.5).threshold == 0.0
    with pytest.raises(UnsatisfiableRequirement):
        tab.entry(1.0)


def test_empty_trace():
    empty = ModelTrace.from_rows([])
    with pytest.raises(EmptyTrace):
        combined_accuracy(empty, 0.5)
    with pytest.raises(EmptyTrace):
        calibrate(empty, [0.7])


def test_csv_roundtrip_and_errors(tmp_path):
    text = TOY.to_csv()
    back = ModelTrace.from_csv(io.StringIO(text))
    assert back.to_csv() == text and back.digest() == TOY.digest()
    with pytest.raises(TraceError):
        ModelTrace.from_csv(io.StringIO("image_id,loss_level\n1,0\n"))
    with pytest.raises(TraceError):
        ModelTrace.from_csv(io.StringIO("image_id,loss_level,front_confidence,front_correct,back_correct\n"
                                        "1,0,abc,1,1\n"))


def test_table_json_roundtrip_and_provenance():
    tab = calibrate(TOY, [0.5, 0.75])
    again = CalibrationTable.from_json(tab.to_json())
    assert again.entries == tab.entries
    assert json.loads(tab.to_json())["provenance"]["trace_sha256"] == TOY.digest()


def test_nearest_above_and_buckets(fixture_table):
    e = fixture_table.entry(0.745)
    assert e.requirement == 0.75
    assert fixture_table.bucket_for(0.0) == 0.0
    assert fixture_table.bucket_for(0.0004) == 0.001
    assert fixture_table.bucket_for(0.01) == 0.01
    assert fixture_table.bucket_for(0.02) is None


def test_arbitrate():
    tab = calibrate(TOY, [0.75])
    t = tab.entry(0.75).threshold
    assert arbitrate(1.0, 0.75, tab).frontend
    d = arbitrate(t - 1e-6, 0.75, tab)
    assert not d.frontend and d.threshold_used == t
    d = arbitrate(t, 0.75, tab, labels=[4])
    assert d.frontend and d.labels == (4,)


def test_fixture_predicted_fraction_near_96_percent(fixture_table):
    assert abs(fixture_table.entry(0.75).predicted_frontend_fraction - 0.96) < 0.01


traces = st.integers(1, 40).flatmap(lambda n: st.tuples(
    st.lists(st.sampled_from([0.0, 0.1, 0.25, 0.5, 0.75, 0.9, 1.0]) | st.floats(0, 1), min_size=n, max_size=n),
    st.lists(st.integers(0, 1), min_size=n, max_size=n),
    st.lists(st.integers(0, 1), min_size=n, max_size=n)))


@settings(max_examples=500)
@given(traces, st.floats(0, 1))
def test_calibrate_matches_brute_force(tr, a):
    conf, f, b = tr
    trace = ModelTrace.from_rows([[str(i), 0.0, c, x, y] for i, (c, x, y) in enumerate(zip(conf, f, b))])
    e = calibrate(trace, [a]).entries[0]
    t, acc = brute_force(conf, f, b, a)
    if t is None:
        assert not e.satisfiable
    else:
        assert e.satisfiable and e.threshold == t and e.predicted_accuracy == acc
        assert combined_accuracy(trace, e.threshold) >= a
        handled = [c >= t for c in conf]
        assert e.predicted_frontend_fraction == sum(handled) / len(conf)


def test_frontend_fraction_non_increasing_in_threshold(fixture_table):
    for lv in fixture_table.levels():
        rows = sorted((e for e in fixture_table.entries if e.loss_level == lv), key=lambda e: e.threshold)
        fr = [e.predicted_frontend_fraction for e in rows]
        assert fr == sorted(fr, reverse=True)


def test_replay_meets_requirement(fixture_trace, fixture_table):
    for e in fixture_table.entries:
        sub = fixture_trace.at_level(e.loss_level)
        correct = [f if arbitrate(c, e.requirement, fixture_table, e.loss_level).frontend else b
                   for c, f, b in zip(sub.front_confidence, sub.front_correct, sub.back_correct)]
        assert np.mean(correct) >= e.requirement
