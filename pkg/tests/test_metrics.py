import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from tiptrack.errors import InvalidArgument, UndefinedMetricError
from tiptrack.imgproc import LabelMap
from tiptrack.metrics import (
    ClassScores,
    TipErrors,
    class_scores,
    emit_report,
    macro_mean,
    seg_scores,
    tip_errors,
)
from tiptrack.pipeline import PipelineStats
from tiptrack.postprocess import TipEstimate

from oracles import confusion


def est(x, y, valid=True):
    if not valid:
        return TipEstimate.degenerate()
    return TipEstimate((x, y), (x, y), (x, y), (x, y))


def label_pairs(max_side=32):
    return st.tuples(st.integers(1, max_side), st.integers(1, max_side), st.sampled_from([2, 3])).flatmap(
        lambda t: st.tuples(
            arrays(np.uint8, t[:2], elements=st.integers(0, t[2] - 1)),
            arrays(np.uint8, t[:2], elements=st.integers(0, t[2] - 1)),
            st.just(t[2]),
        )
    )


# -- segmentation scores ---------------------------------------------------


def test_class_score_examples():
    a = np.zeros((6, 6), bool)
    a[1:3, 1:3] = True
    s = class_scores(a, a)
    assert s.dice == s.iou == 1.0

    b = np.zeros((6, 6), bool)
    b[4:6, 4:6] = True
    s = class_scores(a, b)
    assert s.dice == s.iou == 0.0

    shifted = np.roll(a, 1, axis=1)
    assert (a & shifted).sum() == 2
    s = class_scores(a, shifted)
    assert s.dice == 0.5
    assert s.iou == pytest.approx(2 / 6)
    assert s.precision == s.recall == 0.5


def test_both_empty_is_perfect():
    z = np.zeros((3, 3), bool)
    assert class_scores(z, z) == ClassScores(1.0, 1.0, 1.0, 1.0, 1.0)


def test_seg_scores_shape_mismatch():
    with pytest.raises(InvalidArgument):
        seg_scores(LabelMap(np.zeros((2, 2), np.uint8)), LabelMap(np.zeros((3, 2), np.uint8)))


@settings(max_examples=200, deadline=None)
@given(label_pairs())
def test_seg_scores_match_confusion(pair):
    p, g, n = pair
    got = seg_scores(LabelMap(p, n), LabelMap(g, n), n)
    for c in range(1, n):
        tp, fp, fn = confusion(p, g, c)
        s = got.per_class[c]
        if tp + fp + fn == 0:
            assert s.dice == s.iou == 1.0
            continue
        assert s.dice == 2 * tp / (2 * tp + fp + fn)
        assert s.iou == tp / (tp + fp + fn)
        assert s.precision == (tp / (tp + fp) if tp + fp else 0.0)
        assert s.recall == (tp / (tp + fn) if tp + fn else 0.0)
    assert got.mean.dice == pytest.approx(np.mean([s.dice for s in got.per_class.values()]))


@settings(max_examples=100, deadline=None)
@given(label_pairs())
def test_seg_scores_symmetric(pair):
    p, g, n = pair
    a = seg_scores(LabelMap(p, n), LabelMap(g, n), n)
    b = seg_scores(LabelMap(g, n), LabelMap(p, n), n)
    for c in a.per_class:
        assert a.per_class[c].dice == b.per_class[c].dice
        assert a.per_class[c].iou == b.per_class[c].iou


# -- tip errors ------------------------------------------------------------


def test_tip_error_examples():
    e = tip_errors([est(13, 14)], [(10, 10)], 1.0)
    assert (e.mae_x, e.mae_y, e.mae_xy) == (3.0, 4.0, 5.0)
    e = tip_errors([est(1, 2), est(5, 5)], [(1, 2), (5, 5)])
    assert (e.mae_x, e.mae_y, e.mae_xy) == (0.0, 0.0, 0.0)
    e = tip_errors([est(3, 4), est(0, 0)], [(0, 0), (0, 0)])
    assert e.mae_xy == 2.5


def test_tip_errors_invalid_handling():
    e = tip_errors([est(3, 4), est(0, 0, False)], [(0, 0), (9, 9)])
    assert e.mae_xy == 5.0 and e.n_invalid == 1 and e.n_frames == 2
    with pytest.raises(UndefinedMetricError):
        tip_errors([est(0, 0, False)], [(0, 0)])
    with pytest.raises(InvalidArgument):
        tip_errors([est(0, 0)], [])


coords = st.integers(-500, 500)


@settings(max_examples=300)
@given(st.lists(st.tuples(coords, coords, coords, coords), min_size=1, max_size=30),
       st.floats(0.01, 10))
def test_tip_error_bounds_and_scaling(rows, spacing):
    preds = [est(a, b) for a, b, _, _ in rows]
    gts = [(c, d) for _, _, c, d in rows]
    e1 = tip_errors(preds, gts, 1.0)
    tol = 1e-9 * (1 + e1.mae_xy)
    assert max(e1.mae_x, e1.mae_y) <= e1.mae_xy + tol
    assert e1.mae_xy <= e1.mae_x + e1.mae_y + tol
    es = tip_errors(preds, gts, spacing)
    for k in ("mae_x", "mae_y", "mae_xy"):
        assert getattr(es, k) == pytest.approx(spacing * getattr(e1, k), rel=1e-12, abs=1e-12)


def test_macro_mean():
    m = macro_mean({1: TipErrors(1, 2, 3, 10, 1), 2: TipErrors(3, 4, 5, 10, 0)})
    assert (m.mae_x, m.mae_y, m.mae_xy, m.n_frames, m.n_invalid) == (2, 3, 4, 20, 1)
    with pytest.raises(UndefinedMetricError):
        macro_mean({})


# -- reports ---------------------------------------------------------------


def test_report_csv_row():
    doc = emit_report(TipErrors(3, 4, 5))
    assert doc.startswith("mae_x,mae_y,mae_xy\n3.0000,4.0000,5.0000\n")


def test_report_deterministic_and_json_roundtrip():
    stats = PipelineStats(10, 10, 0, 0.5, {"infer": {"p50": 1.0, "p95": 2.0, "max": 3.0}}, {}, (1, 2, 3))
    a = emit_report(TipErrors(3, 4, 5), stats, "csv", {"seed": 7})
    assert a == emit_report(TipErrors(3, 4, 5), stats, "csv", {"seed": 7})
    j = json.loads(emit_report(TipErrors(3, 4, 5), stats, "json"))
    assert j["scores"] == {"mae_x": 3.0, "mae_y": 4.0, "mae_xy": 5.0, "n_frames": 1, "n_invalid": 0}
    assert j["stats"]["frames_out"] == 10
    assert j["stats"]["latency_ms"]["infer"]["p95"] == 2.0


def test_report_seg_scores():
    m = np.array([[0, 1], [2, 2]], np.uint8)
    s = seg_scores(LabelMap(m, 3), LabelMap(m, 3))
    lines = emit_report(s).splitlines()
    assert lines[0] == "class,dice,iou,precision,recall,f1"
    assert lines[1].startswith("1,1.0000")
    assert lines[3].startswith("mean,1.0000")
    j = json.loads(emit_report(s, fmt="json"))
    assert j["scores"]["per_class"]["2"]["dice"] == 1.0


def test_report_rejects_unknown():
    with pytest.raises(InvalidArgument):
        emit_report(TipErrors(1, 1, 1), fmt="xml")
    with pytest.raises(InvalidArgument):
        emit_report(42)
