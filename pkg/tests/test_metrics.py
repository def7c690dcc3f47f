import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wavedet.boxloss import BBox
from wavedet.checks import max_matching, protocol_replay
from wavedet.metrics import (
    ConfusionCounts,
    DetectionRecord,
    RecordFormatError,
    average_precision,
    best_f1_conf,
    counts_at,
    evaluate,
    f1_curve,
    map_suite,
    match_greedy,
    pr_curve,
    precision_recall_f1,
    read_records,
    subsample_frames,
)

# prediction spans x in [4, 10] inside the GT's [0, 10]: overlap 60, union 100
GT = DetectionRecord("a", BBox(5, 5, 10, 10))
PRED = DetectionRecord("a", BBox(7, 5, 6, 10), score=0.9)


def test_fixture_iou_is_point_six():
    from wavedet.boxloss import iou

    assert iou(PRED.box, GT.box) == 0.6


def test_match_examples():
    c = match_greedy([PRED], [GT], 0.5).counts
    assert (c.tp, c.fp, c.fn) == (1, 0, 0)
    c = match_greedy([PRED], [GT], 0.75).counts
    assert (c.tp, c.fp, c.fn) == (0, 1, 1)
    c = match_greedy([], [GT, GT], 0.5).counts
    assert (c.tp, c.fp, c.fn) == (0, 0, 2)


def test_match_ignores_other_images():
    other = DetectionRecord("b", PRED.box, score=0.9)
    assert match_greedy([other], [GT], 0.5).counts.tp == 0


def test_higher_score_claims_first():
    weak = DetectionRecord("a", GT.box, score=0.1)
    result = match_greedy([weak, PRED], [GT], 0.5)
    assert result.matches[0] == (1, 0, pytest.approx(0.6))
    assert result.matches[1][1] is None


def test_best_iou_then_lowest_index():
    twin = [GT, GT]
    assert match_greedy([PRED], twin, 0.5).matches[0][1] == 0
    closer = DetectionRecord("a", BBox(7, 5, 6, 10))
    assert match_greedy([PRED], [GT, closer], 0.5).matches[0][1] == 1


def test_prf_examples():
    assert precision_recall_f1(ConfusionCounts(1, 0, 0)) == (1, 1, 1)
    assert precision_recall_f1(ConfusionCounts(0, 0, 0)) == (0, 0, 0)
    p, r, f = precision_recall_f1(ConfusionCounts(3, 1, 2))
    assert (p, r) == (0.75, 0.6) and f == pytest.approx(2 / 3, abs=1e-15)


def test_ap_examples():
    gts = [DetectionRecord("a", BBox(i * 20, 0, 4, 4)) for i in range(3)]
    preds = [DetectionRecord("a", g.box, score=0.5 + 0.1 * i) for i, g in enumerate(gts)]
    assert average_precision(preds, gts, 0.5) == 1.0
    assert average_precision([], [], 0.5) == 0.0
    assert average_precision([PRED], [GT], 0.6) == 1.0


def test_ap_hand_curve():
    # TP, FP, TP over two GTs: precision envelope 1 up to recall 0.5, then 2/3
    gts = [DetectionRecord("a", BBox(0, 0, 2, 2)), DetectionRecord("a", BBox(10, 0, 2, 2))]
    preds = [
        DetectionRecord("a", BBox(0, 0, 2, 2), score=0.9),
        DetectionRecord("a", BBox(50, 0, 2, 2), score=0.8),
        DetectionRecord("a", BBox(10, 0, 2, 2), score=0.7),
    ]
    assert average_precision(preds, gts, 0.5) == pytest.approx((51 + 50 * 2 / 3) / 101, abs=1e-12)


def test_map_fixture_and_extremes():
    assert map_suite([PRED], [GT]) == (1.0, 0.0, 0.3)
    perfect = DetectionRecord("a", GT.box, score=0.5)
    assert map_suite([perfect], [GT]) == (1.0, 1.0, 1.0)
    assert map_suite([], [GT]) == (0.0, 0.0, 0.0)


def test_map_averages_over_present_categories():
    gts = [GT, DetectionRecord("a", BBox(40, 40, 4, 4), category=1)]
    preds = [DetectionRecord("a", GT.box, score=0.8), DetectionRecord("a", BBox(90, 90, 3, 3), category=7, score=0.9)]
    m50, _, _ = map_suite(preds, gts)
    assert m50 == 0.5


def test_f1_cutoff_above_scores():
    rows = f1_curve([PRED], [GT])
    assert rows[-1][0] == 1.0 and rows[-1][3] == 0.0
    assert rows[0] == (0.0, 1.0, 1.0, 1.0)
    assert best_f1_conf(rows) == 0.0


def test_pr_curve_pooled():
    rows = pr_curve([PRED, DetectionRecord("a", BBox(80, 80, 2, 2), score=0.4)], [GT])
    assert rows == [(1.0, 1.0), (1.0, 0.5)]


def test_evaluate_summary():
    s = evaluate([PRED], [GT])
    assert s["mAP50_95"] == 0.3 and s["f1"] == 1.0 and s["per_category"]["0"]["AP75"] == 0.0
    fixed = evaluate([PRED], [GT], conf=0.95)
    assert fixed["recall"] == 0.0 and fixed["confidence_mode"] == "fixed"
    empty = evaluate([], [GT])
    assert all(empty[k] == 0 for k in ("precision", "recall", "f1", "mAP50", "mAP75", "mAP50_95"))


def test_greedy_can_fall_short_of_maximum():
    # 1-D shift d between 10-wide boxes gives IoU (10 - d) / (10 + d), >= 0.8 iff d <= 10/9.
    # pred 1 (higher score) prefers A but could take B; pred 2 only fits A
    a, b = BBox(0, 0, 10, 10), BBox(1.2, 0, 10, 10)
    gts = [DetectionRecord("x", a), DetectionRecord("x", b)]
    preds = [DetectionRecord("x", BBox(0.3, 0, 10, 10), score=0.9), DetectionRecord("x", BBox(-0.8, 0, 10, 10), score=0.8)]
    from wavedet.boxloss import iou

    q = [[iou(p.box, g.box) >= 0.8 for g in gts] for p in preds]
    assert q == [[True, True], [True, False]]
    assert match_greedy(preds, gts, 0.8).counts.tp == 1
    assert max_matching(q) == 2


def _instance(seed, n_pred, n_gt):
    r = np.random.default_rng(seed)
    gts = [DetectionRecord("i", BBox(*r.uniform(0, 6, 2), *r.uniform(1, 4, 2))) for _ in range(n_gt)]
    preds = [DetectionRecord("i", BBox(*r.uniform(0, 6, 2), *r.uniform(1, 4, 2)),
                             score=float(r.choice([0.3, 0.6, r.uniform()]))) for _ in range(n_pred)]
    return preds, gts


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(0, 6), st.integers(0, 4), st.sampled_from([0.3, 0.5, 0.75]))
def test_greedy_equals_replay_and_is_bounded(seed, n_pred, n_gt, thr):
    preds, gts = _instance(seed, n_pred, n_gt)
    c = match_greedy(preds, gts, thr).counts
    assert (c.tp, c.fp, c.fn) == protocol_replay(preds, gts, thr)
    from wavedet.boxloss import iou

    q = [[iou(p.box, g.box) >= thr for g in gts] for p in preds]
    assert c.tp <= (max_matching(q) if preds and gts else 0)


def test_max_matching_oracle_both_orientations():
    assert max_matching([[True, False, False, True]]) == 1
    assert max_matching([[True], [True], [False]]) == 1
    assert max_matching([[True, True], [True, False]]) == 2


def test_ap_invariant_to_tie_order():
    gts = [DetectionRecord("a", BBox(i * 20, 0, 4, 4)) for i in range(3)]
    preds = [DetectionRecord("a", gts[0].box, score=0.7), DetectionRecord("a", gts[1].box, score=0.7),
             DetectionRecord("a", BBox(200, 0, 4, 4), score=0.7), DetectionRecord("a", gts[2].box, score=0.4)]
    values = {average_precision(list(perm), gts, 0.5) for perm in itertools.permutations(preds)}
    assert len(values) == 1


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(0, 6), st.integers(1, 4))
def test_map_ordering_and_recall_monotone(seed, n_pred, n_gt):
    preds, gts = _instance(seed, n_pred, n_gt)
    m50, m75, m5095 = map_suite(preds, gts)
    assert m75 <= m50 and m5095 <= m50
    recalls = [r for _, _, r, _ in f1_curve(preds, gts)]
    assert all(a >= b for a, b in zip(recalls, recalls[1:]))


def test_counts_at_filters_scores():
    c = counts_at([PRED], [GT], conf=0.95)
    assert (c.tp, c.fp, c.fn) == (0, 0, 1)


def test_subsample_examples():
    frames = list(range(10))
    picked = subsample_frames(frames, seed=3)
    assert len(picked) == 2 and picked[0] < 5 <= picked[1]
    assert len(subsample_frames([1, 2, 3], seed=0)) == 1
    assert subsample_frames(frames, 7) == subsample_frames(frames, 7)
    assert subsample_frames([], 0) == []
    with pytest.raises(ValueError):
        subsample_frames(frames, 0, window=0)


def test_read_records(tmp_path):
    good = tmp_path / "p.jsonl"
    good.write_text(json.dumps({"image_id": 1, "bbox": [1, 1, 2, 2], "score": 0.5, "category": 2}) + "\n\n")
    (rec,) = read_records(good, prediction=True)
    assert rec.image_id == "1" and rec.category == 2 and rec.box == BBox(1, 1, 2, 2)
    bad = tmp_path / "bad.jsonl"
    bad.write_text(json.dumps({"image_id": 1, "bbox": [1, 1, 2, 2]}) + "\n{oops\n")
    with pytest.raises(RecordFormatError, match=":2:"):
        read_records(bad, prediction=False)
    with pytest.raises(RecordFormatError, match=":1:"):
        read_records(bad, prediction=True)
