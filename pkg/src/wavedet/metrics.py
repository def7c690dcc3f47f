"""Detection evaluation: greedy matching, P/R/F1, COCO-style 101-point AP,
mAP50 / mAP75 / mAP50:95, F1-confidence and PR tables, frame subsampling."""
from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .boxloss import BBox, iou

IOU_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))
RECALL_POINTS = np.linspace(0.0, 1.0, 101)
CONF_CUTOFFS = tuple(round(0.01 * i, 2) for i in range(101))


@dataclass(frozen=True)
class DetectionRecord:
    image_id: str
    box: BBox
    category: int = 0
    score: Optional[float] = None

    @property
    def is_prediction(self) -> bool:
        return self.score is not None


@dataclass
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)


@dataclass
class MatchResult:
    counts: ConfusionCounts
    # (pred index, gt index or None, iou) in processing order
    matches: List[Tuple[int, Optional[int], float]] = field(default_factory=list)


def score_order(preds: Sequence[DetectionRecord]) -> List[int]:
    """Indices by descending score; equal scores keep input order."""
    return sorted(range(len(preds)), key=lambda i: -preds[i].score)


def match_greedy(preds: Sequence[DetectionRecord], gts: Sequence[DetectionRecord], iou_thresh: float) -> MatchResult:
    """One-to-one score-ordered matching within each image.

    Each prediction takes the unmatched ground truth of its image with the
    highest IoU at or above ``iou_thresh``; ties go to the lower GT index.
    Categories are not inspected: filter to a single category first.
    """
    by_image: Dict[str, List[int]] = defaultdict(list)
    for j, g in enumerate(gts):
        by_image[g.image_id].append(j)
    taken = set()
    matches = []
    tp = 0
    for i in score_order(preds):
        best, best_iou = None, -1.0
        for j in by_image.get(preds[i].image_id, ()):
            if j in taken:
                continue
            v = iou(preds[i].box, gts[j].box)
            if v >= iou_thresh and v > best_iou:
                best, best_iou = j, v
        if best is not None:
            taken.add(best)
            tp += 1
        matches.append((i, best, max(best_iou, 0.0)))
    return MatchResult(ConfusionCounts(tp, len(preds) - tp, len(gts) - tp), matches)


def precision_recall_f1(c: ConfusionCounts) -> Tuple[float, float, float]:
    p = c.tp / (c.tp + c.fp) if c.tp + c.fp else 0.0
    r = c.tp / (c.tp + c.fn) if c.tp + c.fn else 0.0
    f1 = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f1


def pr_points(preds, gts, iou_thresh: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Cumulative (recall, precision, score) at each distinct score, high to low."""
    result = match_greedy(preds, gts, iou_thresh)
    hits = np.array([m[1] is not None for m in result.matches], dtype=float)
    scores = np.array([preds[m[0]].score for m in result.matches], dtype=float)
    tp = np.cumsum(hits)
    fp = np.cumsum(1.0 - hits)
    # equal scores form one operating point: keep only the end of each tie run
    if len(scores):
        last = np.append(scores[1:] != scores[:-1], True)
        tp, fp, scores = tp[last], fp[last], scores[last]
    n_gt = len(gts)
    recall = tp / n_gt if n_gt else np.zeros_like(tp)
    precision = tp / np.maximum(tp + fp, 1.0)
    return recall, precision, scores


def interpolated_ap(recall: np.ndarray, precision: np.ndarray) -> float:
    """101-point interpolated AP from a cumulative PR sweep."""
    if len(recall) == 0:
        return 0.0
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    idx = np.searchsorted(recall, RECALL_POINTS, side="left")
    sampled = np.where(idx < len(recall), envelope[np.minimum(idx, len(recall) - 1)], 0.0)
    return float(sampled.mean())


def average_precision(preds, gts, iou_thresh: float) -> float:
    if not gts:
        return 0.0
    recall, precision, _ = pr_points(preds, gts, iou_thresh)
    return interpolated_ap(recall, precision)


def split_by_category(records: Iterable[DetectionRecord]) -> Dict[int, List[DetectionRecord]]:
    out: Dict[int, List[DetectionRecord]] = defaultdict(list)
    for r in records:
        out[r.category].append(r)
    return out


def per_category_ap(preds, gts, thresholds=IOU_THRESHOLDS) -> Dict[int, List[float]]:
    pred_cat = split_by_category(preds)
    gt_cat = split_by_category(gts)
    return {
        cat: [average_precision(pred_cat.get(cat, []), gt_cat[cat], t) for t in thresholds]
        for cat in sorted(gt_cat)
    }


def map_suite(preds, gts) -> Tuple[float, float, float]:
    """``(mAP50, mAP75, mAP50:95)`` averaged over categories present in ``gts``."""
    table = per_category_ap(preds, gts)
    if not table:
        return 0.0, 0.0, 0.0
    aps = np.array(list(table.values()))
    i50, i75 = IOU_THRESHOLDS.index(0.5), IOU_THRESHOLDS.index(0.75)
    return float(aps[:, i50].mean()), float(aps[:, i75].mean()), float(aps.mean(axis=1).mean())


def counts_at(preds, gts, conf: float, iou_thresh: float = 0.5) -> ConfusionCounts:
    """Confusion counts summed over categories, keeping predictions with score >= conf."""
    pred_cat = split_by_category(p for p in preds if p.score >= conf)
    gt_cat = split_by_category(gts)
    total = ConfusionCounts()
    for cat in sorted(set(pred_cat) | set(gt_cat)):
        total = total + match_greedy(pred_cat.get(cat, []), gt_cat.get(cat, []), iou_thresh).counts
    return total


def f1_curve(preds, gts, cutoffs=CONF_CUTOFFS, iou_thresh: float = 0.5) -> List[Tuple[float, float, float, float]]:
    """Rows of ``(confidence, precision, recall, f1)``."""
    rows = []
    for conf in cutoffs:
        p, r, f1 = precision_recall_f1(counts_at(preds, gts, conf, iou_thresh))
        rows.append((conf, p, r, f1))
    return rows


def pr_curve(preds, gts, iou_thresh: float = 0.5) -> List[Tuple[float, float]]:
    """Pooled PR sweep: every category matched separately, then merged by score."""
    pred_cat = split_by_category(preds)
    gt_cat = split_by_category(gts)
    events = []
    for cat in sorted(set(pred_cat) | set(gt_cat)):
        cp = pred_cat.get(cat, [])
        res = match_greedy(cp, gt_cat.get(cat, []), iou_thresh)
        for rank, (i, j, _) in enumerate(res.matches):
            events.append((-cp[i].score, cat, rank, j is not None))
    events.sort()
    n_gt = len(gts)
    rows = []
    tp = fp = 0
    for _, _, _, hit in events:
        tp += hit
        fp += not hit
        rows.append((tp / n_gt if n_gt else 0.0, tp / (tp + fp)))
    return rows


def best_f1_conf(rows) -> float:
    """Cutoff with the highest F1 (lowest cutoff on ties)."""
    return max(rows, key=lambda r: (r[3], -r[0]))[0]


def evaluate(preds, gts, conf="best-f1") -> dict:
    """Summary dict written to ``metrics.json``."""
    m50, m75, m5095 = map_suite(preds, gts)
    rows = f1_curve(preds, gts)
    cutoff = best_f1_conf(rows) if conf == "best-f1" else float(conf)
    p, r, f1 = precision_recall_f1(counts_at(preds, gts, cutoff))
    table = per_category_ap(preds, gts)
    return {
        "precision": p,
        "recall": r,
        "f1": f1,
        "confidence": cutoff,
        "confidence_mode": "best-f1" if conf == "best-f1" else "fixed",
        "mAP50": m50,
        "mAP75": m75,
        "mAP50_95": m5095,
        "per_category": {
            str(cat): {"AP50": aps[0], "AP75": aps[5], "AP50_95": float(np.mean(aps))}
            for cat, aps in table.items()
        },
        "num_predictions": len(preds),
        "num_ground_truth": len(gts),
    }


# ---------------------------------------------------------------------------
# Temporal subsampling
# ---------------------------------------------------------------------------


def subsample_frames(frame_ids: Sequence, seed, window: int = 5) -> list:
    """Keep one uniformly chosen frame from each run of ``window`` consecutive ids."""
    if window < 1:
        raise ValueError("window must be positive")
    rng = np.random.default_rng(seed)
    out = []
    for start in range(0, len(frame_ids), window):
        chunk = frame_ids[start : start + window]
        out.append(chunk[int(rng.integers(len(chunk)))])
    return out


# ---------------------------------------------------------------------------
# JSONL records
# ---------------------------------------------------------------------------


class RecordFormatError(ValueError):
    pass


def parse_record(obj: dict, prediction: bool) -> DetectionRecord:
    box = BBox.of(obj["bbox"])
    score = None
    if prediction:
        score = float(obj["score"])
        if not 0.0 <= score <= 1.0:
            raise ValueError(f"score {score} outside [0, 1]")
    return DetectionRecord(str(obj["image_id"]), box, int(obj.get("category", 0)), score)


def read_records(path, prediction: bool) -> List[DetectionRecord]:
    records = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                records.append(parse_record(json.loads(line), prediction))
            except (ValueError, KeyError, TypeError) as exc:
                raise RecordFormatError(f"{path}:{lineno}: malformed record ({exc})") from exc
    return records
