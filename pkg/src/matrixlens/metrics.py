"""Detection evaluation: greedy confidence-ranked matching, precision/recall/
F1, average precision by exact area under the monotone PR envelope, and mAP
over classes and IoU thresholds.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

from .detect import Detection, iou


@dataclass(frozen=True)
class MatchCounts:
    tp: int
    fp: int
    fn: int

    def __post_init__(self) -> None:
        if min(self.tp, self.fp, self.fn) < 0:
            raise ValueError("negative match count")


class MatchFlag(NamedTuple):
    """One prediction's fate, in confidence-descending match order."""

    confidence: float
    is_tp: bool


class PRPoint(NamedTuple):
    confidence: float
    precision: float
    recall: float


def match(preds: Sequence[Detection], truths: Sequence, iou_thresh: float = 0.5,
          ) -> tuple[MatchCounts, list[MatchFlag]]:
    """Greedy one-to-one matching of predictions to ground-truth boxes.

    Predictions are visited in confidence-descending order (ties keep input
    order); each takes the unmatched truth with the highest IoU at or above
    the threshold. Every truth matches at most once.
    """
    order = sorted(range(len(preds)), key=lambda i: -preds[i].confidence)
    taken = [False] * len(truths)
    flags: list[MatchFlag] = []
    tp = 0
    for i in order:
        pred = preds[i]
        best_j = -1
        best_iou = 0.0
        for j, truth in enumerate(truths):
            if taken[j]:
                continue
            v = iou(pred, truth)
            if v >= iou_thresh and v > best_iou:
                best_iou = v
                best_j = j
        if best_j >= 0:
            taken[best_j] = True
            tp += 1
            flags.append(MatchFlag(pred.confidence, True))
        else:
            flags.append(MatchFlag(pred.confidence, False))
    counts = MatchCounts(tp=tp, fp=len(preds) - tp, fn=len(truths) - tp)
    return counts, flags


def precision(c: MatchCounts) -> float:
    """TP / (TP + FP); 1 when there are no predictions at all."""
    return c.tp / (c.tp + c.fp) if (c.tp + c.fp) > 0 else 1.0


def recall(c: MatchCounts) -> float:
    """TP / (TP + FN); 1 when there is nothing to find."""
    return c.tp / (c.tp + c.fn) if (c.tp + c.fn) > 0 else 1.0


def f1(p: float, r: float) -> float:
    """Harmonic mean of precision and recall; 0 at p = r = 0."""
    return 2.0 * p * r / (p + r) if (p + r) > 0 else 0.0


def pr_curve(flags: Iterable[MatchFlag], truth_count: int) -> list[PRPoint]:
    """PR point per distinct confidence threshold, swept from high to low."""
    if truth_count < 1:
        raise ValueError("average precision is undefined with zero truths")
    ordered = sorted(flags, key=lambda f: -f.confidence)
    points: list[PRPoint] = []
    tp = fp = 0
    i = 0
    while i < len(ordered):
        conf = ordered[i].confidence
        while i < len(ordered) and ordered[i].confidence == conf:
            if ordered[i].is_tp:
                tp += 1
            else:
                fp += 1
            i += 1
        points.append(PRPoint(conf, tp / (tp + fp), tp / truth_count))
    return points


def average_precision(flags: Iterable[MatchFlag], truth_count: int,
                      interpolation: str = "all-points") -> float:
    """Exact area under the monotone precision-recall envelope.

    "all-points" integrates the step envelope over every recall value;
    "11-point" averages the envelope at recalls 0.0, 0.1, .., 1.0.
    """
    points = pr_curve(flags, truth_count)
    if not points:
        return 0.0

    # Monotone envelope: precision non-increasing as recall grows.
    env: list[tuple[float, float]] = []  # (recall, envelope precision)
    best = 0.0
    for pt in reversed(points):
        best = max(best, pt.precision)
        env.append((pt.recall, best))
    env.reverse()

    if interpolation == "11-point":
        total = 0.0
        for k in range(11):
            r = k / 10.0
            total += max((p for rec, p in env if rec >= r - 1e-12), default=0.0)
        return total / 11.0
    if interpolation != "all-points":
        raise ValueError(f"unknown interpolation {interpolation!r}")

    area = 0.0
    prev_recall = 0.0
    for rec, p in env:
        if rec > prev_recall:
            area += (rec - prev_recall) * p
            prev_recall = rec
    return area


def mean_ap(class_aps: dict[int, float] | Sequence[float]) -> float:
    """Unweighted mean over per-class APs."""
    values = list(class_aps.values()) if isinstance(class_aps, dict) else list(class_aps)
    if not values:
        raise ValueError("mean AP needs at least one class AP")
    return sum(values) / len(values)


def evaluate_detections(
    preds_by_image: dict,
    truths_by_image: dict,
    iou_thresholds: Sequence[float] = (0.5,),
    interpolation: str = "all-points",
) -> dict:
    """Dataset-level evaluation report.

    `preds_by_image` maps image key -> list[Detection]; `truths_by_image`
    maps the same keys -> list of class-tagged truth boxes (class_id, cx,
    cy, w, h). Classes without any truth are skipped. AP pools match flags
    across images per class; mAP averages over classes, then thresholds.
    """
    truth_classes = sorted({b[0] for boxes in truths_by_image.values() for b in boxes})
    report: dict = {
        "iou_thresholds": list(iou_thresholds),
        "interpolation": interpolation,
        "per_class": {},
        "map": {},
    }
    per_class: dict[int, dict] = {
        cls: {"ap": {}, "truths": 0, "predictions": 0} for cls in truth_classes
    }

    for thresh in iou_thresholds:
        class_aps: dict[int, float] = {}
        for cls in truth_classes:
            flags: list[MatchFlag] = []
            tp = fp = fn = 0
            truth_total = 0
            pred_total = 0
            for key, truths in truths_by_image.items():
                cls_truths = [b for b in truths if b[0] == cls]
                cls_preds = [d for d in preds_by_image.get(key, []) if d.class_id == cls]
                truth_total += len(cls_truths)
                pred_total += len(cls_preds)
                counts, img_flags = match(cls_preds, cls_truths, iou_thresh=thresh)
                flags.extend(img_flags)
                tp += counts.tp
                fp += counts.fp
                fn += counts.fn
            ap = average_precision(flags, truth_total, interpolation)
            class_aps[cls] = ap
            entry = per_class[cls]
            entry["ap"][str(thresh)] = ap
            entry["truths"] = truth_total
            entry["predictions"] = pred_total
            counts_all = MatchCounts(tp, fp, fn)
            entry.setdefault("counts", {})[str(thresh)] = {
                "tp": tp, "fp": fp, "fn": fn,
                "precision": precision(counts_all),
                "recall": recall(counts_all),
                "f1": f1(precision(counts_all), recall(counts_all)),
            }
        report["map"][str(thresh)] = mean_ap(class_aps)

    report["per_class"] = {str(cls): entry for cls, entry in per_class.items()}
    report["map_mean"] = sum(report["map"].values()) / len(report["map"])
    return report


def write_report(report: dict, path: str | Path) -> None:
    Path(path).write_text(json.dumps(report, indent=2))


def write_pr_csv(flags_by_class: dict[int, list[MatchFlag]],
                 truths_by_class: dict[int, int], path: str | Path) -> None:
    """Optional CSV of PR points per class."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["class_id", "confidence", "precision", "recall"])
        for cls in sorted(flags_by_class):
            for pt in pr_curve(flags_by_class[cls], truths_by_class[cls]):
                writer.writerow([cls, f"{pt.confidence:.6f}",
                                 f"{pt.precision:.6f}", f"{pt.recall:.6f}"])
