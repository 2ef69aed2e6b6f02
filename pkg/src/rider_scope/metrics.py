"""Classifier and pipeline evaluation: confusion counts, P/R/F1, ROC-AUC,
detection matching, and the rider false-negative breakdown.

The rider class is the positive class throughout. Zero-denominator metrics
are defined as 0 so threshold sweeps never raise. Reports store full
precision; table formatting rounds to 2 decimals.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import EvaluationError
from .geometry import BoundingBox, iou
from .labels import NON_RIDER, RIDER

__all__ = [
    "ConfusionCounts",
    "ClassMetrics",
    "RocPoint",
    "RocCurve",
    "DetectedObject",
    "TruthObject",
    "MatchPair",
    "Matching",
    "PipelineReport",
    "EvaluationReport",
    "confusion",
    "precision_recall_f1",
    "roc_curve",
    "roc_auc",
    "match_detections",
    "pipeline_report",
    "evaluate_detections",
    "read_ground_truth",
    "read_predictions",
    "write_predictions",
    "format_report",
]


# --------------------------------------------------------------------------
# Confusion counts and derived per-class metrics


@dataclass(frozen=True)
class ConfusionCounts:
    """Binary confusion counts with rider as the positive class."""

    tp: int
    fp: int
    tn: int
    fn: int

    def __post_init__(self) -> None:
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise EvaluationError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @property
    def accuracy(self) -> float:
        return (self.tp + self.tn) / self.total if self.total else 0.0

    def swapped(self) -> "ConfusionCounts":
        """Counts with the negative class treated as positive."""
        return ConfusionCounts(tp=self.tn, fp=self.fn, tn=self.tp, fn=self.fp)


@dataclass(frozen=True)
class ClassMetrics:
    precision: float
    recall: float
    f1: float
    support: int


def confusion(scores: Sequence[float], labels: Sequence[int], threshold: float = 0.5) -> ConfusionCounts:
    """Count outcomes at a threshold; score >= threshold predicts rider."""
    if len(scores) != len(labels):
        raise EvaluationError(f"scores ({len(scores)}) and labels ({len(labels)}) differ in length")
    if len(scores) == 0:
        raise EvaluationError("cannot compute confusion counts on empty input")
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    pred = s >= threshold
    pos = y == 1
    return ConfusionCounts(
        tp=int(np.sum(pred & pos)),
        fp=int(np.sum(pred & ~pos)),
        tn=int(np.sum(~pred & ~pos)),
        fn=int(np.sum(~pred & pos)),
    )


def precision_recall_f1(counts: ConfusionCounts) -> ClassMetrics:
    """Precision, recall, and their harmonic mean; 0 on zero denominators."""
    predicted_pos = counts.tp + counts.fp
    actual_pos = counts.tp + counts.fn
    precision = counts.tp / predicted_pos if predicted_pos else 0.0
    recall = counts.tp / actual_pos if actual_pos else 0.0
    f1 = 2.0 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return ClassMetrics(precision=precision, recall=recall, f1=f1, support=actual_pos)


# --------------------------------------------------------------------------
# ROC curve and AUC


@dataclass(frozen=True)
class RocPoint:
    threshold: float
    tpr: float
    fpr: float


@dataclass(frozen=True)
class RocCurve:
    points: tuple[RocPoint, ...]
    auc: float


def roc_curve(scores: Sequence[float], labels: Sequence[int]) -> RocCurve:
    """Step ROC curve over unique thresholds, from (0, 0) to (1, 1).

    The trapezoid area equals the probability that a random positive outranks
    a random negative, with ties counted 1/2.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if s.shape != y.shape or s.ndim != 1:
        raise EvaluationError("scores and labels must be equal-length 1-d sequences")
    n_pos = int(np.sum(y == 1))
    n_neg = int(np.sum(y == 0))
    if n_pos == 0 or n_neg == 0:
        raise EvaluationError(
            f"ROC needs at least one positive and one negative (got {n_pos} pos, {n_neg} neg)"
        )

    order = np.argsort(-s, kind="stable")
    s_sorted = s[order]
    y_sorted = y[order]
    # Indices where a run of equal scores ends.
    boundaries = np.nonzero(np.diff(s_sorted))[0]
    ends = np.append(boundaries, len(s_sorted) - 1)

    tp_cum = np.cumsum(y_sorted == 1)
    fp_cum = np.cumsum(y_sorted == 0)

    points = [RocPoint(threshold=float("inf"), tpr=0.0, fpr=0.0)]
    for end in ends:
        points.append(
            RocPoint(
                threshold=float(s_sorted[end]),
                tpr=float(tp_cum[end]) / n_pos,
                fpr=float(fp_cum[end]) / n_neg,
            )
        )

    auc = 0.0
    for prev, cur in zip(points, points[1:]):
        auc += (cur.fpr - prev.fpr) * (cur.tpr + prev.tpr) / 2.0
    return RocCurve(points=tuple(points), auc=auc)


def roc_auc(scores: Sequence[float], labels: Sequence[int]) -> float:
    return roc_curve(scores, labels).auc


# --------------------------------------------------------------------------
# Detection matching and the pipeline-level report


@dataclass(frozen=True)
class DetectedObject:
    """One pipeline output: a detection box with its predicted class."""

    box: BoundingBox
    label: str
    score: float | None = None
    confidence: float = 1.0


@dataclass(frozen=True)
class TruthObject:
    box: BoundingBox
    label: str


@dataclass(frozen=True)
class MatchPair:
    prediction_index: int
    truth_index: int
    iou: float


@dataclass
class Matching:
    pairs: list[MatchPair]
    unmatched_predictions: list[int]
    unmatched_truths: list[int]


def match_detections(
    predictions: Sequence[DetectedObject],
    ground_truth: Sequence[TruthObject],
    iou_threshold: float = 0.5,
) -> Matching:
    """Greedy one-to-one matching on box geometry only.

    Predictions are visited in descending confidence (stable on ties); each
    takes the highest-IoU unmatched truth with IoU >= iou_threshold. Labels do
    not influence the matching, only its later interpretation.
    """
    order = sorted(range(len(predictions)), key=lambda i: -predictions[i].confidence)
    taken = [False] * len(ground_truth)
    pairs: list[MatchPair] = []
    unmatched_predictions: list[int] = []
    for pi in order:
        best_iou = 0.0
        best_ti = -1
        for ti, truth in enumerate(ground_truth):
            if taken[ti]:
                continue
            overlap = iou(predictions[pi].box, truth.box)
            if overlap > best_iou:
                best_iou = overlap
                best_ti = ti
        if best_ti >= 0 and best_iou >= iou_threshold:
            taken[best_ti] = True
            pairs.append(MatchPair(prediction_index=pi, truth_index=best_ti, iou=best_iou))
        else:
            unmatched_predictions.append(pi)
    unmatched_truths = [ti for ti, t in enumerate(taken) if not t]
    pairs.sort(key=lambda p: p.prediction_index)
    unmatched_predictions.sort()
    return Matching(pairs, unmatched_predictions, unmatched_truths)


@dataclass(frozen=True)
class PipelineReport:
    """Three-way breakdown of ground-truth riders across the whole pipeline."""

    riders_total: int
    riders_true_positive: int
    riders_misclassified: int
    riders_undetected: int
    recall: float

    def __post_init__(self) -> None:
        parts = self.riders_true_positive + self.riders_misclassified + self.riders_undetected
        if parts != self.riders_total:
            raise EvaluationError(
                f"rider breakdown {self.riders_true_positive}+{self.riders_misclassified}"
                f"+{self.riders_undetected} != total {self.riders_total}"
            )

    @classmethod
    def from_counts(cls, total: int, true_positive: int, misclassified: int, undetected: int) -> "PipelineReport":
        recall = true_positive / total if total else 0.0
        return cls(total, true_positive, misclassified, undetected, recall)


def pipeline_report(
    predictions: Mapping[str, Sequence[DetectedObject]],
    ground_truth: Mapping[str, Sequence[TruthObject]],
    iou_threshold: float = 0.5,
) -> PipelineReport:
    """Aggregate per-frame matchings into the rider false-negative breakdown.

    Every ground-truth rider ends up in exactly one bucket: true positive
    (matched to a rider-labeled prediction), misclassified (matched to a
    non-rider prediction), or undetected (no match at all).
    """
    missing = sorted(fid for fid in predictions if fid not in ground_truth)
    if missing:
        raise EvaluationError(f"missing ground truth for frames: {', '.join(missing)}")

    total = tp = misclassified = undetected = 0
    for frame_id, truths in ground_truth.items():
        preds = list(predictions.get(frame_id, ()))
        matching = match_detections(preds, truths, iou_threshold)
        matched_by_truth = {pair.truth_index: pair.prediction_index for pair in matching.pairs}
        for ti, truth in enumerate(truths):
            if truth.label != RIDER:
                continue
            total += 1
            pi = matched_by_truth.get(ti)
            if pi is None:
                undetected += 1
            elif preds[pi].label == RIDER:
                tp += 1
            else:
                misclassified += 1
    return PipelineReport.from_counts(total, tp, misclassified, undetected)


# --------------------------------------------------------------------------
# Combined evaluation report


@dataclass
class EvaluationReport:
    """Classifier-level metrics over matched detections plus the pipeline view."""

    confusion: ConfusionCounts
    per_class: dict[str, ClassMetrics]
    accuracy: float
    roc: RocCurve | None
    pipeline: PipelineReport
    matched: int = 0
    unmatched_predictions: int = 0
    unmatched_ground_truth: int = 0
    config: dict = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        doc = {
            "schema_version": 1,
            "confusion": {"tp": self.confusion.tp, "fp": self.confusion.fp,
                          "tn": self.confusion.tn, "fn": self.confusion.fn},
            "per_class": {
                name: {"precision": m.precision, "recall": m.recall, "f1": m.f1, "support": m.support}
                for name, m in self.per_class.items()
            },
            "accuracy": self.accuracy,
            "pipeline": {
                "riders_total": self.pipeline.riders_total,
                "riders_true_positive": self.pipeline.riders_true_positive,
                "riders_misclassified": self.pipeline.riders_misclassified,
                "riders_undetected": self.pipeline.riders_undetected,
                "recall": self.pipeline.recall,
            },
            "matched": self.matched,
            "unmatched_predictions": self.unmatched_predictions,
            "unmatched_ground_truth": self.unmatched_ground_truth,
            "config": self.config,
        }
        if self.roc is not None:
            doc["roc"] = {
                "auc": self.roc.auc,
                "points": [
                    {"threshold": None if np.isinf(p.threshold) else p.threshold,
                     "tpr": p.tpr, "fpr": p.fpr}
                    for p in self.roc.points
                ],
            }
        return doc


def evaluate_detections(
    predictions: Mapping[str, Sequence[DetectedObject]],
    ground_truth: Mapping[str, Sequence[TruthObject]],
    iou_threshold: float = 0.5,
) -> EvaluationReport:
    """Match predictions to ground truth per frame and score the classifier.

    Classifier-level counts consider only matched pairs (persons the detector
    found), mirroring an evaluation of the second stage alone; the pipeline
    report accounts for every ground-truth rider including undetected ones.
    """
    missing = sorted(fid for fid in predictions if fid not in ground_truth)
    if missing:
        raise EvaluationError(f"missing ground truth for frames: {', '.join(missing)}")

    tp = fp = tn = fn = 0
    scores: list[float] = []
    score_labels: list[int] = []
    matched = unmatched_predictions = unmatched_truths = 0
    for frame_id, truths in ground_truth.items():
        preds = list(predictions.get(frame_id, ()))
        matching = match_detections(preds, truths, iou_threshold)
        matched += len(matching.pairs)
        unmatched_predictions += len(matching.unmatched_predictions)
        unmatched_truths += len(matching.unmatched_truths)
        for pair in matching.pairs:
            pred = preds[pair.prediction_index]
            truth = truths[pair.truth_index]
            if truth.label == RIDER:
                if pred.label == RIDER:
                    tp += 1
                else:
                    fn += 1
            else:
                if pred.label == RIDER:
                    fp += 1
                else:
                    tn += 1
            if pred.score is not None:
                scores.append(pred.score)
                score_labels.append(1 if truth.label == RIDER else 0)

    counts = ConfusionCounts(tp=tp, fp=fp, tn=tn, fn=fn)
    roc: RocCurve | None = None
    if scores and len(set(score_labels)) == 2:
        roc = roc_curve(scores, score_labels)
    return EvaluationReport(
        confusion=counts,
        per_class={RIDER: precision_recall_f1(counts), NON_RIDER: precision_recall_f1(counts.swapped())},
        accuracy=counts.accuracy,
        roc=roc,
        pipeline=pipeline_report(predictions, ground_truth, iou_threshold),
        matched=matched,
        unmatched_predictions=unmatched_predictions,
        unmatched_ground_truth=unmatched_truths,
    )


# --------------------------------------------------------------------------
# JSON Lines annotation files


def _parse_objects(doc: dict, with_scores: bool):
    objects = []
    for obj in doc.get("objects", []):
        box = BoundingBox.from_list(obj["box"])
        if with_scores:
            objects.append(
                DetectedObject(
                    box=box,
                    label=obj["label"],
                    score=obj.get("score"),
                    confidence=float(obj.get("confidence", 1.0)),
                )
            )
        else:
            objects.append(TruthObject(box=box, label=obj["label"]))
    return objects


def _read_annotation_file(path: str | Path, with_scores: bool) -> dict[str, list]:
    path = Path(path)
    if not path.exists():
        raise EvaluationError(f"annotation file not found: {path}")
    out: dict[str, list] = {}
    with path.open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                doc = json.loads(line)
                frame_id = doc["frame_id"]
                out[frame_id] = _parse_objects(doc, with_scores)
            except (KeyError, ValueError, TypeError) as exc:
                raise EvaluationError(f"{path}:{line_no}: bad annotation line: {exc}") from exc
    if not out:
        raise EvaluationError(f"annotation file is empty: {path}")
    return out


def read_ground_truth(path: str | Path) -> dict[str, list[TruthObject]]:
    """Read {"frame_id", "objects": [{"box": [x,y,w,h], "label": ...}]} lines."""
    return _read_annotation_file(path, with_scores=False)


def read_predictions(path: str | Path) -> dict[str, list[DetectedObject]]:
    """Read prediction lines: the ground-truth schema plus score/confidence."""
    return _read_annotation_file(path, with_scores=True)


def write_predictions(path: str | Path, predictions: Mapping[str, Sequence[DetectedObject]]) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for frame_id, objects in predictions.items():
            doc = {
                "frame_id": frame_id,
                "objects": [
                    {
                        "box": o.box.as_list(),
                        "label": o.label,
                        "score": o.score,
                        "confidence": o.confidence,
                    }
                    for o in objects
                ],
            }
            fh.write(json.dumps(doc) + "\n")


def format_report(report: EvaluationReport) -> str:
    """Render the report the way the tables print: 2-decimal rounding."""
    lines = ["class        precision  recall  f1      support"]
    for name in (RIDER, NON_RIDER):
        m = report.per_class[name]
        lines.append(f"{name:<12} {m.precision:>9.2f} {m.recall:>7.2f} {m.f1:>7.2f} {m.support:>8d}")
    lines.append(f"accuracy     {report.accuracy:.2f}")
    if report.roc is not None:
        lines.append(f"roc_auc      {report.roc.auc:.4f}")
    p = report.pipeline
    lines.append(
        "pipeline     riders_total={} true_positive={} misclassified={} undetected={} recall={:.2f}".format(
            p.riders_total, p.riders_true_positive, p.riders_misclassified, p.riders_undetected, p.recall
        )
    )
    return "\n".join(lines)
