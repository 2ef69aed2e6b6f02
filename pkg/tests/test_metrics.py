import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rider_scope.errors import EvaluationError
from rider_scope.geometry import BoundingBox, iou
from rider_scope.labels import NON_RIDER, RIDER
from rider_scope.metrics import (
    ConfusionCounts,
    DetectedObject,
    PipelineReport,
    TruthObject,
    confusion,
    evaluate_detections,
    format_report,
    match_detections,
    pipeline_report,
    precision_recall_f1,
    read_ground_truth,
    read_predictions,
    roc_auc,
    roc_curve,
    write_predictions,
)


def pair_counting_auc(scores, labels) -> float:
    """Oracle: P(random positive outranks random negative), ties count 1/2."""
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    total = 0.0
    for p in pos:
        for n in neg:
            if p > n:
                total += 1.0
            elif p == n:
                total += 0.5
    return total / (len(pos) * len(neg))


def optimal_match_count(predictions, truths, threshold) -> int:
    """Oracle: brute-force best one-to-one assignment size at the threshold."""
    eligible = [
        [ti for ti, t in enumerate(truths) if iou(p.box, t.box) >= threshold]
        for p in predictions
    ]

    def best(pi: int, used: frozenset) -> int:
        if pi == len(predictions):
            return 0
        result = best(pi + 1, used)
        for ti in eligible[pi]:
            if ti not in used:
                result = max(result, 1 + best(pi + 1, used | {ti}))
        return result

    return best(0, frozenset())


def scores_with_counts(tp: int, fn: int, fp: int, tn: int):
    """Synthesize (scores, labels) producing exact confusion counts at t=0.5."""
    scores = [0.9] * tp + [0.1] * fn + [0.9] * fp + [0.1] * tn
    labels = [1] * tp + [1] * fn + [0] * fp + [0] * tn
    return scores, labels


class TestConfusion:
    def test_perfect_case(self):
        counts = confusion([0.9, 0.1], [1, 0], 0.5)
        assert (counts.tp, counts.tn, counts.fp, counts.fn) == (1, 1, 0, 0)

    def test_table_one_counts(self):
        scores, labels = scores_with_counts(tp=1137, fn=132, fp=97, tn=1131)
        counts = confusion(scores, labels, 0.5)
        assert (counts.tp, counts.fn, counts.fp, counts.tn) == (1137, 132, 97, 1131)

    def test_boundary_scores_count_positive(self):
        counts = confusion([0.5, 0.5, 0.5], [1, 1, 0], 0.5)
        assert counts.fn == 0
        assert counts.tp == 2
        assert counts.fp == 1

    def test_length_mismatch_rejected(self):
        with pytest.raises(EvaluationError, match="length"):
            confusion([0.5], [1, 0])

    def test_conservation(self):
        rng = np.random.default_rng(11)
        scores = rng.random(137)
        labels = rng.integers(0, 2, 137)
        counts = confusion(scores, labels, 0.3)
        assert counts.total == 137


class TestPrecisionRecallF1:
    def test_table_one_rider_row(self):
        metrics = precision_recall_f1(ConfusionCounts(tp=1137, fp=97, tn=1131, fn=132))
        assert metrics.precision == pytest.approx(0.9214, abs=5e-5)
        assert metrics.recall == pytest.approx(0.8960, abs=5e-5)
        assert metrics.f1 == pytest.approx(0.9085, abs=5e-5)
        assert (round(metrics.precision, 2), round(metrics.recall, 2), round(metrics.f1, 2)) == (0.92, 0.90, 0.91)
        assert metrics.support == 1269

    def test_table_three_rider_row(self):
        metrics = precision_recall_f1(ConfusionCounts(tp=127, fp=6, tn=616, fn=13))
        assert metrics.precision == pytest.approx(0.9549, abs=5e-5)
        assert metrics.recall == pytest.approx(0.9071, abs=5e-5)
        assert metrics.f1 == pytest.approx(0.9304, abs=5e-5)
        assert (round(metrics.precision, 2), round(metrics.recall, 2), round(metrics.f1, 2)) == (0.95, 0.91, 0.93)

    def test_degenerate_zero_convention(self):
        metrics = precision_recall_f1(ConfusionCounts(tp=0, fp=0, tn=5, fn=0))
        assert metrics.precision == 0.0
        assert metrics.recall == 0.0
        assert metrics.f1 == 0.0

    @settings(max_examples=200, deadline=None)
    @given(tp=st.integers(0, 500), fp=st.integers(0, 500), tn=st.integers(0, 500), fn=st.integers(0, 500))
    def test_bounds_and_f1_between(self, tp, fp, tn, fn):
        m = precision_recall_f1(ConfusionCounts(tp=tp, fp=fp, tn=tn, fn=fn))
        assert 0.0 <= m.precision <= 1.0
        assert 0.0 <= m.recall <= 1.0
        assert 0.0 <= m.f1 <= 1.0
        if m.precision > 0 and m.recall > 0:
            assert min(m.precision, m.recall) - 1e-12 <= m.f1 <= max(m.precision, m.recall) + 1e-12


class TestThresholdMonotonicity:
    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_raising_threshold(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 60))
        scores = np.round(rng.random(n), 2)
        labels = rng.integers(0, 2, n)
        thresholds = sorted(rng.random(4))
        previous = None
        for t in thresholds:
            counts = confusion(scores, labels, t)
            if previous is not None:
                assert counts.fp <= previous.fp
                assert counts.fn >= previous.fn
            previous = counts


class TestRocAuc:
    def test_perfect_separation(self):
        assert roc_auc([0.9, 0.1], [1, 0]) == 1.0

    def test_mixed_example(self):
        assert roc_auc([0.9, 0.8, 0.3], [1, 0, 1]) == pytest.approx(0.5, abs=1e-12)

    def test_all_ties(self):
        assert roc_auc([0.7, 0.7, 0.7, 0.7], [1, 0, 1, 0]) == pytest.approx(0.5, abs=1e-12)

    def test_single_class_rejected(self):
        with pytest.raises(EvaluationError, match="positive"):
            roc_auc([0.2, 0.4], [1, 1])

    def test_curve_endpoints_and_monotone(self):
        rng = np.random.default_rng(3)
        scores = rng.random(40)
        labels = rng.integers(0, 2, 40)
        labels[0], labels[1] = 1, 0
        curve = roc_curve(scores, labels)
        assert (curve.points[0].fpr, curve.points[0].tpr) == (0.0, 0.0)
        assert (curve.points[-1].fpr, curve.points[-1].tpr) == (1.0, 1.0)
        for prev, cur in zip(curve.points, curve.points[1:]):
            assert cur.fpr >= prev.fpr
            assert cur.tpr >= prev.tpr
            assert cur.threshold < prev.threshold

    @settings(max_examples=150, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_matches_pair_counting_oracle(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 200))
        # Coarse grid forces plenty of ties.
        scores = np.round(rng.random(n), 1)
        labels = rng.integers(0, 2, n)
        labels[0], labels[1] = 1, 0
        assert roc_auc(scores, labels) == pytest.approx(pair_counting_auc(scores, labels), abs=1e-12)


def jittered(box: BoundingBox, dx: float, dy: float) -> BoundingBox:
    return BoundingBox(box.x + dx, box.y + dy, box.w, box.h)


class TestMatchDetections:
    def test_exact_overlap_matches(self):
        truth = [TruthObject(BoundingBox(10, 10, 20, 40), RIDER)]
        preds = [DetectedObject(BoundingBox(10, 10, 20, 40), RIDER, confidence=0.9)]
        matching = match_detections(preds, truth)
        assert len(matching.pairs) == 1
        assert matching.pairs[0].iou == 1.0

    def test_one_to_one(self):
        truth = [TruthObject(BoundingBox(10, 10, 20, 40), RIDER)]
        preds = [
            DetectedObject(jittered(truth[0].box, 1, 1), RIDER, confidence=0.9),
            DetectedObject(jittered(truth[0].box, 2, 0), RIDER, confidence=0.8),
        ]
        matching = match_detections(preds, truth)
        assert len(matching.pairs) == 1
        assert len(matching.unmatched_predictions) == 1

    def test_below_threshold_unmatched(self):
        truth = [TruthObject(BoundingBox(0, 0, 10, 10), RIDER)]
        preds = [DetectedObject(BoundingBox(8, 8, 10, 10), RIDER, confidence=1.0)]
        matching = match_detections(preds, truth, iou_threshold=0.5)
        assert not matching.pairs
        assert matching.unmatched_truths == [0]

    def test_five_by_four_scene_against_oracle(self):
        truths = [
            TruthObject(BoundingBox(0, 0, 20, 40), RIDER),
            TruthObject(BoundingBox(30, 0, 20, 40), NON_RIDER),
            TruthObject(BoundingBox(60, 0, 20, 40), RIDER),
            TruthObject(BoundingBox(0, 60, 20, 40), NON_RIDER),
            TruthObject(BoundingBox(30, 60, 20, 40), RIDER),
        ]
        preds = [
            DetectedObject(jittered(truths[0].box, 2, 1), RIDER, confidence=0.9),
            DetectedObject(jittered(truths[1].box, -1, 2), NON_RIDER, confidence=0.8),
            DetectedObject(jittered(truths[4].box, 0, 3), RIDER, confidence=0.7),
            DetectedObject(BoundingBox(200, 200, 20, 40), RIDER, confidence=0.6),
        ]
        matching = match_detections(preds, truths, 0.5)
        assert len(matching.pairs) == optimal_match_count(preds, truths, 0.5) == 3

    @settings(max_examples=200, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_random_scenes_agree_with_exhaustive_oracle(self, seed):
        rng = np.random.default_rng(seed)
        truths = [
            TruthObject(
                BoundingBox(rng.uniform(0, 80), rng.uniform(0, 80), rng.uniform(8, 30), rng.uniform(8, 30)),
                RIDER if rng.random() < 0.5 else NON_RIDER,
            )
            for _ in range(int(rng.integers(0, 6)))
        ]
        preds = []
        for truth in truths:
            if rng.random() < 0.75:
                preds.append(
                    DetectedObject(
                        jittered(truth.box, rng.uniform(-3, 3), rng.uniform(-3, 3)),
                        RIDER,
                        confidence=float(rng.random()),
                    )
                )
        for _ in range(int(rng.integers(0, 3))):
            preds.append(
                DetectedObject(
                    BoundingBox(rng.uniform(0, 80), rng.uniform(0, 80), rng.uniform(8, 30), rng.uniform(8, 30)),
                    NON_RIDER,
                    confidence=float(rng.random()),
                )
            )
        matching = match_detections(preds, truths, 0.5)
        assert len(matching.pairs) == optimal_match_count(preds, truths, 0.5)


class TestPipelineReport:
    def test_paper_scale_counts(self):
        report = PipelineReport.from_counts(total=171, true_positive=127, misclassified=13, undetected=31)
        assert report.recall == pytest.approx(127 / 171, abs=1e-12)
        assert round(report.recall, 2) == 0.74

    def test_breakdown_must_conserve(self):
        with pytest.raises(EvaluationError, match="breakdown"):
            PipelineReport(riders_total=10, riders_true_positive=5, riders_misclassified=2,
                           riders_undetected=2, recall=0.5)

    def test_no_riders_degenerate(self):
        report = pipeline_report({"f": []}, {"f": [TruthObject(BoundingBox(0, 0, 5, 5), NON_RIDER)]})
        assert report.riders_total == 0
        assert report.recall == 0.0

    def test_missing_ground_truth_rejected(self):
        preds = {"a": [], "b": []}
        with pytest.raises(EvaluationError, match="a, b"):
            pipeline_report(preds, {})

    def test_three_way_bucketing(self):
        rider_box = BoundingBox(10, 10, 20, 40)
        other_box = BoundingBox(100, 10, 20, 40)
        missed_box = BoundingBox(200, 10, 20, 40)
        truth = {
            "f0": [TruthObject(rider_box, RIDER), TruthObject(other_box, RIDER),
                   TruthObject(missed_box, RIDER)],
        }
        preds = {
            "f0": [
                DetectedObject(rider_box, RIDER, score=0.9, confidence=0.9),
                DetectedObject(other_box, NON_RIDER, score=0.2, confidence=0.8),
            ],
        }
        report = pipeline_report(preds, truth)
        assert report.riders_total == 3
        assert report.riders_true_positive == 1
        assert report.riders_misclassified == 1
        assert report.riders_undetected == 1

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_conservation_on_random_inputs(self, seed):
        rng = np.random.default_rng(seed)
        truth = {}
        preds = {}
        for f in range(int(rng.integers(1, 5))):
            frame_id = f"f{f}"
            truth[frame_id] = [
                TruthObject(
                    BoundingBox(rng.uniform(0, 80), rng.uniform(0, 80), rng.uniform(5, 30), rng.uniform(5, 30)),
                    RIDER if rng.random() < 0.6 else NON_RIDER,
                )
                for _ in range(int(rng.integers(0, 5)))
            ]
            preds[frame_id] = [
                DetectedObject(
                    jittered(t.box, rng.uniform(-4, 4), rng.uniform(-4, 4)),
                    RIDER if rng.random() < 0.5 else NON_RIDER,
                    confidence=float(rng.random()),
                )
                for t in truth[frame_id]
                if rng.random() < 0.7
            ]
        report = pipeline_report(preds, truth)
        total_riders = sum(1 for objs in truth.values() for o in objs if o.label == RIDER)
        assert report.riders_total == total_riders
        assert (report.riders_true_positive + report.riders_misclassified
                + report.riders_undetected) == total_riders


class TestEvaluateDetections:
    def test_table_three_reconstruction(self):
        # 762 detected persons: 140 riders (127 classified right), 622 others
        # (616 classified right). Identical boxes make matching exact.
        truth = {}
        preds = {}
        idx = 0

        def add(n, true_label, pred_label, score):
            nonlocal idx
            for _ in range(n):
                frame_id = f"t3-{idx}"
                box = BoundingBox(5, 5, 20, 40)
                truth[frame_id] = [TruthObject(box, true_label)]
                preds[frame_id] = [DetectedObject(box, pred_label, score=score, confidence=1.0)]
                idx += 1

        add(127, RIDER, RIDER, 0.9)
        add(13, RIDER, NON_RIDER, 0.1)
        add(616, NON_RIDER, NON_RIDER, 0.1)
        add(6, NON_RIDER, RIDER, 0.9)
        report = evaluate_detections(preds, truth)
        rider = report.per_class[RIDER]
        other = report.per_class[NON_RIDER]
        assert (round(rider.precision, 2), round(rider.recall, 2), round(rider.f1, 2)) == (0.95, 0.91, 0.93)
        assert (round(other.precision, 2), round(other.recall, 2), round(other.f1, 2)) == (0.98, 0.99, 0.98)
        assert report.accuracy == pytest.approx(0.975, abs=1e-3)
        assert report.matched == 762

    def test_report_json_round_trip(self, tmp_path):
        box = BoundingBox(0, 0, 10, 20)
        truth = {"f": [TruthObject(box, RIDER), TruthObject(BoundingBox(40, 0, 10, 20), NON_RIDER)]}
        preds = {"f": [DetectedObject(box, RIDER, score=0.8, confidence=0.9),
                       DetectedObject(BoundingBox(40, 0, 10, 20), NON_RIDER, score=0.3, confidence=0.8)]}
        report = evaluate_detections(preds, truth)
        doc = report.to_json_dict()
        text = json.dumps(doc)
        parsed = json.loads(text)
        assert parsed["confusion"]["tp"] == 1
        assert parsed["roc"]["auc"] == 1.0
        assert "pipeline" in parsed
        printable = format_report(report)
        assert "rider" in printable and "accuracy" in printable


class TestAnnotationFiles:
    def test_round_trip(self, tmp_path):
        path = tmp_path / "preds.jsonl"
        preds = {
            "f1": [DetectedObject(BoundingBox(1, 2, 3, 4), RIDER, score=0.75, confidence=0.9)],
            "f2": [],
        }
        write_predictions(path, preds)
        loaded = read_predictions(path)
        assert loaded["f1"][0].box == BoundingBox(1, 2, 3, 4)
        assert loaded["f1"][0].score == 0.75
        assert loaded["f2"] == []

    def test_ground_truth_schema(self, tmp_path):
        path = tmp_path / "gt.jsonl"
        path.write_text(json.dumps({"frame_id": "f", "objects": [{"box": [1, 2, 3, 4], "label": "rider"}]}) + "\n")
        loaded = read_ground_truth(path)
        assert loaded["f"][0].label == RIDER

    def test_bad_line_reports_line_number(self, tmp_path):
        path = tmp_path / "gt.jsonl"
        path.write_text('{"frame_id": "f", "objects": []}\n{"nope": 1}\n')
        with pytest.raises(EvaluationError, match=":2"):
            read_ground_truth(path)

    def test_empty_file_rejected(self, tmp_path):
        path = tmp_path / "gt.jsonl"
        path.write_text("")
        with pytest.raises(EvaluationError, match="empty"):
            read_ground_truth(path)

    def test_missing_file_rejected(self, tmp_path):
        with pytest.raises(EvaluationError, match="not found"):
            read_ground_truth(tmp_path / "missing.jsonl")
