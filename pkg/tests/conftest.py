"""Shared fixtures: synthetic frames, the 12-frame rider interaction, and
toy training sets that are separable under the synthetic backbone."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pytest

from rider_scope.classifier import ScriptedClassifier
from rider_scope.geometry import BoundingBox
from rider_scope.imaging import Frame
from rider_scope.labels import NON_RIDER, RIDER
from rider_scope.metrics import TruthObject
from rider_scope.trainer import TrainingSet


def make_frame(frame_id: str, width: int = 320, height: int = 240, fill: int = 40,
               boxes: list[tuple[BoundingBox, tuple[int, int, int]]] | None = None) -> Frame:
    """A flat frame with optional solid rectangles painted on it."""
    pixels = np.full((height, width, 3), fill, dtype=np.uint8)
    for box, color in boxes or []:
        x0, y0 = int(box.x), int(box.y)
        x1, y1 = int(box.right), int(box.bottom)
        pixels[y0:y1, x0:x1] = color
    return Frame(pixels=pixels, frame_id=frame_id)


def make_toy_set(n: int, seed: int = 42) -> TrainingSet:
    """Two color-separated classes; linearly separable under the synthetic backbone."""
    rng = np.random.default_rng(seed)
    crops, labels = [], []
    for i in range(n):
        y = i % 2
        base = 0.4 if y else -0.4
        crops.append(np.clip(base + 0.15 * rng.standard_normal((160, 160, 3)), -1.0, 1.0))
        labels.append(y)
    return TrainingSet(crops=np.stack(crops), labels=np.array(labels))


@dataclass
class RiderFixture:
    """12-frame interaction with replay detections, scripted scores, and truth.

    Hand-computed expectations: 4 ground-truth riders -> 3 classified rider,
    0 misclassified, 1 undetected (recall 0.75); 4 green and 4 yellow boxes
    across the rendered frames.
    """

    frames: list[Frame] = field(default_factory=list)
    replay_lines: list[dict] = field(default_factory=list)
    scripted_scores: dict[str, float] = field(default_factory=dict)
    ground_truth: dict[str, list[TruthObject]] = field(default_factory=dict)
    expected_riders_total: int = 4
    expected_true_positive: int = 3
    expected_misclassified: int = 0
    expected_undetected: int = 1
    expected_green_boxes: int = 4
    expected_yellow_boxes: int = 4

    def write_replay(self, path: Path) -> Path:
        with path.open("w", encoding="utf-8") as fh:
            for line in self.replay_lines:
                fh.write(json.dumps(line) + "\n")
        return path

    def write_ground_truth(self, path: Path) -> Path:
        with path.open("w", encoding="utf-8") as fh:
            for frame_id, objects in self.ground_truth.items():
                doc = {
                    "frame_id": frame_id,
                    "objects": [{"box": o.box.as_list(), "label": o.label} for o in objects],
                }
                fh.write(json.dumps(doc) + "\n")
        return path

    def classifier(self, threshold: float = 0.5) -> ScriptedClassifier:
        return ScriptedClassifier(self.scripted_scores, threshold=threshold)


def _fixture_entry(fixture: RiderFixture, frame_id: str, detections: list[tuple[BoundingBox, float, float]],
                   truths: list[tuple[BoundingBox, str]]) -> None:
    fixture.frames.append(make_frame(frame_id))
    fixture.replay_lines.append({
        "frame_id": frame_id,
        "detections": [{"box": box.as_list(), "confidence": conf} for box, conf, _ in detections],
    })
    for box, conf, score in detections:
        fixture.scripted_scores[ScriptedClassifier.key_for(frame_id, box)] = score
    fixture.ground_truth[frame_id] = [TruthObject(box=box, label=label) for box, label in truths]


@pytest.fixture
def rider_fixture() -> RiderFixture:
    fx = RiderFixture()
    # Three riders detected and classified correctly.
    _fixture_entry(fx, "fix-00", [(BoundingBox(50, 60, 40, 80), 0.95, 0.90)],
                   [(BoundingBox(50, 60, 40, 80), RIDER)])
    _fixture_entry(fx, "fix-01", [(BoundingBox(102, 52, 40, 90), 0.90, 0.80)],
                   [(BoundingBox(100, 50, 40, 90), RIDER)])
    _fixture_entry(fx, "fix-02", [(BoundingBox(30, 40, 50, 100), 0.85, 0.95)],
                   [(BoundingBox(30, 40, 50, 100), RIDER)])
    # One rider the detector never finds.
    _fixture_entry(fx, "fix-03", [], [(BoundingBox(200, 100, 40, 80), RIDER)])
    # Pedestrians classified correctly (yellow boxes).
    for i, x in enumerate((20, 60, 120, 180)):
        _fixture_entry(fx, f"fix-{4 + i:02d}", [(BoundingBox(x, 70, 35, 90), 0.8, 0.10)],
                       [(BoundingBox(x, 70, 35, 90), NON_RIDER)])
    # A pedestrian the classifier gets wrong: predicted rider (green, a false positive).
    _fixture_entry(fx, "fix-08", [(BoundingBox(140, 60, 40, 95), 0.75, 0.70)],
                   [(BoundingBox(140, 60, 40, 95), NON_RIDER)])
    # Empty frames.
    for i in (9, 10, 11):
        _fixture_entry(fx, f"fix-{i:02d}", [], [])
    return fx
