"""End-to-end orchestration: frame in, annotated rider predictions out.

Each frame is processed independently (no temporal state): detect persons,
extend every detection box, crop and preprocess, classify all crops of the
frame as one batch, and emit annotations in detection order. Degenerate
extended regions are dropped with a warning instead of failing the frame.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

import numpy as np
from PIL import Image, ImageDraw

from .classifier import RiderPrediction
from .detector import detect_persons
from .errors import GeometryError, RiderScopeError
from .geometry import BoundingBox, extend_region
from .imaging import CropBatch, Frame, extract_crop, preprocess_crop, save_png
from .labels import RIDER
from .metrics import DetectedObject, write_predictions

logger = logging.getLogger(__name__)

__all__ = [
    "Annotation",
    "StageTiming",
    "AnnotatedFrame",
    "SequenceSummary",
    "RenderStyle",
    "process_frame",
    "process_sequence",
    "render_annotations",
    "JsonlPredictionSink",
    "AnnotatedImageSink",
]


@dataclass(frozen=True)
class Annotation:
    """One classified person: detection box, its extension, and the verdict."""

    box: BoundingBox
    extended_box: BoundingBox
    score: float
    label: str
    confidence: float


@dataclass(frozen=True)
class StageTiming:
    detect_ms: float
    extract_ms: float
    classify_ms: float


@dataclass
class AnnotatedFrame:
    frame_id: str
    annotations: list[Annotation]
    timing: StageTiming
    dropped_regions: int = 0


def process_frame(frame: Frame, detector, classifier) -> AnnotatedFrame:
    """Run the full two-stage pipeline on one frame.

    All crops of the frame form a single classifier batch; output order
    matches detection order. A frame with no detections never invokes the
    classifier.
    """
    t0 = time.perf_counter()
    detections = detect_persons(detector, frame)
    t1 = time.perf_counter()

    regions = []
    crops = []
    kept = []
    dropped = 0
    for detection in detections.detections:
        try:
            region = extend_region(detection.box, frame.dims)
        except GeometryError as exc:
            logger.warning("frame %s: dropping detection with degenerate region: %s", frame.frame_id, exc)
            dropped += 1
            continue
        raw = extract_crop(frame, region)
        crops.append(preprocess_crop(raw, region, frame.frame_id))
        regions.append(region)
        kept.append(detection)
    t2 = time.perf_counter()

    predictions: list[RiderPrediction] = []
    if crops:
        try:
            predictions = classifier.predict_batch(CropBatch(crops))
        except RiderScopeError as exc:
            raise type(exc)(f"frame {frame.frame_id!r}, classify stage: {exc}") from exc
    t3 = time.perf_counter()

    annotations = [
        Annotation(
            box=detection.box,
            extended_box=region.box,
            score=prediction.score,
            label=prediction.label,
            confidence=detection.confidence,
        )
        for detection, region, prediction in zip(kept, regions, predictions)
    ]
    timing = StageTiming(
        detect_ms=(t1 - t0) * 1000.0,
        extract_ms=(t2 - t1) * 1000.0,
        classify_ms=(t3 - t2) * 1000.0,
    )
    return AnnotatedFrame(frame_id=frame.frame_id, annotations=annotations, timing=timing,
                          dropped_regions=dropped)


@dataclass
class SequenceSummary:
    frames_processed: int = 0
    frames_failed: int = 0
    annotations_total: int = 0
    dropped_regions: int = 0
    errors: list[tuple[str, str]] = field(default_factory=list)


def process_sequence(
    frames: Iterable[Frame],
    detector,
    classifier,
    sink: Callable[[Frame, AnnotatedFrame], None] | None = None,
) -> SequenceSummary:
    """Process frames independently, streaming results to the sink in order.

    Per-frame failures are recorded in the summary and processing continues.
    """
    summary = SequenceSummary()
    for frame in frames:
        try:
            annotated = process_frame(frame, detector, classifier)
        except RiderScopeError as exc:
            logger.warning("frame %s failed: %s", frame.frame_id, exc)
            summary.frames_failed += 1
            summary.errors.append((frame.frame_id, str(exc)))
            continue
        summary.frames_processed += 1
        summary.annotations_total += len(annotated.annotations)
        summary.dropped_regions += annotated.dropped_regions
        if sink is not None:
            sink(frame, annotated)
    return summary


@dataclass(frozen=True)
class RenderStyle:
    rider_color: tuple[int, int, int] = (0, 255, 0)
    non_rider_color: tuple[int, int, int] = (255, 255, 0)
    line_width: int = 3
    draw_scores: bool = True
    draw_extended: bool = False


def render_annotations(frame: Frame, annotated: AnnotatedFrame,
                       style: RenderStyle | None = None) -> np.ndarray:
    """Draw prediction boxes on a copy of the frame: riders green, others yellow.

    The detection box is drawn by default; `draw_extended` switches to the
    enlarged box. The score prints next to each rectangle.
    """
    style = style or RenderStyle()
    image = Image.fromarray(frame.pixels, mode="RGB")
    draw = ImageDraw.Draw(image)
    for annotation in annotated.annotations:
        box = annotation.extended_box if style.draw_extended else annotation.box
        color = style.rider_color if annotation.label == RIDER else style.non_rider_color
        x0, y0 = box.x, box.y
        x1 = min(box.right, frame.dims.width - 1)
        y1 = min(box.bottom, frame.dims.height - 1)
        draw.rectangle([x0, y0, x1, y1], outline=color, width=style.line_width)
        if style.draw_scores:
            text_y = max(y0 - 12, 0)
            draw.text((x0 + 2, text_y), f"{annotation.score:.2f}", fill=color)
    return np.asarray(image, dtype=np.uint8)


def _safe_name(frame_id: str) -> str:
    return frame_id.replace("/", "__")


class JsonlPredictionSink:
    """Streams one prediction line per frame, mirroring the ground-truth schema."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._fh = self.path.open("w", encoding="utf-8")

    def __call__(self, frame: Frame, annotated: AnnotatedFrame) -> None:
        objects = [
            {
                "box": a.box.as_list(),
                "label": a.label,
                "score": a.score,
                "confidence": a.confidence,
            }
            for a in annotated.annotations
        ]
        self._fh.write(json.dumps({"frame_id": annotated.frame_id, "objects": objects}) + "\n")
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self) -> "JsonlPredictionSink":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


class AnnotatedImageSink:
    """Writes one rendered PNG per frame into a directory."""

    def __init__(self, directory: str | Path, style: RenderStyle | None = None):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self.style = style or RenderStyle()

    def __call__(self, frame: Frame, annotated: AnnotatedFrame) -> None:
        rendered = render_annotations(frame, annotated, self.style)
        save_png(rendered, self.directory / f"{_safe_name(annotated.frame_id)}.png")


def annotations_to_detected_objects(annotated: AnnotatedFrame) -> list[DetectedObject]:
    """Convert pipeline output to the evaluation module's prediction records."""
    return [
        DetectedObject(box=a.box, label=a.label, score=a.score, confidence=a.confidence)
        for a in annotated.annotations
    ]


def write_prediction_file(path: str | Path, annotated_frames: Iterable[AnnotatedFrame]) -> None:
    """Batch variant of the JSONL sink for already-collected results."""
    write_predictions(
        path,
        {af.frame_id: annotations_to_detected_objects(af) for af in annotated_frames},
    )
