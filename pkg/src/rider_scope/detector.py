"""Candidate region selection: person detections for a frame via a pluggable
backend.

Two backends exist: `replay` returns scripted detections from a JSON Lines
manifest (the test workhorse - no network, no weights, pure function of the
file and frame id), and `pretrained_yolo` wraps a Darknet YOLOv3 model
through OpenCV's DNN module. Both hand back boxes in original-frame
coordinates; downstream code never sees detector input geometry.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DetectorError, DetectorLoadError
from .geometry import BoundingBox
from .imaging import DETECTOR_SIZE, Frame

logger = logging.getLogger(__name__)

BACKEND_REPLAY = "replay"
BACKEND_PRETRAINED_YOLO = "pretrained_yolo"

__all__ = [
    "BACKEND_REPLAY",
    "BACKEND_PRETRAINED_YOLO",
    "Detection",
    "DetectionSet",
    "DetectorConfig",
    "ReplayDetector",
    "YoloV3Detector",
    "load_detector",
    "detect_persons",
]


@dataclass(frozen=True)
class Detection:
    """One person detection in original-frame coordinates."""

    box: BoundingBox
    confidence: float
    class_label: str = "person"


@dataclass(frozen=True)
class DetectionSet:
    """Ordered detections for one frame: confidence descending, left edge breaks ties."""

    frame_id: str
    detections: tuple[Detection, ...]

    def __len__(self) -> int:
        return len(self.detections)


@dataclass
class DetectorConfig:
    backend_kind: str = BACKEND_REPLAY
    weights_path: str | None = None
    config_path: str | None = None
    replay_path: str | None = None
    confidence_threshold: float = 0.5
    nms_threshold: float = 0.45

    def __post_init__(self) -> None:
        if self.backend_kind not in (BACKEND_REPLAY, BACKEND_PRETRAINED_YOLO):
            raise DetectorLoadError(f"unknown detector backend: {self.backend_kind!r}")
        for name in ("confidence_threshold", "nms_threshold"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise DetectorLoadError(f"{name} must be in (0, 1), got {v}")


class ReplayDetector:
    """Replays detections from a JSON Lines manifest keyed by frame id.

    Each line is {"frame_id": ..., "detections": [{"box": [x, y, w, h],
    "confidence": c}, ...]}. Frames absent from the manifest yield no
    detections.
    """

    kind = BACKEND_REPLAY

    def __init__(self, replay_path: str | Path, confidence_threshold: float = 0.5):
        path = Path(replay_path)
        if not path.exists():
            raise DetectorLoadError(f"replay manifest not found: {path}")
        self.confidence_threshold = confidence_threshold
        self._by_frame: dict[str, list[tuple[BoundingBox, float]]] = {}
        with path.open("r", encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    doc = json.loads(line)
                    frame_id = doc["frame_id"]
                    entries = [
                        (BoundingBox.from_list(d["box"]), float(d["confidence"]))
                        for d in doc["detections"]
                    ]
                except (KeyError, TypeError, ValueError) as exc:
                    raise DetectorLoadError(f"{path}:{line_no}: bad replay line: {exc}") from exc
                self._by_frame.setdefault(frame_id, []).extend(entries)

    def raw_detections(self, frame: Frame) -> list[tuple[BoundingBox, float]]:
        return list(self._by_frame.get(frame.frame_id, ()))


# The 80 MS-COCO class names in model output order; "person" is class 0.
_COCO_CLASSES = (
    "person", "bicycle", "car", "motorbike", "aeroplane", "bus", "train", "truck", "boat",
    "traffic light", "fire hydrant", "stop sign", "parking meter", "bench", "bird", "cat",
    "dog", "horse", "sheep", "cow", "elephant", "bear", "zebra", "giraffe", "backpack",
    "umbrella", "handbag", "tie", "suitcase", "frisbee", "skis", "snowboard", "sports ball",
    "kite", "baseball bat", "baseball glove", "skateboard", "surfboard", "tennis racket",
    "bottle", "wine glass", "cup", "fork", "knife", "spoon", "bowl", "banana", "apple",
    "sandwich", "orange", "broccoli", "carrot", "hot dog", "pizza", "donut", "cake", "chair",
    "sofa", "pottedplant", "bed", "diningtable", "toilet", "tvmonitor", "laptop", "mouse",
    "remote", "keyboard", "cell phone", "microwave", "oven", "toaster", "sink",
    "refrigerator", "book", "clock", "vase", "scissors", "teddy bear", "hair drier",
    "toothbrush",
)


class YoloV3Detector:
    """Pretrained Darknet YOLOv3 person detector through OpenCV DNN.

    Frames are resized to 416x416 for inference; the normalized network
    outputs are scaled straight back to original-frame pixels. Only the
    person class survives filtering, followed by non-maximum suppression.
    """

    kind = BACKEND_PRETRAINED_YOLO
    class_names = _COCO_CLASSES
    _PERSON = 0

    def __init__(self, weights_path: str | Path, config_path: str | Path,
                 confidence_threshold: float = 0.5, nms_threshold: float = 0.45):
        weights = Path(weights_path)
        cfg = Path(config_path)
        if not weights.exists():
            raise DetectorLoadError(f"detector weights not found: {weights}")
        if not cfg.exists():
            raise DetectorLoadError(f"detector network config not found: {cfg}")
        try:
            import cv2
        except ImportError as exc:
            raise DetectorLoadError("the pretrained_yolo backend requires opencv-python") from exc
        self._cv2 = cv2
        try:
            if hasattr(cv2.dnn, "readNetFromDarknet"):
                self._net = cv2.dnn.readNetFromDarknet(str(cfg), str(weights))
            else:
                # OpenCV 5 dropped the dedicated darknet importer; readNet
                # dispatches on file suffix where support remains.
                self._net = cv2.dnn.readNet(str(weights), str(cfg))
        except cv2.error as exc:
            raise DetectorLoadError(f"cannot load darknet model from {weights}: {exc}") from exc
        layer_names = self._net.getLayerNames()
        self._output_layers = [layer_names[i - 1] for i in self._net.getUnconnectedOutLayers().flatten()]
        self.confidence_threshold = confidence_threshold
        self.nms_threshold = nms_threshold

    def raw_detections(self, frame: Frame) -> list[tuple[BoundingBox, float]]:
        cv2 = self._cv2
        width, height = frame.dims.width, frame.dims.height
        # Frame pixels are RGB already; no channel swap.
        blob = cv2.dnn.blobFromImage(
            frame.pixels, 1.0 / 255.0, (DETECTOR_SIZE, DETECTOR_SIZE), swapRB=False, crop=False
        )
        self._net.setInput(blob)
        outputs = self._net.forward(self._output_layers)

        boxes: list[list[int]] = []
        confidences: list[float] = []
        raw_boxes: list[BoundingBox] = []
        for output in outputs:
            for row in output:
                scores = row[5:]
                class_id = int(np.argmax(scores))
                confidence = float(scores[class_id])
                if class_id != self._PERSON or confidence < self.confidence_threshold:
                    continue
                cx, cy, w, h = row[0] * width, row[1] * height, row[2] * width, row[3] * height
                if w <= 0 or h <= 0:
                    continue
                x, y = cx - w / 2.0, cy - h / 2.0
                raw_boxes.append(BoundingBox(float(x), float(y), float(w), float(h)))
                boxes.append([int(x), int(y), int(w), int(h)])
                confidences.append(confidence)
        if not boxes:
            return []
        keep = cv2.dnn.NMSBoxes(boxes, confidences, self.confidence_threshold, self.nms_threshold)
        kept = sorted(int(i) for i in np.asarray(keep).flatten())
        return [(raw_boxes[i], confidences[i]) for i in kept]


def load_detector(config: DetectorConfig):
    """Build the configured backend; loading only reads files."""
    if config.backend_kind == BACKEND_REPLAY:
        if not config.replay_path:
            raise DetectorLoadError("replay backend needs replay_path")
        return ReplayDetector(config.replay_path, config.confidence_threshold)
    if not config.weights_path:
        raise DetectorLoadError("pretrained_yolo backend needs weights_path")
    config_path = config.config_path or str(Path(config.weights_path).with_suffix(".cfg"))
    return YoloV3Detector(
        config.weights_path,
        config_path,
        confidence_threshold=config.confidence_threshold,
        nms_threshold=config.nms_threshold,
    )


def _clip_to_frame(box: BoundingBox, frame: Frame) -> BoundingBox | None:
    left = max(box.x, 0.0)
    top = max(box.y, 0.0)
    right = min(box.right, float(frame.dims.width))
    bottom = min(box.bottom, float(frame.dims.height))
    if right - left <= 0 or bottom - top <= 0:
        return None
    if (left, top, right, bottom) == (box.x, box.y, box.right, box.bottom):
        return box
    return BoundingBox(left, top, right - left, bottom - top)


def detect_persons(detector, frame: Frame) -> DetectionSet:
    """Run a backend and normalize its output into the DetectionSet contract.

    Detections below the confidence threshold are dropped; boxes are clipped
    to the frame (fully-outside boxes are dropped with a warning); ordering is
    descending confidence with ties broken by left edge.
    """
    try:
        raw = detector.raw_detections(frame)
    except DetectorError:
        raise
    except Exception as exc:
        raise DetectorError(f"detector failed on frame {frame.frame_id!r}: {exc}") from exc

    detections: list[Detection] = []
    for box, confidence in raw:
        if confidence < detector.confidence_threshold:
            continue
        clipped = _clip_to_frame(box, frame)
        if clipped is None:
            logger.warning("frame %s: dropping detection fully outside the frame: %s",
                           frame.frame_id, box.as_list())
            continue
        detections.append(Detection(box=clipped, confidence=float(confidence)))
    detections.sort(key=lambda d: (-d.confidence, d.box.x))
    return DetectionSet(frame_id=frame.frame_id, detections=tuple(detections))
