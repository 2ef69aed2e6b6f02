"""Binary rider classifier: backbone features, global average pooling, and a
single sigmoid dense unit (1280 weights + 1 bias = 1281 trainable parameters).

Scores live in [0, 1]; a crop is labeled rider when its score reaches the
decision threshold (default 0.5). The loss is binary cross-entropy with the
probability clamped away from 0 and 1.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .backbones import FEATURE_CHANNELS, FEATURE_GRID
from .errors import BackboneError, RiderScopeError
from .geometry import ExtendedRegion
from .imaging import CropBatch
from .labels import NON_RIDER, RIDER

PROB_EPS = 1e-7
DEFAULT_THRESHOLD = 0.5

__all__ = [
    "PROB_EPS",
    "DEFAULT_THRESHOLD",
    "ClassifierHead",
    "RiderPrediction",
    "init_head",
    "sigmoid",
    "extract_features",
    "pool_features",
    "pool_feature_maps",
    "predict",
    "predict_scores",
    "bce_loss",
    "bce_loss_mean",
    "save_head",
    "load_head",
    "RiderClassifier",
    "ScriptedClassifier",
]


@dataclass
class ClassifierHead:
    """Dense sigmoid output layer over pooled 1280-channel features."""

    dense_weights: np.ndarray
    dense_bias: float
    dropout_rate: float = 0.3

    def __post_init__(self) -> None:
        self.dense_weights = np.asarray(self.dense_weights, dtype=np.float64)
        if self.dense_weights.shape != (FEATURE_CHANNELS,):
            raise RiderScopeError(f"head weights must have shape ({FEATURE_CHANNELS},), got {self.dense_weights.shape}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise RiderScopeError(f"dropout rate must be in [0, 1), got {self.dropout_rate}")

    @property
    def trainable_parameter_count(self) -> int:
        return self.dense_weights.size + 1


@dataclass(frozen=True)
class RiderPrediction:
    score: float
    label: str
    source_region: ExtendedRegion | None = None


def init_head(seed: int = 0, dropout_rate: float = 0.3) -> ClassifierHead:
    """Fan-in scaled uniform init for the dense weights, zero bias."""
    rng = np.random.default_rng([seed, 0x4EAD])
    scale = 1.0 / math.sqrt(FEATURE_CHANNELS)
    weights = rng.uniform(-scale, scale, size=FEATURE_CHANNELS)
    return ClassifierHead(dense_weights=weights, dense_bias=0.0, dropout_rate=dropout_rate)


def sigmoid(z):
    """Numerically stable logistic function."""
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out if out.ndim else float(out)


def extract_features(backbone, batch: CropBatch) -> list[np.ndarray]:
    """Run the backbone over a crop batch, one (5, 5, 1280) map per crop."""
    if len(batch) == 0:
        return []
    try:
        maps = backbone.features(batch.as_tensor())
    except RiderScopeError:
        raise
    except Exception as exc:
        raise BackboneError(f"backbone failed on a batch of {len(batch)} crops: {exc}") from exc
    if maps.shape != (len(batch), FEATURE_GRID, FEATURE_GRID, FEATURE_CHANNELS):
        raise BackboneError(f"backbone produced shape {maps.shape} for a batch of {len(batch)}")
    return [maps[i] for i in range(maps.shape[0])]


def pool_features(feature_map: np.ndarray) -> np.ndarray:
    """Global average pooling: channel-wise mean over the 5x5 positions."""
    feature_map = np.asarray(feature_map, dtype=np.float64)
    if feature_map.shape != (FEATURE_GRID, FEATURE_GRID, FEATURE_CHANNELS):
        raise BackboneError(f"expected a (5, 5, 1280) map, got {feature_map.shape}")
    return feature_map.mean(axis=(0, 1))


def pool_feature_maps(maps: np.ndarray) -> np.ndarray:
    """Pool a stacked (n, 5, 5, 1280) tensor to (n, 1280)."""
    return np.asarray(maps, dtype=np.float64).mean(axis=(1, 2))


def predict_scores(head: ClassifierHead, features: np.ndarray) -> np.ndarray:
    """Sigmoid scores for an (n, 1280) feature matrix; dropout is inference-off."""
    features = np.asarray(features, dtype=np.float64)
    return sigmoid(features @ head.dense_weights + head.dense_bias)


def predict(
    head: ClassifierHead,
    features: np.ndarray,
    threshold: float = DEFAULT_THRESHOLD,
    source_region: ExtendedRegion | None = None,
) -> RiderPrediction:
    """Score one pooled feature vector and threshold it into a label."""
    features = np.asarray(features, dtype=np.float64)
    if features.shape != (FEATURE_CHANNELS,):
        raise RiderScopeError(f"expected a ({FEATURE_CHANNELS},) feature vector, got {features.shape}")
    score = float(sigmoid(float(features @ head.dense_weights) + head.dense_bias))
    label = RIDER if score >= threshold else NON_RIDER
    return RiderPrediction(score=score, label=label, source_region=source_region)


def _clamp(p) -> np.ndarray:
    return np.clip(np.asarray(p, dtype=np.float64), PROB_EPS, 1.0 - PROB_EPS)


def bce_loss(y: float, p: float) -> float:
    """Binary cross-entropy -(y log p + (1-y) log(1-p)) with clamped p."""
    p = float(_clamp(p))
    return -(y * math.log(p) + (1.0 - y) * math.log(1.0 - p))


def bce_loss_mean(labels: np.ndarray, probs: np.ndarray) -> float:
    """Mean binary cross-entropy over a batch."""
    y = np.asarray(labels, dtype=np.float64)
    p = _clamp(probs)
    return float(np.mean(-(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))))


HEAD_SCHEMA_VERSION = 1


def save_head(head: ClassifierHead, path: str | Path) -> None:
    doc = {
        "version": HEAD_SCHEMA_VERSION,
        "dense_weights": [float(w) for w in head.dense_weights],
        "dense_bias": float(head.dense_bias),
        "dropout_rate": head.dropout_rate,
    }
    Path(path).write_text(json.dumps(doc))


def load_head(path: str | Path) -> ClassifierHead:
    path = Path(path)
    if not path.exists():
        raise RiderScopeError(f"head checkpoint not found: {path}")
    doc = json.loads(path.read_text())
    if doc.get("version") != HEAD_SCHEMA_VERSION:
        raise RiderScopeError(f"{path}: unsupported head checkpoint version {doc.get('version')!r}")
    return ClassifierHead(
        dense_weights=np.array(doc["dense_weights"], dtype=np.float64),
        dense_bias=float(doc["dense_bias"]),
        dropout_rate=float(doc.get("dropout_rate", 0.3)),
    )


class RiderClassifier:
    """Backbone + head bundle used by the pipeline: crops in, predictions out."""

    def __init__(self, backbone, head: ClassifierHead, threshold: float = DEFAULT_THRESHOLD):
        self.backbone = backbone
        self.head = head
        self.threshold = threshold

    def predict_batch(self, batch: CropBatch) -> list[RiderPrediction]:
        if len(batch) == 0:
            return []
        maps = extract_features(self.backbone, batch)
        pooled = pool_feature_maps(np.stack(maps, axis=0))
        scores = predict_scores(self.head, pooled)
        return [
            RiderPrediction(
                score=float(s),
                label=RIDER if s >= self.threshold else NON_RIDER,
                source_region=crop.source_region,
            )
            for s, crop in zip(scores, batch.crops)
        ]


class ScriptedClassifier:
    """Replays fixed scores keyed by (frame id, source box); test instrumentation.

    The score map keys are "frame_id|x,y,w,h" with box coordinates printed to
    two decimals. Crops without an entry get `default_score`.
    """

    def __init__(self, scores: dict[str, float], threshold: float = DEFAULT_THRESHOLD, default_score: float = 0.0):
        self.scores = dict(scores)
        self.threshold = threshold
        self.default_score = default_score

    @staticmethod
    def key_for(frame_id: str, box) -> str:
        return f"{frame_id}|{box.x:.2f},{box.y:.2f},{box.w:.2f},{box.h:.2f}"

    def predict_batch(self, batch: CropBatch) -> list[RiderPrediction]:
        predictions = []
        for crop in batch.crops:
            if crop.source_region is None:
                score = self.default_score
            else:
                key = self.key_for(crop.source_frame_id, crop.source_region.source)
                score = self.scores.get(key, self.default_score)
            predictions.append(
                RiderPrediction(
                    score=score,
                    label=RIDER if score >= self.threshold else NON_RIDER,
                    source_region=crop.source_region,
                )
            )
        return predictions
