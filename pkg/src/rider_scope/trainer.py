"""Two-phase transfer-learning protocol for the rider head.

Phase one trains only the 1281-parameter head on pooled backbone features
(backbone fully frozen, Adam at 1e-4, ten epochs by default). Phase two
unfreezes the top backbone layers and continues at a lower rate (1e-5,
fifteen epochs). Both phases shuffle per epoch under the config seed and keep
the last partial batch, so identical configs reproduce identical weights
bit for bit.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Sequence

import numpy as np

from .classifier import ClassifierHead, bce_loss_mean, pool_feature_maps, sigmoid
from .errors import ManifestError, TrainingError

if TYPE_CHECKING:
    from .dataset import SegmentRecord

__all__ = [
    "TrainConfig",
    "TrainingSet",
    "EpochStats",
    "PhaseReport",
    "TrainReport",
    "RiderModel",
    "Adam",
    "split_dataset",
    "train_frozen",
    "fine_tune",
    "train_two_phase",
]

FROZEN_PHASE = "frozen"
FINETUNE_PHASE = "fine_tune"


@dataclass
class TrainConfig:
    batch_size: int = 32
    frozen_epochs: int = 10
    finetune_epochs: int = 15
    lr_frozen: float = 1e-4
    lr_finetune: float = 1e-5
    unfreeze_from_layer: int = 100
    dropout_rate: float = 0.3
    seed: int = 0
    train_fraction: float = 0.85

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise TrainingError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lr_frozen <= 0 or self.lr_finetune <= 0:
            raise TrainingError("learning rates must be positive")
        if self.frozen_epochs < 0 or self.finetune_epochs < 0:
            raise TrainingError("epoch counts must be non-negative")
        if self.unfreeze_from_layer < 0:
            raise TrainingError(f"unfreeze_from_layer must be >= 0, got {self.unfreeze_from_layer}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise TrainingError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if not 0.0 < self.train_fraction < 1.0:
            raise TrainingError(f"train_fraction must be in (0, 1), got {self.train_fraction}")

    def to_json_dict(self) -> dict:
        return {
            "batch_size": self.batch_size,
            "frozen_epochs": self.frozen_epochs,
            "finetune_epochs": self.finetune_epochs,
            "lr_frozen": self.lr_frozen,
            "lr_finetune": self.lr_finetune,
            "unfreeze_from_layer": self.unfreeze_from_layer,
            "dropout_rate": self.dropout_rate,
            "seed": self.seed,
            "train_fraction": self.train_fraction,
        }


@dataclass
class TrainingSet:
    """Preprocessed crops (n, 160, 160, 3) with binary labels (rider = 1)."""

    crops: np.ndarray
    labels: np.ndarray
    segment_ids: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.crops = np.asarray(self.crops, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.crops.shape[0] != self.labels.shape[0]:
            raise TrainingError("crops and labels differ in length")

    def __len__(self) -> int:
        return int(self.labels.shape[0])


@dataclass(frozen=True)
class EpochStats:
    phase: str
    epoch: int
    train_loss: float
    train_accuracy: float
    test_loss: float | None
    test_accuracy: float | None


@dataclass
class PhaseReport:
    phase: str
    epochs: list[EpochStats]
    trainable_parameters: int
    duration_s: float = 0.0


@dataclass
class TrainReport:
    config: TrainConfig
    phases: list[PhaseReport] = field(default_factory=list)
    head_checkpoint: str | None = None
    backbone_checkpoint: str | None = None

    @property
    def epochs_recorded(self) -> int:
        return sum(len(p.epochs) for p in self.phases)

    def to_json_dict(self) -> dict:
        return {
            "schema_version": 1,
            "config": self.config.to_json_dict(),
            "phases": [
                {
                    # duration_s stays out: report files must be byte-identical
                    # across reruns with the same seed.
                    "phase": p.phase,
                    "trainable_parameters": p.trainable_parameters,
                    "epochs": [
                        {
                            "epoch": e.epoch,
                            "train_loss": e.train_loss,
                            "train_accuracy": e.train_accuracy,
                            "test_loss": e.test_loss,
                            "test_accuracy": e.test_accuracy,
                        }
                        for e in p.epochs
                    ],
                }
                for p in self.phases
            ],
            "epochs_recorded": self.epochs_recorded,
            "head_checkpoint": self.head_checkpoint,
            "backbone_checkpoint": self.backbone_checkpoint,
        }


@dataclass
class RiderModel:
    backbone: object
    head: ClassifierHead


class Adam:
    """Adam over a list of parameter arrays, updated in place."""

    def __init__(self, params: list[np.ndarray], lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-7):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, grads: list[np.ndarray]) -> None:
        self.t += 1
        b1t = 1.0 - self.beta1**self.t
        b2t = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)


def split_dataset(records: Sequence["SegmentRecord"], train_fraction: float, seed: int = 0):
    """Split records into train/test by interaction id, never by segment.

    Interactions are shuffled under the seed; floor(train_fraction * count)
    of them go to train, clamped so both splits keep at least one
    interaction. Record order within each split follows the input.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ManifestError(f"train_fraction must be in (0, 1), got {train_fraction}")
    interactions = sorted({r.interaction_id for r in records})
    if len(interactions) < 2:
        raise ManifestError(f"need at least 2 interactions to split, got {len(interactions)}")
    rng = np.random.default_rng([seed, 0x5B117])
    order = [interactions[i] for i in rng.permutation(len(interactions))]
    n_train = int(np.floor(train_fraction * len(interactions)))
    n_train = max(1, min(n_train, len(interactions) - 1))
    train_ids = set(order[:n_train])
    train = [r for r in records if r.interaction_id in train_ids]
    test = [r for r in records if r.interaction_id not in train_ids]
    return train, test


def _labels_of(head: ClassifierHead, features: np.ndarray) -> np.ndarray:
    return (sigmoid(features @ head.dense_weights + head.dense_bias) >= 0.5).astype(np.int64)


def _eval_on(head: ClassifierHead, features: np.ndarray, labels: np.ndarray) -> tuple[float, float]:
    probs = sigmoid(features @ head.dense_weights + head.dense_bias)
    loss = bce_loss_mean(labels, probs)
    accuracy = float(np.mean((probs >= 0.5).astype(np.int64) == labels))
    return loss, accuracy


def _check_finite(loss: float, phase: str, epoch: int, batch: int) -> None:
    if not np.isfinite(loss):
        raise TrainingError(f"non-finite loss in {phase} phase at epoch {epoch}, batch {batch}")


def _head_params(head: ClassifierHead) -> tuple[list[np.ndarray], np.ndarray]:
    bias = np.array([head.dense_bias], dtype=np.float64)
    return [head.dense_weights, bias], bias


def train_frozen(model: RiderModel, train_set: TrainingSet, config: TrainConfig,
                 test_set: TrainingSet | None = None) -> PhaseReport:
    """Train the head only; the backbone is a fixed feature extractor.

    Features are computed once up front, so backbone parameters are not even
    touched, let alone updated.
    """
    started = time.perf_counter()
    report = PhaseReport(phase=FROZEN_PHASE, epochs=[], trainable_parameters=model.head.trainable_parameter_count)
    if config.frozen_epochs == 0:
        report.duration_s = time.perf_counter() - started
        return report
    if len(train_set) == 0:
        raise TrainingError("frozen phase needs a non-empty train split")

    features = pool_feature_maps(model.backbone.features(train_set.crops))
    y = train_set.labels.astype(np.float64)
    test_features = None
    if test_set is not None and len(test_set) > 0:
        test_features = pool_feature_maps(model.backbone.features(test_set.crops))

    rng = np.random.default_rng([config.seed, 0])
    params, bias = _head_params(model.head)
    optimizer = Adam(params, lr=config.lr_frozen)
    n = len(train_set)
    for epoch in range(config.frozen_epochs):
        order = rng.permutation(n)
        for batch_index, start in enumerate(range(0, n, config.batch_size)):
            idx = order[start : start + config.batch_size]
            h = features[idx]
            if config.dropout_rate > 0.0:
                mask = (rng.random(h.shape) >= config.dropout_rate) / (1.0 - config.dropout_rate)
                h = h * mask
            z = h @ model.head.dense_weights + bias[0]
            p = sigmoid(z)
            loss = bce_loss_mean(y[idx], p)
            _check_finite(loss, FROZEN_PHASE, epoch, batch_index)
            dz = (p - y[idx]) / idx.size
            optimizer.step([h.T @ dz, np.array([dz.sum()])])
            model.head.dense_bias = float(bias[0])
        report.epochs.append(_epoch_stats(FROZEN_PHASE, epoch, model.head, features,
                                          train_set.labels, test_features, test_set))
    report.duration_s = time.perf_counter() - started
    return report


def fine_tune(model: RiderModel, train_set: TrainingSet, config: TrainConfig,
              test_set: TrainingSet | None = None) -> PhaseReport:
    """Unfreeze backbone layers from `unfreeze_from_layer` up and keep training.

    Layers below the boundary stay bitwise unchanged; the optimizer restarts
    with fresh state at the fine-tune learning rate. A boundary equal to the
    layer count degrades to head-only training.
    """
    backbone = model.backbone
    if not hasattr(backbone, "forward_layers_cached"):
        raise TrainingError(f"backbone {getattr(backbone, 'kind', type(backbone).__name__)!r} does not expose trainable layers")
    boundary = config.unfreeze_from_layer
    if not 0 <= boundary <= backbone.num_layers:
        raise TrainingError(f"unfreeze_from_layer {boundary} out of range 0..{backbone.num_layers}")

    started = time.perf_counter()
    layer_params = backbone.layer_param_arrays(boundary)
    report = PhaseReport(
        phase=FINETUNE_PHASE,
        epochs=[],
        trainable_parameters=model.head.trainable_parameter_count + sum(p.size for p in layer_params),
    )
    if config.finetune_epochs == 0:
        report.duration_s = time.perf_counter() - started
        return report
    if len(train_set) == 0:
        raise TrainingError("fine-tune phase needs a non-empty train split")

    # The frozen prefix cannot change, so its output per crop is constant for
    # the whole phase and is computed exactly once.
    prefix = backbone.forward_layers(backbone.stem(train_set.crops), 0, boundary)
    test_prefix = None
    if test_set is not None and len(test_set) > 0:
        test_prefix = backbone.forward_layers(backbone.stem(test_set.crops), 0, boundary)

    y = train_set.labels.astype(np.float64)
    rng = np.random.default_rng([config.seed, 1])
    head_params, bias = _head_params(model.head)
    optimizer = Adam(layer_params + head_params, lr=config.lr_finetune)
    n = len(train_set)
    n_positions = prefix.shape[1] * prefix.shape[2]
    for epoch in range(config.finetune_epochs):
        order = rng.permutation(n)
        for batch_index, start in enumerate(range(0, n, config.batch_size)):
            idx = order[start : start + config.batch_size]
            maps, cache = backbone.forward_layers_cached(prefix[idx], boundary)
            f = pool_feature_maps(maps)
            if config.dropout_rate > 0.0:
                mask = (rng.random(f.shape) >= config.dropout_rate) / (1.0 - config.dropout_rate)
            else:
                mask = np.ones_like(f)
            h = f * mask
            z = h @ model.head.dense_weights + bias[0]
            p = sigmoid(z)
            loss = bce_loss_mean(y[idx], p)
            _check_finite(loss, FINETUNE_PHASE, epoch, batch_index)
            dz = (p - y[idx]) / idx.size
            dw = h.T @ dz
            db = np.array([dz.sum()])
            df = np.outer(dz, model.head.dense_weights) * mask
            dmaps = np.broadcast_to(df[:, None, None, :] / n_positions, maps.shape)
            gamma_grads, beta_grads = backbone.backward_layers(cache, dmaps, boundary)
            grads: list[np.ndarray] = []
            for gg, bg in zip(gamma_grads, beta_grads):
                grads.append(gg)
                grads.append(bg)
            optimizer.step(grads + [dw, db])
            model.head.dense_bias = float(bias[0])
        train_features = pool_feature_maps(backbone.forward_layers(prefix, boundary))
        test_features = None
        if test_prefix is not None:
            test_features = pool_feature_maps(backbone.forward_layers(test_prefix, boundary))
        report.epochs.append(_epoch_stats(FINETUNE_PHASE, epoch, model.head, train_features,
                                          train_set.labels, test_features, test_set))
    report.duration_s = time.perf_counter() - started
    return report


def _epoch_stats(phase: str, epoch: int, head: ClassifierHead, train_features: np.ndarray,
                 train_labels: np.ndarray, test_features, test_set) -> EpochStats:
    train_loss, train_acc = _eval_on(head, train_features, train_labels)
    test_loss = test_acc = None
    if test_features is not None and test_set is not None:
        test_loss, test_acc = _eval_on(head, test_features, test_set.labels)
    return EpochStats(phase=phase, epoch=epoch, train_loss=train_loss, train_accuracy=train_acc,
                      test_loss=test_loss, test_accuracy=test_acc)


def train_two_phase(model: RiderModel, train_set: TrainingSet, config: TrainConfig,
                    test_set: TrainingSet | None = None) -> TrainReport:
    """Run the full protocol: frozen head training, then partial unfreeze."""
    report = TrainReport(config=config)
    report.phases.append(train_frozen(model, train_set, config, test_set))
    report.phases.append(fine_tune(model, train_set, config, test_set))
    return report
