"""Feature-extractor backbones mapping 160x160x3 crops to (5, 5, 1280) maps.

Two implementations share the contract:

* SyntheticBackbone - a seeded random projection followed by a stack of
  per-channel affine layers. Fully deterministic, cheap, and trainable, so
  the entire test suite and the training protocol run without any pretrained
  weights.
* MobileNetV2Backbone - adapter around a pretrained torchvision MobileNetV2
  feature extractor loaded from a state-dict file. Inference only.
"""

from __future__ import annotations

import hashlib
from pathlib import Path

import numpy as np

from .errors import BackboneError
from .imaging import CROP_SIZE

FEATURE_GRID = 5
FEATURE_CHANNELS = 1280

__all__ = ["FEATURE_GRID", "FEATURE_CHANNELS", "SyntheticBackbone", "MobileNetV2Backbone", "load_synthetic_backbone"]

_BLOCK = CROP_SIZE // FEATURE_GRID          # 32x32 pixels feed one spatial cell
_POOL = 8                                   # blocks are mean-pooled down to 4x4
_STEM_DIM = (_BLOCK // _POOL) ** 2 * 3      # 48 pooled values per cell


def _validate_crops(crops: np.ndarray) -> np.ndarray:
    crops = np.asarray(crops, dtype=np.float64)
    if crops.ndim != 4 or crops.shape[1:] != (CROP_SIZE, CROP_SIZE, 3):
        raise BackboneError(f"expected (n, {CROP_SIZE}, {CROP_SIZE}, 3) crops, got {crops.shape}")
    return crops


class SyntheticBackbone:
    """Deterministic stand-in feature extractor with trainable affine layers.

    The stem mean-pools each 32x32 block of the crop to 4x4x3 values and
    projects them through a fixed seeded matrix into 1280 channels; the stem
    never trains. On top sit `num_layers` per-channel affine layers
    (x -> gamma * x + beta), the unit of the freeze/unfreeze protocol. The
    default layer count mirrors the enumeration of the production backbone.
    """

    kind = "synthetic"

    def __init__(self, num_layers: int = 154, seed: int = 0):
        if num_layers < 1:
            raise BackboneError(f"backbone needs at least 1 layer, got {num_layers}")
        self.num_layers = num_layers
        self.seed = seed
        rng = np.random.default_rng([seed, 0xFEED])
        self._projection = rng.normal(0.0, 1.0 / np.sqrt(_STEM_DIM), size=(_STEM_DIM, FEATURE_CHANNELS))
        self.gammas = 1.0 + 0.01 * rng.standard_normal((num_layers, FEATURE_CHANNELS))
        self.betas = 0.01 * rng.standard_normal((num_layers, FEATURE_CHANNELS))

    # -- forward ----------------------------------------------------------

    def stem(self, crops: np.ndarray) -> np.ndarray:
        """Project (n, 160, 160, 3) crops to pre-layer (n, 5, 5, 1280) maps."""
        crops = _validate_crops(crops)
        n = crops.shape[0]
        g, b, p = FEATURE_GRID, _BLOCK // _POOL, _POOL
        pooled = crops.reshape(n, g, b, p, g, b, p, 3).mean(axis=(3, 6))
        cells = pooled.transpose(0, 1, 3, 2, 4, 5).reshape(n, g, g, _STEM_DIM)
        return cells @ self._projection

    def forward_layers(self, x: np.ndarray, start: int = 0, stop: int | None = None) -> np.ndarray:
        stop = self.num_layers if stop is None else stop
        for k in range(start, stop):
            x = x * self.gammas[k] + self.betas[k]
        return x

    def forward_layers_cached(self, x: np.ndarray, start: int = 0):
        """Forward from `start`, returning the output and per-layer inputs."""
        cache = []
        for k in range(start, self.num_layers):
            cache.append(x)
            x = x * self.gammas[k] + self.betas[k]
        return x, cache

    def backward_layers(self, cache: list[np.ndarray], grad_out: np.ndarray, start: int = 0):
        """Gradients of the layer parameters from `start` up, given d(output).

        Returns (gamma_grads, beta_grads), each a list aligned with layers
        start .. num_layers-1.
        """
        n_layers = self.num_layers - start
        gamma_grads: list[np.ndarray] = [None] * n_layers  # type: ignore[list-item]
        beta_grads: list[np.ndarray] = [None] * n_layers  # type: ignore[list-item]
        g = grad_out
        for k in range(self.num_layers - 1, start - 1, -1):
            i = k - start
            gamma_grads[i] = np.sum(g * cache[i], axis=(0, 1, 2))
            beta_grads[i] = np.sum(g, axis=(0, 1, 2))
            if k > start:
                g = g * self.gammas[k]
        return gamma_grads, beta_grads

    def features(self, crops: np.ndarray) -> np.ndarray:
        """(n, 160, 160, 3) crops in [-1, 1] -> (n, 5, 5, 1280) feature maps."""
        return self.forward_layers(self.stem(crops))

    # -- parameter bookkeeping ---------------------------------------------

    @property
    def trainable_parameter_count(self) -> int:
        return self.num_layers * 2 * FEATURE_CHANNELS

    def layer_param_arrays(self, start: int = 0, stop: int | None = None) -> list[np.ndarray]:
        """Writable views of (gamma, beta) rows for layers [start, stop)."""
        stop = self.num_layers if stop is None else stop
        arrays: list[np.ndarray] = []
        for k in range(start, stop):
            arrays.append(self.gammas[k])
            arrays.append(self.betas[k])
        return arrays

    def params_checksum(self, start: int = 0, stop: int | None = None) -> str:
        """SHA-256 over the exact bytes of layers [start, stop); freeze witness."""
        stop = self.num_layers if stop is None else stop
        digest = hashlib.sha256()
        digest.update(np.ascontiguousarray(self.gammas[start:stop]).tobytes())
        digest.update(np.ascontiguousarray(self.betas[start:stop]).tobytes())
        return digest.hexdigest()

    def save(self, path: str | Path) -> None:
        np.savez(
            Path(path),
            kind=self.kind,
            version=1,
            seed=self.seed,
            num_layers=self.num_layers,
            gammas=self.gammas,
            betas=self.betas,
        )


def load_synthetic_backbone(path: str | Path) -> SyntheticBackbone:
    path = Path(path)
    if not path.exists():
        raise BackboneError(f"backbone checkpoint not found: {path}")
    with np.load(path, allow_pickle=False) as data:
        if str(data["kind"]) != SyntheticBackbone.kind:
            raise BackboneError(f"{path}: not a synthetic backbone checkpoint")
        backbone = SyntheticBackbone(num_layers=int(data["num_layers"]), seed=int(data["seed"]))
        backbone.gammas = np.array(data["gammas"], dtype=np.float64)
        backbone.betas = np.array(data["betas"], dtype=np.float64)
    return backbone


class MobileNetV2Backbone:
    """Pretrained MobileNetV2 feature extractor loaded from a state-dict file.

    Consumes crops rescaled to [-1, 1] and converts internally to the
    normalization the torchvision weights were trained with. Inference only:
    fine-tuning requires a backbone exposing trainable layers.
    """

    kind = "mobilenet_v2"

    _IMAGENET_MEAN = np.array([0.485, 0.456, 0.406])
    _IMAGENET_STD = np.array([0.229, 0.224, 0.225])

    def __init__(self, weights_path: str | Path):
        path = Path(weights_path)
        if not path.exists():
            raise BackboneError(f"backbone weights not found: {path}")
        try:
            import torch
            import torchvision
        except ImportError as exc:
            raise BackboneError("the mobilenet_v2 backbone requires torch and torchvision") from exc
        self._torch = torch
        model = torchvision.models.mobilenet_v2()
        try:
            state = torch.load(path, map_location="cpu", weights_only=True)
            model.load_state_dict(state)
        except Exception as exc:
            raise BackboneError(f"cannot load mobilenet_v2 weights from {path}: {exc}") from exc
        self._features = model.features.eval()

    def features(self, crops: np.ndarray) -> np.ndarray:
        crops = _validate_crops(crops)
        unit = (crops + 1.0) / 2.0
        normalized = (unit - self._IMAGENET_MEAN) / self._IMAGENET_STD
        torch = self._torch
        with torch.no_grad():
            x = torch.from_numpy(normalized).float().permute(0, 3, 1, 2)
            y = self._features(x)
        maps = y.permute(0, 2, 3, 1).numpy().astype(np.float64)
        if maps.shape[1:] != (FEATURE_GRID, FEATURE_GRID, FEATURE_CHANNELS):
            raise BackboneError(f"backbone produced {maps.shape[1:]}, expected (5, 5, 1280)")
        return maps
