"""Pixel extraction and preprocessing for the two model stages.

The classifier consumes 160x160x3 crops rescaled to [-1, 1]; the detector
consumes 416x416x3 frames. Resizing is point-sampled bilinear with corner
alignment (output corners map exactly onto source corners), so a same-size
resize is the identity and constant images stay constant.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ImageError
from .geometry import ExtendedRegion, FrameDims

CROP_SIZE = 160
DETECTOR_SIZE = 416

__all__ = [
    "CROP_SIZE",
    "DETECTOR_SIZE",
    "Frame",
    "CropTensor",
    "CropBatch",
    "load_frame",
    "save_png",
    "bilinear_resize",
    "extract_crop",
    "preprocess_crop",
    "resize_for_detector",
]


@dataclass(frozen=True)
class Frame:
    """One RGB video frame with 8-bit pixels."""

    pixels: np.ndarray
    frame_id: str

    def __post_init__(self) -> None:
        px = self.pixels
        if px.ndim != 3 or px.shape[2] != 3:
            raise ImageError(f"frame {self.frame_id!r}: expected HxWx3 pixels, got shape {px.shape}")
        if px.dtype != np.uint8:
            raise ImageError(f"frame {self.frame_id!r}: expected uint8 pixels, got {px.dtype}")

    @property
    def dims(self) -> FrameDims:
        return FrameDims(width=self.pixels.shape[1], height=self.pixels.shape[0])


@dataclass(frozen=True)
class CropTensor:
    """One preprocessed 160x160x3 segment with values in [-1, 1]."""

    values: np.ndarray
    source_region: ExtendedRegion | None = None
    source_frame_id: str = ""

    def __post_init__(self) -> None:
        v = self.values
        if v.shape != (CROP_SIZE, CROP_SIZE, 3):
            raise ImageError(f"crop tensor must be {CROP_SIZE}x{CROP_SIZE}x3, got {v.shape}")
        if v.min() < -1.0 or v.max() > 1.0:
            raise ImageError("crop tensor values must lie in [-1, 1]")


@dataclass
class CropBatch:
    """Ordered crops for one frame; order matches the detections that produced it."""

    crops: list[CropTensor] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.crops)

    def as_tensor(self) -> np.ndarray:
        """Stack into an (n, 160, 160, 3) array (n may be 0)."""
        if not self.crops:
            return np.zeros((0, CROP_SIZE, CROP_SIZE, 3), dtype=np.float64)
        return np.stack([c.values for c in self.crops], axis=0)


def load_frame(path: str | Path, frame_id: str | None = None) -> Frame:
    """Load a PNG/JPEG file as an RGB frame; frame_id defaults to the stem."""
    path = Path(path)
    try:
        with Image.open(path) as img:
            pixels = np.asarray(img.convert("RGB"), dtype=np.uint8)
    except FileNotFoundError:
        raise ImageError(f"frame file not found: {path}") from None
    except Exception as exc:
        raise ImageError(f"cannot read frame file {path}: {exc}") from exc
    return Frame(pixels=pixels, frame_id=frame_id if frame_id is not None else path.stem)


def save_png(pixels: np.ndarray, path: str | Path) -> None:
    Image.fromarray(pixels, mode="RGB").save(Path(path), format="PNG")


def _sample_coords(out_size: int, in_size: int) -> np.ndarray:
    """Corner-aligned sample positions: index i maps to i * (in-1) / (out-1)."""
    if out_size == 1 or in_size == 1:
        return np.zeros(out_size, dtype=np.float64)
    return np.arange(out_size, dtype=np.float64) * (in_size - 1) / (out_size - 1)


def bilinear_resize(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Point-sampled bilinear resize of an HxWxC array, returned as float64.

    Corner-aligned: output pixel (0, 0) equals source pixel (0, 0) and the
    opposite corners likewise, so resizing to the source size is exact.
    """
    if image.ndim != 3:
        raise ImageError(f"expected an HxWxC array, got shape {image.shape}")
    in_h, in_w = image.shape[:2]
    if in_h < 1 or in_w < 1:
        raise ImageError("cannot resize an empty image")

    ys = _sample_coords(out_h, in_h)
    xs = _sample_coords(out_w, in_w)
    y0 = np.floor(ys).astype(np.intp)
    x0 = np.floor(xs).astype(np.intp)
    y1 = np.minimum(y0 + 1, in_h - 1)
    x1 = np.minimum(x0 + 1, in_w - 1)
    fy = (ys - y0)[:, None, None]
    fx = (xs - x0)[None, :, None]

    img = image.astype(np.float64, copy=False)
    top = img[y0][:, x0] * (1.0 - fx) + img[y0][:, x1] * fx
    bottom = img[y1][:, x0] * (1.0 - fx) + img[y1][:, x1] * fx
    return top * (1.0 - fy) + bottom * fy


def extract_crop(frame: Frame, region: ExtendedRegion) -> np.ndarray:
    """Cut the raw pixels of a clipped region out of its frame.

    The real-valued box maps to the integer window [floor(x), ceil(x+w)) x
    [floor(y), ceil(y+h)); no padding is ever added.
    """
    if region.frame != frame.dims:
        raise ImageError(
            f"region was clipped against {region.frame.width}x{region.frame.height} "
            f"but frame {frame.frame_id!r} is {frame.dims.width}x{frame.dims.height}"
        )
    box = region.box
    x0 = max(int(np.floor(box.x)), 0)
    y0 = max(int(np.floor(box.y)), 0)
    x1 = min(int(np.ceil(box.right)), frame.dims.width)
    y1 = min(int(np.ceil(box.bottom)), frame.dims.height)
    return frame.pixels[y0:y1, x0:x1].copy()


def preprocess_crop(
    raw: np.ndarray,
    source_region: ExtendedRegion | None = None,
    source_frame_id: str = "",
) -> CropTensor:
    """Stretch a raw pixel rectangle to 160x160 and rescale values to [-1, 1].

    The resize is a direct stretch (no aspect-ratio preservation, no padding);
    the value map is v / 127.5 - 1.
    """
    if raw.ndim != 3 or raw.shape[2] != 3:
        raise ImageError(f"expected an HxWx3 rectangle, got shape {raw.shape}")
    if raw.shape[0] == 0 or raw.shape[1] == 0:
        raise ImageError("cannot preprocess an empty pixel rectangle")
    resized = bilinear_resize(raw, CROP_SIZE, CROP_SIZE)
    values = np.clip(resized / 127.5 - 1.0, -1.0, 1.0)
    return CropTensor(values=values, source_region=source_region, source_frame_id=source_frame_id)


def resize_for_detector(frame: Frame) -> np.ndarray:
    """Resize a frame to the detector's 416x416x3 uint8 input."""
    resized = bilinear_resize(frame.pixels, DETECTOR_SIZE, DETECTOR_SIZE)
    return np.rint(resized).astype(np.uint8)
