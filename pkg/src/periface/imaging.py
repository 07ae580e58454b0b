"""Image and mask domain types plus periocular preprocessing.

Pixels live in [0, 1] RGB throughout the package; the metrics module
converts to the 255-peak domain where a metric is defined there.  Masks
are binary with 1 marking known (visible) pixels and 0 hidden ones, and
the hidden fraction is tracked as ``coverage``.

The visible window of a periocular mask is the axis-aligned bounding box
of the twelve eye landmarks (indices 37-48 in the 1-based 68-point
convention), expanded by configurable margins.  Operations accept either
the domain wrapper types or bare numpy rasters, so small hand-built
arrays can be pushed through them in tests.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from PIL import Image as PILImage

from .errors import (
    DegenerateMaskError,
    DimensionError,
    InvalidLandmarksError,
)

# 0-based slice of the 12 eye points in the 68-point convention.
EYE_SLICE = slice(36, 48)

POSE_LIMIT_DEG = 45.0


@dataclass
class Image:
    """Dense H x W x 3 raster with values in [0, 1], RGB channel order."""

    pixels: np.ndarray
    provenance: str | None = None

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 3 or px.shape[2] != 3:
            raise DimensionError(f"image must be HxWx3, got shape {px.shape}")
        if px.shape[0] < 8 or px.shape[1] < 8:
            raise DimensionError(f"image sides must be >= 8, got {px.shape[:2]}")
        if not np.isfinite(px).all():
            raise DimensionError("image contains non-finite values")
        if px.min() < 0.0 or px.max() > 1.0:
            raise DimensionError("image values must lie in [0, 1]")
        self.pixels = px.astype(np.float32, copy=False)

    @property
    def shape(self):
        return self.pixels.shape

    @property
    def dims(self):
        """(H, W) pair."""
        return self.pixels.shape[0], self.pixels.shape[1]


@dataclass
class Mask:
    """Binary H x W x 1 raster; coverage is the fraction of hidden (0) pixels."""

    bits: np.ndarray
    coverage: float = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        b = np.asarray(self.bits)
        if b.ndim == 2:
            b = b[:, :, None]
        if b.ndim != 3 or b.shape[2] != 1:
            raise DimensionError(f"mask must be HxWx1, got shape {b.shape}")
        vals = np.unique(b)
        if not np.isin(vals, (0, 1)).all():
            raise DimensionError("mask entries must all be 0 or 1")
        b = b.astype(np.uint8)
        recomputed = float(np.count_nonzero(b == 0)) / b.size
        if self.coverage is None:
            self.coverage = recomputed
        elif self.coverage != recomputed:
            raise DimensionError(
                f"stated coverage {self.coverage} != recomputed {recomputed}"
            )
        self.bits = b

    @property
    def dims(self):
        return self.bits.shape[0], self.bits.shape[1]


@dataclass
class LandmarkSet:
    """68 ordered (x, y) facial keypoints in pixel coordinates."""

    points: np.ndarray
    confidence: float | None = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.shape != (68, 2):
            raise InvalidLandmarksError(f"expected 68 (x, y) points, got shape {pts.shape}")
        if not np.isfinite(pts).all():
            raise InvalidLandmarksError("landmark coordinates must be finite")
        self.points = pts

    def eye_points(self) -> np.ndarray:
        return self.points[EYE_SLICE]

    def require_in_bounds(self, dims):
        h, w = dims
        pts = self.points
        if (pts[:, 0] < 0).any() or (pts[:, 0] >= w).any() or (pts[:, 1] < 0).any() or (pts[:, 1] >= h).any():
            raise InvalidLandmarksError(f"landmarks fall outside a {h}x{w} image")


@dataclass
class PoseAngles:
    """Head pose in degrees."""

    roll: float
    pitch: float
    yaw: float

    def __post_init__(self):
        for name in ("roll", "pitch", "yaw"):
            v = float(getattr(self, name))
            if not -180.0 <= v <= 180.0:
                raise DimensionError(f"{name} angle {v} outside [-180, 180]")
            setattr(self, name, v)


@dataclass
class MarginConfig:
    """Expansion of the eye bounding box into the visible window.

    ``side`` is the horizontal margin on each side as a fraction of box
    width; ``top``/``bottom`` are fractions of box height.  ``crop_size``
    is the (H, W) the periocular crop is resized to (the identity
    encoder's input resolution); None keeps the raw window.
    """

    side: float = 0.25
    top: float = 0.60
    bottom: float = 0.80
    crop_size: tuple[int, int] | None = None


def _pixels(img) -> np.ndarray:
    return img.pixels if isinstance(img, Image) else np.asarray(img)


def _bits(mask) -> np.ndarray:
    b = mask.bits if isinstance(mask, Mask) else np.asarray(mask)
    if b.ndim == 2:
        b = b[:, :, None]
    return b


def periocular_window(landmarks: LandmarkSet, image_dims, margins: MarginConfig):
    """Visible-window pixel bounds (row0, row1, col0, col1), end-exclusive.

    The continuous eye box is expanded by the margins and then snapped
    outward to whole pixels (a landmark at integer x makes that column
    visible), clipped to the frame.
    """
    h, w = image_dims
    landmarks.require_in_bounds((h, w))
    eyes = landmarks.eye_points()
    x_min, y_min = eyes.min(axis=0)
    x_max, y_max = eyes.max(axis=0)
    box_w = x_max - x_min
    box_h = y_max - y_min

    x_lo = x_min - margins.side * box_w
    x_hi = x_max + margins.side * box_w
    y_lo = y_min - margins.top * box_h
    y_hi = y_max + margins.bottom * box_h

    col0 = max(0, int(math.floor(x_lo)))
    col1 = min(w, int(math.ceil(x_hi)) + 1)
    row0 = max(0, int(math.floor(y_lo)))
    row1 = min(h, int(math.ceil(y_hi)) + 1)
    if row1 <= row0 or col1 <= col0:
        raise DegenerateMaskError("visible window has zero area")
    return row0, row1, col0, col1


def build_periocular_mask(landmarks: LandmarkSet, image_dims, margins: MarginConfig | None = None) -> Mask:
    """Mask that is 1 inside the expanded eye box and 0 elsewhere."""
    margins = margins or MarginConfig()
    h, w = image_dims
    row0, row1, col0, col1 = periocular_window(landmarks, image_dims, margins)
    bits = np.zeros((h, w, 1), dtype=np.uint8)
    bits[row0:row1, col0:col1, :] = 1
    return Mask(bits)


def apply_mask(gt, mask):
    """Hadamard product of image and mask; hidden pixels go to 0."""
    px = _pixels(gt)
    bits = _bits(mask)
    if px.shape[:2] != bits.shape[:2]:
        raise DimensionError(f"image {px.shape[:2]} and mask {bits.shape[:2]} disagree")
    out = px * bits.astype(px.dtype)
    if isinstance(gt, Image):
        return Image(out, provenance=gt.provenance)
    return out


def resize(pixels: np.ndarray, size) -> np.ndarray:
    """Bilinear resize of an HxWxC raster to (H, W) ``size``.

    Runs through torch's interpolation so the non-differentiable file
    path and the differentiable training path share one kernel.
    """
    import torch
    import torch.nn.functional as F

    arr = np.asarray(pixels)
    squeeze = arr.ndim == 2
    if squeeze:
        arr = arr[:, :, None]
    t = torch.from_numpy(np.ascontiguousarray(arr, dtype=np.float32)).permute(2, 0, 1)[None]
    out = F.interpolate(t, size=tuple(size), mode="bilinear", align_corners=False)
    res = out[0].permute(1, 2, 0).numpy()
    res = np.clip(res, 0.0, 1.0)
    return res[:, :, 0] if squeeze else res


def crop_periocular(gt, landmarks: LandmarkSet, crop_spec: MarginConfig | None = None):
    """Extract the visible periocular window as its own image.

    With ``crop_spec.crop_size`` set, the window is resized to that
    resolution (the identity encoder's input); otherwise the raw window
    slice is returned.
    """
    crop_spec = crop_spec or MarginConfig()
    px = _pixels(gt)
    row0, row1, col0, col1 = periocular_window(landmarks, px.shape[:2], crop_spec)
    window = px[row0:row1, col0:col1]
    if crop_spec.crop_size is not None:
        window = resize(window, crop_spec.crop_size)
    if isinstance(gt, Image):
        return Image(np.ascontiguousarray(window), provenance=gt.provenance)
    return np.ascontiguousarray(window)


def filter_sample(pose: PoseAngles | None, landmarks: LandmarkSet | None) -> bool:
    """Keep a sample only when frontal enough and its eyes were found.

    Rejects when any of |roll|, |pitch|, |yaw| exceeds 45 degrees
    (strictly: 45.0 exactly passes) or when landmarks are missing.
    """
    if landmarks is None:
        return False
    if pose is None:
        return True
    return all(
        abs(a) <= POSE_LIMIT_DEG for a in (pose.roll, pose.pitch, pose.yaw)
    )


# ---------------------------------------------------------------------------
# File I/O: 8-bit PNG for images, 1-bit PNG for masks, JSON for landmarks.
# ---------------------------------------------------------------------------

def save_image(path, img) -> None:
    """8-bit PNG round trip; stored value is round(pixel * 255)."""
    px = _pixels(img)
    data = np.rint(np.clip(px, 0.0, 1.0) * 255.0).astype(np.uint8)
    PILImage.fromarray(data, mode="RGB").save(path, format="PNG")


def load_image(path) -> Image:
    with PILImage.open(path) as im:
        data = np.asarray(im.convert("RGB"), dtype=np.float32)
    return Image(data / 255.0, provenance=str(path))


def save_mask(path, mask) -> None:
    bits = _bits(mask)[:, :, 0].astype(bool)
    PILImage.fromarray(bits).save(path, format="PNG")


def load_mask(path) -> Mask:
    with PILImage.open(path) as im:
        data = np.asarray(im.convert("1"), dtype=np.uint8)
    return Mask(data[:, :, None])


def save_landmarks(path, landmarks: LandmarkSet) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump([[float(x), float(y)] for x, y in landmarks.points], fh)


def load_landmarks(path) -> LandmarkSet:
    with open(path, encoding="utf-8") as fh:
        pts = json.load(fh)
    return LandmarkSet(np.asarray(pts, dtype=np.float64))


# ---------------------------------------------------------------------------
# Detection backends.  Real detectors are external models; these stubs keep
# the preprocessing path deterministic and test-friendly.
# ---------------------------------------------------------------------------

def _frontal_template() -> np.ndarray:
    """68-point frontal layout in unit coordinates.

    Synthetic but anatomically ordered (jaw, brows, nose, eyes, mouth).
    The eye block is sized so that the default margins hide roughly 75%
    of the frame once expanded.
    """
    pts = np.zeros((68, 2))
    # jaw 0-16: half ellipse
    t = np.linspace(0.0, np.pi, 17)
    pts[0:17, 0] = 0.5 - 0.37 * np.cos(t)
    pts[0:17, 1] = 0.45 + 0.48 * np.sin(t)
    # brows 17-26
    bx = np.linspace(0.22, 0.42, 5)
    pts[17:22, 0] = bx
    pts[17:22, 1] = 0.33 - 0.03 * np.sin(np.linspace(0, np.pi, 5))
    pts[22:27, 0] = 1.0 - bx[::-1]
    pts[22:27, 1] = pts[17:22, 1][::-1]
    # nose bridge 27-30 and base 31-35
    pts[27:31, 0] = 0.5
    pts[27:31, 1] = np.linspace(0.45, 0.64, 4)
    pts[31:36, 0] = np.linspace(0.42, 0.58, 5)
    pts[31:36, 1] = 0.68
    # eyes 36-47 (right then left), box x [0.24, 0.76], y [0.3825, 0.5175]
    right = [
        (0.240, 0.450), (0.285, 0.3825), (0.345, 0.3825),
        (0.400, 0.450), (0.345, 0.5175), (0.285, 0.5175),
    ]
    left = [(1.0 - x, y) for x, y in right]
    pts[36:42] = right
    pts[42:48] = [left[3], left[2], left[1], left[0], left[5], left[4]]
    # mouth 48-67: outer ring of 12, inner ring of 8
    t = np.linspace(0.0, 2 * np.pi, 12, endpoint=False)
    pts[48:60, 0] = 0.5 + 0.13 * np.cos(t)
    pts[48:60, 1] = 0.80 + 0.06 * np.sin(t)
    t = np.linspace(0.0, 2 * np.pi, 8, endpoint=False)
    pts[60:68, 0] = 0.5 + 0.07 * np.cos(t)
    pts[60:68, 1] = 0.80 + 0.03 * np.sin(t)
    return pts


FRONTAL_TEMPLATE = _frontal_template()


class StubLandmarkBackend:
    """Deterministic landmark source: the frontal template scaled to size."""

    def detect(self, img) -> LandmarkSet:
        px = _pixels(img)
        h, w = px.shape[:2]
        pts = FRONTAL_TEMPLATE * np.array([w, h], dtype=np.float64)
        return LandmarkSet(pts, confidence=1.0)


class StubPoseBackend:
    """Pose source returning fixed, caller-supplied angles."""

    def __init__(self, roll=0.0, pitch=0.0, yaw=0.0):
        self.angles = PoseAngles(roll, pitch, yaw)

    def estimate(self, img) -> PoseAngles:
        return self.angles
