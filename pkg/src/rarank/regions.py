"""Region preprocessing for detection-style inputs: expand, blur, crop, resize.

Images are uint8 RGB arrays of shape (height, width, 3). All operations are
pure functions over owned buffers and trivially parallel across regions.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateBox, InvariantViolation


@dataclass(frozen=True)
class BBox:
    """Pixel box with inclusive-exclusive bounds, x0 < x1 and y0 < y1."""

    x0: int
    y0: int
    x1: int
    y1: int

    def __post_init__(self):
        if self.x0 >= self.x1 or self.y0 >= self.y1:
            raise DegenerateBox(f"box {(self.x0, self.y0, self.x1, self.y1)} has no area")

    @property
    def width(self) -> int:
        return self.x1 - self.x0

    @property
    def height(self) -> int:
        return self.y1 - self.y0

    def contains(self, other: "BBox") -> bool:
        return (
            self.x0 <= other.x0 and self.y0 <= other.y0
            and self.x1 >= other.x1 and self.y1 >= other.y1
        )


@dataclass(frozen=True)
class RegionParams:
    """Preprocessing knobs. Defaults sit at the blurred-AP sweet spot
    (crop scale 1.6 with blurring on)."""

    crop_scale: float = 1.6
    blur: bool = True
    blur_sigma: float = 10.0
    out_size: int = 224

    def __post_init__(self):
        if self.crop_scale < 1.0:
            raise InvariantViolation(f"crop_scale must be >= 1.0, got {self.crop_scale}")
        if self.blur and self.blur_sigma <= 0:
            raise InvariantViolation("blur_sigma must be positive when blur is enabled")
        if self.out_size < 1:
            raise InvariantViolation("out_size must be >= 1")


def check_image(image) -> np.ndarray:
    arr = np.asarray(image)
    if arr.ndim != 3 or arr.shape[2] != 3 or arr.dtype != np.uint8:
        raise InvariantViolation(f"expected uint8 HxWx3 image, got {arr.dtype} {arr.shape}")
    return arr


def expand_bbox(box: BBox, scale: float, width: int, height: int) -> BBox:
    """Grow the box about its center by ``scale``, then clamp to the image.

    Uses floor/ceil on the grown bounds so a <= b implies box(a) is contained
    in box(b); scale 1.0 is the identity.
    """
    if scale < 1.0:
        raise InvariantViolation(f"scale must be >= 1.0, got {scale}")
    cx = (box.x0 + box.x1) / 2.0
    cy = (box.y0 + box.y1) / 2.0
    half_w = box.width * scale / 2.0
    half_h = box.height * scale / 2.0
    x0 = max(0, math.floor(cx - half_w))
    y0 = max(0, math.floor(cy - half_h))
    x1 = min(width, math.ceil(cx + half_w))
    y1 = min(height, math.ceil(cy + half_h))
    if x0 >= x1 or y0 >= y1:
        raise DegenerateBox(f"expanded box {(x0, y0, x1, y1)} is empty after clamping")
    return BBox(x0, y0, x1, y1)


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Normalized 1-D Gaussian with kernel radius ceil(3 sigma)."""
    radius = math.ceil(3.0 * sigma)
    taps = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-(taps**2) / (2.0 * sigma * sigma))
    return kernel / kernel.sum()


def _convolve_axis(buf: np.ndarray, kernel: np.ndarray, axis: int) -> np.ndarray:
    radius = (len(kernel) - 1) // 2
    pad = [(0, 0)] * buf.ndim
    pad[axis] = (radius, radius)
    padded = np.pad(buf, pad, mode="symmetric")
    out = np.zeros_like(buf)
    for i, weight in enumerate(kernel):
        sl = [slice(None)] * buf.ndim
        sl[axis] = slice(i, i + buf.shape[axis])
        out += weight * padded[tuple(sl)]
    return out


def gaussian_blur(image, sigma: float) -> np.ndarray:
    """Separable Gaussian blur with reflected borders; sigma <= 0 is identity."""
    img = check_image(image)
    if sigma <= 0:
        return img.copy()
    kernel = gaussian_kernel(sigma)
    buf = img.astype(np.float64)
    buf = _convolve_axis(buf, kernel, axis=0)
    buf = _convolve_axis(buf, kernel, axis=1)
    return np.clip(np.rint(buf), 0, 255).astype(np.uint8)


def blur_outside(image, keep: BBox, sigma: float) -> np.ndarray:
    """Blur everything outside ``keep``; pixels inside stay bit-identical."""
    img = check_image(image)
    height, width = img.shape[:2]
    if keep.x0 < 0 or keep.y0 < 0 or keep.x1 > width or keep.y1 > height:
        raise InvariantViolation(f"keep box {keep} exceeds image {width}x{height}")
    if sigma <= 0:
        return img.copy()
    out = gaussian_blur(img, sigma)
    out[keep.y0 : keep.y1, keep.x0 : keep.x1] = img[keep.y0 : keep.y1, keep.x0 : keep.x1]
    return out


def resize_bilinear(image, out_height: int, out_width: int) -> np.ndarray:
    """Bilinear resample with half-pixel centers; same-size input is copied."""
    img = check_image(image)
    height, width = img.shape[:2]
    if (out_height, out_width) == (height, width):
        return img.copy()
    ys = (np.arange(out_height, dtype=np.float64) + 0.5) * (height / out_height) - 0.5
    xs = (np.arange(out_width, dtype=np.float64) + 0.5) * (width / out_width) - 0.5
    y0 = np.floor(ys)
    x0 = np.floor(xs)
    fy = (ys - y0)[:, None, None]
    fx = (xs - x0)[None, :, None]
    y0c = np.clip(y0, 0, height - 1).astype(np.intp)
    y1c = np.clip(y0 + 1, 0, height - 1).astype(np.intp)
    x0c = np.clip(x0, 0, width - 1).astype(np.intp)
    x1c = np.clip(x0 + 1, 0, width - 1).astype(np.intp)
    buf = img.astype(np.float64)
    top = buf[y0c][:, x0c] * (1 - fx) + buf[y0c][:, x1c] * fx
    bottom = buf[y1c][:, x0c] * (1 - fx) + buf[y1c][:, x1c] * fx
    out = top * (1 - fy) + bottom * fy
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def crop_resize(image, box: BBox, out_size: int) -> np.ndarray:
    """Crop the box and letterbox it onto a black out_size x out_size square.

    The crop is scaled by out_size / max(side) with bilinear interpolation,
    preserving aspect ratio, and pasted centered; padding stays black.
    """
    img = check_image(image)
    height, width = img.shape[:2]
    x0, y0 = max(0, box.x0), max(0, box.y0)
    x1, y1 = min(width, box.x1), min(height, box.y1)
    if x0 >= x1 or y0 >= y1:
        raise DegenerateBox(f"box {box} lies outside the {width}x{height} image")
    crop = img[y0:y1, x0:x1]
    ch, cw = crop.shape[:2]
    scale = out_size / max(ch, cw)
    new_h = max(1, int(round(ch * scale)))
    new_w = max(1, int(round(cw * scale)))
    resized = resize_bilinear(crop, new_h, new_w)
    canvas = np.zeros((out_size, out_size, 3), dtype=np.uint8)
    oy = (out_size - new_h) // 2
    ox = (out_size - new_w) // 2
    canvas[oy : oy + new_h, ox : ox + new_w] = resized
    return canvas


def preprocess_region(image, box: BBox, params: RegionParams) -> np.ndarray:
    """Full region pipeline: blur context, expand the box, crop and letterbox.

    The blur mask is the original proposal box; the crop uses the expanded
    box, so grown-in context stays blurred inside the final crop.
    """
    img = check_image(image)
    height, width = img.shape[:2]
    staged = blur_outside(img, box, params.blur_sigma) if params.blur else img
    expanded = expand_bbox(box, params.crop_scale, width, height)
    return crop_resize(staged, expanded, params.out_size)
