"""Raster-space preprocessing: region crops, combo images, colored overlays.

All rasters are float32 numpy arrays of shape (H, W, 3) with values in [0, 1],
channel order RGB. Every operation here is pure; nothing mutates its inputs.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from PIL import Image

logger = logging.getLogger(__name__)

# Default overlay: translucent pink.
DEFAULT_OVERLAY_COLOR = (1.0, 0.75, 0.80)
DEFAULT_OVERLAY_ALPHA = 0.4


class DegenerateBoxError(ValueError):
    """Raised when a region box has zero area after clamping to image bounds."""


@dataclass(frozen=True)
class RegionBox:
    """Axis-aligned box in pixel coordinates, top-left origin, (x, y, w, h)."""

    x: int
    y: int
    w: int
    h: int

    def __post_init__(self):
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"box must have positive extent, got w={self.w} h={self.h}")

    def clamp(self, height: int, width: int, sample_id: str | None = None) -> "RegionBox":
        """Clamp the box to image bounds. Clamping is logged, never silent."""
        x0 = min(max(self.x, 0), width)
        y0 = min(max(self.y, 0), height)
        x1 = min(max(self.x + self.w, 0), width)
        y1 = min(max(self.y + self.h, 0), height)
        if (x0, y0, x1 - x0, y1 - y0) != (self.x, self.y, self.w, self.h):
            logger.warning(
                "clamped box (%d,%d,%d,%d) to image %dx%d%s",
                self.x, self.y, self.w, self.h, width, height,
                f" (sample {sample_id})" if sample_id else "",
            )
        if x1 - x0 <= 0 or y1 - y0 <= 0:
            raise DegenerateBoxError(
                f"box (x={self.x}, y={self.y}, w={self.w}, h={self.h}) has zero area "
                f"after clamping to {width}x{height} image"
                + (f" (sample {sample_id})" if sample_id else "")
            )
        return RegionBox(x0, y0, x1 - x0, y1 - y0)


@dataclass(frozen=True)
class ComboImage:
    """Two equal squares stacked into one raster.

    ``region_extent`` names the half that holds the region: "top"/"bottom" for
    vertical combos, "left"/"right" for horizontal ones.
    """

    raster: np.ndarray
    axis: str  # "vertical" | "horizontal"
    region_extent: str

    @property
    def side(self) -> int:
        h, w, _ = self.raster.shape
        return w if self.axis == "vertical" else h

    def region_half(self) -> np.ndarray:
        h, w, _ = self.raster.shape
        if self.axis == "vertical":
            return self.raster[: h // 2] if self.region_extent == "top" else self.raster[h // 2 :]
        return self.raster[:, : w // 2] if self.region_extent == "left" else self.raster[:, w // 2 :]


def validate_raster(img: np.ndarray) -> np.ndarray:
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"raster must be (H, W, 3), got shape {img.shape}")
    if not np.isfinite(img).all():
        raise ValueError("raster contains non-finite values")
    if img.min() < 0.0 or img.max() > 1.0:
        raise ValueError("raster values must lie in [0, 1]")
    return np.asarray(img, dtype=np.float32)


def load_image(path) -> np.ndarray:
    """Decode a PNG/JPEG file into a [0,1] RGB raster."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    return arr


def _area_weights(n_in: int, n_out: int) -> np.ndarray:
    """Exact pixel-overlap averaging weights, one row per output pixel."""
    w = np.zeros((n_out, n_in), dtype=np.float64)
    scale = n_in / n_out
    for i in range(n_out):
        lo, hi = i * scale, (i + 1) * scale
        for j in range(int(np.floor(lo)), min(int(np.ceil(hi)), n_in)):
            w[i, j] = min(hi, j + 1) - max(lo, j)
    return w / scale


def _bilinear_axis(img: np.ndarray, n_out: int, axis: int) -> np.ndarray:
    """Bilinear resample along one axis, half-pixel centers, edges clamped."""
    n_in = img.shape[axis]
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    lo = np.clip(np.floor(src).astype(int), 0, n_in - 1)
    hi = np.clip(lo + 1, 0, n_in - 1)
    frac = np.clip(src - lo, 0.0, 1.0)
    a = np.take(img, lo, axis=axis)
    b = np.take(img, hi, axis=axis)
    shape = [1, 1, 1]
    shape[axis] = n_out
    return a + (b - a) * frac.reshape(shape)


def resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resize a raster: area-averaging when shrinking, bilinear otherwise.

    Pure-downscale inputs (both axes) go through exact overlap averaging so
    results can be checked against a brute-force block-average oracle; every
    other case uses bilinear with half-pixel alignment.
    """
    img = validate_raster(img)
    h, w, _ = img.shape
    if (out_h, out_w) == (h, w):
        return img.copy()
    if out_h <= h and out_w <= w:
        wr = _area_weights(h, out_h)
        wc = _area_weights(w, out_w)
        out = np.einsum("oh,hwc,pw->opc", wr, img.astype(np.float64), wc)
    else:
        out = _bilinear_axis(img.astype(np.float64), out_h, axis=0)
        out = _bilinear_axis(out, out_w, axis=1)
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def crop_region(image: np.ndarray, box: RegionBox, side: int,
                sample_id: str | None = None) -> np.ndarray:
    """Crop ``box`` out of ``image`` and squash it to a ``side``x``side`` square.

    Scaling is non-uniform (aspect ratio is not preserved). An exact-fit box
    (already side x side) is returned as a copy with no resampling.
    """
    if side <= 0:
        raise ValueError("side must be positive")
    image = validate_raster(image)
    h, w, _ = image.shape
    box = box.clamp(h, w, sample_id=sample_id)
    crop = image[box.y : box.y + box.h, box.x : box.x + box.w]
    if box.w == side and box.h == side:
        return crop.copy()
    return resize(crop, side, side)


def make_combo(region_img: np.ndarray, context_img: np.ndarray,
               axis: str = "vertical") -> ComboImage:
    """Stack two equal squares into a combo image, region first.

    Vertical combos put the region on top; horizontal combos put it on the
    left. Constituent pixels are bit-preserved.
    """
    region_img = validate_raster(region_img)
    context_img = validate_raster(context_img)
    if region_img.shape != context_img.shape:
        raise ValueError(
            f"region and context must match, got {region_img.shape} vs {context_img.shape}")
    h, w, _ = region_img.shape
    if h != w:
        raise ValueError(f"combo constituents must be square, got {h}x{w}")
    if axis == "vertical":
        return ComboImage(np.concatenate([region_img, context_img], axis=0), axis, "top")
    if axis == "horizontal":
        return ComboImage(np.concatenate([region_img, context_img], axis=1), axis, "left")
    raise ValueError(f"axis must be 'vertical' or 'horizontal', got {axis!r}")


def apply_cpt_overlay(image: np.ndarray, box: RegionBox,
                      color=DEFAULT_OVERLAY_COLOR,
                      alpha: float = DEFAULT_OVERLAY_ALPHA) -> np.ndarray:
    """Alpha-blend a translucent color over the box interior.

    Inside the box each channel becomes (1 - alpha) * pixel + alpha * color;
    pixels outside the box are untouched (exact equality).
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    image = validate_raster(image)
    h, w, _ = image.shape
    box = box.clamp(h, w)
    out = image.copy()
    patch = out[box.y : box.y + box.h, box.x : box.x + box.w]
    out[box.y : box.y + box.h, box.x : box.x + box.w] = (
        (1.0 - alpha) * patch + alpha * np.asarray(color, dtype=np.float32))
    return np.clip(out, 0.0, 1.0)


def split_left_right(image: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Split a raster into left and right halves of equal width."""
    image = validate_raster(image)
    _, w, _ = image.shape
    if w % 2 != 0:
        raise ValueError(f"width must be even to split, got {w}; resize upstream")
    return image[:, : w // 2].copy(), image[:, w // 2 :].copy()
