"""Seeded patch pipeline on 8-bit RGB raster images.

Images are (height, width, 3) uint8 arrays. The pipeline tiles an image
into non-overlapping foreground patches, then per patch: random crop,
coin-flip horizontal/vertical mirroring, color jitter, and occasional
Gaussian blur. Every random decision comes from one generator in a fixed
draw order, so (seed, input) -> output is a pure function; the same
augmented patch is meant to be fed to both networks being compared (one
draw per sample, not one per branch).

Color math runs in float64 and quantizes back to uint8 (clamp, round
half to even) at each stage boundary.
"""

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import convolve1d

from .errors import DataValidationError

LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])


def require_rgb8(img, name: str = "image") -> np.ndarray:
    img = np.asarray(img)
    if img.dtype != np.uint8:
        raise DataValidationError(f"{name} must be uint8, got {img.dtype}")
    if img.ndim != 3 or img.shape[2] != 3:
        raise DataValidationError(f"{name} must have shape (h, w, 3), got {img.shape}")
    return img


def _to_u8(x: np.ndarray) -> np.ndarray:
    return np.rint(np.clip(x, 0.0, 255.0)).astype(np.uint8)


# ---------------------------------------------------------------------------
# vectorized RGB <-> HSV (hue and saturation in [0, 1], value in input units)


def rgb_to_hsv(rgb: np.ndarray) -> np.ndarray:
    rgb = np.asarray(rgb, dtype=np.float64)
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    maxc = rgb.max(axis=-1)
    minc = rgb.min(axis=-1)
    delta = maxc - minc
    s = np.where(maxc > 0, delta / np.where(maxc > 0, maxc, 1.0), 0.0)
    safe = np.where(delta > 0, delta, 1.0)
    rc = (maxc - r) / safe
    gc = (maxc - g) / safe
    bc = (maxc - b) / safe
    h = np.where(maxc == r, bc - gc, np.where(maxc == g, 2.0 + rc - bc, 4.0 + gc - rc))
    h = np.where(delta > 0, (h / 6.0) % 1.0, 0.0)
    return np.stack([h, s, maxc], axis=-1)


def hsv_to_rgb(hsv: np.ndarray) -> np.ndarray:
    hsv = np.asarray(hsv, dtype=np.float64)
    h, s, v = hsv[..., 0], hsv[..., 1], hsv[..., 2]
    sector = np.floor(h * 6.0)
    f = h * 6.0 - sector
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    sector = sector.astype(np.int64) % 6
    conditions = [sector == k for k in range(6)]
    r = np.select(conditions, [v, q, p, p, t, v])
    g = np.select(conditions, [t, v, v, q, p, p])
    b = np.select(conditions, [p, p, t, v, v, q])
    return np.stack([r, g, b], axis=-1)


def saturation_map(img: np.ndarray) -> np.ndarray:
    """Per-pixel HSV saturation in [0, 1] of an 8-bit RGB image."""
    img = require_rgb8(img)
    f = img.astype(np.float64)
    maxc = f.max(axis=2)
    minc = f.min(axis=2)
    return np.where(maxc > 0, (maxc - minc) / np.where(maxc > 0, maxc, 1.0), 0.0)


# ---------------------------------------------------------------------------
# tiling


@dataclass
class AugmentConfig:
    tile: int = 256
    crop: int = 224
    p_hflip: float = 0.5
    p_vflip: float = 0.5
    p_jitter: float = 0.5
    brightness: float = 0.15
    contrast: float = 0.15
    saturation: float = 0.1
    hue: float = 0.05
    p_blur: float = 0.1
    blur_kernel: int = 9
    blur_sigma: tuple = (0.5, 2.0)
    fg_saturation_threshold: float = 0.07
    fg_min_fraction: float = 0.25
    seed: int = 0

    def validate(self):
        for name in ("p_hflip", "p_vflip", "p_jitter", "p_blur"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {p}")
        if self.blur_kernel % 2 != 1 or self.blur_kernel < 1:
            raise ValueError(f"blur_kernel must be a positive odd integer, got {self.blur_kernel}")
        if not 1 <= self.crop <= self.tile:
            raise ValueError(f"need 1 <= crop <= tile, got crop={self.crop}, tile={self.tile}")
        lo, hi = self.blur_sigma
        if not 0 < lo <= hi:
            raise ValueError(f"blur_sigma must be an increasing positive range, got {self.blur_sigma}")
        return self


def tile_image(img, tile: int, fg_saturation_threshold: float = 0.07, fg_min_fraction: float = 0.25):
    """Cut a non-overlapping tile x tile grid anchored at the top-left corner.

    Partial edge tiles are discarded; a tile is kept iff at least
    fg_min_fraction of its pixels have saturation above the threshold.
    Returns [(tile_pixels, (x, y)), ...] scanning rows top to bottom, an
    empty list when the image is smaller than one tile.
    """
    img = require_rgb8(img)
    if tile < 1:
        raise ValueError(f"tile must be >= 1, got {tile}")
    h, w = img.shape[:2]
    sat = saturation_map(img)
    kept = []
    for y in range(0, h - tile + 1, tile):
        for x in range(0, w - tile + 1, tile):
            frac = float(np.mean(sat[y : y + tile, x : x + tile] > fg_saturation_threshold))
            if frac >= fg_min_fraction:
                kept.append((img[y : y + tile, x : x + tile].copy(), (x, y)))
    return kept


# ---------------------------------------------------------------------------
# per-patch transforms


def random_crop(img, crop: int, rng) -> np.ndarray:
    """Uniform-offset crop; the row offset is drawn first, then the column."""
    img = require_rgb8(img)
    h, w = img.shape[:2]
    if crop > h or crop > w:
        raise DataValidationError(f"crop {crop} exceeds image size {h}x{w}")
    y = int(rng.integers(0, h - crop + 1))
    x = int(rng.integers(0, w - crop + 1))
    return img[y : y + crop, x : x + crop].copy()


def flip_h(img) -> np.ndarray:
    return require_rgb8(img)[:, ::-1].copy()


def flip_v(img) -> np.ndarray:
    return require_rgb8(img)[::-1].copy()


def _stage_brightness(f: np.ndarray, factor: float) -> np.ndarray:
    return f * factor


def _stage_contrast(f: np.ndarray, factor: float) -> np.ndarray:
    gray = float(np.mean(f @ LUMA_WEIGHTS))  # one scalar per image
    return gray + (f - gray) * factor


def _stage_saturation(f: np.ndarray, factor: float) -> np.ndarray:
    gray = (f @ LUMA_WEIGHTS)[..., None]  # per pixel
    return gray + (f - gray) * factor


def _stage_hue(f: np.ndarray, shift: float) -> np.ndarray:
    hsv = rgb_to_hsv(f / 255.0)
    hsv[..., 0] = (hsv[..., 0] + shift) % 1.0
    return hsv_to_rgb(hsv) * 255.0


def color_jitter(img, config: AugmentConfig, rng) -> np.ndarray:
    """Brightness/contrast/saturation scaling and hue rotation.

    Factors are drawn first (brightness, contrast, saturation, hue — in
    that order), then the four stages run in a seeded random order, each
    quantizing back to uint8.
    """
    img = require_rgb8(img)
    f_b = rng.uniform(1.0 - config.brightness, 1.0 + config.brightness)
    f_c = rng.uniform(1.0 - config.contrast, 1.0 + config.contrast)
    f_s = rng.uniform(1.0 - config.saturation, 1.0 + config.saturation)
    h_shift = rng.uniform(-config.hue, config.hue)
    stages = [
        lambda f: _stage_brightness(f, f_b),
        lambda f: _stage_contrast(f, f_c),
        lambda f: _stage_saturation(f, f_s),
        lambda f: _stage_hue(f, h_shift),
    ]
    out = img
    for stage_idx in rng.permutation(4):
        out = _to_u8(stages[stage_idx](out.astype(np.float64)))
    return out


def gaussian_kernel(kernel: int, sigma: float) -> np.ndarray:
    """Normalized 1-D Gaussian weights of odd length ``kernel``."""
    if kernel % 2 != 1 or kernel < 1:
        raise ValueError(f"kernel must be a positive odd integer, got {kernel}")
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    offsets = np.arange(kernel) - kernel // 2
    weights = np.exp(-0.5 * (offsets / sigma) ** 2)
    return weights / weights.sum()


def gaussian_blur_float(img: np.ndarray, kernel: int = 9, sigma: float = 1.0) -> np.ndarray:
    """Separable blur of a float image; borders reflect (edge pixel duplicated)."""
    img = np.asarray(img, dtype=np.float64)
    weights = gaussian_kernel(kernel, sigma)
    out = convolve1d(img, weights, axis=0, mode="reflect")
    return convolve1d(out, weights, axis=1, mode="reflect")


def gaussian_blur(img, kernel: int = 9, sigma: float = 1.0) -> np.ndarray:
    img = require_rgb8(img)
    return _to_u8(gaussian_blur_float(img.astype(np.float64), kernel, sigma))


def augment_pipeline(tile_img, config: AugmentConfig, rng, with_log: bool = False):
    """Crop then maybe flip / jitter / blur; one generator, fixed draw order.

    Draw order: crop offsets, then one uniform per optional transform in
    the order hflip, vflip, jitter, blur; a transform's own draws happen
    immediately after its coin when (and only when) the coin fires.
    """
    config.validate()
    out = random_crop(tile_img, config.crop, rng)
    log = {"hflip": False, "vflip": False, "jitter": False, "blur": False, "blur_sigma": None}
    if rng.uniform() < config.p_hflip:
        out = flip_h(out)
        log["hflip"] = True
    if rng.uniform() < config.p_vflip:
        out = flip_v(out)
        log["vflip"] = True
    if rng.uniform() < config.p_jitter:
        out = color_jitter(out, config, rng)
        log["jitter"] = True
    if rng.uniform() < config.p_blur:
        sigma = rng.uniform(config.blur_sigma[0], config.blur_sigma[1])
        out = gaussian_blur(out, config.blur_kernel, sigma)
        log["blur"] = True
        log["blur_sigma"] = sigma
    return (out, log) if with_log else out
