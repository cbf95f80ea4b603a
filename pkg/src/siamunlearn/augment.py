"""Seeded augmentation pipelines for (C, H, W) images in [0, 1].

Every call derives its own generator from ``(base_seed, example_id,
view_id, epoch)``, so a view is a pure function of those four numbers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from matplotlib.colors import hsv_to_rgb, rgb_to_hsv
from scipy.ndimage import gaussian_filter1d, zoom

from .errors import ConfigError

FAMILIES = ("simple", "contrastive", "cutout")


@dataclass(frozen=True)
class AugPipeline:
    family: str = "simple"
    base_seed: int = 0
    # None means "derive from image size" (1/8 of the side for padding, 1/4 for cutout)
    crop_padding: int | None = None
    flip_prob: float = 0.5
    resize_scale: tuple[float, float] = (0.2, 1.0)
    resize_ratio: tuple[float, float] = (3 / 4, 4 / 3)
    jitter_prob: float = 0.8
    brightness: float = 0.4
    contrast: float = 0.4
    saturation: float = 0.4
    hue: float = 0.1
    grayscale_prob: float = 0.2
    blur_prob: float = 1.0
    blur_sigma: tuple[float, float] = (0.1, 2.0)
    cutout_size: int | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown augmentation family {self.family!r}; expected one of {FAMILIES}")
        lo, hi = self.resize_scale
        if not 0 < lo <= hi <= 1:
            raise ConfigError(f"resize_scale must satisfy 0 < lo <= hi <= 1, got {self.resize_scale}")

    @classmethod
    def identity(cls, family: str = "simple", base_seed: int = 0) -> AugPipeline:
        return cls(family=family, base_seed=base_seed, crop_padding=0, flip_prob=0.0,
                   resize_scale=(1.0, 1.0), resize_ratio=(1.0, 1.0), jitter_prob=0.0,
                   grayscale_prob=0.0, blur_prob=0.0, cutout_size=0)

    def with_seed(self, base_seed: int) -> AugPipeline:
        return replace(self, base_seed=base_seed)

    def padding_for(self, size: int) -> int:
        return round(size / 8) if self.crop_padding is None else self.crop_padding

    def cutout_for(self, size: int) -> int:
        return round(size / 4) if self.cutout_size is None else self.cutout_size


def view_rng(pipeline: AugPipeline, example_id: int, view_id: int, epoch: int) -> np.random.Generator:
    return np.random.default_rng([pipeline.base_seed, example_id, view_id, epoch])


# ---------------------------------------------------------------- primitives

def hflip(image: np.ndarray) -> np.ndarray:
    return image[:, :, ::-1]


def pad_crop(image: np.ndarray, pad: int, top: int, left: int) -> np.ndarray:
    """Zero-pad by ``pad`` then cut the original-size window at (top, left)."""
    if pad == 0:
        return image
    _, h, w = image.shape
    padded = np.pad(image, ((0, 0), (pad, pad), (pad, pad)))
    return padded[:, top:top + h, left:left + w]


def resized_crop(image: np.ndarray, top: int, left: int, ch: int, cw: int) -> np.ndarray:
    _, h, w = image.shape
    patch = image[:, top:top + ch, left:left + cw]
    if (ch, cw) == (h, w):
        return patch
    return zoom(patch, (1, h / ch, w / cw), order=1, mode="nearest", grid_mode=True)


def adjust_brightness(image: np.ndarray, factor: float) -> np.ndarray:
    return image * factor


def adjust_contrast(image: np.ndarray, factor: float) -> np.ndarray:
    mean = grayscale(image).mean()
    return (image - mean) * factor + mean


def adjust_saturation(image: np.ndarray, factor: float) -> np.ndarray:
    if image.shape[0] != 3:
        return image
    gray = grayscale(image)
    return (image - gray) * factor + gray


def adjust_hue(image: np.ndarray, shift: float) -> np.ndarray:
    if image.shape[0] != 3:
        return image
    hsv = rgb_to_hsv(np.clip(image, 0.0, 1.0).transpose(1, 2, 0))
    hsv[..., 0] = (hsv[..., 0] + shift) % 1.0
    return hsv_to_rgb(hsv).transpose(2, 0, 1)


def grayscale(image: np.ndarray) -> np.ndarray:
    """Luma image broadcast back to the input channel count."""
    if image.shape[0] != 3:
        return image
    luma = 0.299 * image[0] + 0.587 * image[1] + 0.114 * image[2]
    return np.broadcast_to(luma, image.shape)


def gaussian_blur(image: np.ndarray, sigma: float) -> np.ndarray:
    radius = int(math.ceil(3 * sigma))
    out = gaussian_filter1d(image, sigma, axis=1, mode="reflect", truncate=radius / sigma)
    return gaussian_filter1d(out, sigma, axis=2, mode="reflect", truncate=radius / sigma)


def cutout_square(image: np.ndarray, top: int, left: int, size: int) -> np.ndarray:
    """Zero a ``size`` square whose top-left corner may lie outside the image."""
    out = image.copy()
    _, h, w = image.shape
    out[:, max(top, 0):max(min(top + size, h), 0), max(left, 0):max(min(left + size, w), 0)] = 0.0
    return out


# ------------------------------------------------------------------ families

def _simple(p: AugPipeline, image: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    _, h, w = image.shape
    pad = p.padding_for(h)
    top, left = rng.integers(0, 2 * pad + 1, size=2)
    out = pad_crop(image, pad, int(top), int(left))
    if rng.random() < p.flip_prob:
        out = hflip(out)
    return out


def _sample_resized_crop(p: AugPipeline, h: int, w: int, rng: np.random.Generator) -> tuple[int, int, int, int]:
    area = h * w
    log_ratio = (math.log(p.resize_ratio[0]), math.log(p.resize_ratio[1]))
    for _ in range(10):
        target = area * rng.uniform(*p.resize_scale)
        ratio = math.exp(rng.uniform(*log_ratio))
        cw = int(round(math.sqrt(target * ratio)))
        ch = int(round(math.sqrt(target / ratio)))
        if 0 < cw <= w and 0 < ch <= h:
            top = int(rng.integers(0, h - ch + 1))
            left = int(rng.integers(0, w - cw + 1))
            return top, left, ch, cw
    return 0, 0, h, w


def _contrastive(p: AugPipeline, image: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    _, h, w = image.shape
    out = resized_crop(image, *_sample_resized_crop(p, h, w, rng))
    if rng.random() < p.flip_prob:
        out = hflip(out)
    if rng.random() < p.jitter_prob:
        b, c, s = (rng.uniform(1 - x, 1 + x) for x in (p.brightness, p.contrast, p.saturation))
        shift = rng.uniform(-p.hue, p.hue)
        for op in rng.permutation(4):
            if op == 0:
                out = adjust_brightness(out, b)
            elif op == 1:
                out = adjust_contrast(out, c)
            elif op == 2:
                out = adjust_saturation(out, s)
            else:
                out = adjust_hue(out, shift)
            out = np.clip(out, 0.0, 1.0)
    if rng.random() < p.grayscale_prob:
        out = grayscale(out)
    if rng.random() < p.blur_prob:
        out = gaussian_blur(out, rng.uniform(*p.blur_sigma))
    return out


def _cutout(p: AugPipeline, image: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    out = _simple(p, image, rng)
    _, h, w = image.shape
    size = p.cutout_for(h)
    if size <= 0:
        return out
    cy, cx = int(rng.integers(0, h)), int(rng.integers(0, w))
    return cutout_square(out, cy - size // 2, cx - size // 2, size)


_FAMILY_FN = {"simple": _simple, "contrastive": _contrastive, "cutout": _cutout}


def augment(pipeline: AugPipeline, image: np.ndarray, example_id: int, view_id: int,
            epoch: int) -> np.ndarray:
    if image.ndim != 3:
        raise ConfigError(f"augment expects a (C, H, W) image, got shape {image.shape}")
    rng = view_rng(pipeline, example_id, view_id, epoch)
    out = _FAMILY_FN[pipeline.family](pipeline, image, rng)
    return np.clip(out, 0.0, 1.0).astype(image.dtype, copy=False)


def two_views(pipeline: AugPipeline, image: np.ndarray, example_id: int,
              epoch: int) -> tuple[np.ndarray, np.ndarray]:
    return (augment(pipeline, image, example_id, 0, epoch),
            augment(pipeline, image, example_id, 1, epoch))


def augment_batch(pipeline: AugPipeline, images: np.ndarray, example_ids, view_id: int,
                  epoch: int) -> np.ndarray:
    return np.stack([augment(pipeline, img, int(i), view_id, epoch)
                     for img, i in zip(images, example_ids)])
