"""Flow-consistent data augmentation.

Every transform keeps the training triple (input image, background, matte)
coherent: geometric ops move all members together and re-map the flow field
covariantly, photometric ops touch the images but never the matte. With a
fixed seed the full pipeline is a deterministic function of (sample, config).
The pipeline applies, in order: color jitter, scaling, noise, flips, boundary
blur, random crop.
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.ndimage import binary_dilation

from .core import FlowField, Matte, composite_refractive, resize_bilinear

COLOR_LIMIT = 0.2
NOISE_LIMIT = 0.05
SCALE_RANGE = (0.875, 1.05)

_LUMA = np.array([0.299, 0.587, 0.114])


@dataclass
class Sample:
    """One training record: input image, true background and matte."""

    image: np.ndarray
    background: np.ndarray
    matte: Matte
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        hw = self.matte.mask.shape
        if self.image.shape[:2] != hw or self.background.shape[:2] != hw:
            raise ValueError(
                f"sample members disagree: image {self.image.shape[:2]}, "
                f"background {self.background.shape[:2]}, matte {hw}"
            )


@dataclass
class AugmentConfig:
    """Augmentation ranges; defaults follow the synthetic-data recipe."""

    color_range: float = COLOR_LIMIT
    scale_range: tuple = SCALE_RANGE
    noise_amplitude: float = NOISE_LIMIT
    flip_probability: float = 0.5
    crop_size: int = 448
    blur_boundary: bool = True
    blur_radius: float = 1.5
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.color_range <= COLOR_LIMIT:
            raise ValueError(f"color range must be within [0, {COLOR_LIMIT}]")
        if not 0.0 <= self.noise_amplitude <= NOISE_LIMIT:
            raise ValueError(f"noise amplitude must be within [0, {NOISE_LIMIT}]")
        lo, hi = self.scale_range
        if lo < SCALE_RANGE[0] or hi > SCALE_RANGE[1] or lo > hi:
            raise ValueError(f"scale range must stay within {SCALE_RANGE}")
        if not 0.0 <= self.flip_probability <= 1.0:
            raise ValueError("flip probability must be in [0, 1]")
        if self.crop_size < 1 or self.blur_radius < 0:
            raise ValueError("crop size must be >= 1 and blur radius >= 0")


def _flip(sample: Sample, axis: int) -> Sample:
    sl = (slice(None), slice(None, None, -1)) if axis == 1 else (slice(None, None, -1),)
    off = sample.matte.flow.offsets[sl].copy()
    off[..., 0 if axis == 1 else 1] *= -1.0  # negate the mirrored component
    matte = Matte(
        np.ascontiguousarray(sample.matte.mask[sl]),
        np.ascontiguousarray(sample.matte.attenuation[sl]),
        FlowField(off, np.ascontiguousarray(sample.matte.flow.valid[sl])),
    )
    return Sample(
        np.ascontiguousarray(sample.image[sl]),
        np.ascontiguousarray(sample.background[sl]),
        matte,
        dict(sample.meta),
    )


def flip_horizontal(sample: Sample) -> Sample:
    """Mirror about the vertical axis; the flow x component negates."""
    return _flip(sample, axis=1)


def flip_vertical(sample: Sample) -> Sample:
    """Mirror about the horizontal axis; the flow y component negates."""
    return _flip(sample, axis=0)


def _jitter_image(img, brightness, contrast, saturation):
    out = np.asarray(img, dtype=np.float64) + brightness
    out = 0.5 + (1.0 + contrast) * (out - 0.5)
    if out.ndim == 3 and out.shape[2] == 3 and saturation != 0.0:
        luma = out @ _LUMA
        out = luma[..., None] + (1.0 + saturation) * (out - luma[..., None])
    return np.clip(out, 0.0, 1.0)


def jitter_color(
    sample: Sample,
    brightness: float = 0.0,
    contrast: float = 0.0,
    saturation: float = 0.0,
) -> Sample:
    """Photometric jitter applied identically to input and background.

    Brightness is additive, contrast scales about 0.5, saturation blends with
    the per-pixel luma; each delta must stay within +-0.2. The matte is left
    untouched and outputs are clamped to [0, 1].
    """
    for name, d in (("brightness", brightness), ("contrast", contrast),
                    ("saturation", saturation)):
        if abs(d) > COLOR_LIMIT + 1e-12:
            raise ValueError(f"{name} delta {d} outside [-{COLOR_LIMIT}, {COLOR_LIMIT}]")
    return Sample(
        _jitter_image(sample.image, brightness, contrast, saturation),
        _jitter_image(sample.background, brightness, contrast, saturation),
        sample.matte,
        dict(sample.meta),
    )


def add_noise(sample: Sample, amplitude: float, seed: int) -> Sample:
    """Add i.i.d. uniform noise in [-amplitude, amplitude] to the input only."""
    if not 0.0 <= amplitude <= NOISE_LIMIT + 1e-12:
        raise ValueError(f"noise amplitude {amplitude} outside [0, {NOISE_LIMIT}]")
    if amplitude == 0.0:
        return Sample(sample.image, sample.background, sample.matte, dict(sample.meta))
    rng = np.random.default_rng(seed)
    noise = rng.uniform(-amplitude, amplitude, size=sample.image.shape)
    return Sample(
        np.clip(np.asarray(sample.image, np.float64) + noise, 0.0, 1.0),
        sample.background,
        sample.matte,
        dict(sample.meta),
    )


def _resize_nearest_bool(arr, new_h, new_w):
    h, w = arr.shape
    ys = np.clip(np.round((np.arange(new_h) + 0.5) * h / new_h - 0.5), 0, h - 1)
    xs = np.clip(np.round((np.arange(new_w) + 0.5) * w / new_w - 0.5), 0, w - 1)
    return arr[ys.astype(int)[:, None], xs.astype(int)[None, :]]


def scale_sample(sample: Sample, factor: float, min_size: int = 2) -> Sample:
    """Resample the whole sample by `factor`; flow offsets scale covariantly.

    The new size is rounded to the nearest integer, so offsets are multiplied
    by the realized per-axis ratio (identical to `factor` whenever the scaled
    size is integral). Rejects factors outside [0.875, 1.05] and results
    smaller than `min_size`.
    """
    lo, hi = SCALE_RANGE
    if not lo <= factor <= hi:
        raise ValueError(f"scale factor {factor} outside [{lo}, {hi}]")
    h, w = sample.matte.mask.shape
    new_h, new_w = int(round(h * factor)), int(round(w * factor))
    if new_h < min_size or new_w < min_size:
        raise ValueError(f"scaled size {new_h}x{new_w} below minimum {min_size}")
    ry, rx = new_h / h, new_w / w
    off = resize_bilinear(sample.matte.flow.offsets, new_h, new_w)
    off[..., 0] *= rx
    off[..., 1] *= ry
    valid = _resize_nearest_bool(sample.matte.flow.valid, new_h, new_w)
    matte = Matte(
        np.clip(resize_bilinear(sample.matte.mask, new_h, new_w), 0, 1).astype(np.float32),
        np.clip(resize_bilinear(sample.matte.attenuation, new_h, new_w), 0, 1).astype(np.float32),
        FlowField(off.astype(np.float32), valid),
    )
    return Sample(
        resize_bilinear(sample.image, new_h, new_w),
        resize_bilinear(sample.background, new_h, new_w),
        matte,
        dict(sample.meta),
    )


def _gaussian1d(radius: float):
    sigma = max(radius / 2.0, 1e-6)
    half = max(1, int(math.ceil(radius)))
    x = np.arange(-half, half + 1, dtype=np.float64)
    k = np.exp(-(x ** 2) / (2 * sigma * sigma))
    return k / k.sum()


def _blur2d(img, kernel):
    half = len(kernel) // 2
    padded = np.pad(img, ((half, half), (0, 0)), mode="edge")
    tmp = sum(padded[i : i + img.shape[0]] * kernel[i] for i in range(len(kernel)))
    padded = np.pad(tmp, ((0, 0), (half, half)), mode="edge")
    return sum(padded[:, i : i + img.shape[1]] * kernel[i] for i in range(len(kernel)))


def blur_boundary(sample: Sample, radius: float = 1.5) -> Sample:
    """Soften the object mask in a band around its 0/1 transition.

    The mask is Gaussian-blurred only within +-radius of the boundary (interior
    and exterior stay untouched) and the input image is re-composited with the
    softened matte so image and matte remain consistent.
    """
    if radius < 0:
        raise ValueError("blur radius must be >= 0")
    if radius == 0:
        return Sample(sample.image, sample.background, sample.matte, dict(sample.meta))
    mask = sample.matte.mask.astype(np.float64)
    binary = mask >= 0.5
    padded = np.pad(binary, 1, mode="edge")
    transition = np.zeros_like(binary)
    for dy, dx in ((-1, 0), (1, 0), (0, -1), (0, 1)):
        transition |= binary != padded[1 + dy : 1 + dy + binary.shape[0],
                                       1 + dx : 1 + dx + binary.shape[1]]
    if not transition.any():
        return Sample(sample.image, sample.background, sample.matte, dict(sample.meta))
    band = binary_dilation(transition, iterations=max(1, int(math.ceil(radius))))
    blurred = _blur2d(mask, _gaussian1d(radius))
    new_mask = np.where(band, blurred, mask)
    matte = Matte(
        np.clip(new_mask, 0, 1).astype(np.float32),
        sample.matte.attenuation,
        sample.matte.flow,
    )
    return Sample(
        composite_refractive(matte, sample.background),
        sample.background,
        matte,
        dict(sample.meta),
    )


def random_crop(sample: Sample, size, seed: int) -> Sample:
    """Cut the same window from every member; flow offsets are unchanged.

    Offsets are translation-invariant, and targets that leave the crop stay
    valid: they index the identically cropped background, where out-of-frame
    samples clamp to the border. Offsets larger than the new frame are clamped
    to +-frame size, which samples identically after border clamping.
    """
    ch, cw = (size, size) if np.isscalar(size) else size
    h, w = sample.matte.mask.shape
    if ch > h or cw > w:
        raise ValueError(f"crop {ch}x{cw} larger than sample {h}x{w}")
    rng = np.random.default_rng(seed)
    y0 = int(rng.integers(0, h - ch + 1))
    x0 = int(rng.integers(0, w - cw + 1))
    sl = (slice(y0, y0 + ch), slice(x0, x0 + cw))
    off = sample.matte.flow.offsets[sl].copy()
    off[..., 0] = np.clip(off[..., 0], -cw, cw)
    off[..., 1] = np.clip(off[..., 1], -ch, ch)
    matte = Matte(
        sample.matte.mask[sl].copy(),
        sample.matte.attenuation[sl].copy(),
        FlowField(off, sample.matte.flow.valid[sl].copy()),
    )
    meta = dict(sample.meta, crop_origin=(x0, y0))
    return Sample(
        np.ascontiguousarray(sample.image[sl]),
        np.ascontiguousarray(sample.background[sl]),
        matte,
        meta,
    )


def augment_sample(sample: Sample, config: AugmentConfig) -> Sample:
    """Run the full pipeline: color, scale, noise, flip, blur, crop."""
    rng = np.random.default_rng(config.seed)
    c = config.color_range
    out = jitter_color(
        sample,
        brightness=rng.uniform(-c, c),
        contrast=rng.uniform(-c, c),
        saturation=rng.uniform(-c, c),
    )
    lo, hi = config.scale_range
    out = scale_sample(out, rng.uniform(lo, hi), min_size=config.crop_size)
    out = add_noise(out, config.noise_amplitude, seed=int(rng.integers(2 ** 63)))
    if rng.random() < config.flip_probability:
        out = flip_horizontal(out)
    if rng.random() < config.flip_probability:
        out = flip_vertical(out)
    if config.blur_boundary:
        out = blur_boundary(out, config.blur_radius)
    return random_crop(out, config.crop_size, seed=int(rng.integers(2 ** 63)))
