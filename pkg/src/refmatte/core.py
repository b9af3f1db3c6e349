"""Matte data model, bilinear sampling and the compositing operators.

Images are numpy arrays of shape (H, W) or (H, W, C) with C in {1, 3},
row-major, channel-interleaved, values in [0, 1]. Flow fields carry per-pixel
(dx, dy) offsets in pixels plus a validity flag; invalid pixels (total internal
reflection) hold offset (0, 0) by convention. All operations here are pure
functions over immutable inputs and safe to call from multiple threads.
"""

from dataclasses import dataclass, field

import numpy as np


def validate_image(image: np.ndarray, name: str = "image") -> np.ndarray:
    """Check an image array against the buffer conventions and return it as float64.

    Accepts (H, W) or (H, W, C) with C in {1, 3}; every sample must be finite
    and inside [0, 1].
    """
    arr = np.asarray(image)
    if arr.ndim not in (2, 3):
        raise ValueError(f"{name}: expected 2 or 3 dimensions, got shape {arr.shape}")
    if arr.ndim == 3 and arr.shape[2] not in (1, 3):
        raise ValueError(f"{name}: channel count must be 1 or 3, got {arr.shape[2]}")
    if arr.size == 0:
        raise ValueError(f"{name}: empty image")
    arr = arr.astype(np.float64, copy=False)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name}: contains non-finite samples")
    lo, hi = float(arr.min()), float(arr.max())
    if lo < 0.0 or hi > 1.0:
        raise ValueError(f"{name}: samples outside [0, 1] (min={lo:g}, max={hi:g})")
    return arr


def _check_same_size(a: np.ndarray, b: np.ndarray, what: str) -> None:
    if a.shape[:2] != b.shape[:2]:
        raise ValueError(f"{what}: size mismatch {a.shape[:2]} vs {b.shape[:2]}")


@dataclass
class FlowField:
    """Per-pixel (dx, dy) offsets in pixels with a validity flag per pixel.

    offsets: (H, W, 2) float32, offsets[..., 0] = dx, offsets[..., 1] = dy.
    valid:   (H, W) bool; invalid pixels are forced to offset (0, 0).
    Valid offsets are bounded by the frame size (|dx| <= W, |dy| <= H).
    """

    offsets: np.ndarray
    valid: np.ndarray = None  # type: ignore[assignment]

    def __post_init__(self):
        off = np.asarray(self.offsets, dtype=np.float32)
        if off.ndim != 3 or off.shape[2] != 2:
            raise ValueError(f"flow offsets must be (H, W, 2), got {off.shape}")
        if self.valid is None:
            valid = np.ones(off.shape[:2], dtype=bool)
        else:
            valid = np.asarray(self.valid, dtype=bool)
            if valid.shape != off.shape[:2]:
                raise ValueError(
                    f"flow validity shape {valid.shape} != {off.shape[:2]}"
                )
        if not np.all(np.isfinite(off[valid])):
            raise ValueError("flow contains non-finite offsets on valid pixels")
        h, w = off.shape[:2]
        mag_ok = (np.abs(off[..., 0]) <= w) & (np.abs(off[..., 1]) <= h)
        if not np.all(mag_ok[valid]):
            raise ValueError("valid flow offsets exceed the frame size")
        if not np.all(valid):
            off = off.copy()
            off[~valid] = 0.0
        self.offsets = off
        self.valid = valid

    @property
    def height(self) -> int:
        return self.offsets.shape[0]

    @property
    def width(self) -> int:
        return self.offsets.shape[1]

    @staticmethod
    def zeros(height: int, width: int) -> "FlowField":
        return FlowField(np.zeros((height, width, 2), dtype=np.float32))

    def __eq__(self, other) -> bool:
        if not isinstance(other, FlowField):
            return NotImplemented
        return (
            np.array_equal(self.offsets, other.offsets)
            and np.array_equal(self.valid, other.valid)
        )


@dataclass
class Matte:
    """Environment matte: object mask, attenuation mask and refractive flow.

    mask and attenuation are (H, W) float32 in [0, 1]; the mask is stored soft
    (anti-aliased boundaries, boundary blur), with binary mattes as the special
    case. All three members share the same dimensions.
    """

    mask: np.ndarray
    attenuation: np.ndarray
    flow: FlowField

    def __post_init__(self):
        mask = np.asarray(self.mask, dtype=np.float32)
        att = np.asarray(self.attenuation, dtype=np.float32)
        if mask.ndim != 2 or att.ndim != 2:
            raise ValueError("mask and attenuation must be 2-D")
        if mask.shape != att.shape or mask.shape != self.flow.offsets.shape[:2]:
            raise ValueError(
                f"matte member sizes differ: mask {mask.shape}, "
                f"attenuation {att.shape}, flow {self.flow.offsets.shape[:2]}"
            )
        for name, arr in (("mask", mask), ("attenuation", att)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"matte {name} contains non-finite values")
            if arr.min() < 0.0 or arr.max() > 1.0:
                raise ValueError(f"matte {name} outside [0, 1]")
        self.mask = mask
        self.attenuation = att

    @property
    def height(self) -> int:
        return self.mask.shape[0]

    @property
    def width(self) -> int:
        return self.mask.shape[1]

    def binary_mask(self, threshold: float = 0.5) -> np.ndarray:
        return self.mask >= threshold

    def __eq__(self, other) -> bool:
        if not isinstance(other, Matte):
            return NotImplemented
        return (
            np.array_equal(self.mask, other.mask)
            and np.array_equal(self.attenuation, other.attenuation)
            and self.flow == other.flow
        )


@dataclass
class CompositeSummary:
    """Accounting of pixels that composited with a zero-flow fallback."""

    invalid_flow_pixels: int
    invalid_map: np.ndarray = field(repr=False)


def sample_bilinear_map(image: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Bilinear sampling of `image` at arrays of (x, y) coordinates.

    Coordinates outside [0, W-1] x [0, H-1] are clamped to the border, so no
    black fringe is introduced at frame edges. Integer coordinates return the
    pixel value exactly.
    """
    img = np.asarray(image, dtype=np.float64)
    h, w = img.shape[:2]
    x = np.clip(np.asarray(xs, dtype=np.float64), 0.0, w - 1.0)
    y = np.clip(np.asarray(ys, dtype=np.float64), 0.0, h - 1.0)
    x0 = np.floor(x).astype(np.intp)
    y0 = np.floor(y).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = x - x0
    fy = y - y0
    if img.ndim == 3:
        fx = fx[..., None]
        fy = fy[..., None]
    top = (1.0 - fx) * img[y0, x0] + fx * img[y0, x1]
    bot = (1.0 - fx) * img[y1, x0] + fx * img[y1, x1]
    return (1.0 - fy) * top + fy * bot


def resize_bilinear(image: np.ndarray, new_height: int, new_width: int) -> np.ndarray:
    """Resample an image to a new size, aligning pixel centers."""
    img = np.asarray(image, dtype=np.float64)
    h, w = img.shape[:2]
    ys = (np.arange(new_height) + 0.5) * h / new_height - 0.5
    xs = (np.arange(new_width) + 0.5) * w / new_width - 0.5
    gx, gy = np.meshgrid(xs, ys)
    return sample_bilinear_map(img, gx, gy)


def bilinear_sample(image: np.ndarray, x: float, y: float):
    """Bilinearly sample one location; scalar for gray images, (C,) for color.

    Out-of-range coordinates clamp to the border; non-finite coordinates are
    rejected.
    """
    if not (np.isfinite(x) and np.isfinite(y)):
        raise ValueError(f"sample coordinates must be finite, got ({x}, {y})")
    img = np.asarray(image, dtype=np.float64)
    if img.ndim not in (2, 3) or img.size == 0:
        raise ValueError(f"cannot sample image of shape {img.shape}")
    out = sample_bilinear_map(img, np.float64(x), np.float64(y))
    if img.ndim == 2:
        return float(out)
    return out


def warp_by_flow(image: np.ndarray, flow: FlowField) -> np.ndarray:
    """Backward-warp an image by a flow field: out(p) = image(p + flow(p)).

    Invalid flow entries hold offset (0, 0), so they pass the pixel through
    unchanged. This is the per-pixel background-sampling operation that the
    refractive composite applies inside the object region.
    """
    img = np.asarray(image, dtype=np.float64)
    _check_same_size(img, flow.offsets, "warp_by_flow")
    h, w = img.shape[:2]
    ys, xs = np.mgrid[0:h, 0:w]
    off = flow.offsets.astype(np.float64)
    return sample_bilinear_map(img, xs + off[..., 0], ys + off[..., 1])


def composite_alpha(
    foreground: np.ndarray, background: np.ndarray, alpha: np.ndarray
) -> np.ndarray:
    """Classic matting equation: C = F + (1 - alpha) * B, clamped to [0, 1].

    The foreground is premultiplied; alpha may be a scalar or an (H, W) map.
    """
    fg = validate_image(foreground, "foreground")
    bg = validate_image(background, "background")
    _check_same_size(fg, bg, "composite_alpha")
    if fg.shape != bg.shape:
        raise ValueError(f"channel mismatch: {fg.shape} vs {bg.shape}")
    a = np.asarray(alpha, dtype=np.float64)
    if a.ndim == 2:
        if a.shape != fg.shape[:2]:
            raise ValueError(f"alpha shape {a.shape} != image {fg.shape[:2]}")
        if fg.ndim == 3:
            a = a[..., None]
    if np.any(a < 0.0) or np.any(a > 1.0):
        raise ValueError("alpha outside [0, 1]")
    return np.clip(fg + (1.0 - a) * bg, 0.0, 1.0)


def composite_refractive(
    matte: Matte, background: np.ndarray, with_summary: bool = False
):
    """Composite a transparent object onto a background from its matte.

    Per pixel p = (x, y):

        C(p) = (1 - m(p)) * B(p) + m(p) * rho(p) * B(x + dx, y + dy)

    with the shifted background read bilinearly and clamped at the border.
    Pixels whose flow is invalid (total internal reflection) blend as if the
    flow were zero — their stored offset is (0, 0) — and are counted in the
    summary when requested.
    """
    bg = validate_image(background, "background")
    _check_same_size(bg, matte.mask, "composite_refractive")
    warped = warp_by_flow(bg, matte.flow)
    m = matte.mask.astype(np.float64)
    rho = matte.attenuation.astype(np.float64)
    m_b = m[..., None] if bg.ndim == 3 else m
    rho_b = rho[..., None] if bg.ndim == 3 else rho
    out = np.clip((1.0 - m_b) * bg + m_b * rho_b * warped, 0.0, 1.0)
    if not with_summary:
        return out
    invalid_map = (~matte.flow.valid) & (matte.mask > 0.0)
    return out, CompositeSummary(int(invalid_map.sum()), invalid_map)
