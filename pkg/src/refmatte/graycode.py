"""Structured-light Gray-code codec.

Generates reflected-binary Gray-code stripe pattern stacks and decodes a
capture stack (the same scene photographed in front of black, white and each
pattern) back into a matte: mask from the black-background capture, attenuation
from the white-background capture, and refractive flow by reassembling and
decoding the per-pixel stripe codes.

Conventions (the literature leaves them open, so they are fixed here):
reflected binary Gray code, MSB first, horizontal (column-coding) patterns
before vertical (row-coding) ones, complements interleaved after each pattern.
Complements are on by default because transparent objects attenuate, which
makes fixed thresholds unreliable.
"""

import math
from dataclasses import dataclass

import numpy as np

from .core import FlowField, Matte


def gray_encode(n: int) -> int:
    """Reflected binary Gray code of a non-negative integer: n ^ (n >> 1)."""
    if n < 0:
        raise ValueError(f"gray_encode requires n >= 0, got {n}")
    return n ^ (n >> 1)


def gray_decode(g: int) -> int:
    """Inverse of gray_encode."""
    if g < 0:
        raise ValueError(f"gray_decode requires g >= 0, got {g}")
    n = g
    shift = g >> 1
    while shift:
        n ^= shift
        shift >>= 1
    return n


def gray_decode_array(g: np.ndarray) -> np.ndarray:
    """Vectorized Gray decode for uint32 arrays via prefix XOR."""
    b = np.asarray(g, dtype=np.uint32).copy()
    for s in (1, 2, 4, 8, 16):
        b ^= b >> s
    return b


def _bits_for(extent: int) -> int:
    return max(1, math.ceil(math.log2(extent)))


@dataclass
class PatternStack:
    """Ordered Gray-code bit-plane images (binary, values {0, 1})."""

    patterns: list
    bits_x: int
    bits_y: int
    width: int
    height: int
    with_complements: bool

    def __post_init__(self):
        expect = (self.bits_x + self.bits_y) * (2 if self.with_complements else 1)
        if len(self.patterns) != expect:
            raise ValueError(
                f"pattern count {len(self.patterns)} != expected {expect}"
            )
        for p in self.patterns:
            if p.shape != (self.height, self.width):
                raise ValueError("pattern dimensions inconsistent")

    def __len__(self) -> int:
        return len(self.patterns)


def generate_pattern_stack(
    width: int, height: int, with_complements: bool = True
) -> PatternStack:
    """Build the Gray-code stripe patterns for a width x height frame.

    Horizontal patterns encode the column index (vertical stripes), vertical
    patterns encode the row index; each axis uses ceil(log2(extent)) bit
    planes, most significant first.
    """
    if width < 2 or height < 2:
        raise ValueError(f"pattern frame must be at least 2x2, got {width}x{height}")
    bits_x = _bits_for(width)
    bits_y = _bits_for(height)
    col_codes = np.arange(width, dtype=np.uint32)
    col_codes = col_codes ^ (col_codes >> 1)
    row_codes = np.arange(height, dtype=np.uint32)
    row_codes = row_codes ^ (row_codes >> 1)
    patterns = []

    def emit(plane):
        patterns.append(plane.astype(np.float64))
        if with_complements:
            patterns.append(1.0 - plane.astype(np.float64))

    for k in range(bits_x):
        bit = (col_codes >> (bits_x - 1 - k)) & 1
        emit(np.tile(bit, (height, 1)))
    for k in range(bits_y):
        bit = (row_codes >> (bits_y - 1 - k)) & 1
        emit(np.tile(bit[:, None], (1, width)))
    return PatternStack(patterns, bits_x, bits_y, width, height, with_complements)


@dataclass
class CaptureStack:
    """Images of one scene in front of black, white and every pattern.

    `images` follows the PatternStack ordering (complements interleaved when
    present). The black capture shows the object painted white so the mask can
    be read off it directly.
    """

    black: np.ndarray
    white: np.ndarray
    images: list
    bits_x: int
    bits_y: int
    with_complements: bool

    def __post_init__(self):
        shape = self.black.shape
        if self.white.shape != shape or any(im.shape != shape for im in self.images):
            raise ValueError("capture stack dimension mismatch")
        expect = (self.bits_x + self.bits_y) * (2 if self.with_complements else 1)
        if len(self.images) != expect:
            raise ValueError(
                f"capture count {len(self.images)} inconsistent with "
                f"{self.bits_x}+{self.bits_y} bits"
            )

    @property
    def height(self) -> int:
        return self.black.shape[0]

    @property
    def width(self) -> int:
        return self.black.shape[1]


def _decode_axis(stack: CaptureStack, start: int, bits: int, dark_half):
    """Assemble one axis' Gray code per pixel, tracking ambiguous bits."""
    code = np.zeros(stack.black.shape, dtype=np.uint32)
    ambiguous = np.zeros(stack.black.shape, dtype=bool)
    step = 2 if stack.with_complements else 1
    for k in range(bits):
        obs = np.asarray(stack.images[(start + k) * step], dtype=np.float64)
        if stack.with_complements:
            ref = np.asarray(stack.images[(start + k) * step + 1], dtype=np.float64)
        else:
            ref = dark_half
        bit = obs > ref
        ambiguous |= np.abs(obs - ref) <= 1e-6
        code |= bit.astype(np.uint32) << (bits - 1 - k)
    return code, ambiguous


def extract_matte(
    stack: CaptureStack, mask_threshold: float = 0.5
) -> Matte:
    """Decode a capture stack into a matte.

    The mask thresholds the black-background capture (object rendered white).
    Attenuation is the white-background capture clamped to [0, 1]. Flow is the
    decoded background coordinate minus the pixel coordinate for every in-mask
    pixel; pixels with any ambiguous bit are flagged invalid. Without
    complements, bits are thresholded at half the white capture: the dark
    reference of a colorless refractive object in front of a black pattern is
    exactly zero, so the black/white midpoint reduces to white / 2.
    """
    h, w = stack.height, stack.width
    black = np.asarray(stack.black, dtype=np.float64)
    white = np.asarray(stack.white, dtype=np.float64)
    mask = black >= mask_threshold
    attenuation = np.clip(white, 0.0, 1.0)

    dark_half = 0.5 * white
    code_x, amb_x = _decode_axis(stack, 0, stack.bits_x, dark_half)
    code_y, amb_y = _decode_axis(stack, stack.bits_x, stack.bits_y, dark_half)
    cx = np.minimum(gray_decode_array(code_x), w - 1).astype(np.float64)
    cy = np.minimum(gray_decode_array(code_y), h - 1).astype(np.float64)

    ys, xs = np.mgrid[0:h, 0:w]
    offsets = np.zeros((h, w, 2), dtype=np.float32)
    decodable = mask & ~(amb_x | amb_y)
    offsets[..., 0] = np.where(decodable, cx - xs, 0.0)
    offsets[..., 1] = np.where(decodable, cy - ys, 0.0)
    valid = decodable | ~mask  # background pixels carry a valid zero flow
    return Matte(
        mask.astype(np.float32),
        attenuation.astype(np.float32),
        FlowField(offsets, valid),
    )
