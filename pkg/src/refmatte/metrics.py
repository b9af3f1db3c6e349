"""Losses and evaluation metrics for refractive mattes.

Every function is pure and computes in float64 regardless of input dtype.
Conventions that the literature leaves open are fixed here and documented:
the reconstruction error is the squared L2 norm of the per-pixel channel
difference vector averaged over pixels, masked end-point error uses the
ground-truth object mask, and PSNR is capped at 99 dB.
"""

import warnings
from dataclasses import dataclass, fields

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .core import FlowField, Matte, composite_refractive

CE_EPS = 1e-7
PSNR_CAP = 99.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


@dataclass(frozen=True)
class LossWeights:
    """Default loss weights for the coarse and refinement stages."""

    coarse_mask: float = 0.1
    coarse_attenuation: float = 1.0
    coarse_flow: float = 0.01
    coarse_reconstruction: float = 1.0
    refine_attenuation: float = 1.0
    refine_flow: float = 1.0

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) <= 0:
                raise ValueError(f"loss weight {f.name} must be > 0")


def scale_weights(num_scales: int = 4) -> np.ndarray:
    """Per-scale loss weights 1 / 2^(S - s) for s = 1..S (coarsest first)."""
    return np.array([1.0 / 2 ** (num_scales - s) for s in range(1, num_scales + 1)])


def _as64(a, name):
    arr = np.asarray(a, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def _pair(pred, gt, name):
    p = _as64(pred, f"{name} prediction")
    g = _as64(gt, f"{name} ground truth")
    if p.shape != g.shape:
        raise ValueError(f"{name}: shape mismatch {p.shape} vs {g.shape}")
    return p, g


def loss_mask_ce(probability, gt_mask) -> float:
    """Binary cross-entropy between foreground probability and a 0/1 mask."""
    p, g = _pair(probability, gt_mask, "mask")
    p = np.clip(p, CE_EPS, 1.0 - CE_EPS)
    return float(-np.mean(g * np.log(p) + (1.0 - g) * np.log(1.0 - p)))


def loss_attenuation(pred, gt) -> float:
    """Mean squared error between attenuation masks."""
    p, g = _pair(pred, gt, "attenuation")
    return float(np.mean((p - g) ** 2))


def _flow_arrays(flow):
    if isinstance(flow, FlowField):
        return flow.offsets.astype(np.float64), flow.valid
    arr = _as64(flow, "flow")
    if arr.ndim != 3 or arr.shape[2] != 2:
        raise ValueError(f"flow must be (H, W, 2), got {arr.shape}")
    return arr, None


def loss_flow_epe(pred, gt, mask=None) -> float:
    """Average end-point error between flow fields, optionally masked.

    `pred` and `gt` may be FlowField instances or raw (H, W, 2) arrays. With a
    boolean mask the mean runs over masked pixels only; an empty mask yields
    0.0 with a warning.
    """
    p, _ = _flow_arrays(pred)
    g, _ = _flow_arrays(gt)
    if p.shape != g.shape:
        raise ValueError(f"flow shape mismatch {p.shape} vs {g.shape}")
    err = np.sqrt(np.sum((p - g) ** 2, axis=2))
    if mask is None:
        return float(np.mean(err))
    m = np.asarray(mask, dtype=bool)
    if m.shape != err.shape:
        raise ValueError(f"mask shape {m.shape} != flow {err.shape}")
    if not m.any():
        warnings.warn("EPE over an empty mask; returning 0", stacklevel=2)
        return 0.0
    return float(np.mean(err[m]))


def loss_reconstruction(reconstructed, reference) -> float:
    """Image dissimilarity: squared channel-difference norm averaged over pixels."""
    p, g = _pair(reconstructed, reference, "image")
    d2 = (p - g) ** 2
    if d2.ndim == 3:
        d2 = d2.sum(axis=2)
    return float(np.mean(d2))


def _check_terms(*terms):
    for t in terms:
        if not np.isfinite(t):
            raise ValueError(f"loss term is not finite: {t}")
        if t < 0:
            raise ValueError(f"loss term is negative: {t}")


def coarse_loss(l_mask, l_attenuation, l_flow, l_reconstruction,
                weights: LossWeights = LossWeights()) -> float:
    """Weighted coarse-stage objective over the four loss terms."""
    _check_terms(l_mask, l_attenuation, l_flow, l_reconstruction)
    return float(
        weights.coarse_mask * l_mask
        + weights.coarse_attenuation * l_attenuation
        + weights.coarse_flow * l_flow
        + weights.coarse_reconstruction * l_reconstruction
    )


def multiscale_loss(per_scale) -> float:
    """Combine per-scale losses (coarsest first) with weights 1/2^(S-s)."""
    values = np.asarray(per_scale, dtype=np.float64)
    _check_terms(*values)
    return float(np.dot(scale_weights(len(values)), values))


def refine_loss(l_attenuation, l_flow, weights: LossWeights = LossWeights()) -> float:
    """Refinement-stage objective: attenuation and flow terms only."""
    _check_terms(l_attenuation, l_flow)
    return float(weights.refine_attenuation * l_attenuation + weights.refine_flow * l_flow)


def mask_iou(pred, gt) -> float:
    """Intersection over union of binary masks; two empty masks count as 1."""
    p = np.asarray(pred).astype(bool)
    g = np.asarray(gt).astype(bool)
    if p.shape != g.shape:
        raise ValueError(f"mask shape mismatch {p.shape} vs {g.shape}")
    union = np.logical_or(p, g).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(p, g).sum() / union)


def psnr(a, b, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB, capped at 99."""
    p, g = _pair(a, b, "psnr")
    mse = float(np.mean((p - g) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return float(min(10.0 * np.log10(peak * peak / mse), PSNR_CAP))


def _gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    k = np.exp(-(x ** 2) / (2.0 * sigma * sigma))
    return k / k.sum()


def _filter_valid(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    # separable correlation keeping only fully covered windows
    tmp = sliding_window_view(img, len(kernel), axis=1) @ kernel
    return sliding_window_view(tmp, len(kernel), axis=0) @ kernel


def ssim(a, b) -> float:
    """Mean structural similarity with an 11x11 Gaussian window, sigma 1.5.

    Constants K1 = 0.01, K2 = 0.03 at dynamic range 1. Color images average
    the per-channel scores. Images must be at least the window size.
    """
    p, g = _pair(a, b, "ssim")
    if p.ndim == 2:
        p = p[..., None]
        g = g[..., None]
    h, w = p.shape[:2]
    if h < SSIM_WINDOW or w < SSIM_WINDOW:
        raise ValueError(f"image {h}x{w} smaller than SSIM window {SSIM_WINDOW}")
    c1 = (SSIM_K1 * 1.0) ** 2
    c2 = (SSIM_K2 * 1.0) ** 2
    kernel = _gaussian_kernel(SSIM_WINDOW, SSIM_SIGMA)
    scores = []
    for ch in range(p.shape[2]):
        x, y = p[..., ch], g[..., ch]
        mu_x = _filter_valid(x, kernel)
        mu_y = _filter_valid(y, kernel)
        var_x = _filter_valid(x * x, kernel) - mu_x ** 2
        var_y = _filter_valid(y * y, kernel) - mu_y ** 2
        cov = _filter_valid(x * y, kernel) - mu_x * mu_y
        num = (2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2)
        den = (mu_x ** 2 + mu_y ** 2 + c1) * (var_x + var_y + c2)
        scores.append(np.mean(num / den))
    return float(np.mean(scores))


@dataclass
class EvalReport:
    """Per-sample (or aggregated) evaluation record."""

    epe_whole: float
    epe_object: float
    mask_iou: float
    attenuation_mse: float
    image_mse: float
    psnr: float
    ssim: float

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def __post_init__(self):
        if self.epe_whole < 0 or self.epe_object < 0:
            raise ValueError("EPE must be non-negative")
        if not 0.0 <= self.mask_iou <= 1.0:
            raise ValueError("IoU must be in [0, 1]")
        if not -1.0 <= self.ssim <= 1.0:
            raise ValueError("SSIM must be in [-1, 1]")


def evaluate_matte(pred: Matte, gt: Matte, background, input_image) -> EvalReport:
    """Score a predicted matte against ground truth on one sample.

    EPE is measured over pixels whose ground-truth flow is valid; the object
    variant additionally restricts to the ground-truth mask. The reconstruction
    is the predicted matte composited over the true background and compared to
    the input image.
    """
    if pred.mask.shape != gt.mask.shape:
        raise ValueError(
            f"prediction {pred.mask.shape} vs ground truth {gt.mask.shape}"
        )
    gt_valid = gt.flow.valid
    gt_object = gt.binary_mask() & gt_valid
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        epe_whole = loss_flow_epe(pred.flow, gt.flow, mask=gt_valid)
        epe_object = loss_flow_epe(pred.flow, gt.flow, mask=gt_object)
    reconstructed = composite_refractive(pred, background)
    return EvalReport(
        epe_whole=epe_whole,
        epe_object=epe_object,
        mask_iou=mask_iou(pred.binary_mask(), gt.binary_mask()),
        attenuation_mse=loss_attenuation(pred.attenuation, gt.attenuation),
        image_mse=loss_reconstruction(reconstructed, input_image),
        psnr=psnr(reconstructed, input_image),
        ssim=ssim(reconstructed, input_image),
    )


def background_baseline(gt: Matte, background, input_image) -> EvalReport:
    """Zero-matte baseline: whole frame as mask, no attenuation, no flow.

    Its reconstruction is the background itself, so the report quantifies how
    much of the sample's appearance the refractive matte actually explains.
    """
    h, w = gt.mask.shape
    ones = np.ones((h, w), dtype=np.float32)
    baseline = Matte(ones, ones.copy(), FlowField.zeros(h, w))
    return evaluate_matte(baseline, gt, background, input_image)


def aggregate_reports(reports) -> EvalReport:
    """Field-wise mean of per-sample reports."""
    reports = list(reports)
    if not reports:
        raise ValueError("no reports to aggregate")
    return EvalReport(
        **{
            f.name: float(np.mean([getattr(r, f.name) for r in reports]))
            for f in fields(EvalReport)
        }
    )
