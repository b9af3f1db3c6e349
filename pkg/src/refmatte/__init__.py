"""Refractive-flow matting toolkit.

Composite transparent objects from (mask, attenuation, flow) mattes, render
analytic ground truth by Snell-law ray tracing, extract mattes from Gray-coded
structured-light captures, augment training samples flow-consistently, and
evaluate predictions with the full loss/metric suite.
"""

from .augment import (
    AugmentConfig,
    Sample,
    add_noise,
    augment_sample,
    blur_boundary,
    flip_horizontal,
    flip_vertical,
    jitter_color,
    random_crop,
    scale_sample,
)
from .core import (
    CompositeSummary,
    FlowField,
    Matte,
    bilinear_sample,
    composite_alpha,
    composite_refractive,
    resize_bilinear,
    sample_bilinear_map,
    validate_image,
    warp_by_flow,
)
from .graycode import (
    CaptureStack,
    PatternStack,
    extract_matte,
    generate_pattern_stack,
    gray_decode,
    gray_encode,
)
from .metrics import (
    EvalReport,
    LossWeights,
    aggregate_reports,
    background_baseline,
    coarse_loss,
    evaluate_matte,
    loss_attenuation,
    loss_flow_epe,
    loss_mask_ce,
    loss_reconstruction,
    mask_iou,
    multiscale_loss,
    psnr,
    refine_loss,
    scale_weights,
    ssim,
)
from .render import (
    Camera,
    Lens,
    RigidTransform,
    Scene,
    Slab,
    Sphere,
    SurfaceOfRevolution,
    TransparentObject,
    fresnel_transmittance,
    refract_direction,
    render_capture_stack,
    render_ground_truth_matte,
    render_scene_image,
    trace_ray,
)

__version__ = "0.1.0"
