"""Dataset generation, matte extraction, compositing and evaluation.

Everything here is a deterministic function of (inputs, flags, seed): sample
seeds derive from the dataset seed, each sample's randomness comes only from
its own seed, and workers own their sample's files, so `--jobs N` never
changes the output bytes.
"""

import csv
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .core import composite_refractive, resize_bilinear
from .fileio import (
    DatasetManifest,
    PipelineConfig,
    SampleRecord,
    read_capture_dir,
    read_image_png,
    read_manifest,
    read_matte,
    write_image_png,
    write_manifest,
    write_matte,
    write_scene_file,
)
from .graycode import extract_matte
from .metrics import EvalReport, aggregate_reports, background_baseline, evaluate_matte
from .render import (
    Camera,
    Lens,
    RigidTransform,
    Scene,
    Slab,
    Sphere,
    SurfaceOfRevolution,
    TransparentObject,
    render_ground_truth_matte,
    render_scene_image,
)

CATEGORIES = ("glass", "glass_water", "lens", "complex")
BACKGROUND_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp")


def category_counts(total: int, ratios=(52, 26, 20, 80)) -> dict:
    """Split `total` across the four categories proportionally to `ratios`.

    Largest-remainder rounding, ties broken by category order, so the split is
    deterministic and sums exactly to `total`.
    """
    if total < 0:
        raise ValueError("count must be >= 0")
    quota = np.array(ratios, dtype=np.float64) * total / float(sum(ratios))
    counts = np.floor(quota).astype(int)
    remainder = quota - counts
    for i in np.argsort(-remainder, kind="stable")[: total - counts.sum()]:
        counts[i] += 1
    return dict(zip(CATEGORIES, (int(c) for c in counts)))


def _goblet_profile(rng, bumps: int) -> np.ndarray:
    zs = np.linspace(-1.0, 1.0, bumps)
    rs = rng.uniform(0.25, 0.85, size=bumps)
    rs[0] = 0.0
    rs[-1] = 0.0
    return np.stack([zs, rs], axis=1)


def random_scene(category: str, image_size: int, rng) -> Scene:
    """Randomized scene for one category: pose, viewpoint and focal length."""
    if category not in CATEGORIES:
        raise ValueError(f"unknown category {category!r}")
    focal = float(rng.uniform(0.7, 1.1)) * image_size
    camera = Camera(width=image_size, height=image_size, focal_length=focal)
    plane = float(rng.uniform(10.0, 14.0))
    z = float(rng.uniform(4.5, 6.5))
    offset = rng.uniform(-0.4, 0.4, size=2)
    pose = RigidTransform.from_euler(
        rx=float(rng.uniform(-25, 25)),
        ry=float(rng.uniform(-25, 25)),
        rz=float(rng.uniform(-180, 180)),
        translation=(float(offset[0]), float(offset[1]), z),
    )
    index = float(rng.uniform(1.3, 1.5))
    inner_shape = None
    inner_index = 1.33
    if category == "glass":
        if rng.random() < 0.5:
            shape = Sphere(float(rng.uniform(0.8, 1.4)))
        else:
            shape = SurfaceOfRevolution(_goblet_profile(rng, 5))
    elif category == "glass_water":
        r = float(rng.uniform(0.9, 1.3))
        shape = Sphere(r)
        inner_shape = Sphere(float(rng.uniform(0.55, 0.75)) * r)
    elif category == "lens":
        r1 = float(rng.uniform(1.6, 2.6))
        r2 = float(rng.uniform(1.6, 2.6))
        thickness = float(rng.uniform(0.3, min(1.2, 1.6 * min(r1, r2))))
        shape = Lens(r1, r2, r1 + r2 - thickness)
    else:  # complex
        shape = SurfaceOfRevolution(_goblet_profile(rng, int(rng.integers(6, 10))))
    return Scene(
        camera,
        TransparentObject(shape, index, pose, inner_shape=inner_shape,
                          inner_index=inner_index),
        plane,
    )


def _load_background(path, size: int) -> np.ndarray:
    img = read_image_png(path)
    if img.ndim == 2:
        img = np.repeat(img[..., None], 3, axis=2)
    if img.shape[:2] != (size, size):
        img = np.clip(resize_bilinear(img, size, size), 0.0, 1.0)
    return img


def generate_sample(
    root, sample_id: str, category: str, seed: int, pool, image_size: int
) -> SampleRecord:
    """Render and persist one sample; pure function of its arguments."""
    root = Path(root)
    rng = np.random.default_rng(seed)
    scene = random_scene(category, image_size, rng)
    bg_path = pool[int(rng.integers(len(pool)))]
    d = root / sample_id
    d.mkdir(parents=True, exist_ok=True)
    write_image_png(d / "background.png", _load_background(bg_path, image_size))
    background = read_image_png(d / "background.png")  # on the stored 8-bit grid
    matte = render_ground_truth_matte(scene)
    image = render_scene_image(scene, background)
    write_image_png(d / "input.png", image)
    write_matte(d, matte)
    write_scene_file(d / "scene.ini", scene)
    files = {
        "scene": f"{sample_id}/scene.ini",
        "background": f"{sample_id}/background.png",
        "input": f"{sample_id}/input.png",
        "mask": f"{sample_id}/mask.png",
        "attenuation": f"{sample_id}/attenuation.png",
        "flow": f"{sample_id}/flow.flo",
    }
    return SampleRecord(sample_id, category, seed, files)


def _sample_seeds(seed: int, count: int) -> list:
    rng = np.random.default_rng(seed)
    seeds = []
    seen = set()
    while len(seeds) < count:
        s = int(rng.integers(0, 2 ** 63))
        if s not in seen:
            seen.add(s)
            seeds.append(s)
    return seeds


def generate_dataset(
    config: PipelineConfig, out_dir, count: int, seed: int, jobs: int = 1
) -> DatasetManifest:
    """Generate `count` samples under `out_dir` and write the manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    pool = sorted(
        p for p in Path(config.backgrounds).glob("*")
        if p.suffix.lower() in BACKGROUND_SUFFIXES
    )
    if count > 0 and not pool:
        raise ValueError(f"background pool {config.backgrounds} is empty")
    counts = category_counts(count, config.ratios)
    categories = [c for c in CATEGORIES for _ in range(counts[c])]
    seeds = _sample_seeds(seed, count)
    tasks = [
        (out, f"{i:06d}", categories[i], seeds[i], pool, config.image_size)
        for i in range(count)
    ]
    if jobs > 1 and tasks:
        with ThreadPoolExecutor(max_workers=jobs) as ex:
            records = list(ex.map(lambda t: generate_sample(*t), tasks))
    else:
        records = [generate_sample(*t) for t in tasks]
    write_manifest(out, seed, records)
    return read_manifest(out)


def extract_capture(capture_dir, out_dir):
    """Decode a capture directory into matte files."""
    stack = read_capture_dir(capture_dir)
    matte = extract_matte(stack)
    write_matte(out_dir, matte)
    return matte


def composite_matte(matte_dir, background_path, out_path) -> None:
    """Composite a stored matte onto a new background image."""
    matte = read_matte(matte_dir)
    background = read_image_png(background_path)
    if background.shape[:2] != matte.mask.shape:
        raise ValueError(
            f"background {background.shape[:2]} does not match matte "
            f"{matte.mask.shape}; resize it first"
        )
    write_image_png(out_path, composite_refractive(matte, background))


REPORT_FIELDS = (
    "epe_whole", "epe_object", "mask_iou", "attenuation_mse",
    "image_mse", "psnr", "ssim",
)


def evaluate_dataset(pred_root, gt_root, out_path) -> dict:
    """Score predicted mattes against a generated dataset; write a CSV report.

    The report carries one row per sample, an `aggregate` row (field-wise mean)
    and a `background` row: the zero-matte baseline averaged over the same
    samples.
    """
    pred_root = Path(pred_root)
    manifest = read_manifest(gt_root)
    if len(manifest) == 0:
        raise ValueError("ground-truth dataset is empty")
    missing = [
        r.sample_id for r in manifest.records
        if not (pred_root / r.sample_id / "mask.png").exists()
    ]
    if missing:
        raise ValueError(
            f"prediction set is missing samples: {', '.join(missing[:5])}"
            + (" ..." if len(missing) > 5 else "")
        )
    rows = []
    reports = []
    baselines = []
    for rec in manifest.records:
        gt = read_matte(manifest.root / rec.sample_id)
        pred = read_matte(pred_root / rec.sample_id)
        background = read_image_png(rec.path("background", manifest.root))
        image = read_image_png(rec.path("input", manifest.root))
        rep = evaluate_matte(pred, gt, background, image)
        base = background_baseline(gt, background, image)
        reports.append(rep)
        baselines.append(base)
        rows.append((rec.sample_id, rep))
    rows.append(("aggregate", aggregate_reports(reports)))
    rows.append(("background", aggregate_reports(baselines)))
    with open(out_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(("sample",) + REPORT_FIELDS)
        for name, rep in rows:
            writer.writerow(
                (name,) + tuple(f"{getattr(rep, k):.9g}" for k in REPORT_FIELDS)
            )
    return dict(rows)
