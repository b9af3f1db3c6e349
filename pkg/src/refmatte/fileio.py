"""Persistence: flow files, PNG rasters, manifests, scene and config files.

Rasters are PNG (8-bit masks and color images, 16-bit attenuation and
captures); flow fields use the Middlebury-style binary container. All writers
are deterministic: the same data always produces the same bytes, and every
reader is the exact inverse of its writer on the representable grid.
"""

import configparser
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from . import render
from .augment import AugmentConfig
from .core import FlowField, Matte
from .graycode import CaptureStack

FLOW_MAGIC = b"PIEH"
FLOW_INVALID = 1e10  # written on both components of invalid pixels (> 1e9)


# ---------------------------------------------------------------------------
# flow container
# ---------------------------------------------------------------------------


def write_flow(path, flow: FlowField) -> None:
    """Write a flow field: magic, int32 width/height, float32 (dx, dy) pairs."""
    h, w = flow.height, flow.width
    data = flow.offsets.astype("<f4").copy()
    data[~flow.valid] = FLOW_INVALID
    with open(path, "wb") as f:
        f.write(FLOW_MAGIC)
        f.write(struct.pack("<ii", w, h))
        f.write(data.tobytes())


def read_flow(path) -> FlowField:
    """Read a flow field written by write_flow."""
    raw = Path(path).read_bytes()
    if len(raw) < 12 or raw[:4] != FLOW_MAGIC:
        raise ValueError(f"{path}: not a flow file (bad magic)")
    w, h = struct.unpack("<ii", raw[4:12])
    expected = 12 + 8 * w * h
    if w <= 0 or h <= 0 or len(raw) != expected:
        raise ValueError(
            f"{path}: corrupt flow file (size {len(raw)}, expected {expected})"
        )
    data = np.frombuffer(raw, dtype="<f4", offset=12).reshape(h, w, 2).copy()
    invalid = (data[..., 0] > 1e9) & (data[..., 1] > 1e9)
    data[invalid] = 0.0
    return FlowField(data, ~invalid)


# ---------------------------------------------------------------------------
# PNG rasters
# ---------------------------------------------------------------------------


def _to_unit(arr, name):
    a = np.asarray(arr, dtype=np.float64)
    if a.min() < 0.0 or a.max() > 1.0:
        raise ValueError(f"{name} outside [0, 1]")
    return a


def write_mask_png(path, mask) -> None:
    a = _to_unit(mask, "mask")
    Image.fromarray(np.round(a * 255.0).astype(np.uint8), mode="L").save(path)


def read_mask_png(path) -> np.ndarray:
    img = Image.open(path)
    if img.mode != "L":
        raise ValueError(f"{path}: expected 8-bit grayscale PNG, got {img.mode}")
    return np.asarray(img, dtype=np.float32) / np.float32(255.0)


def write_gray16_png(path, values) -> None:
    a = _to_unit(values, "image")
    Image.fromarray(np.round(a * 65535.0).astype(np.uint16)).save(path)


def read_gray16_png(path) -> np.ndarray:
    img = Image.open(path)
    if img.mode not in ("I;16", "I"):
        raise ValueError(f"{path}: expected 16-bit grayscale PNG, got {img.mode}")
    return np.asarray(img, dtype=np.float32) / np.float32(65535.0)


def write_image_png(path, image) -> None:
    """8-bit PNG for color or grayscale images in [0, 1]."""
    a = _to_unit(image, "image")
    u8 = np.round(a * 255.0).astype(np.uint8)
    mode = "RGB" if u8.ndim == 3 else "L"
    Image.fromarray(u8, mode=mode).save(path)


def read_image_png(path) -> np.ndarray:
    img = Image.open(path)
    if img.mode not in ("RGB", "L"):
        img = img.convert("RGB")
    return np.asarray(img, dtype=np.float32) / np.float32(255.0)


# ---------------------------------------------------------------------------
# matte triples
# ---------------------------------------------------------------------------

MATTE_FILES = ("mask.png", "attenuation.png", "flow.flo")


def write_matte(directory, matte: Matte) -> None:
    """Write mask.png (8-bit), attenuation.png (16-bit) and flow.flo."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_mask_png(d / "mask.png", matte.mask)
    write_gray16_png(d / "attenuation.png", matte.attenuation)
    write_flow(d / "flow.flo", matte.flow)


def read_matte(directory) -> Matte:
    d = Path(directory)
    for name in MATTE_FILES:
        if not (d / name).exists():
            raise FileNotFoundError(f"missing matte member {d / name}")
    return Matte(
        read_mask_png(d / "mask.png"),
        read_gray16_png(d / "attenuation.png"),
        read_flow(d / "flow.flo"),
    )


# ---------------------------------------------------------------------------
# capture stacks
# ---------------------------------------------------------------------------


def _parser() -> configparser.ConfigParser:
    return configparser.ConfigParser(delimiters=("=",), interpolation=None)


def write_capture_dir(directory, stack: CaptureStack) -> None:
    """Write a capture stack: 16-bit PNGs plus a plain-text index of roles."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    cp = _parser()
    cp["stack"] = {
        "width": str(stack.width),
        "height": str(stack.height),
        "bits_x": str(stack.bits_x),
        "bits_y": str(stack.bits_y),
        "complements": str(stack.with_complements).lower(),
        "black": "black.png",
        "white": "white.png",
    }
    write_gray16_png(d / "black.png", stack.black)
    write_gray16_png(d / "white.png", stack.white)
    step = 2 if stack.with_complements else 1
    for i, img in enumerate(stack.images):
        k = i // step
        role = "pattern" if (step == 1 or i % 2 == 0) else "complement"
        name = f"{role}_{k:02d}.png"
        cp["stack"][f"{role}_{k:02d}"] = name
        write_gray16_png(d / name, img)
    with open(d / "stack.ini", "w") as f:
        cp.write(f)


def read_capture_dir(directory) -> CaptureStack:
    d = Path(directory)
    index = d / "stack.ini"
    if not index.exists():
        raise FileNotFoundError(f"missing capture index {index}")
    cp = _parser()
    cp.read(index)
    sec = cp["stack"]
    bits_x = sec.getint("bits_x")
    bits_y = sec.getint("bits_y")
    comp = sec.getboolean("complements")
    black = read_gray16_png(d / sec["black"])
    white = read_gray16_png(d / sec["white"])
    images = []
    for k in range(bits_x + bits_y):
        images.append(read_gray16_png(d / sec[f"pattern_{k:02d}"]))
        if comp:
            images.append(read_gray16_png(d / sec[f"complement_{k:02d}"]))
    return CaptureStack(
        black.astype(np.float64), white.astype(np.float64),
        [im.astype(np.float64) for im in images], bits_x, bits_y, comp,
    )


# ---------------------------------------------------------------------------
# scenes
# ---------------------------------------------------------------------------


def _fmt_floats(values) -> str:
    return " ".join(f"{float(v):.17g}" for v in np.ravel(values))


def _parse_floats(text) -> np.ndarray:
    return np.array([float(v) for v in text.split()])


def write_scene_file(path, scene) -> None:
    """Serialize a Scene to the documented key/value schema."""
    cp = _parser()
    cam = scene.camera
    cp["camera"] = {
        "width": str(cam.width),
        "height": str(cam.height),
        "focal_length": f"{cam.focal_length:.17g}",
        "principal_point": _fmt_floats(cam.principal_point),
    }
    cp["background"] = {"distance": f"{scene.plane_distance:.17g}"}
    obj = scene.obj
    if obj is not None:
        angles = _rotation_to_euler(obj.pose.rotation)
        sec = {
            "index": f"{obj.refractive_index:.17g}",
            "position": _fmt_floats(obj.pose.translation),
            "rotation": _fmt_floats(angles),
        }
        sec.update(_shape_to_keys(obj.shape))
        cp["object"] = sec
        if obj.inner_shape is not None:
            inner = {"index": f"{obj.inner_index:.17g}"}
            inner.update(_shape_to_keys(obj.inner_shape))
            cp["inner"] = inner
    with open(path, "w") as f:
        cp.write(f)


def _shape_to_keys(shape) -> dict:
    if isinstance(shape, render.Slab):
        return {"shape": "slab", "thickness": f"{shape.thickness:.17g}"}
    if isinstance(shape, render.Sphere):
        return {"shape": "sphere", "radius": f"{shape.radius:.17g}"}
    if isinstance(shape, render.Lens):
        return {
            "shape": "lens",
            "radius_front": f"{shape.radius_front:.17g}",
            "radius_back": f"{shape.radius_back:.17g}",
            "separation": f"{shape.separation:.17g}",
        }
    if isinstance(shape, render.SurfaceOfRevolution):
        pairs = " ".join(f"{z:.17g}:{r:.17g}" for z, r in shape.profile)
        return {"shape": "sor", "profile": pairs}
    raise ValueError(f"unknown shape {type(shape).__name__}")


def _shape_from_keys(sec):
    kind = sec["shape"]
    if kind == "slab":
        return render.Slab(float(sec["thickness"]))
    if kind == "sphere":
        return render.Sphere(float(sec["radius"]))
    if kind == "lens":
        return render.Lens(
            float(sec["radius_front"]),
            float(sec["radius_back"]),
            float(sec["separation"]),
        )
    if kind == "sor":
        profile = np.array(
            [[float(v) for v in pair.split(":")] for pair in sec["profile"].split()]
        )
        return render.SurfaceOfRevolution(profile)
    raise ValueError(f"unknown shape kind {kind!r}")


def _rotation_to_euler(r: np.ndarray):
    # inverse of RigidTransform.from_euler (R = Rz @ Ry @ Rx)
    sy = -r[2, 0]
    cy = float(np.hypot(r[0, 0], r[1, 0]))
    ry = np.degrees(np.arctan2(sy, cy))
    if cy > 1e-9:
        rx = np.degrees(np.arctan2(r[2, 1], r[2, 2]))
        rz = np.degrees(np.arctan2(r[1, 0], r[0, 0]))
    else:
        rx = np.degrees(np.arctan2(-r[1, 2], r[1, 1]))
        rz = 0.0
    return rx, ry, rz


def parse_scene_file(path):
    """Load a Scene from the documented key/value schema."""
    cp = _parser()
    if not cp.read(path):
        raise FileNotFoundError(f"cannot read scene file {path}")
    cam_sec = cp["camera"]
    pp = _parse_floats(cam_sec["principal_point"]) if "principal_point" in cam_sec else None
    camera = render.Camera(
        width=cam_sec.getint("width"),
        height=cam_sec.getint("height"),
        focal_length=cam_sec.getfloat("focal_length"),
        principal_point=tuple(pp) if pp is not None else None,
    )
    distance = cp["background"].getfloat("distance")
    obj = None
    if cp.has_section("object"):
        sec = cp["object"]
        angles = _parse_floats(sec.get("rotation", "0 0 0"))
        pose = render.RigidTransform.from_euler(
            *angles, translation=_parse_floats(sec.get("position", "0 0 0"))
        )
        inner_shape = None
        inner_index = 1.33
        if cp.has_section("inner"):
            inner_shape = _shape_from_keys(cp["inner"])
            inner_index = cp["inner"].getfloat("index", fallback=1.33)
        obj = render.TransparentObject(
            _shape_from_keys(sec),
            sec.getfloat("index"),
            pose,
            inner_shape=inner_shape,
            inner_index=inner_index,
        )
    return render.Scene(camera, obj, distance)


# ---------------------------------------------------------------------------
# dataset manifest
# ---------------------------------------------------------------------------

SAMPLE_FILE_KEYS = ("scene", "background", "input", "mask", "attenuation", "flow")


@dataclass
class SampleRecord:
    """Manifest entry naming one sample's files (paths relative to the root)."""

    sample_id: str
    category: str
    seed: int
    files: dict

    def path(self, key: str, root) -> Path:
        return Path(root) / self.files[key]


@dataclass
class DatasetManifest:
    root: Path
    seed: int
    records: list

    def __len__(self) -> int:
        return len(self.records)


def write_manifest(root, seed: int, records) -> Path:
    cp = _parser()
    cp["dataset"] = {"version": "1", "seed": str(seed), "count": str(len(records))}
    for rec in records:
        sec = {"category": rec.category, "seed": str(rec.seed)}
        sec.update({k: str(v) for k, v in rec.files.items()})
        cp[f"sample {rec.sample_id}"] = sec
    out = Path(root) / "manifest.ini"
    with open(out, "w") as f:
        cp.write(f)
    return out


def read_manifest(root) -> DatasetManifest:
    root = Path(root)
    path = root / "manifest.ini"
    if not path.exists():
        raise FileNotFoundError(f"missing dataset manifest {path}")
    cp = _parser()
    cp.read(path)
    records = []
    seen_seeds = set()
    for name in cp.sections():
        if not name.startswith("sample "):
            continue
        sec = cp[name]
        sample_id = name.split(" ", 1)[1]
        files = {k: sec[k] for k in SAMPLE_FILE_KEYS if k in sec}
        for key, rel in files.items():
            if not (root / rel).exists():
                raise FileNotFoundError(
                    f"manifest references missing {key} file {root / rel}"
                )
        seed = sec.getint("seed")
        if seed in seen_seeds:
            raise ValueError(f"duplicate sample seed {seed} in manifest")
        seen_seeds.add(seed)
        records.append(SampleRecord(sample_id, sec.get("category", ""), seed, files))
    records.sort(key=lambda r: r.sample_id)
    return DatasetManifest(root, cp["dataset"].getint("seed", fallback=0), records)


# ---------------------------------------------------------------------------
# pipeline config
# ---------------------------------------------------------------------------


@dataclass
class PipelineConfig:
    """Parsed generation config (plus optional augmentation block)."""

    backgrounds: Path
    image_size: int = 128
    ratios: tuple = (52, 26, 20, 80)  # glass : glass_water : lens : complex
    augment: object = None


def read_pipeline_config(path) -> PipelineConfig:
    cp = _parser()
    if not cp.read(path):
        raise FileNotFoundError(f"cannot read config file {path}")
    if not cp.has_section("generate"):
        raise ValueError(f"{path}: missing [generate] section")
    gen = cp["generate"]
    if "backgrounds" not in gen:
        raise ValueError(f"{path}: [generate] must name a backgrounds directory")
    ratios = (52, 26, 20, 80)
    if "ratios" in gen:
        ratios = tuple(int(v) for v in gen["ratios"].split(","))
        if len(ratios) != 4 or any(r < 0 for r in ratios) or sum(ratios) == 0:
            raise ValueError(f"{path}: ratios must be four non-negative integers")
    augment = None
    if cp.has_section("augment"):
        a = cp["augment"]
        augment = AugmentConfig(
            color_range=a.getfloat("color_range", fallback=0.2),
            scale_range=(
                a.getfloat("scale_min", fallback=0.875),
                a.getfloat("scale_max", fallback=1.05),
            ),
            noise_amplitude=a.getfloat("noise_amplitude", fallback=0.05),
            flip_probability=a.getfloat("flip_probability", fallback=0.5),
            crop_size=a.getint("crop_size", fallback=448),
            blur_boundary=a.getboolean("blur_boundary", fallback=True),
            blur_radius=a.getfloat("blur_radius", fallback=1.5),
        )
    return PipelineConfig(
        backgrounds=Path(gen["backgrounds"]),
        image_size=gen.getint("image_size", fallback=128),
        ratios=ratios,
        augment=augment,
    )
