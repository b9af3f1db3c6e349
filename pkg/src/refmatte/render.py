"""Analytic ground-truth renderer.

Traces pinhole-camera rays through a parametric transparent object by Snell's
law onto a textured background plane, yielding the object mask, the Fresnel
attenuation and the refractive flow without any external renderer. Only
single-bounce refraction is modeled: reflection contributes through the
Fresnel transmittance factor, and total internal reflection marks a pixel's
flow invalid with zero transmittance.

Geometry conventions: the camera looks along +z of its own frame; the
background plane is perpendicular to the optical axis at `plane_distance`, and
its texture mapping is the pinhole projection itself, so an undeviated ray
through pixel (x, y) lands on background pixel (x, y) exactly. Shapes are
defined in an object-local frame and placed by a rigid pose.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .core import FlowField, Matte, sample_bilinear_map, validate_image
from .graycode import CaptureStack, PatternStack

_T_EPS = 1e-6          # minimum parameter step to the next surface crossing
_MAX_CROSSINGS = 12
_SOR_MARCH_STEPS = 256
_SOR_BISECT_ITERS = 48


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def _dot(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.einsum("...i,...i->...", a, b)


@dataclass(frozen=True)
class RigidTransform:
    """Rotation plus translation mapping local coordinates into the parent frame."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64)
        if r.shape != (3, 3) or t.shape != (3,):
            raise ValueError("rigid transform needs a 3x3 rotation and 3-vector")
        if not np.allclose(r @ r.T, np.eye(3), atol=1e-9) or np.linalg.det(r) < 0:
            raise ValueError("rotation must be orthonormal with determinant +1")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def from_euler(rx: float = 0.0, ry: float = 0.0, rz: float = 0.0,
                   translation=(0.0, 0.0, 0.0)) -> "RigidTransform":
        """Build from rotations about x, y, z in degrees (applied in that order)."""
        ax, ay, az = (math.radians(a) for a in (rx, ry, rz))
        cx, sx = math.cos(ax), math.sin(ax)
        cy, sy = math.cos(ay), math.sin(ay)
        cz, sz = math.cos(az), math.sin(az)
        rx_m = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
        ry_m = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
        rz_m = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
        return RigidTransform(rz_m @ ry_m @ rx_m, np.asarray(translation, float))

    def points_to_parent(self, p: np.ndarray) -> np.ndarray:
        return p @ self.rotation.T + self.translation

    def dirs_to_parent(self, d: np.ndarray) -> np.ndarray:
        return d @ self.rotation.T

    def points_to_local(self, p: np.ndarray) -> np.ndarray:
        return (p - self.translation) @ self.rotation

    def dirs_to_local(self, d: np.ndarray) -> np.ndarray:
        return d @ self.rotation


# ---------------------------------------------------------------------------
# shapes (object-local frame)
# ---------------------------------------------------------------------------


def _sphere_interval(p, d, center, radius):
    """Entry/exit parameters of rays against a sphere (full line; hit flag)."""
    oc = p - center
    b = _dot(oc, d)
    c = _dot(oc, oc) - radius * radius
    disc = b * b - c
    hit = disc >= 0.0
    sq = np.sqrt(np.maximum(disc, 0.0))
    return -b - sq, -b + sq, hit


@dataclass(frozen=True)
class Slab:
    """Infinite plate of given thickness, faces perpendicular to local z."""

    thickness: float

    def __post_init__(self):
        if self.thickness <= 0:
            raise ValueError("slab thickness must be positive")

    def bounding_radius(self) -> float:
        return math.inf

    def next_crossing(self, p, d):
        n = p.shape[0]
        h2 = 0.5 * self.thickness
        t_best = np.full(n, np.inf)
        normal = np.zeros((n, 3))
        with np.errstate(divide="ignore", invalid="ignore"):
            for plane_z, nz in ((h2, 1.0), (-h2, -1.0)):
                t = (plane_z - p[:, 2]) / d[:, 2]
                ok = np.isfinite(t) & (t > _T_EPS) & (t < t_best)
                t_best[ok] = t[ok]
                normal[ok] = (0.0, 0.0, nz)
        return t_best, normal


@dataclass(frozen=True)
class Sphere:
    """Ball of given radius centered at the local origin."""

    radius: float

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("sphere radius must be positive")

    def bounding_radius(self) -> float:
        return self.radius

    def next_crossing(self, p, d):
        t0, t1, hit = _sphere_interval(p, d, np.zeros(3), self.radius)
        t = np.where(
            hit & (t0 > _T_EPS), t0, np.where(hit & (t1 > _T_EPS), t1, np.inf)
        )
        found = np.isfinite(t)
        pt = p + np.where(found, t, 0.0)[:, None] * d
        normal = pt / self.radius
        return t, normal


@dataclass(frozen=True)
class Lens:
    """Biconvex lens: intersection of two spheres straddling the local origin.

    Sphere centers sit at z = +separation/2 (radius_front) and
    z = -separation/2 (radius_back); the solid exists when the spheres overlap
    without one containing the other.
    """

    radius_front: float
    radius_back: float
    separation: float

    def __post_init__(self):
        r1, r2, s = self.radius_front, self.radius_back, self.separation
        if r1 <= 0 or r2 <= 0 or s <= 0:
            raise ValueError("lens parameters must be positive")
        if s >= r1 + r2:
            raise ValueError("lens spheres do not overlap")
        if s <= abs(r1 - r2):
            raise ValueError("one lens sphere contains the other")

    def _centers(self):
        return (
            np.array([0.0, 0.0, +0.5 * self.separation]),
            np.array([0.0, 0.0, -0.5 * self.separation]),
        )

    def bounding_radius(self) -> float:
        # lens is inside both spheres; either sphere bounds it
        return min(
            0.5 * self.separation + self.radius_front,
            0.5 * self.separation + self.radius_back,
        )

    def next_crossing(self, p, d):
        ca, cb = self._centers()
        a0, a1, ha = _sphere_interval(p, d, ca, self.radius_front)
        b0, b1, hb = _sphere_interval(p, d, cb, self.radius_back)
        both = ha & hb
        t0 = np.maximum(a0, b0)
        t1 = np.minimum(a1, b1)
        owner0_a = a0 >= b0  # entry surface belongs to the later-entered sphere
        owner1_a = a1 <= b1
        nonempty = both & (t0 < t1)
        use0 = nonempty & (t0 > _T_EPS)
        use1 = nonempty & ~use0 & (t1 > _T_EPS)
        t = np.where(use0, t0, np.where(use1, t1, np.inf))
        owner_a = np.where(use0, owner0_a, owner1_a)
        found = np.isfinite(t)
        pt = p + np.where(found, t, 0.0)[:, None] * d
        center = np.where(owner_a[:, None], ca, cb)
        radius = np.where(owner_a, self.radius_front, self.radius_back)
        normal = (pt - center) / radius[:, None]
        return t, normal


@dataclass(frozen=True)
class SurfaceOfRevolution:
    """Solid made by revolving a radius profile r(z) about the local z axis.

    `profile` is a (K, 2) array of (z, r) vertices with strictly increasing z
    and r >= 0; ends with positive radius are closed by flat caps. Ray
    intersections are found by marching plus bisection to ~1e-7 object units.
    """

    profile: np.ndarray

    def __post_init__(self):
        prof = np.asarray(self.profile, dtype=np.float64)
        if prof.ndim != 2 or prof.shape[1] != 2 or prof.shape[0] < 2:
            raise ValueError("profile must be a (K, 2) array with K >= 2")
        if np.any(np.diff(prof[:, 0]) <= 0):
            raise ValueError("profile z values must be strictly increasing")
        if np.any(prof[:, 1] < 0) or prof[:, 1].max() <= 0:
            raise ValueError("profile radii must be >= 0 with a positive maximum")
        object.__setattr__(self, "profile", prof)

    @property
    def _zs(self):
        return self.profile[:, 0]

    @property
    def _rs(self):
        return self.profile[:, 1]

    def bounding_radius(self) -> float:
        zc = 0.5 * (self._zs[0] + self._zs[-1])
        return float(
            np.sqrt(self._rs ** 2 + (self._zs - zc) ** 2).max() * (1 + 1e-9) + 1e-9
        )

    def _center(self):
        return np.array([0.0, 0.0, 0.5 * (self._zs[0] + self._zs[-1])])

    def _inside(self, p):
        z = p[..., 2]
        rho2 = p[..., 0] ** 2 + p[..., 1] ** 2
        r = np.interp(z, self._zs, self._rs)
        return (z >= self._zs[0]) & (z <= self._zs[-1]) & (rho2 <= r * r)

    def next_crossing(self, p, d):
        n = p.shape[0]
        t_out = np.full(n, np.inf)
        normal = np.zeros((n, 3))
        s0, s1, hb = _sphere_interval(p, d, self._center(), self.bounding_radius())
        lo = np.maximum(s0, 2.0 * _T_EPS)
        hi = s1
        cand = hb & (hi > lo)
        if not cand.any():
            return t_out, normal
        idx = np.where(cand)[0]
        pl, dl = p[idx], d[idx]
        steps = np.linspace(0.0, 1.0, _SOR_MARCH_STEPS)
        ts = lo[idx, None] + (hi[idx] - lo[idx])[:, None] * steps
        inside = self._inside(pl[:, None, :] + ts[..., None] * dl[:, None, :])
        change = inside[:, 1:] != inside[:, :-1]
        has = change.any(axis=1)
        if not has.any():
            return t_out, normal
        first = np.argmax(change, axis=1)
        rows = np.where(has)[0]
        t_lo = ts[rows, first[rows]]
        t_hi = ts[rows, first[rows] + 1]
        side_lo = inside[rows, first[rows]]
        pb, db = pl[rows], dl[rows]
        for _ in range(_SOR_BISECT_ITERS):
            mid = 0.5 * (t_lo + t_hi)
            mid_inside = self._inside(pb + mid[:, None] * db)
            same = mid_inside == side_lo
            t_lo = np.where(same, mid, t_lo)
            t_hi = np.where(same, t_hi, mid)
        t_star = 0.5 * (t_lo + t_hi)
        pt = pb + t_star[:, None] * db
        normal_sub = self._normal_at(pt)
        out_rows = idx[rows]
        t_out[out_rows] = t_star
        normal[out_rows] = normal_sub
        return t_out, normal

    def _normal_at(self, pt):
        zs, rs = self._zs, self._rs
        z = pt[:, 2]
        rho = np.hypot(pt[:, 0], pt[:, 1])
        r_here = np.interp(z, zs, rs)
        # candidate boundaries: lateral surface and the two end caps
        d_lat = np.abs(rho - r_here)
        d_cap0 = np.abs(z - zs[0]) if rs[0] > 0 else np.full_like(z, np.inf)
        d_cap1 = np.abs(z - zs[-1]) if rs[-1] > 0 else np.full_like(z, np.inf)
        seg = np.clip(np.searchsorted(zs, z, side="right") - 1, 0, len(zs) - 2)
        slope = (rs[seg + 1] - rs[seg]) / (zs[seg + 1] - zs[seg])
        safe_rho = np.maximum(rho, 1e-12)
        lateral = np.stack(
            [pt[:, 0] / safe_rho, pt[:, 1] / safe_rho, -slope], axis=1
        )
        # on-axis crossings degenerate to an apex; face along the profile slope
        apex = rho < 1e-9
        lateral[apex] = np.array([0.0, 0.0, 1.0])
        lateral[apex, 2] = -np.sign(slope[apex] + 1e-300)
        lateral = _unit(lateral)
        normal = lateral
        cap0 = (d_cap0 < d_lat) & (d_cap0 <= d_cap1)
        cap1 = (d_cap1 < d_lat) & (d_cap1 < d_cap0)
        normal[cap0] = (0.0, 0.0, -1.0)
        normal[cap1] = (0.0, 0.0, 1.0)
        return normal


# ---------------------------------------------------------------------------
# refraction
# ---------------------------------------------------------------------------


def _refract_batch(d, n_outward, n1, n2):
    """Snell refraction of unit rays `d` at surfaces with outward normals.

    Returns (refracted unit dirs, transmittance, tir). The normal is reoriented
    against the ray internally; n1/n2 are the indices on the incident and
    transmitted sides.
    """
    cos_raw = _dot(d, n_outward)
    n_face = np.where(cos_raw[..., None] > 0, -n_outward, n_outward)
    cos_i = np.clip(-_dot(d, n_face), 0.0, 1.0)
    eta = n1 / n2
    k = 1.0 - eta * eta * (1.0 - cos_i * cos_i)
    tir = k < 0.0
    cos_t = np.sqrt(np.maximum(k, 0.0))
    refr = eta[..., None] * d + (eta * cos_i - cos_t)[..., None] * n_face
    norm = np.linalg.norm(refr, axis=-1, keepdims=True)
    refr = refr / np.where(norm > 0, norm, 1.0)
    rs = (n1 * cos_i - n2 * cos_t) / (n1 * cos_i + n2 * cos_t)
    rp = (n2 * cos_i - n1 * cos_t) / (n2 * cos_i + n1 * cos_t)
    trans = np.where(tir, 0.0, 1.0 - 0.5 * (rs * rs + rp * rp))
    return refr, trans, tir


def _check_unit(v, name):
    arr = np.asarray(v, dtype=np.float64)
    if arr.shape != (3,) or not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be a finite 3-vector")
    if abs(np.linalg.norm(arr) - 1.0) > 1e-6:
        raise ValueError(f"{name} must be unit length (|v| - 1 exceeds 1e-6)")
    return arr


def refract_direction(incident, normal, n1: float, n2: float):
    """Snell-refracted direction, or None on total internal reflection."""
    d = _check_unit(incident, "incident")
    n = _check_unit(normal, "normal")
    if n1 <= 0 or n2 <= 0:
        raise ValueError("refractive indices must be positive")
    refr, _, tir = _refract_batch(
        d[None], n[None], np.array([n1]), np.array([n2])
    )
    if tir[0]:
        return None
    return refr[0]


def fresnel_transmittance(incident, normal, n1: float, n2: float) -> float:
    """Unpolarized Fresnel energy transmittance; 0 under total internal reflection."""
    d = _check_unit(incident, "incident")
    n = _check_unit(normal, "normal")
    if n1 <= 0 or n2 <= 0:
        raise ValueError("refractive indices must be positive")
    _, trans, _ = _refract_batch(d[None], n[None], np.array([n1]), np.array([n2]))
    return float(trans[0])


# ---------------------------------------------------------------------------
# scene
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Camera:
    """Pinhole camera; looks along +z of its pose frame."""

    width: int
    height: int
    focal_length: float
    principal_point: tuple = None  # type: ignore[assignment]
    pose: RigidTransform = field(default_factory=RigidTransform)

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("image size must be positive")
        if self.focal_length <= 0:
            raise ValueError("focal length must be positive")
        if self.principal_point is None:
            object.__setattr__(
                self,
                "principal_point",
                ((self.width - 1) / 2.0, (self.height - 1) / 2.0),
            )

    def ray_dirs(self, xs, ys):
        cx, cy = self.principal_point
        d = np.stack(
            [
                (np.asarray(xs, np.float64) - cx) / self.focal_length,
                (np.asarray(ys, np.float64) - cy) / self.focal_length,
                np.ones_like(np.asarray(xs, np.float64)),
            ],
            axis=-1,
        )
        return _unit(d)

    def project(self, points_cam):
        cx, cy = self.principal_point
        z = points_cam[..., 2]
        return (
            self.focal_length * points_cam[..., 0] / z + cx,
            self.focal_length * points_cam[..., 1] / z + cy,
        )


@dataclass(frozen=True)
class TransparentObject:
    """A transparent solid with optional nested inner medium (e.g. water)."""

    shape: object
    refractive_index: float
    pose: RigidTransform = field(default_factory=RigidTransform)
    inner_shape: object = None
    inner_index: float = 1.33

    def __post_init__(self):
        if self.refractive_index < 1.0:
            raise ValueError("refractive index must be >= 1")
        if self.inner_shape is not None:
            if self.inner_index < 1.0:
                raise ValueError("inner refractive index must be >= 1")
            if self.inner_shape.bounding_radius() >= self.shape.bounding_radius():
                raise ValueError("inner medium must fit inside the outer shape")


@dataclass(frozen=True)
class Scene:
    """Camera, optional transparent object and the background plane distance.

    The plane is perpendicular to the camera axis at `plane_distance` (camera
    frame) and textured by pinhole projection: with no object, the ray through
    pixel p lands on background pixel p.
    """

    camera: Camera
    obj: TransparentObject = None
    plane_distance: float = 10.0

    def __post_init__(self):
        if self.plane_distance <= 0:
            raise ValueError("plane distance must be positive")


class TraceBundle:
    """Vectorized per-ray trace results (flat arrays over rays)."""

    __slots__ = ("hit", "valid", "exit_x", "exit_y", "transmittance")

    def __init__(self, hit, valid, exit_x, exit_y, transmittance):
        self.hit = hit
        self.valid = valid
        self.exit_x = exit_x
        self.exit_y = exit_y
        self.transmittance = transmittance


def _validate_not_degenerate(scene: Scene):
    obj = scene.obj
    if obj is None:
        return
    bound = obj.shape.bounding_radius()
    if not math.isfinite(bound):
        return  # unbounded slab: far interactions are occluded per ray instead
    center_world = obj.pose.points_to_parent(np.zeros((1, 3)))
    center_cam = scene.camera.pose.points_to_local(center_world)[0]
    if center_cam[2] + bound >= scene.plane_distance:
        raise ValueError(
            "degenerate scene: background plane intersects the object"
        )


def trace_pixels(scene: Scene, xs, ys) -> TraceBundle:
    """Trace rays through fractional pixel coordinates (flattened arrays)."""
    _validate_not_degenerate(scene)
    cam = scene.camera
    x = np.atleast_1d(np.asarray(xs, dtype=np.float64)).ravel()
    y = np.atleast_1d(np.asarray(ys, dtype=np.float64)).ravel()
    n = x.size
    hit = np.zeros(n, bool)
    invalid = np.zeros(n, bool)
    trans = np.ones(n)
    exit_x = x.copy()
    exit_y = y.copy()

    obj = scene.obj
    if obj is not None:
        d_cam = cam.ray_dirs(x, y)
        o_world = np.broadcast_to(
            cam.pose.points_to_parent(np.zeros((1, 3))), (n, 3)
        )
        d_world = cam.pose.dirs_to_parent(d_cam)
        p = obj.pose.points_to_local(o_world)
        d = obj.pose.dirs_to_local(d_world)
        p = np.ascontiguousarray(p)
        d = np.ascontiguousarray(d)

        indices = np.array([1.0, obj.refractive_index, obj.inner_index])
        medium = np.zeros(n, np.int8)
        done = np.zeros(n, bool)
        t_first = np.full(n, np.inf)

        for _ in range(_MAX_CROSSINGS):
            act = ~done
            if not act.any():
                break
            t_best = np.full(n, np.inf)
            n_best = np.zeros((n, 3))
            which = np.full(n, -1, np.int8)

            outer_q = act & (medium != 2)
            if outer_q.any():
                oi = np.where(outer_q)[0]
                t_o, n_o = obj.shape.next_crossing(p[oi], d[oi])
                better = t_o < t_best[oi]
                sel = oi[better]
                t_best[sel] = t_o[better]
                n_best[sel] = n_o[better]
                which[sel] = 0
            if obj.inner_shape is not None:
                inner_q = act & (medium != 0)
                if inner_q.any():
                    ii = np.where(inner_q)[0]
                    t_i, n_i = obj.inner_shape.next_crossing(p[ii], d[ii])
                    better = t_i < t_best[ii]
                    sel = ii[better]
                    t_best[sel] = t_i[better]
                    n_best[sel] = n_i[better]
                    which[sel] = 1

            found = act & np.isfinite(t_best)
            finish = act & ~found
            invalid |= finish & (medium != 0)  # never exited: geometry leak
            done |= finish
            if not found.any():
                continue

            fi = np.where(found)[0]
            newly = fi[~hit[fi]]
            t_first[newly] = t_best[newly]
            p[fi] += t_best[fi, None] * d[fi]
            entering = _dot(d[fi], n_best[fi]) < 0.0
            new_medium = np.where(
                which[fi] == 0,
                np.where(entering, 1, 0),
                np.where(entering, 2, 1),
            ).astype(np.int8)
            n1 = indices[medium[fi]]
            n2 = indices[new_medium]
            refr, t_factor, tir = _refract_batch(d[fi], n_best[fi], n1, n2)
            hit[fi] = True
            trans[fi] *= t_factor
            d[fi] = np.where(tir[:, None], d[fi], refr)
            medium[fi] = np.where(tir, medium[fi], new_medium)
            stop = np.zeros(n, bool)
            stop[fi] = tir
            invalid |= stop
            done |= stop

        invalid |= ~done  # crossing budget exhausted
        trans[invalid] = 0.0

        # rays whose first surface contact lies behind the plane are occluded
        p_world = obj.pose.points_to_parent(p)
        d_world_out = obj.pose.dirs_to_parent(d)
        p_cam = cam.pose.points_to_local(p_world)
        d_cam_out = cam.pose.dirs_to_local(d_world_out)
        t_plane_straight = scene.plane_distance / np.maximum(d_cam[:, 2], 1e-12)
        occluded = hit & (t_first > t_plane_straight)
        hit[occluded] = False
        invalid[occluded] = False
        trans[occluded] = 1.0

        traced = hit & ~invalid & ~occluded
        if traced.any():
            dz = d_cam_out[traced, 2]
            pz = p_cam[traced, 2]
            with np.errstate(divide="ignore", invalid="ignore"):
                t_plane = (scene.plane_distance - pz) / dz
            bad = (dz <= 1e-12) | (t_plane < -1e-9)  # parallel or beyond plane
            q = p_cam[traced] + t_plane[:, None] * d_cam_out[traced]
            bx, by = cam.project(q)
            ti = np.where(traced)[0]
            exit_x[ti] = np.where(bad, x[ti], bx)
            exit_y[ti] = np.where(bad, y[ti], by)
            inv = np.zeros(n, bool)
            inv[ti] = bad
            invalid |= inv
        # invalid exits fall back to the straight-through coordinate
        exit_x[invalid] = x[invalid]
        exit_y[invalid] = y[invalid]

    return TraceBundle(hit, ~invalid, exit_x, exit_y, trans)


@dataclass
class TraceResult:
    """Scalar trace outcome for one pixel."""

    hit: bool
    exit_x: float
    exit_y: float
    exit_valid: bool
    transmittance: float


def trace_ray(scene: Scene, pixel) -> TraceResult:
    """Trace a single (possibly fractional) pixel coordinate."""
    x, y = float(pixel[0]), float(pixel[1])
    if not (0 <= x <= scene.camera.width - 1 and 0 <= y <= scene.camera.height - 1):
        raise ValueError(f"pixel ({x}, {y}) outside image bounds")
    b = trace_pixels(scene, [x], [y])
    return TraceResult(
        bool(b.hit[0]),
        float(b.exit_x[0]),
        float(b.exit_y[0]),
        bool(b.valid[0]),
        float(b.transmittance[0]),
    )


# ---------------------------------------------------------------------------
# rendering
# ---------------------------------------------------------------------------

_SUB_OFFSETS = ((-0.25, -0.25), (0.25, -0.25), (-0.25, 0.25), (0.25, 0.25))


def _boundary_pixels(hit: np.ndarray) -> np.ndarray:
    padded = np.pad(hit, 1, mode="edge")
    out = np.zeros_like(hit)
    for dy, dx in ((-1, 0), (1, 0), (0, -1), (0, 1)):
        out |= hit != padded[1 + dy : 1 + dy + hit.shape[0],
                            1 + dx : 1 + dx + hit.shape[1]]
    return out


def _shade(bundle: TraceBundle, background: np.ndarray, xs, ys) -> np.ndarray:
    """Per-ray color: transmitted background sample, straight pixel, or black."""
    bg = np.asarray(background, dtype=np.float64)
    color = sample_bilinear_map(bg, bundle.exit_x, bundle.exit_y)
    straight = sample_bilinear_map(bg, xs, ys)
    tr = bundle.transmittance
    hitm = bundle.hit
    validm = bundle.valid
    if bg.ndim == 3:
        tr = tr[:, None]
        hitm = hitm[:, None]
        validm = validm[:, None]
    return np.where(hitm, np.where(validm, tr * color, 0.0), straight)


class _TracedFrame:
    """One full-frame trace (plus boundary subsamples), reusable for shading.

    Tracing is independent of the background, so a frame traced once can be
    shaded against many backgrounds — this is what keeps capture-stack
    rendering at two trace passes regardless of the pattern count.
    """

    def __init__(self, scene: Scene, supersample: bool = True):
        cam = scene.camera
        self.scene = scene
        self.h, self.w = cam.height, cam.width
        ys, xs = np.mgrid[0 : self.h, 0 : self.w]
        self.xs = xs.astype(np.float64).ravel()
        self.ys = ys.astype(np.float64).ravel()
        self.base = trace_pixels(scene, self.xs, self.ys)
        self.subs = []
        self.by = self.bx = None
        if supersample:
            boundary = _boundary_pixels(self.base.hit.reshape(self.h, self.w))
            if boundary.any():
                self.by, self.bx = np.nonzero(boundary)
                for ox, oy in _SUB_OFFSETS:
                    sx = np.clip(self.bx + ox, 0, self.w - 1.0)
                    sy = np.clip(self.by + oy, 0, self.h - 1.0)
                    self.subs.append((trace_pixels(scene, sx, sy), sx, sy))

    def matte(self) -> Matte:
        h, w = self.h, self.w
        base = self.base
        hit = base.hit.reshape(h, w)
        valid = base.valid.reshape(h, w)
        trans = base.transmittance.reshape(h, w)
        dx = (base.exit_x - self.xs).reshape(h, w)
        dy = (base.exit_y - self.ys).reshape(h, w)

        mask = hit.astype(np.float64)
        att = np.where(hit, trans, 1.0)
        flow_valid = valid | ~hit
        offsets = np.zeros((h, w, 2), dtype=np.float64)
        use = hit & valid
        offsets[..., 0] = np.where(use, dx, 0.0)
        offsets[..., 1] = np.where(use, dy, 0.0)

        if self.subs:
            by, bx = self.by, self.bx
            sub_hit = np.stack([s.hit for s, _, _ in self.subs])
            sub_valid = np.stack([s.valid for s, _, _ in self.subs])
            sub_tr = np.stack([s.transmittance for s, _, _ in self.subs])
            sub_dx = np.stack([s.exit_x - sx for s, sx, _ in self.subs])
            sub_dy = np.stack([s.exit_y - sy for s, _, sy in self.subs])
            mask[by, bx] = sub_hit.mean(axis=0)
            hits = sub_hit.sum(axis=0)
            att[by, bx] = np.where(
                hits > 0,
                np.where(sub_hit, sub_tr, 0.0).sum(axis=0) / np.maximum(hits, 1),
                1.0,
            )
            good = sub_hit & sub_valid
            goods = good.sum(axis=0)
            mean_dx = np.where(good, sub_dx, 0.0).sum(axis=0) / np.maximum(goods, 1)
            mean_dy = np.where(good, sub_dy, 0.0).sum(axis=0) / np.maximum(goods, 1)
            offsets[by, bx, 0] = np.where(goods > 0, mean_dx, 0.0)
            offsets[by, bx, 1] = np.where(goods > 0, mean_dy, 0.0)
            flow_valid[by, bx] = (goods > 0) | (hits == 0)

        # clamp rounding noise and enforce the flow bound invariant
        att = np.clip(att, 0.0, 1.0)
        over = (np.abs(offsets[..., 0]) > w) | (np.abs(offsets[..., 1]) > h)
        flow_valid &= ~over
        offsets[~flow_valid] = 0.0
        return Matte(
            mask.astype(np.float32),
            att.astype(np.float32),
            FlowField(offsets.astype(np.float32), flow_valid),
        )

    def shade(self, background: np.ndarray) -> np.ndarray:
        bg = np.asarray(background, dtype=np.float64)
        img = _shade(self.base, bg, self.xs, self.ys)
        shape = (self.h, self.w) if bg.ndim == 2 else (self.h, self.w, bg.shape[2])
        img = img.reshape(shape)
        if self.subs:
            acc = None
            for sb, sx, sy in self.subs:
                shaded = _shade(sb, bg, sx, sy)
                acc = shaded if acc is None else acc + shaded
            img[self.by, self.bx] = acc / 4.0
        return np.clip(img, 0.0, 1.0)


def render_ground_truth_matte(scene: Scene, supersample: bool = True) -> Matte:
    """Trace the full frame into a (mask, attenuation, flow) matte.

    Interior pixels are single-sample; pixels on the mask boundary are, by
    default, refined with 4x supersampling, which yields the soft mask values.
    Background pixels carry mask 0, attenuation 1 and a valid zero flow; total
    internal reflection yields attenuation 0 and an invalid flow entry.
    """
    return _TracedFrame(scene, supersample).matte()


def render_scene_image(
    scene: Scene, background: np.ndarray, supersample: bool = True
) -> np.ndarray:
    """Render the scene over a background by direct per-pixel ray tracing.

    This is an independent path from compositing the scene's own matte; the
    two agree on valid interior pixels and differ only in how boundary pixels
    are averaged.
    """
    bg = validate_image(background, "background")
    cam = scene.camera
    if bg.shape[:2] != (cam.height, cam.width):
        raise ValueError(
            f"background {bg.shape[:2]} does not match camera "
            f"{(cam.height, cam.width)}"
        )
    return _TracedFrame(scene, supersample).shade(bg)


def render_capture_stack(
    scene: Scene, patterns: PatternStack, supersample: bool = True
) -> CaptureStack:
    """Render the ground-truth capture sequence for a scene.

    The black capture paints the object white (it is the soft mask image), the
    white capture is the scene over a uniform white background, and every
    pattern capture is a direct render over that pattern. All captures are
    shaded from one set of traced rays, so they are mutually consistent.
    """
    cam = scene.camera
    if (patterns.height, patterns.width) != (cam.height, cam.width):
        raise ValueError("pattern stack size does not match the camera frame")
    frame = _TracedFrame(scene, supersample)
    black = frame.matte().mask.astype(np.float64)
    white = frame.shade(np.ones((cam.height, cam.width)))
    images = [frame.shade(pat) for pat in patterns.patterns]
    return CaptureStack(
        black,
        white,
        images,
        patterns.bits_x,
        patterns.bits_y,
        patterns.with_complements,
    )
