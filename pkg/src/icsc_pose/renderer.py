"""Domain-randomized raycast renderer for the cylinder-fuselage scene.

Scene content: a finite-length textured cylinder (the fuselage, with end
caps), the ground plane z = 0, and a background wall behind the fuselage.
Everything a pixel can see is shaded as texture * (ambient + diffuse) plus a
specular highlight from one fixed directional light; rays that escape the
scene get a flat sky color.

Per image, the randomization spec drives the camera pose and, for every
surface, the texture transform plus ambient and specular colors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import (
    CAMERA_RIGHT,
    CAMERA_UP,
    DEFAULT_VIEW,
    EPS_T,
    CameraIntrinsics,
    CylinderModel,
    Pose,
    Ray,
    icsc_hit,
    quat_from_yaw_tilt,
    quat_rotate,
)
from .texture import ImageTexture, procedural_texture

# Surface indices in the hit buffer.
SKY, FUSELAGE, GROUND, WALL = -1, 0, 1, 2
SURFACE_NAMES = ("fuselage", "ground", "wall")

# Fixed directional light (unit vector toward the light) and shading weights.
LIGHT_DIR = np.array([0.35, 0.25, 0.88])
LIGHT_DIR = LIGHT_DIR / np.linalg.norm(LIGHT_DIR)
AMBIENT_WEIGHT = 0.55
DIFFUSE_WEIGHT = 0.45
SHININESS = 24.0
SKY_RGB = np.array([0.62, 0.70, 0.80])


@dataclass
class SceneGeometry:
    cylinder: CylinderModel = field(default_factory=CylinderModel)
    visible_length: float = 20.0  # rendered fuselage span, meters
    visible_center_y: float = -7.25
    wall_x: float = -6.0

    def __post_init__(self):
        if self.wall_x >= -self.cylinder.r0:
            raise ValueError("wall must sit behind the fuselage (wall_x < -r0)")

    @property
    def y_span(self):
        half = self.visible_length / 2.0
        return self.visible_center_y - half, self.visible_center_y + half


@dataclass
class SurfaceParams:
    translation: tuple = (0.0, 0.0)
    rotation_deg: float = 0.0
    scale: tuple = (1.0, 1.0)
    ambient_rgb: tuple = (1.0, 1.0, 1.0)
    specular_rgb: tuple = (0.0, 0.0, 0.0)

    def to_dict(self):
        return {
            "translation": list(self.translation),
            "rotation_deg": self.rotation_deg,
            "scale": list(self.scale),
            "ambient_rgb": list(self.ambient_rgb),
            "specular_rgb": list(self.specular_rgb),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            translation=tuple(d["translation"]),
            rotation_deg=d["rotation_deg"],
            scale=tuple(d["scale"]),
            ambient_rgb=tuple(d["ambient_rgb"]),
            specular_rgb=tuple(d["specular_rgb"]),
        )


@dataclass
class RandomizationSpec:
    """One sampled draw of every randomized scene parameter for one image."""

    camera_position: tuple
    pan_deg: float
    tilt_deg: float
    surfaces: dict  # name -> SurfaceParams, keyed by SURFACE_NAMES

    def to_dict(self):
        return {
            "camera_position": list(self.camera_position),
            "pan_deg": self.pan_deg,
            "tilt_deg": self.tilt_deg,
            "surfaces": {k: v.to_dict() for k, v in self.surfaces.items()},
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            camera_position=tuple(d["camera_position"]),
            pan_deg=d["pan_deg"],
            tilt_deg=d["tilt_deg"],
            surfaces={k: SurfaceParams.from_dict(v) for k, v in d["surfaces"].items()},
        )


@dataclass
class Bounds:
    """Sampling ranges for every randomized quantity."""

    position_min: tuple = (5.0, -9.25, 6.25)
    position_max: tuple = (9.0, -5.25, 7.25)
    pan_deg: tuple = (10.0, 30.0)
    tilt_deg: tuple = (-18.5, -17.5)
    tex_translation: tuple = (0.0, 8.0)
    tex_rotation_deg: tuple = (0.0, 360.0)
    tex_scale: tuple = (0.5, 2.0)
    ambient: tuple = (0.25, 1.0)
    specular: tuple = (0.0, 0.5)

    def to_dict(self):
        return {
            "position_min": list(self.position_min),
            "position_max": list(self.position_max),
            "pan_deg": list(self.pan_deg),
            "tilt_deg": list(self.tilt_deg),
            "tex_translation": list(self.tex_translation),
            "tex_rotation_deg": list(self.tex_rotation_deg),
            "tex_scale": list(self.tex_scale),
            "ambient": list(self.ambient),
            "specular": list(self.specular),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: tuple(v) for k, v in d.items()})


def _round9(x):
    return float(round(float(x), 9))


def sample_spec(rng: np.random.Generator, bounds: Bounds) -> RandomizationSpec:
    """Independent uniform draws for every randomized field, in a fixed order.

    Values are rounded to 9 decimals so they survive the manifest's text
    format unchanged.
    """
    lo = np.asarray(bounds.position_min, dtype=float)
    hi = np.asarray(bounds.position_max, dtype=float)
    position = tuple(_round9(v) for v in rng.uniform(lo, hi))
    pan = _round9(rng.uniform(*bounds.pan_deg))
    tilt = _round9(rng.uniform(*bounds.tilt_deg))
    surfaces = {}
    for name in SURFACE_NAMES:
        surfaces[name] = SurfaceParams(
            translation=tuple(_round9(v) for v in rng.uniform(*bounds.tex_translation, size=2)),
            rotation_deg=_round9(rng.uniform(*bounds.tex_rotation_deg)),
            scale=tuple(_round9(v) for v in rng.uniform(*bounds.tex_scale, size=2)),
            ambient_rgb=tuple(_round9(v) for v in rng.uniform(*bounds.ambient, size=3)),
            specular_rgb=tuple(_round9(v) for v in rng.uniform(*bounds.specular, size=3)),
        )
    return RandomizationSpec(position, pan, tilt, surfaces)


def label_pose(spec: RandomizationSpec) -> Pose:
    """Ground-truth pose for a spec; quaternion rounded to the manifest format."""
    q = quat_from_yaw_tilt(spec.pan_deg, spec.tilt_deg)
    return Pose(np.asarray(spec.camera_position, dtype=float),
                np.array([_round9(v) for v in q]))


def _pixel_dirs(pose: Pose, intr: CameraIntrinsics) -> np.ndarray:
    """Unit ray directions through every pixel center, shape (H, W, 3)."""
    w, h = intr.resolution
    view = quat_rotate(pose.orientation, DEFAULT_VIEW)
    right = quat_rotate(pose.orientation, CAMERA_RIGHT)
    up = quat_rotate(pose.orientation, CAMERA_UP)
    x_ndc = ((np.arange(w) + 0.5) / w * 2.0 - 1.0) * intr.tan_half_h
    y_ndc = (1.0 - (np.arange(h) + 0.5) / h * 2.0) * intr.tan_half_v
    d = (view[None, None, :]
         + x_ndc[None, :, None] * right[None, None, :]
         + y_ndc[:, None, None] * up[None, None, :])
    return d / np.linalg.norm(d, axis=-1, keepdims=True)


def _trace(pose: Pose, intr: CameraIntrinsics, geo: SceneGeometry):
    """Nearest-hit buffers: surface index, t, hit point, shading normal."""
    origin = pose.position
    dirs = _pixel_dirs(pose, intr)
    h, w, _ = dirs.shape
    inf = np.inf
    cyl = geo.cylinder
    y_lo, y_hi = geo.y_span

    dx, dy, dz = dirs[..., 0], dirs[..., 1], dirs[..., 2]
    ox, oy, oz = origin
    oxc, ozc = ox, oz - cyl.h0

    # Fuselage body: quadratic in the axis-perpendicular plane, y-clipped.
    a = dx * dx + dz * dz
    b = oxc * dx + ozc * dz
    c = oxc * oxc + ozc * ozc - cyl.r0 ** 2
    disc = b * b - a * c
    ok = (disc >= 0.0) & (a > 1e-12)
    sq = np.sqrt(np.maximum(disc, 0.0))
    qq = -(b + np.copysign(sq, np.where(b == 0.0, 1.0, b)))
    with np.errstate(divide="ignore", invalid="ignore"):
        roots = np.stack([qq / a, c / qq])
    t_body = np.full((h, w), inf)
    for t_root in roots:
        y_hit = oy + t_root * dy
        valid = ok & np.isfinite(t_root) & (t_root > EPS_T) & (y_hit >= y_lo) & (y_hit <= y_hi)
        t_body = np.where(valid & (t_root < t_body), t_root, t_body)

    # End caps: disks closing the visible span.
    t_caps = np.full((h, w), inf)
    cap_dir = np.zeros((h, w))
    for y_end in (y_lo, y_hi):
        with np.errstate(divide="ignore", invalid="ignore"):
            t_cap = (y_end - oy) / dy
        px = ox + t_cap * dx
        pz = oz + t_cap * dz - cyl.h0
        valid = np.isfinite(t_cap) & (t_cap > EPS_T) & (px * px + pz * pz <= cyl.r0 ** 2)
        closer = valid & (t_cap < t_caps)
        t_caps = np.where(closer, t_cap, t_caps)
        cap_dir = np.where(closer, math.copysign(1.0, oy - y_end), cap_dir)

    t_fuselage = np.minimum(t_body, t_caps)

    # Ground plane z = 0.
    with np.errstate(divide="ignore", invalid="ignore"):
        t_ground = np.where(dz < 0.0, -oz / dz, inf)
    t_ground = np.where(t_ground > EPS_T, t_ground, inf)

    # Background wall x = wall_x.
    with np.errstate(divide="ignore", invalid="ignore"):
        t_wall = np.where(dx != 0.0, (geo.wall_x - ox) / dx, inf)
    t_wall = np.where(t_wall > EPS_T, t_wall, inf)

    all_t = np.stack([t_fuselage, t_ground, t_wall])
    surf = np.where(np.isfinite(all_t).any(axis=0), all_t.argmin(axis=0), SKY)
    t = np.take_along_axis(all_t, np.maximum(surf, 0)[None], axis=0)[0]
    t = np.where(surf == SKY, inf, t)

    points = origin + np.where(np.isfinite(t), t, 0.0)[..., None] * dirs

    normals = np.zeros((h, w, 3))
    is_body = (surf == FUSELAGE) & (t_body <= t_caps)
    is_cap = (surf == FUSELAGE) & ~is_body
    normals[is_body, 0] = points[is_body, 0] / cyl.r0
    normals[is_body, 2] = (points[is_body, 2] - cyl.h0) / cyl.r0
    normals[is_cap, 1] = cap_dir[is_cap]
    normals[surf == GROUND, 2] = 1.0
    normals[surf == WALL, 0] = 1.0

    return surf, t, points, normals, dirs, is_cap


def _surface_uv(surf_id, is_cap, points, cyl: CylinderModel):
    """Texture coordinates per surface, in meters."""
    if surf_id == GROUND:
        return points[..., :2]
    if surf_id == WALL:
        return points[..., 1:]
    mx = points[..., 0]
    mz = points[..., 2] - cyl.h0
    azimuth = np.arctan2(mx, mz)
    body_uv = np.stack([points[..., 1], azimuth * cyl.r0], axis=-1)
    cap_uv = np.stack([mx, mz], axis=-1)
    return np.where(is_cap[..., None], cap_uv, body_uv)


def render(spec: RandomizationSpec, intr: CameraIntrinsics, geo: SceneGeometry,
           image_texture: ImageTexture | None = None, supersample: bool = False):
    """Render one image; returns (uint8 RGB array (H, W, 3), label Pose)."""
    pose = label_pose(spec)
    _assert_camera_outside(pose.position, geo)
    work_intr = intr
    if supersample:
        w, h = intr.resolution
        work_intr = CameraIntrinsics(intr.horizontal_fov, intr.aspect, (2 * w, 2 * h))

    surf, _, points, normals, dirs, is_cap = _trace(pose, work_intr, geo)
    color = np.empty(dirs.shape)
    color[:] = SKY_RGB

    half = LIGHT_DIR - dirs
    half /= np.linalg.norm(half, axis=-1, keepdims=True)
    n_dot_l = np.maximum(0.0, (normals * LIGHT_DIR).sum(axis=-1))
    n_dot_h = np.maximum(0.0, (normals * half).sum(axis=-1))

    for sid, name in enumerate(SURFACE_NAMES):
        mask = surf == sid
        if not mask.any():
            continue
        params = spec.surfaces[name]
        uv = _surface_uv(sid, is_cap, points, geo.cylinder)[mask]
        tex = procedural_texture(params, uv, image_texture)
        shade = AMBIENT_WEIGHT + DIFFUSE_WEIGHT * n_dot_l[mask]
        spec_term = np.asarray(params.specular_rgb) * (n_dot_h[mask] ** SHININESS)[..., None]
        color[mask] = tex * shade[..., None] + spec_term

    if supersample:
        h2, w2, _ = color.shape
        color = color.reshape(h2 // 2, 2, w2 // 2, 2, 3).mean(axis=(1, 3))
    img = (np.clip(color, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    return img, pose


def cylinder_mask(pose: Pose, intr: CameraIntrinsics, geo: SceneGeometry) -> np.ndarray:
    """Boolean (H, W) silhouette of the visible fuselage (body and caps)."""
    surf = _trace(pose, intr, geo)[0]
    return surf == FUSELAGE


def render_overlay(base_image: np.ndarray, pose: Pose, intr: CameraIntrinsics,
                   geo: SceneGeometry, alpha: float = 0.55) -> np.ndarray:
    """Tint the fuselage silhouette seen from `pose` in red over a base image."""
    base = np.asarray(base_image)
    h, w = base.shape[:2]
    if (w, h) != tuple(intr.resolution):
        from PIL import Image

        base = np.asarray(Image.fromarray(base).resize(intr.resolution, Image.BILINEAR))
    mask = cylinder_mask(pose, intr, geo)
    out = base.astype(np.float64)
    red = np.array([255.0, 0.0, 0.0])
    out[mask] = (1.0 - alpha) * out[mask] + alpha * red
    return (out + 0.5).astype(np.uint8)


def center_hit_in_view(pose: Pose, geo: SceneGeometry):
    """Scene-coordinate hit for the center ray, plus whether the renderer shows it.

    True only when the infinite-cylinder hit is genuine, lands inside the
    rendered fuselage span, and is not occluded by ground or wall.
    """
    hit = icsc_hit(pose, geo.cylinder)
    if not hit.hit:
        return hit, False
    y_lo, y_hi = geo.y_span
    if not (y_lo <= hit.point[1] <= y_hi):
        return hit, False
    origin, d = pose.position, quat_rotate(pose.orientation, DEFAULT_VIEW)
    t_ground = -origin[2] / d[2] if d[2] < 0 else math.inf
    t_wall = (geo.wall_x - origin[0]) / d[0] if d[0] != 0 else math.inf
    if t_wall <= EPS_T:
        t_wall = math.inf
    return hit, hit.t < min(t_ground, t_wall)


def _assert_camera_outside(position, geo: SceneGeometry):
    x, y, z = position
    cyl = geo.cylinder
    y_lo, y_hi = geo.y_span
    inside_cyl = (x * x + (z - cyl.h0) ** 2 <= cyl.r0 ** 2) and (y_lo <= y <= y_hi)
    if inside_cyl or z <= 0.0 or x <= geo.wall_x:
        raise ValueError(f"camera at {tuple(position)} is inside scene geometry")
