"""Pose/quaternion algebra, view rays, and ray-cylinder scene coordinates.

World frame is right-handed with z up and the ground plane at z = 0. The
fuselage is modelled as an infinite cylinder whose axis runs parallel to the
world y-axis through (x=0, z=h0). A camera with identity orientation looks
along -x (toward the fuselage), with +y to the image right and +z up.

Quaternions are stored as (w, x, y, z) with the scalar part first.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

# Forward-hit threshold for the ray parameter, in meters.
EPS_T = 1e-6
# Discriminant below this is treated as a tangent (non-differentiable) graze.
DISC_TOL = 1e-9
# Squared radial distance below this counts as "on the cylinder axis".
AXIS_TOL = 1e-12

DEFAULT_VIEW = np.array([-1.0, 0.0, 0.0])
CAMERA_RIGHT = np.array([0.0, 1.0, 0.0])
CAMERA_UP = np.array([0.0, 0.0, 1.0])


class NonDifferentiableRegion(Exception):
    """Raised where the closed-form intersection has no usable Jacobian."""


@dataclass
class Pose:
    """Camera position (meters) and orientation quaternion (w, x, y, z)."""

    position: np.ndarray
    orientation: np.ndarray

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float)
        self.orientation = np.asarray(self.orientation, dtype=float)
        if self.position.shape != (3,) or self.orientation.shape != (4,):
            raise ValueError("pose needs a 3-vector position and 4-vector quaternion")

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.position, self.orientation])

    @classmethod
    def from_vector(cls, v) -> "Pose":
        v = np.asarray(v, dtype=float)
        return cls(v[:3], v[3:7])


@dataclass
class Ray:
    origin: np.ndarray
    direction: np.ndarray  # unit length

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=float)
        self.direction = np.asarray(self.direction, dtype=float)

    def at(self, t: float) -> np.ndarray:
        return self.origin + t * self.direction


@dataclass
class CylinderModel:
    """Fuselage surface: radius r0, axis along y at height h0 above ground."""

    r0: float = 2.0
    h0: float = 3.5

    def __post_init__(self):
        if self.r0 <= 0:
            raise ValueError("cylinder radius must be positive")
        if self.h0 <= self.r0:
            raise ValueError("cylinder must clear the ground (h0 > r0)")

    def surface_residual(self, point) -> float:
        """x^2 + (z - h0)^2 - r0^2; zero on the surface."""
        p = np.asarray(point, dtype=float)
        return p[0] ** 2 + (p[2] - self.h0) ** 2 - self.r0 ** 2


@dataclass
class RayHit:
    """Scene point returned by the intersection (or its miss surrogate)."""

    point: np.ndarray
    t: float
    hit: bool
    degenerate: bool = False

    def __post_init__(self):
        self.point = np.asarray(self.point, dtype=float)


@dataclass
class CameraIntrinsics:
    horizontal_fov: float = 61.6  # degrees
    aspect: float = 16.0 / 9.0  # width : height
    resolution: tuple = (128, 72)  # (width, height) pixels

    def __post_init__(self):
        if not 0.0 < self.horizontal_fov < 180.0:
            raise ValueError("horizontal FOV must be in (0, 180) degrees")
        w, h = self.resolution
        if w < 1 or h < 1:
            raise ValueError("resolution must be at least 1x1")

    @property
    def tan_half_h(self) -> float:
        return math.tan(math.radians(self.horizontal_fov) / 2.0)

    @property
    def tan_half_v(self) -> float:
        return self.tan_half_h / self.aspect


def quat_normalize(q) -> np.ndarray:
    """Unit quaternion on the w >= 0 hemisphere."""
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q)
    if n <= 1e-12:
        raise ValueError("degenerate quaternion")
    q = q / n
    if q[0] < 0:
        q = -q
    return q


def quat_mul(a, b) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_conj(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def quat_rotate(q, v) -> np.ndarray:
    """Rotate vector v by quaternion q (q v q*, scale-corrected).

    Dividing by |q|^2 makes the result an exact rotation for any nonzero q,
    which keeps ray directions valid for raw network quaternions.
    """
    q = np.asarray(q, dtype=float)
    v = np.asarray(v, dtype=float)
    w, u = q[0], q[1:]
    n2 = float(q @ q)
    if n2 <= 1e-24:
        raise ValueError("degenerate quaternion")
    out = (w * w - u @ u) * v + 2.0 * (u @ v) * u + 2.0 * w * np.cross(u, v)
    return out / n2


def quat_about_axis(axis, angle_deg: float) -> np.ndarray:
    half = math.radians(angle_deg) / 2.0
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    return np.concatenate([[math.cos(half)], math.sin(half) * axis])


def quat_from_yaw_tilt(yaw_deg: float, tilt_deg: float) -> np.ndarray:
    """Pan about world z, then tilt about the camera's right axis.

    Negative tilt pitches the view toward the ground.
    """
    q_yaw = quat_about_axis([0.0, 0.0, 1.0], yaw_deg)
    q_tilt = quat_about_axis([0.0, 1.0, 0.0], tilt_deg)
    return quat_normalize(quat_mul(q_yaw, q_tilt))


def angular_error(q1, q2) -> float:
    """Geodesic rotation distance in degrees, sign-insensitive."""
    d = abs(float(np.dot(q1, q2)))
    return math.degrees(2.0 * math.acos(min(1.0, d)))


def center_view_ray(pose: Pose) -> Ray:
    return Ray(pose.position, quat_rotate(pose.orientation, DEFAULT_VIEW))


def pixel_ray(pose: Pose, intr: CameraIntrinsics, u: int, v: int) -> Ray:
    """Pinhole ray through the center of pixel (column u, row v)."""
    w, h = intr.resolution
    if not (0 <= u < w and 0 <= v < h):
        raise ValueError(f"pixel ({u}, {v}) outside {w}x{h} image")
    x_ndc = (u + 0.5) / w * 2.0 - 1.0
    y_ndc = 1.0 - (v + 0.5) / h * 2.0
    view = quat_rotate(pose.orientation, DEFAULT_VIEW)
    right = quat_rotate(pose.orientation, CAMERA_RIGHT)
    up = quat_rotate(pose.orientation, CAMERA_UP)
    d = view + x_ndc * intr.tan_half_h * right + y_ndc * intr.tan_half_v * up
    return Ray(pose.position, d / np.linalg.norm(d))


def _xz_quadratic(ray: Ray, cyl: CylinderModel):
    """Coefficients of a t^2 + 2 b t + c = 0 for the axis-perpendicular plane."""
    ox, oz = ray.origin[0], ray.origin[2] - cyl.h0
    dx, dz = ray.direction[0], ray.direction[2]
    a = dx * dx + dz * dz
    b = ox * dx + oz * dz
    c = ox * ox + oz * oz - cyl.r0 ** 2
    return a, b, c


def intersect_ray_cylinder(ray: Ray, cyl: CylinderModel) -> RayHit:
    """Nearest forward intersection, or the miss surrogate with hit=False.

    A tangent (double-root) graze counts as a hit. Rays parallel to the axis
    never cross the surface and take the fallback path.
    """
    a, b, c = _xz_quadratic(ray, cyl)
    if a <= AXIS_TOL:
        return fallback_surface_point(ray, cyl)
    disc = b * b - a * c
    if disc < 0.0:
        return fallback_surface_point(ray, cyl)
    root = math.sqrt(disc)
    # Stable quadratic roots: q has no cancellation.
    q = -(b + math.copysign(root, b)) if b != 0.0 else root
    t_candidates = sorted({q / a, c / q} if q != 0.0 else {0.0})
    for t in t_candidates:
        if t > EPS_T:
            return RayHit(ray.at(t), t, hit=True)
    return fallback_surface_point(ray, cyl)


def fallback_surface_point(ray: Ray, cyl: CylinderModel) -> RayHit:
    """Closest-approach point radially projected onto the cylinder surface.

    Continuous with the true intersection as a missing ray approaches
    tangency, which keeps the scene-coordinate loss informative when a
    predicted pose looks past the fuselage.
    """
    a, b, _ = _xz_quadratic(ray, cyl)
    t = EPS_T if a <= AXIS_TOL else max(-b / a, EPS_T)
    p = ray.at(t)
    mx, mz = p[0], p[2] - cyl.h0
    m = math.hypot(mx, mz)
    if m * m <= AXIS_TOL:
        # Ray meets the axis itself: project along the fixed +z convention.
        point = np.array([0.0, p[1], cyl.h0 + cyl.r0])
        return RayHit(point, t, hit=False, degenerate=True)
    scale = cyl.r0 / m
    point = np.array([mx * scale, p[1], cyl.h0 + mz * scale])
    return RayHit(point, t, hit=False)


def icsc_hit(pose: Pose, cyl: CylinderModel) -> RayHit:
    """Scene point seen by the image center, with hit/fallback flags."""
    return intersect_ray_cylinder(center_view_ray(pose), cyl)


def icsc(pose: Pose, cyl: CylinderModel) -> np.ndarray:
    """Image-centre scene coordinate: where the center view ray meets the fuselage."""
    return icsc_hit(pose, cyl).point


def _rotated_view_jacobian(q):
    """Direction v = R(q/|q|) @ DEFAULT_VIEW and its 3x4 Jacobian in raw q.

    Uses v = (q p q*) / |q|^2, exact for any nonzero q, so the derivative
    already contains the normalization projection (radial components vanish).
    """
    q = np.asarray(q, dtype=float)
    w, u = q[0], q[1:]
    p = DEFAULT_VIEW
    g = float(q @ q)
    if g <= 1e-24:
        raise ValueError("degenerate quaternion")
    h = (w * w - u @ u) * p + 2.0 * (u @ p) * u + 2.0 * w * np.cross(u, p)
    v = h / g

    dh = np.empty((3, 4))
    dh[:, 0] = 2.0 * w * p + 2.0 * np.cross(u, p)
    eye = np.eye(3)
    for i in range(3):
        e = eye[i]
        dh[:, 1 + i] = (-2.0 * u[i] * p + 2.0 * p[i] * u
                        + 2.0 * (u @ p) * e + 2.0 * w * np.cross(e, p))
    dv = (dh - np.outer(v, 2.0 * q)) / g
    return v, dv


def icsc_jacobian(pose: Pose, cyl: CylinderModel) -> np.ndarray:
    """3x7 Jacobian of the center scene coordinate w.r.t. (position, quaternion).

    Differentiates the closed-form nearest quadratic root. Raises
    NonDifferentiableRegion on misses and tangent grazes; the caller should
    switch to fallback_jacobian there.
    """
    o = pose.position
    v, dv = _rotated_view_jacobian(pose.orientation)
    ray = Ray(o, v)
    a, b, c = _xz_quadratic(ray, cyl)
    if a <= AXIS_TOL:
        raise NonDifferentiableRegion("ray parallel to cylinder axis")
    disc = b * b - a * c
    if disc <= DISC_TOL:
        raise NonDifferentiableRegion("miss or tangent graze")
    root = math.sqrt(disc)
    q = -(b + math.copysign(root, b)) if b != 0.0 else root
    ts = [t for t in ({q / a, c / q} if q != 0.0 else {0.0}) if t > EPS_T]
    if not ts:
        raise NonDifferentiableRegion("no forward intersection")
    t = min(ts)

    # Implicit differentiation of F = a t^2 + 2 b t + c in each pose parameter.
    dF_dt = 2.0 * (a * t + b)
    J = np.zeros((3, 7))
    ox, oz = o[0], o[2] - cyl.h0
    vx, vz = v[0], v[2]
    # Position columns: a is direction-only, b and c pick up the xz origin.
    do_xz = {0: (1.0, 0.0), 2: (0.0, 1.0)}
    for j in range(3):
        dox, doz = do_xz.get(j, (0.0, 0.0))
        db = dox * vx + doz * vz
        dc = 2.0 * (ox * dox + oz * doz)
        dt = -(2.0 * t * db + dc) / dF_dt
        J[:, j] = dt * v
        J[j, j] += 1.0
    # Quaternion columns: origin fixed, direction varies.
    for k in range(4):
        dvx, dvz = dv[0, k], dv[2, k]
        da = 2.0 * (vx * dvx + vz * dvz)
        db = ox * dvx + oz * dvz
        dt = -(t * t * da + 2.0 * t * db) / dF_dt
        J[:, 3 + k] = dt * v + t * dv[:, k]
    return J


def fallback_jacobian(pose: Pose, cyl: CylinderModel) -> np.ndarray:
    """3x7 Jacobian of the miss surrogate w.r.t. (position, quaternion)."""
    o = pose.position
    v, dv = _rotated_view_jacobian(pose.orientation)
    ray = Ray(o, v)
    a, b, _ = _xz_quadratic(ray, cyl)
    if a <= AXIS_TOL:
        raise NonDifferentiableRegion("ray parallel to cylinder axis")
    t = -b / a
    clamped = t < EPS_T
    t = max(t, EPS_T)
    p = ray.at(t)
    mx, mz = p[0], p[2] - cyl.h0
    m2 = mx * mx + mz * mz
    if m2 <= AXIS_TOL:
        raise NonDifferentiableRegion("closest approach on the cylinder axis")
    m = math.sqrt(m2)

    ox, oz = o[0], o[2] - cyl.h0
    vx, vz = v[0], v[2]
    J = np.zeros((3, 7))

    def accumulate(col, do, dvk, da, db):
        # dt, then the unprojected point, then the radial projection chain.
        # At the closest approach a t + b = 0, so da t + a dt + db = 0.
        dt = 0.0 if clamped else -(db + t * da) / a
        dp = do + dt * v + t * dvk
        dmx, dmz = dp[0], dp[2]
        # d(r0 * m / |m|) = r0 (I - m m^T / m^2) / |m|
        proj = cyl.r0 / m
        common = (mx * dmx + mz * dmz) / m2
        J[0, col] = proj * (dmx - mx * common)
        J[2, col] = proj * (dmz - mz * common)
        J[1, col] = dp[1]

    eye = np.eye(3)
    do_xz = {0: (1.0, 0.0), 2: (0.0, 1.0)}
    for j in range(3):
        dox, doz = do_xz.get(j, (0.0, 0.0))
        db = dox * vx + doz * vz
        accumulate(j, eye[j], np.zeros(3), 0.0, db)
    for k in range(4):
        dvk = dv[:, k]
        da = 2.0 * (vx * dvk[0] + vz * dvk[2])
        db = ox * dvk[0] + oz * dvk[2]
        accumulate(3 + k, np.zeros(3), dvk, da, db)
    return J
