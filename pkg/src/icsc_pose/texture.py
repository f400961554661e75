"""Seeded procedural surface texture: cell colors modulated by multi-octave value noise.

The pattern is a pure function of the (transformed) uv coordinate built from
integer hashing, so it is bit-stable across runs and platforms and needs no
external image asset. An optional image-backed texture samples a
user-supplied picture instead of the procedural pattern.
"""

from __future__ import annotations

import math

import numpy as np

# splitmix64 finalizer constants
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)

CELLS_PER_METER = 1.5  # base cell pattern frequency
NOISE_OCTAVES = 4
NOISE_BASE_FREQ = 3.0


def _mix(h):
    # wrapping multiplies are the point of the hash
    with np.errstate(over="ignore"):
        h = np.asarray(h, dtype=np.uint64)
        h = (h ^ (h >> np.uint64(30))) * _M1
        h = (h ^ (h >> np.uint64(27))) * _M2
        return h ^ (h >> np.uint64(31))


def hash01(ix, iy, salt: int):
    """Uniform [0,1) from integer lattice coordinates, vectorized."""
    ix = np.asarray(ix, dtype=np.int64).astype(np.uint64)
    iy = np.asarray(iy, dtype=np.int64).astype(np.uint64)
    with np.errstate(over="ignore"):
        h = _mix(ix * _GOLDEN + iy + np.uint64(salt) * _M2)
    return (h >> np.uint64(11)).astype(np.float64) * (1.0 / 2 ** 53)


def _smoothstep(t):
    return t * t * (3.0 - 2.0 * t)


def value_noise(u, v, salt: int):
    """Bilinear smoothstep interpolation of hashed lattice values."""
    u0 = np.floor(u)
    v0 = np.floor(v)
    fu = _smoothstep(u - u0)
    fv = _smoothstep(v - v0)
    a = hash01(u0, v0, salt)
    b = hash01(u0 + 1, v0, salt)
    c = hash01(u0, v0 + 1, salt)
    d = hash01(u0 + 1, v0 + 1, salt)
    return (a * (1 - fu) + b * fu) * (1 - fv) + (c * (1 - fu) + d * fu) * fv


def fbm(u, v, salt: int, octaves: int = NOISE_OCTAVES):
    """Octave sum of value noise, normalized to [0, 1]."""
    total = np.zeros(np.broadcast(u, v).shape)
    amp, freq, norm = 1.0, 1.0, 0.0
    for i in range(octaves):
        total += amp * value_noise(u * freq, v * freq, salt + 101 * i)
        norm += amp
        amp *= 0.5
        freq *= 2.0
    return total / norm


def pattern_rgb(uv: np.ndarray) -> np.ndarray:
    """Base texture color in [0,1]^3 for uv of shape (..., 2)."""
    u, v = uv[..., 0], uv[..., 1]
    cu = np.floor(u * CELLS_PER_METER)
    cv = np.floor(v * CELLS_PER_METER)
    cell = np.stack([hash01(cu, cv, s) for s in (7, 19, 37)], axis=-1)
    mod = fbm(u * NOISE_BASE_FREQ, v * NOISE_BASE_FREQ, salt=53)
    return cell * (0.45 + 0.55 * mod[..., None])


def transform_uv(uv: np.ndarray, translation, rotation_deg: float, scale) -> np.ndarray:
    """uv' = R(rotation) @ (uv / scale) + translation, applied on (..., 2)."""
    sx, sy = scale
    r = math.radians(rotation_deg)
    cr, sr = math.cos(r), math.sin(r)
    u = uv[..., 0] / sx
    v = uv[..., 1] / sy
    return np.stack([
        cr * u - sr * v + translation[0],
        sr * u + cr * v + translation[1],
    ], axis=-1)


class ImageTexture:
    """Wrap-around bilinear sampler over a user-supplied RGB image."""

    def __init__(self, path, meters_per_tile: float = 8.0):
        from PIL import Image

        with Image.open(path) as im:
            self.pixels = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
        self.meters_per_tile = meters_per_tile

    def sample(self, uv: np.ndarray) -> np.ndarray:
        h, w, _ = self.pixels.shape
        fu = (uv[..., 0] / self.meters_per_tile) % 1.0
        fv = (uv[..., 1] / self.meters_per_tile) % 1.0
        x = fu * w
        y = fv * h
        x0 = np.floor(x).astype(int)
        y0 = np.floor(y).astype(int)
        tx = (x - x0)[..., None]
        ty = (y - y0)[..., None]
        x1 = (x0 + 1) % w
        y1 = (y0 + 1) % h
        x0 %= w
        y0 %= h
        p = self.pixels
        top = p[y0, x0] * (1 - tx) + p[y0, x1] * tx
        bot = p[y1, x0] * (1 - tx) + p[y1, x1] * tx
        return top * (1 - ty) + bot * ty


def procedural_texture(surface_params, uv: np.ndarray, image_texture: ImageTexture | None = None) -> np.ndarray:
    """Surface color: transformed pattern modulated by the ambient RGB draw.

    surface_params carries the per-surface randomization (translation,
    rotation, scale, ambient color); uv has shape (..., 2).
    """
    uvt = transform_uv(uv, surface_params.translation, surface_params.rotation_deg,
                       surface_params.scale)
    base = image_texture.sample(uvt) if image_texture is not None else pattern_rgb(uvt)
    return base * np.asarray(surface_params.ambient_rgb)
