"""Deferred shading over intrinsic G-buffers.

A single directional light illuminates every pixel of the G-buffer:

    out = f(w_o, w_i, material) * intensity * max(n . w_i, 0)

with f the simplified Disney metallic-roughness BRDF: Lambert diffuse
scaled by (1 - metallic) plus a GGX / Schlick-Fresnel / Smith specular
lobe with F0 = mix(0.04, albedo, metallic) and alpha_g = roughness^2.

The display path appends an ambient albedo blend and a log tone curve.
All functions are pure; the math runs on ndarrays or autodiff Tensors
alike, so the training loss can differentiate straight through `shade`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .core import CameraIntrinsics, DimensionMismatchError, ImageBuffer, IntrinsicBundle, ValidationError

# Light intensities the training and inference pipelines default to.
TRAINING_LIGHT_INTENSITY = math.e**2
INFERENCE_LIGHT_INTENSITY = math.e**3


@dataclass(frozen=True)
class DirectionalLight:
    """A single directional light: unit direction from surface toward the light."""

    direction: np.ndarray
    intensity: float

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=np.float64).reshape(3)
        n = float(np.sqrt(d @ d))
        if abs(n - 1.0) > 1e-6:
            raise ValidationError(f"light direction must be unit length, |d| = {n:.9f}")
        if not (np.isfinite(self.intensity) and self.intensity >= 0):
            raise ValidationError(f"light intensity must be finite and >= 0, got {self.intensity}")
        d.flags.writeable = False
        object.__setattr__(self, "direction", d)
        object.__setattr__(self, "intensity", float(self.intensity))

    @staticmethod
    def from_angles(azimuth_deg: float, elevation_deg: float, intensity: float) -> "DirectionalLight":
        """Camera-space direction from angles.

        Elevation is measured up from the horizontal (x/z) plane, azimuth
        rotates about the vertical +y axis; azimuth 0 points along +z
        (straight at a camera-facing surface).
        """
        az = math.radians(azimuth_deg)
        el = math.radians(elevation_deg)
        d = np.array(
            [math.cos(el) * math.sin(az), math.sin(el), math.cos(el) * math.cos(az)],
            dtype=np.float64,
        )
        return DirectionalLight(direction=d / np.linalg.norm(d), intensity=intensity)


@dataclass(frozen=True)
class RenderConfig:
    mu: float = 64.0
    alpha: float = 0.2
    eps: float = 1e-6
    f0_dielectric: float = 0.04

    def __post_init__(self):
        if not self.mu > 0:
            raise ValidationError(f"mu must be positive, got {self.mu}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValidationError(f"alpha must lie in [0, 1], got {self.alpha}")
        if not self.eps > 0:
            raise ValidationError(f"eps must be positive, got {self.eps}")


def view_direction(pixel, camera: CameraIntrinsics) -> np.ndarray:
    """Unit vector from the surface seen at a pixel toward the camera.

    Camera space: +x right, +y up, +z toward the viewer. The principal
    pixel looks straight along +z.
    """
    u, v = float(pixel[0]), float(pixel[1])
    d = np.array([(camera.cx - u) / camera.fx, (camera.cy - v) / camera.fy, 1.0])
    return d / np.linalg.norm(d)


def view_direction_map(width: int, height: int, camera: CameraIntrinsics) -> np.ndarray:
    """Per-pixel toward-camera directions at pixel centers, shape (H, W, 3)."""
    u = np.arange(width, dtype=np.float64) + 0.5
    v = np.arange(height, dtype=np.float64) + 0.5
    x = (camera.cx - u)[None, :] / camera.fx
    y = (camera.cy - v)[:, None] / camera.fy
    d = np.empty((height, width, 3), dtype=np.float64)
    d[:, :, 0] = np.broadcast_to(x, (height, width))
    d[:, :, 1] = np.broadcast_to(y, (height, width))
    d[:, :, 2] = 1.0
    norm = np.sqrt(d[:, :, 0] ** 2 + d[:, :, 1] ** 2 + d[:, :, 2] ** 2)
    return d / norm[:, :, None]


def _dot3(a, b):
    return a[..., 0] * b[..., 0] + a[..., 1] * b[..., 1] + a[..., 2] * b[..., 2]


def _normalize3(v, eps: float):
    n = ad.sqrt(ad.maximum(_dot3(v, v), eps * eps))
    return ad.stack([v[..., 0] / n, v[..., 1] / n, v[..., 2] / n], axis=-1)


def eval_brdf(albedo, roughness, metallic, n, w_o, w_i, cfg: RenderConfig = RenderConfig()):
    """BRDF value per pixel; rgb output with shape albedo.shape.

    Inputs broadcast: albedo (..., 3), roughness/metallic (...,), direction
    arguments (..., 3) unit vectors. Backfacing configurations (n.w_o <= 0
    or n.w_i <= 0) evaluate to zero.
    """
    ndo = _dot3(n, w_o)
    ndi = _dot3(n, w_i)
    front = (ad.value_of(ndo) > 0.0) & (ad.value_of(ndi) > 0.0)

    h = _normalize3(ad.stack([w_o[..., c] + w_i[..., c] for c in range(3)], axis=-1), cfg.eps)
    ndh = ad.maximum(_dot3(n, h), 0.0)
    hdo = ad.maximum(_dot3(h, w_o), 0.0)

    alpha_g = roughness * roughness
    a2 = alpha_g * alpha_g
    denom_d = ndh * ndh * (a2 - 1.0) + 1.0
    # roughness 0 with ndh 1 drives denom_d to 0/0; the floor keeps the
    # mirror-delta limit at a finite 0 with a zero subgradient
    dist = a2 / ad.maximum(math.pi * denom_d * denom_d, cfg.eps)

    k = alpha_g * 0.5
    ndo_c = ad.maximum(ndo, 0.0)
    ndi_c = ad.maximum(ndi, 0.0)
    g1o = ndo_c / ad.maximum(ndo_c * (1.0 - k) + k, cfg.eps)
    g1i = ndi_c / ad.maximum(ndi_c * (1.0 - k) + k, cfg.eps)
    geom = g1o * g1i

    spec_scale = dist * geom / ad.maximum(4.0 * ndo_c * ndi_c, cfg.eps)
    one_m_hdo5 = (1.0 - hdo) ** 5.0

    channels = []
    for c in range(3):
        a_c = albedo[..., c]
        f0 = (1.0 - metallic) * cfg.f0_dielectric + metallic * a_c
        # grazing reflectance scaled by saturate(50 F0): a black conductor
        # (F0 = 0) reflects nothing at any angle
        f90 = ad.clip(f0 * 50.0, 0.0, 1.0)
        fresnel = f0 + (f90 - f0) * one_m_hdo5
        diffuse = (1.0 - metallic) * a_c * (1.0 / math.pi)
        channels.append(diffuse + fresnel * spec_scale)
    f = ad.stack(channels, axis=-1)
    return ad.where(front[..., None], f, ad.value_of(f) * 0.0)


def _scale3(rgb, s):
    return ad.stack([rgb[..., c] * s for c in range(3)], axis=-1)


def shade_arrays(albedo, roughness, metallic, normal, w_o_map, light_dir, intensity, cfg: RenderConfig):
    """Core of `shade`, usable with Tensors for the differentiable loss path."""
    w_i = np.broadcast_to(np.asarray(light_dir, dtype=np.float64), ad.value_of(albedo).shape)
    f = eval_brdf(albedo, roughness, metallic, normal, w_o_map, w_i, cfg)
    cos_i = ad.maximum(_dot3(normal, w_i), 0.0)
    return _scale3(f, cos_i * intensity)


def shade(bundle: IntrinsicBundle, light: DirectionalLight, cfg: RenderConfig = RenderConfig()) -> ImageBuffer:
    """Render the G-buffer under one directional light. Linear output, unbounded above."""
    w_o = view_direction_map(bundle.width, bundle.height, bundle.camera)
    img = shade_arrays(
        bundle.albedo.array,
        bundle.roughness.array[:, :, 0],
        bundle.metallic.array[:, :, 0],
        bundle.normal.array,
        w_o,
        light.direction,
        light.intensity,
        cfg,
    )
    return ImageBuffer(img)


def ambient_blend(rendered, albedo, alpha: float):
    """Convex blend (1 - alpha) * rendered + alpha * albedo."""
    if isinstance(rendered, ImageBuffer):
        if rendered.array.shape != albedo.array.shape:
            raise DimensionMismatchError("rendered vs albedo", rendered.array.shape, albedo.array.shape)
        return ImageBuffer((1.0 - alpha) * rendered.array + alpha * albedo.array)
    if ad.value_of(rendered).shape != ad.value_of(albedo).shape:
        raise DimensionMismatchError(
            "rendered vs albedo", ad.value_of(rendered).shape, ad.value_of(albedo).shape
        )
    return (1.0 - alpha) * rendered + alpha * albedo


def tone_map(img, mu: float = 64.0):
    """log(1 + mu x) / log(1 + mu) on input clamped to [0, 1]; output in [0, 1].

    Negative input signals a shading bug upstream and is rejected.
    """
    arr = img.array if isinstance(img, ImageBuffer) else ad.value_of(img)
    if np.any(arr < 0.0):
        raise ValidationError(f"tone_map input must be nonnegative, min = {arr.min():.6g}")
    x = np.clip(arr, 0.0, 1.0)
    out = np.log1p(mu * x) / math.log1p(mu)
    return ImageBuffer(out) if isinstance(img, ImageBuffer) else out


def display_image(bundle: IntrinsicBundle, light: DirectionalLight, cfg: RenderConfig = RenderConfig()) -> ImageBuffer:
    """Full inference pipeline: shade, ambient blend, tone map. Values in [0, 1]."""
    rendered = shade(bundle, light, cfg)
    blended = ambient_blend(rendered, bundle.albedo, cfg.alpha)
    return tone_map(blended, cfg.mu)
