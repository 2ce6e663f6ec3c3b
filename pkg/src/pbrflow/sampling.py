"""Light-direction sampling for the rendering loss.

Three strategies:
  importance - invert the roughness map and draw a pixel from the
               multinomial over max(1 - r, floor); the light direction is
               the per-pixel view direction reflected about the normal,
               so smooth pixels produce specular highlights most often.
  uniform    - direction uniform on the camera-facing hemisphere (z > 0),
               the ablation baseline.
  brdf       - pixel uniform, then a GGX half-vector draw at that pixel's
               roughness, reflecting the view direction about it.

Draws consume a per-sampler generator seeded from rng_seed; the sequence
for a given seed is reproducible in single-task use, which is what the
training loop and tests rely on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import ImageBuffer, IntrinsicBundle, ValidationError
from .shading import TRAINING_LIGHT_INTENSITY, DirectionalLight, view_direction

STRATEGIES = ("importance", "uniform", "brdf")


@dataclass
class LightSampler:
    strategy: str = "importance"
    weight_floor: float = 1e-3
    rng_seed: int = 0
    _rng: np.random.Generator = field(default=None, repr=False, compare=False)
    _draws: int = field(default=0, repr=False, compare=False)

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValidationError(f"unknown strategy {self.strategy!r}, expected one of {STRATEGIES}")
        if not self.weight_floor > 0:
            raise ValidationError(f"weight_floor must be positive, got {self.weight_floor}")
        if self._rng is None:
            self._rng = np.random.default_rng(self.rng_seed)

    @property
    def draws(self) -> int:
        return self._draws

    def reset(self) -> None:
        self._rng = np.random.default_rng(self.rng_seed)
        self._draws = 0


def _roughness_array(roughness) -> np.ndarray:
    arr = roughness.array[:, :, 0] if isinstance(roughness, ImageBuffer) else np.asarray(roughness)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    if arr.size == 0:
        raise ValidationError("empty roughness buffer")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ValidationError("roughness must lie in [0, 1]")
    return arr


def importance_weights(roughness, weight_floor: float) -> np.ndarray:
    """Normalized multinomial weights: max(1 - r, floor) per pixel, flattened."""
    arr = _roughness_array(roughness)
    w = np.maximum(1.0 - arr.reshape(-1), weight_floor)
    return w / w.sum()


def sample_pixel_importance(roughness, sampler: LightSampler, size: int | None = None):
    """Draw flat pixel indices proportionally to the floored inverse roughness."""
    p = importance_weights(roughness, sampler.weight_floor)
    out = sampler._rng.choice(p.size, size=size, p=p)
    sampler._draws += 1 if size is None else int(size)
    return int(out) if size is None else out


def reflect(direction: np.ndarray, normal: np.ndarray) -> np.ndarray:
    return 2.0 * normal * float(normal @ direction) - direction


def light_from_pixel(
    bundle: IntrinsicBundle,
    pixel: int,
    intensity: float = TRAINING_LIGHT_INTENSITY,
) -> DirectionalLight:
    """Light along the view direction reflected about the pixel's normal."""
    h, w = bundle.height, bundle.width
    if not 0 <= pixel < h * w:
        raise ValidationError(f"pixel index {pixel} outside {h}x{w} image")
    y, x = divmod(int(pixel), w)
    n = bundle.normal.array[y, x]
    w_o = view_direction((x + 0.5, y + 0.5), bundle.camera)
    w_i = reflect(w_o, n)
    w_i = w_i / np.linalg.norm(w_i)
    return DirectionalLight(direction=w_i, intensity=intensity)


def _uniform_hemisphere(rng: np.random.Generator) -> np.ndarray:
    z = rng.uniform(0.0, 1.0)
    phi = rng.uniform(0.0, 2.0 * math.pi)
    s = math.sqrt(max(1.0 - z * z, 0.0))
    return np.array([s * math.cos(phi), s * math.sin(phi), z])


def _tangent_frame(n: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = np.array([0.0, 1.0, 0.0]) if abs(n[0]) > 0.9 else np.array([1.0, 0.0, 0.0])
    t = np.cross(a, n)
    t /= np.linalg.norm(t)
    return t, np.cross(n, t)


def _ggx_light(bundle: IntrinsicBundle, pixel: int, rng: np.random.Generator, intensity: float) -> DirectionalLight:
    y, x = divmod(int(pixel), bundle.width)
    n = bundle.normal.array[y, x]
    rough = float(bundle.roughness.array[y, x, 0])
    alpha = max(rough * rough, 1e-3)
    w_o = view_direction((x + 0.5, y + 0.5), bundle.camera)
    t, b = _tangent_frame(n)
    for _ in range(8):
        u1, u2 = rng.uniform(), rng.uniform()
        cos_t = math.sqrt((1.0 - u1) / (1.0 + (alpha * alpha - 1.0) * u1))
        sin_t = math.sqrt(max(1.0 - cos_t * cos_t, 0.0))
        phi = 2.0 * math.pi * u2
        h = sin_t * math.cos(phi) * t + sin_t * math.sin(phi) * b + cos_t * n
        w_i = reflect(w_o, h / np.linalg.norm(h))
        if w_i @ n > 1e-6:
            return DirectionalLight(direction=w_i / np.linalg.norm(w_i), intensity=intensity)
    # degenerate pixel (grazing view, huge roughness): fall back to the mirror direction
    w_i = reflect(w_o, n)
    return DirectionalLight(direction=w_i / np.linalg.norm(w_i), intensity=intensity)


def sample_lights(
    bundle: IntrinsicBundle,
    sampler: LightSampler,
    count: int,
    intensity: float = TRAINING_LIGHT_INTENSITY,
) -> list[DirectionalLight]:
    if count < 1:
        raise ValidationError(f"count must be >= 1, got {count}")
    lights: list[DirectionalLight] = []
    for _ in range(count):
        if sampler.strategy == "importance":
            pixel = sample_pixel_importance(bundle.roughness, sampler)
            lights.append(light_from_pixel(bundle, pixel, intensity))
        elif sampler.strategy == "uniform":
            d = _uniform_hemisphere(sampler._rng)
            sampler._draws += 1
            lights.append(DirectionalLight(direction=d / np.linalg.norm(d), intensity=intensity))
        else:  # brdf
            pixel = int(sampler._rng.integers(0, bundle.height * bundle.width))
            sampler._draws += 1
            lights.append(_ggx_light(bundle, pixel, sampler._rng, intensity))
    return lights
