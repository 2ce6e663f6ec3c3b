"""Procedural sphere-scene generator: exact ground-truth intrinsic bundles.

Scenes are 1-4 spheres over a flat camera-facing backdrop, rasterized
analytically per pixel, so every map is exact: materials are constant
inside each object's silhouette and normals are unit by construction.
Each scene also yields a 16-value condition vector of quantized layout
and material features which conditions the generator.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import ImageBuffer, IntrinsicBundle, ValidationError

COND_DIM = 16
MAX_SPHERES = 4
_QUANT = 256.0  # quantization bins; coarser bins leak pixel-scale layout noise


@dataclass(frozen=True)
class Sphere:
    cx: float  # center, pixels
    cy: float
    radius: float  # pixels
    albedo: tuple
    roughness: float
    metallic: float


@dataclass(frozen=True)
class SceneSpec:
    seed: int
    resolution: int
    spheres: tuple
    plane_albedo: tuple
    plane_roughness: float
    plane_metallic: float

    def __post_init__(self):
        if not 0 <= len(self.spheres) <= MAX_SPHERES:
            raise ValidationError(f"expected 0-{MAX_SPHERES} spheres, got {len(self.spheres)}")
        for s in self.spheres:
            if not (0 <= s.cx <= self.resolution and 0 <= s.cy <= self.resolution):
                raise ValidationError(f"sphere center ({s.cx}, {s.cy}) outside frame")
            for v in (*s.albedo, s.roughness, s.metallic):
                if not 0.0 <= v <= 1.0:
                    raise ValidationError(f"material value {v} outside [0, 1]")
        for v in (*self.plane_albedo, self.plane_roughness, self.plane_metallic):
            if not 0.0 <= v <= 1.0:
                raise ValidationError(f"plane material value {v} outside [0, 1]")


def random_spec(seed: int, resolution: int = 64) -> SceneSpec:
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, MAX_SPHERES + 1))
    spheres = []
    for _ in range(n):
        radius = float(rng.uniform(0.12, 0.3) * resolution)
        margin = radius * 0.5  # spheres may overhang a little but stay mostly framed
        spheres.append(
            Sphere(
                cx=float(rng.uniform(margin, resolution - margin)),
                cy=float(rng.uniform(margin, resolution - margin)),
                radius=radius,
                albedo=tuple(rng.uniform(0.1, 0.95, size=3)),
                roughness=float(rng.uniform(0.1, 0.95)),
                metallic=float(rng.choice([0.0, 0.0, 1.0]) * rng.uniform(0.7, 1.0)),
            )
        )
    return SceneSpec(
        seed=seed,
        resolution=resolution,
        spheres=tuple(spheres),
        plane_albedo=tuple(rng.uniform(0.2, 0.8, size=3)),
        plane_roughness=float(rng.uniform(0.4, 1.0)),
        plane_metallic=0.0,
    )


def _quantize(v: float) -> float:
    return float(np.floor(np.clip(v, 0.0, 1.0) * _QUANT) / _QUANT)


def condition_vector(spec: SceneSpec) -> np.ndarray:
    """16 quantized features standing in for a text description: sphere
    count, plane color and roughness, mean sphere color, layout of the
    first two spheres, and the third sphere's position.

    Sphere-level roughness/metallic and any fourth sphere stay residual
    scene variation the generator has to model, like unprompted detail.
    """
    res = float(spec.resolution)
    if spec.spheres:
        mean_rgb = np.mean([s.albedo for s in spec.spheres], axis=0)
    else:
        mean_rgb = np.zeros(3)
    feats = [
        len(spec.spheres) / MAX_SPHERES,
        spec.plane_albedo[0],
        spec.plane_albedo[1],
        spec.plane_albedo[2],
        spec.plane_roughness,
        float(mean_rgb[0]),
        float(mean_rgb[1]),
        float(mean_rgb[2]),
    ]
    for i in range(2):
        if i < len(spec.spheres):
            s = spec.spheres[i]
            feats.extend([s.cx / res, s.cy / res, s.radius / res])
        else:
            feats.extend([0.0, 0.0, 0.0])
    if len(spec.spheres) > 2:
        s3 = spec.spheres[2]
        feats.extend([s3.cx / res, s3.cy / res])
    else:
        feats.extend([0.0, 0.0])
    return np.array([_quantize(f) for f in feats], dtype=np.float64)


def generate_bundle(spec: SceneSpec) -> tuple[IntrinsicBundle, np.ndarray]:
    """Rasterize the scene into exact PBR maps plus its condition vector."""
    res = spec.resolution
    px = np.arange(res, dtype=np.float64) + 0.5
    xx, yy = np.meshgrid(px, px)

    albedo = np.empty((res, res, 3))
    albedo[:] = spec.plane_albedo
    rough = np.full((res, res, 1), spec.plane_roughness)
    metal = np.full((res, res, 1), spec.plane_metallic)
    normal = np.zeros((res, res, 3))
    normal[:, :, 2] = 1.0

    for s in spec.spheres:  # painter's order: later spheres overwrite
        dx = (xx - s.cx) / s.radius
        dy = (yy - s.cy) / s.radius
        rho2 = dx * dx + dy * dy
        inside = rho2 < 1.0
        nz = np.sqrt(np.clip(1.0 - rho2, 0.0, 1.0))
        albedo[inside] = s.albedo
        rough[inside] = s.roughness
        metal[inside] = s.metallic
        # +y is up in camera space while the pixel row axis grows downward
        normal[inside, 0] = dx[inside]
        normal[inside, 1] = -dy[inside]
        normal[inside, 2] = nz[inside]

    norms = np.linalg.norm(normal, axis=-1, keepdims=True)
    normal = normal / norms
    bundle = IntrinsicBundle(
        albedo=ImageBuffer(albedo),
        roughness=ImageBuffer(rough),
        metallic=ImageBuffer(metal),
        normal=ImageBuffer(normal),
    )
    return bundle, condition_vector(spec)


@dataclass
class SynthDataset:
    """Deterministic spec-backed dataset; bundles materialize on access."""

    specs: list
    conds: np.ndarray
    resolution: int
    seed: int
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __len__(self) -> int:
        return len(self.specs)

    def __getitem__(self, i: int) -> tuple[IntrinsicBundle, np.ndarray]:
        if i not in self._cache:
            bundle, _ = generate_bundle(self.specs[i])
            self._cache[i] = bundle
        return self._cache[i], self.conds[i]

    def content_hash(self) -> str:
        import hashlib

        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.conds).tobytes())
        for spec in self.specs:
            h.update(repr(spec).encode())
        return h.hexdigest()


def generate_dataset(n: int, seed: int = 0, resolution: int = 64) -> SynthDataset:
    """n reproducible (bundle, cond) pairs with distinct per-sample seeds."""
    if n < 1:
        raise ValidationError(f"dataset size must be >= 1, got {n}")
    child_seeds = np.random.SeedSequence(seed).spawn(n)
    specs = [random_spec(int(cs.generate_state(1)[0]), resolution) for cs in child_seeds]
    conds = np.stack([condition_vector(s) for s in specs])
    return SynthDataset(specs=specs, conds=conds, resolution=resolution, seed=seed)
