"""Material edit operations and relighting sweeps over intrinsic bundles.

Edits rewrite the material maps only; normals are never touched. Every op
takes an optional mask in [0, 1] blended as (1 - m) * old + m * new, and
results are clamped back into [0, 1].
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import png
from .core import (
    DimensionMismatchError,
    ImageBuffer,
    IntrinsicBundle,
    ValidationError,
    luminance,
)
from .shading import (
    INFERENCE_LIGHT_INTENSITY,
    DirectionalLight,
    RenderConfig,
    display_image,
)

EDIT_KINDS = (
    "albedo_desaturate",
    "albedo_tint",
    "roughness_scale",
    "roughness_set",
    "metallic_set",
)


@dataclass(frozen=True)
class EditOp:
    kind: str
    params: dict = field(default_factory=dict)
    mask: Optional[ImageBuffer] = None

    def __post_init__(self):
        if self.kind not in EDIT_KINDS:
            raise ValidationError(f"unknown edit kind {self.kind!r}, expected one of {EDIT_KINDS}")
        if self.mask is not None:
            if self.mask.channels != 1:
                raise ValidationError("edit mask must be single-channel")
            if self.mask.array.min() < 0 or self.mask.array.max() > 1:
                raise ValidationError("edit mask values must lie in [0, 1]")

    @staticmethod
    def from_json_dict(d: dict) -> "EditOp":
        return EditOp(kind=d.get("kind", ""), params=dict(d.get("params", {})))

    def to_json_dict(self) -> dict:
        return {"kind": self.kind, "params": dict(self.params)}


def _blend(old: np.ndarray, new: np.ndarray, mask: Optional[ImageBuffer]) -> np.ndarray:
    if mask is None:
        return new
    if mask.array.shape[:2] != old.shape[:2]:
        raise DimensionMismatchError("mask vs map", mask.array.shape, old.shape)
    m = mask.array
    return (1.0 - m) * old + m * new


def _apply_one(bundle: IntrinsicBundle, op: EditOp) -> IntrinsicBundle:
    albedo = bundle.albedo.array
    rough = bundle.roughness.array
    metal = bundle.metallic.array
    p = op.params
    if op.kind == "albedo_desaturate":
        strength = float(p.get("strength", 1.0))
        lum = luminance(albedo)[:, :, None]
        new = albedo + strength * (np.repeat(lum, 3, axis=2) - albedo)
        albedo = _blend(albedo, new, op.mask)
    elif op.kind == "albedo_tint":
        tint = np.asarray(p.get("rgb", (1.0, 1.0, 1.0)), dtype=np.float64).reshape(3)
        albedo = _blend(albedo, albedo * tint, op.mask)
    elif op.kind == "roughness_scale":
        rough = _blend(rough, rough * float(p.get("factor", 1.0)), op.mask)
    elif op.kind == "roughness_set":
        rough = _blend(rough, np.full_like(rough, float(p.get("value", 0.5))), op.mask)
    elif op.kind == "metallic_set":
        metal = _blend(metal, np.full_like(metal, float(p.get("value", 0.0))), op.mask)
    return IntrinsicBundle(
        albedo=ImageBuffer(np.clip(albedo, 0.0, 1.0)),
        roughness=ImageBuffer(np.clip(rough, 0.0, 1.0)),
        metallic=ImageBuffer(np.clip(metal, 0.0, 1.0)),
        normal=bundle.normal,
        camera=bundle.camera,
    )


def apply_edits(bundle: IntrinsicBundle, edits: Sequence[EditOp]) -> IntrinsicBundle:
    """Apply edits in order; an empty list returns the bundle unchanged."""
    out = bundle
    for op in edits:
        out = _apply_one(out, op)
    return out


@dataclass(frozen=True)
class RelightSweepSpec:
    elevation_deg: float = 45.0
    azimuth_start_deg: float = 0.0
    azimuth_stop_deg: float = 315.0
    count: int = 8
    intensity: float = INFERENCE_LIGHT_INTENSITY

    def __post_init__(self):
        if self.count < 1:
            raise ValidationError(f"sweep count must be >= 1, got {self.count}")

    def azimuths(self) -> list:
        if self.count == 1:
            return [self.azimuth_start_deg]
        step = (self.azimuth_stop_deg - self.azimuth_start_deg) / (self.count - 1)
        return [self.azimuth_start_deg + k * step for k in range(self.count)]


def relight_sweep(
    bundle: IntrinsicBundle,
    spec: RelightSweepSpec,
    cfg: RenderConfig = RenderConfig(),
) -> list:
    """One display frame per azimuth at fixed elevation; ordered by azimuth index."""
    frames = []
    for az in spec.azimuths():
        light = DirectionalLight.from_angles(az, spec.elevation_deg, spec.intensity)
        frames.append(display_image(bundle, light, cfg))
    return frames


def to_display_png(img: ImageBuffer) -> bytes:
    """Quantize a [0, 1] display image to 8-bit PNG bytes."""
    arr = np.clip(img.array, 0.0, 1.0)
    return png.encode(np.round(arr * 255.0).astype(np.uint8))


def to_linear_png(img: ImageBuffer) -> bytes:
    """Quantize a [0, 1]-clamped linear image to 16-bit PNG bytes."""
    arr = np.clip(img.array, 0.0, 1.0)
    return png.encode(np.round(arr * 65535.0).astype(np.uint16))


def save_sweep(frames: Sequence[ImageBuffer], spec: RelightSweepSpec, out_dir) -> Path:
    """Numbered 8-bit PNG frames plus an index JSON (no video codecs)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    names = []
    for i, frame in enumerate(frames):
        name = f"frame_{i:03d}.png"
        (out / name).write_bytes(to_display_png(frame))
        names.append(name)
    index = {
        "elevation_deg": spec.elevation_deg,
        "azimuths_deg": spec.azimuths(),
        "intensity": spec.intensity,
        "frames": names,
    }
    (out / "index.json").write_text(json.dumps(index, indent=2) + "\n")
    return out
