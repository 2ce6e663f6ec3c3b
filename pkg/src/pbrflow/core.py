"""Domain types for intrinsic G-buffers and the channel packing/encoding ops.

Conventions used throughout the package:
  - images are float64 arrays of shape (H, W, C), row-major, channel
    interleaved, linear color (no transfer function);
  - normal maps hold camera-space unit vectors with +x right, +y up and
    +z toward the viewer;
  - albedo, roughness and metallic live in [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

NORMAL_UNIT_TOL = 1e-4
ENCODE_ROUNDTRIP_TOL = 1e-3


class PbrError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(PbrError):
    """An invariant on a domain value does not hold."""


class DimensionMismatchError(ValidationError):
    def __init__(self, what: str, shape_a, shape_b):
        super().__init__(f"{what}: shape {tuple(shape_a)} vs {tuple(shape_b)}")
        self.shape_a = tuple(shape_a)
        self.shape_b = tuple(shape_b)


class ManifestError(PbrError):
    """A bundle manifest is missing or malformed."""


class MissingMapError(PbrError):
    """A map file referenced by the manifest does not exist."""


def _as_image_array(data, channels: Optional[int] = None) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise ValidationError(f"image data must be (H, W, C), got shape {arr.shape}")
    if arr.shape[2] not in (1, 3):
        raise ValidationError(f"images have 1 or 3 channels, got {arr.shape[2]}")
    if channels is not None and arr.shape[2] != channels:
        raise ValidationError(f"expected {channels} channels, got {arr.shape[2]}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError("image data contains NaN or Inf")
    return arr


@dataclass(frozen=True)
class ImageBuffer:
    """A linear-space image. Immutable once constructed."""

    array: np.ndarray

    def __post_init__(self):
        arr = _as_image_array(self.array)
        arr = np.ascontiguousarray(arr)
        arr.flags.writeable = False
        object.__setattr__(self, "array", arr)

    @property
    def width(self) -> int:
        return self.array.shape[1]

    @property
    def height(self) -> int:
        return self.array.shape[0]

    @property
    def channels(self) -> int:
        return self.array.shape[2]

    def same_shape(self, other: "ImageBuffer") -> bool:
        return self.array.shape == other.array.shape


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValidationError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")

    @staticmethod
    def default_for(width: int, height: int) -> "CameraIntrinsics":
        # Fixed fallback so bundles without a stored camera stay deterministic.
        return CameraIntrinsics(fx=0.8 * width, fy=0.8 * width, cx=width / 2.0, cy=height / 2.0)


def _check_unit_range(name: str, buf: ImageBuffer) -> None:
    arr = buf.array
    if arr.min() < -1e-12 or arr.max() > 1.0 + 1e-12:
        raise ValidationError(
            f"{name} must lie in [0, 1], got range [{arr.min():.6g}, {arr.max():.6g}]"
        )


@dataclass(frozen=True)
class IntrinsicBundle:
    """The four aligned PBR maps plus camera intrinsics."""

    albedo: ImageBuffer
    roughness: ImageBuffer
    metallic: ImageBuffer
    normal: ImageBuffer
    camera: Optional[CameraIntrinsics] = None

    def __post_init__(self):
        if self.camera is None:
            object.__setattr__(
                self, "camera", CameraIntrinsics.default_for(self.albedo.width, self.albedo.height)
            )
        self.validate()

    @property
    def width(self) -> int:
        return self.albedo.width

    @property
    def height(self) -> int:
        return self.albedo.height

    def validate(self) -> None:
        a, r, m, n = self.albedo, self.roughness, self.metallic, self.normal
        if a.channels != 3:
            raise ValidationError(f"albedo must have 3 channels, got {a.channels}")
        if n.channels != 3:
            raise ValidationError(f"normal must have 3 channels, got {n.channels}")
        if r.channels != 1 or m.channels != 1:
            raise ValidationError("roughness and metallic must be single-channel")
        base = (a.height, a.width)
        for name, buf in (("roughness", r), ("metallic", m), ("normal", n)):
            if (buf.height, buf.width) != base:
                raise DimensionMismatchError(
                    f"albedo vs {name}", a.array.shape, buf.array.shape
                )
        _check_unit_range("albedo", a)
        _check_unit_range("roughness", r)
        _check_unit_range("metallic", m)
        norms = np.sqrt(np.sum(n.array * n.array, axis=-1))
        worst = float(np.max(np.abs(norms - 1.0)))
        if worst > NORMAL_UNIT_TOL:
            raise ValidationError(
                f"normal vectors must be unit length within {NORMAL_UNIT_TOL}, worst |n|-1 = {worst:.3g}"
            )


def pack_rm(roughness: ImageBuffer, metallic: ImageBuffer) -> ImageBuffer:
    """Pack the two scalar maps into a 3-channel buffer laid out (r, m, 0)."""
    if (roughness.height, roughness.width) != (metallic.height, metallic.width):
        raise DimensionMismatchError(
            "roughness vs metallic", roughness.array.shape, metallic.array.shape
        )
    if roughness.channels != 1 or metallic.channels != 1:
        raise ValidationError("pack_rm expects single-channel inputs")
    _check_unit_range("roughness", roughness)
    _check_unit_range("metallic", metallic)
    out = np.zeros((roughness.height, roughness.width, 3), dtype=np.float64)
    out[:, :, 0] = roughness.array[:, :, 0]
    out[:, :, 1] = metallic.array[:, :, 0]
    return ImageBuffer(out)


def unpack_rm(packed: ImageBuffer) -> tuple[ImageBuffer, ImageBuffer]:
    """Inverse of pack_rm. Requires the third channel to be identically zero."""
    if packed.channels != 3:
        raise ValidationError(f"packed buffer must have 3 channels, got {packed.channels}")
    if np.any(packed.array[:, :, 2] != 0.0):
        raise ValidationError("packed rm buffer has a nonzero third channel")
    return (
        ImageBuffer(packed.array[:, :, 0:1].copy()),
        ImageBuffer(packed.array[:, :, 1:2].copy()),
    )


def encode_normal(normal: ImageBuffer) -> ImageBuffer:
    """Map unit vectors into [0, 1] with (v + 1) / 2 so they fit image files."""
    if normal.channels != 3:
        raise ValidationError("normal map must have 3 channels")
    norms = np.sqrt(np.sum(normal.array * normal.array, axis=-1))
    worst = float(np.max(np.abs(norms - 1.0)))
    if worst > NORMAL_UNIT_TOL:
        raise ValidationError(
            f"encode_normal input must be unit vectors within {NORMAL_UNIT_TOL}, worst |n|-1 = {worst:.3g}"
        )
    return ImageBuffer(np.clip((normal.array + 1.0) / 2.0, 0.0, 1.0))


def decode_normal(encoded: ImageBuffer) -> ImageBuffer:
    """Invert encode_normal and re-normalize to unit length.

    Quantized storage breaks exact unit norm; re-normalization restores the
    invariant the shader requires. A (near-)zero decoded vector has no
    direction to recover and is rejected.
    """
    if encoded.channels != 3:
        raise ValidationError("encoded normal map must have 3 channels")
    v = encoded.array * 2.0 - 1.0
    norms = np.sqrt(np.sum(v * v, axis=-1, keepdims=True))
    if np.any(norms < 1e-6):
        raise ValidationError("encoded normal decodes to a zero vector")
    return ImageBuffer(v / norms)


def luminance(rgb: np.ndarray) -> np.ndarray:
    """Rec. 709 luma weights on a (..., 3) array."""
    return 0.2126 * rgb[..., 0] + 0.7152 * rgb[..., 1] + 0.0722 * rgb[..., 2]
