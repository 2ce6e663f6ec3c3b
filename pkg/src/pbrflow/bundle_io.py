"""Bundle directory I/O.

A bundle on disk is a directory holding `manifest.json` plus one 16-bit PNG
per map: `albedo.png`, `roughness.png`, `metallic.png`, `normal.png`, and
optionally `rm_packed.png`. All maps are stored linear; normals are stored
in the (v+1)/2 encoding. Manifest keys: width, height, camera{fx,fy,cx,cy},
maps{albedo,roughness,metallic,normal}.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import png
from .core import (
    CameraIntrinsics,
    DimensionMismatchError,
    ImageBuffer,
    IntrinsicBundle,
    ManifestError,
    MissingMapError,
    decode_normal,
    encode_normal,
    pack_rm,
)

MANIFEST_NAME = "manifest.json"
MAP_NAMES = ("albedo", "roughness", "metallic", "normal")
U16_MAX = 65535


@dataclass
class LoadReport:
    """Counts of values the loader had to clamp back into [0, 1]."""

    clamped_values: int = 0
    clamped_maps: list = field(default_factory=list)


def _quantize16(arr: np.ndarray) -> np.ndarray:
    return np.round(np.clip(arr, 0.0, 1.0) * U16_MAX).astype(np.uint16)


def _dequantize(arr: np.ndarray, name: str, report: LoadReport) -> np.ndarray:
    if arr.dtype == np.uint16:
        out = arr.astype(np.float64) / U16_MAX
    elif arr.dtype == np.uint8:
        out = arr.astype(np.float64) / 255.0
    else:
        # normalized PNG storage cannot produce this, but guard the float
        # path so any future source format gets the same clamp semantics
        out = arr.astype(np.float64)
    bad = int(np.count_nonzero((out < 0.0) | (out > 1.0)))
    if bad:
        report.clamped_values += bad
        report.clamped_maps.append(name)
        out = np.clip(out, 0.0, 1.0)
    return out


def save_bundle(bundle: IntrinsicBundle, path, include_packed_rm: bool = False) -> Path:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    png.write(root / "albedo.png", _quantize16(bundle.albedo.array))
    png.write(root / "roughness.png", _quantize16(bundle.roughness.array))
    png.write(root / "metallic.png", _quantize16(bundle.metallic.array))
    png.write(root / "normal.png", _quantize16(encode_normal(bundle.normal).array))
    if include_packed_rm:
        packed = pack_rm(bundle.roughness, bundle.metallic)
        png.write(root / "rm_packed.png", _quantize16(packed.array))
    manifest = {
        "width": bundle.width,
        "height": bundle.height,
        "camera": {
            "fx": bundle.camera.fx,
            "fy": bundle.camera.fy,
            "cx": bundle.camera.cx,
            "cy": bundle.camera.cy,
        },
        "maps": {name: f"{name}.png" for name in MAP_NAMES},
        "color_space": "linear",
    }
    (root / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return root


def _load_map(root: Path, filename: str, name: str, report: LoadReport) -> np.ndarray:
    fp = root / filename
    if not fp.exists():
        raise MissingMapError(f"bundle is missing map file {filename!r} for {name!r}")
    return _dequantize(png.read(fp), name, report)


def load_bundle(path, return_report: bool = False):
    """Load a bundle directory. Out-of-range stored values are clamped and counted."""
    root = Path(path)
    mf = root / MANIFEST_NAME
    if not mf.exists():
        raise ManifestError(f"no {MANIFEST_NAME} in {root}")
    try:
        manifest = json.loads(mf.read_text())
    except json.JSONDecodeError as exc:
        raise ManifestError(f"malformed manifest: {exc}") from exc
    if "camera" not in manifest:
        raise ManifestError("missing camera intrinsics")
    cam = manifest["camera"]
    try:
        camera = CameraIntrinsics(fx=cam["fx"], fy=cam["fy"], cx=cam["cx"], cy=cam["cy"])
    except KeyError as exc:
        raise ManifestError(f"camera block is missing key {exc}") from exc
    maps = manifest.get("maps")
    if not isinstance(maps, dict):
        raise ManifestError("missing maps block")
    for name in MAP_NAMES:
        if name not in maps:
            raise ManifestError(f"maps block is missing {name!r}")

    report = LoadReport()
    albedo = _load_map(root, maps["albedo"], "albedo", report)
    rough = _load_map(root, maps["roughness"], "roughness", report)
    metal = _load_map(root, maps["metallic"], "metallic", report)
    normal_enc = _load_map(root, maps["normal"], "normal", report)

    shapes = {"albedo": albedo.shape, "roughness": rough.shape, "metallic": metal.shape, "normal": normal_enc.shape}
    base = albedo.shape[:2]
    for name, shape in shapes.items():
        if shape[:2] != base:
            raise DimensionMismatchError(f"albedo vs {name}", albedo.shape, shape)

    bundle = IntrinsicBundle(
        albedo=ImageBuffer(albedo),
        roughness=ImageBuffer(rough),
        metallic=ImageBuffer(metal),
        normal=decode_normal(ImageBuffer(normal_enc)),
        camera=camera,
    )
    if return_report:
        return bundle, report
    return bundle
