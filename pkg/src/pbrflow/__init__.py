"""pbrflow: desk-scale PBR intrinsic-image toolkit.

Submodules:
  core       - image buffers, intrinsic bundles, packing and normal codecs
  bundle_io  - bundle directory load/save (16-bit PNG + JSON manifest)
  shading    - BRDF evaluation, deferred shading, ambient blend, tone map
  sampling   - light-direction sampling strategies for the rendering loss
  autodiff   - small reverse-mode engine the losses and model run on
  objectives - flow-matching and rendering losses, gradient checker
  synthdata  - procedural sphere-scene generator with condition vectors
  model      - patch transformer, low-rank adapters, cross-intrinsic attention
  training   - two-stage training loops, Euler sampler, alignment metric
  edits      - material edit operations and relighting sweeps
  service    - HTTP render service backing the workbench
  cli        - command-line entry points
"""

from .core import (
    CameraIntrinsics,
    DimensionMismatchError,
    ImageBuffer,
    IntrinsicBundle,
    ManifestError,
    MissingMapError,
    PbrError,
    ValidationError,
    decode_normal,
    encode_normal,
    pack_rm,
    unpack_rm,
)
from .bundle_io import load_bundle, save_bundle
from .shading import (
    INFERENCE_LIGHT_INTENSITY,
    TRAINING_LIGHT_INTENSITY,
    DirectionalLight,
    RenderConfig,
    ambient_blend,
    display_image,
    eval_brdf,
    shade,
    tone_map,
    view_direction,
)

__all__ = [
    "CameraIntrinsics",
    "DimensionMismatchError",
    "DirectionalLight",
    "ImageBuffer",
    "IntrinsicBundle",
    "INFERENCE_LIGHT_INTENSITY",
    "ManifestError",
    "MissingMapError",
    "PbrError",
    "RenderConfig",
    "TRAINING_LIGHT_INTENSITY",
    "ValidationError",
    "ambient_blend",
    "decode_normal",
    "display_image",
    "encode_normal",
    "eval_brdf",
    "load_bundle",
    "pack_rm",
    "save_bundle",
    "shade",
    "tone_map",
    "unpack_rm",
    "view_direction",
]

__version__ = "0.1.0"
