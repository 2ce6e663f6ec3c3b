"""Shared builders for test bundles and an independent scalar render oracle."""

import math

import numpy as np

from pbrflow.core import ImageBuffer, IntrinsicBundle


def unit_normals(rng, h, w):
    v = rng.normal(size=(h, w, 3))
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def camera_facing_normals(rng, h, w, jitter=0.35):
    """Unit normals clustered around +z, the camera-facing convention."""
    v = rng.normal(size=(h, w, 3)) * jitter
    v[:, :, 2] = 1.0 + np.abs(v[:, :, 2])
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def make_bundle(rng, h=8, w=8, facing=False):
    normals = camera_facing_normals(rng, h, w) if facing else unit_normals(rng, h, w)
    return IntrinsicBundle(
        albedo=ImageBuffer(rng.uniform(0, 1, (h, w, 3))),
        roughness=ImageBuffer(rng.uniform(0, 1, (h, w, 1))),
        metallic=ImageBuffer(rng.uniform(0, 1, (h, w, 1))),
        normal=ImageBuffer(normals),
    )


def make_interior_bundle(rng, h=4, w=4, lo=0.2, hi=0.8):
    """Bundle with material values away from the clamp boundaries."""
    return IntrinsicBundle(
        albedo=ImageBuffer(rng.uniform(lo, hi, (h, w, 3))),
        roughness=ImageBuffer(rng.uniform(lo, hi, (h, w, 1))),
        metallic=ImageBuffer(rng.uniform(lo, hi, (h, w, 1))),
        normal=ImageBuffer(camera_facing_normals(rng, h, w)),
    )


def scalar_brdf_oracle(albedo, rough, metal, n, wo, wi, f0d=0.04, eps=1e-6):
    """Per-channel scalar evaluation of the stated BRDF formulas.

    Deliberately independent of the package implementation: pure-python
    loops and the math module only.
    """

    def norm(v):
        l = math.sqrt(sum(x * x for x in v))
        return tuple(x / l for x in v)

    def dot(a, b):
        return sum(x * y for x, y in zip(a, b))

    wo, wi = norm(wo), norm(wi)
    ndo, ndi = dot(n, wo), dot(n, wi)
    if ndo <= 0 or ndi <= 0:
        return (0.0, 0.0, 0.0)
    h = norm(tuple(a + b for a, b in zip(wo, wi)))
    ndh = max(dot(n, h), 0.0)
    hdo = max(dot(h, wo), 0.0)
    ag = rough * rough
    a2 = ag * ag
    dist = a2 / (math.pi * ((ndh * ndh * (a2 - 1.0) + 1.0) ** 2))
    k = ag / 2.0

    def g1(c):
        return c / (c * (1.0 - k) + k)

    geom = g1(ndo) * g1(ndi)
    out = []
    for c in albedo:
        f0 = (1.0 - metal) * f0d + metal * c
        f90 = min(1.0, 50.0 * f0)
        fres = f0 + (f90 - f0) * (1.0 - hdo) ** 5
        spec = dist * fres * geom / max(4.0 * ndo * ndi, eps)
        diff = (1.0 - metal) * c / math.pi
        out.append(diff + spec)
    return tuple(out)


def scalar_shade_oracle(bundle, light):
    """Per-pixel pure-python render of a bundle: the brute-force oracle."""
    h, w = bundle.height, bundle.width
    cam = bundle.camera
    out = np.zeros((h, w, 3))
    for y in range(h):
        for x in range(w):
            wo = (
                (cam.cx - (x + 0.5)) / cam.fx,
                (cam.cy - (y + 0.5)) / cam.fy,
                1.0,
            )
            n = tuple(bundle.normal.array[y, x])
            f = scalar_brdf_oracle(
                tuple(bundle.albedo.array[y, x]),
                float(bundle.roughness.array[y, x, 0]),
                float(bundle.metallic.array[y, x, 0]),
                n,
                wo,
                tuple(light.direction),
            )
            cos_i = max(sum(a * b for a, b in zip(n, light.direction)), 0.0)
            for c in range(3):
                out[y, x, c] = f[c] * light.intensity * cos_i
    return out
