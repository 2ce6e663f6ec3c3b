"""Backprop through the renderer, checked against finite differences.

The rendering loss differentiates through the full BRDF (GGX, Fresnel,
Smith) plus the pyramid perceptual term. This script runs the same checks
the acceptance suite uses and prints the reports.

Run:  python3 demos/04_rendering_loss_gradients.py
"""

import json

import numpy as np

from pbrflow.core import ImageBuffer, IntrinsicBundle
from pbrflow.objectives import grad_check, rendering_loss, rendering_loss_arrays
from pbrflow.sampling import LightSampler, sample_lights
from pbrflow.shading import view_direction_map

rng = np.random.default_rng(12345)
normals = rng.normal(size=(4, 4, 3)) * 0.3
normals[:, :, 2] = 1.0 + np.abs(normals[:, :, 2])
normals /= np.linalg.norm(normals, axis=-1, keepdims=True)
gt = IntrinsicBundle(
    albedo=ImageBuffer(rng.uniform(0.2, 0.8, (4, 4, 3))),
    roughness=ImageBuffer(rng.uniform(0.2, 0.8, (4, 4, 1))),
    metallic=ImageBuffer(rng.uniform(0.2, 0.8, (4, 4, 1))),
    normal=ImageBuffer(normals),
)
lights = sample_lights(gt, LightSampler(rng_seed=3), 2)

# A perturbed prediction: the loss is nonzero, gradients point downhill.
gt_maps = {
    "albedo": gt.albedo.array,
    "roughness": gt.roughness.array[:, :, 0],
    "metallic": gt.metallic.array[:, :, 0],
    "normal": gt.normal.array,
}
pred = {
    k: np.clip(v + rng.normal(scale=0.05, size=v.shape), 0.05, 0.95) if k != "normal" else v
    for k, v in gt_maps.items()
}
w_o = view_direction_map(4, 4, gt.camera)

frag = rendering_loss(gt, gt, lights)
print(f"loss at pred == gt: {frag.total} (identical renders)")

for map_name, tol in (("albedo", 1e-4), ("roughness", 1e-3), ("metallic", 1e-3)):

    def loss_fn(params, map_name=map_name):
        p = dict(pred)
        p[map_name] = params
        l2, perc = rendering_loss_arrays(p, gt_maps, w_o, lights)
        return l2 + 0.1 * perc

    report = grad_check(loss_fn, pred[map_name], rel_tol=tol, n_coords=64, rng_seed=7)
    print(f"{map_name:10s} " + json.dumps(report.to_json_dict()))
