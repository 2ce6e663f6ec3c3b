"""How the rendering loss picks its lights.

The trick: invert the roughness map, use it as multinomial weights over
pixels, and reflect the view ray about the chosen pixel's normal. Smooth
(low-roughness) pixels win most often, so the rendered images are full of
specular highlights exactly where the maps claim to be glossy.

Run:  python3 demos/02_importance_light_sampling.py
"""

import numpy as np

from pbrflow.core import ImageBuffer
from pbrflow.sampling import LightSampler, importance_weights, sample_lights, sample_pixel_importance
from pbrflow.synthdata import generate_bundle, random_spec

bundle, _ = generate_bundle(random_spec(seed=3, resolution=64))
rough = bundle.roughness

# Pixel-selection frequencies after 20k draws, split by roughness bands.
sampler = LightSampler(strategy="importance", rng_seed=0)
draws = sample_pixel_importance(rough, sampler, size=20_000)
flat_r = rough.array.reshape(-1)
counts = np.bincount(draws, minlength=flat_r.size)
for lo, hi in ((0.0, 0.25), (0.25, 0.5), (0.5, 0.75), (0.75, 1.01)):
    band = (flat_r >= lo) & (flat_r < hi)
    if band.any():
        share = counts[band].sum() / counts.sum()
        print(f"roughness [{lo:.2f}, {hi:.2f}): {band.mean()*100:5.1f}% of pixels, {share*100:5.1f}% of draws")

w = importance_weights(rough, sampler.weight_floor)
print(f"\nweight concentration: top 10% of pixels hold {np.sort(w)[::-1][:w.size // 10].sum()*100:.1f}% of mass")

# The three strategies side by side: where do the light directions point?
print("\nmean light direction (x, y, z) and intensity per strategy:")
for strategy in ("importance", "uniform", "brdf"):
    lights = sample_lights(bundle, LightSampler(strategy=strategy, rng_seed=1), count=200)
    dirs = np.array([l.direction for l in lights])
    print(f"  {strategy:10s} mean dir {np.round(dirs.mean(axis=0), 3)}, intensity {lights[0].intensity:.3f}")

# Five lights per training iteration, as the stage-2 loop draws them.
lights = sample_lights(bundle, LightSampler(rng_seed=42), count=5)
print("\none training iteration's lights:")
for i, l in enumerate(lights):
    print(f"  light {i}: dir {np.round(l.direction, 3)}")
