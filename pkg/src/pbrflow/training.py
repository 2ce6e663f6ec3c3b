"""Two-stage adapter training, the Euler sampler, and the alignment metric.

Stage 0 (plumbing): briefly pretrain the backbone on tone-mapped renders
of the dataset so it holds a generic image prior, then freeze it.
Stage 1: train one modality's adapters at a time with the flow-matching
loss; the backbone stays frozen throughout.
Stage 2: finetune all adapters jointly with cross-intrinsic attention and
its dropout, adding the rendering loss on the one-step clean estimates.
The rendering-loss gradient is never applied to the normal adapters
(material/geometry ambiguity); their flow-matching gradient still is.

Within a stage-2 triple the three slots share one timestep draw, so the
decoded clean estimates describe the same denoising state.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .core import ImageBuffer, IntrinsicBundle, ValidationError, encode_normal, luminance, pack_rm
from .model import (
    MODALITIES,
    AdapterSet,
    BackboneConfig,
    CiaConfig,
    forward,
    forward_joint,
    freeze,
    init_backbone,
)
from .objectives import PERCEPTUAL_WEIGHT, rendering_loss_arrays
from .sampling import LightSampler, sample_lights
from .shading import (
    INFERENCE_LIGHT_INTENSITY,
    TRAINING_LIGHT_INTENSITY,
    DirectionalLight,
    RenderConfig,
    display_image,
    view_direction_map,
)

CHECKPOINT_VERSION = 1
RENDER_MIN_ROUGHNESS = 0.1  # stage-2 decode floor; see decode_slot_maps
CFM_CLIP_NORM = 25.0  # safety clip only; flow-matching gradients are tame
STAGE2_CLIP_NORM = 1.0  # the rendering loss spikes near mirror highlights


class Adam:
    """Plain Adam; state keyed by parameter name."""

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for name, tensor in params.items():
            g = grads.get(name)
            if g is None:
                continue
            m = self.m.setdefault(name, np.zeros_like(tensor.data))
            v = self.v.setdefault(name, np.zeros_like(tensor.data))
            m += (1.0 - b1) * (g - m)
            v += (1.0 - b2) * (g * g - v)
            tensor.data = tensor.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def clip_global_norm(grads: dict, max_norm: float = 1.0) -> dict:
    """Scale the whole gradient dict so its global L2 norm is at most max_norm.

    The rendering loss can spike by orders of magnitude when a sampled
    mirror highlight disagrees between prediction and reference; without
    clipping one spike poisons Adam's second moments for thousands of steps.
    """
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total <= max_norm or total == 0.0:
        return grads
    scale = max_norm / total
    return {k: g * scale for k, g in grads.items()}


def modality_tensor(bundle: IntrinsicBundle, kind: str) -> np.ndarray:
    """The (S, S, 3) pixel tensor a modality slot carries."""
    if kind == "albedo":
        return bundle.albedo.array
    if kind == "normal":
        return encode_normal(bundle.normal).array
    if kind == "rm":
        return pack_rm(bundle.roughness, bundle.metallic).array
    raise ValidationError(f"unknown modality {kind!r}")


def _dot3(a, b):
    return a[..., 0] * b[..., 0] + a[..., 1] * b[..., 1] + a[..., 2] * b[..., 2]


def decode_normal_slot(z, eps: float = 1e-6):
    """Differentiable decode of an encoded-normal slot: clamp, remap, renormalize.

    Degenerate (near-zero) vectors fall back to the +z normal instead of
    erroring, so sampled bundles always validate.
    """
    enc = ad.clip(z, 0.0, 1.0)
    v = enc * 2.0 - 1.0
    nn = _dot3(v, v)
    degenerate = ad.value_of(nn) < eps
    norm = ad.sqrt(ad.maximum(nn, eps * eps))
    comps = [
        ad.where(degenerate, np.full(ad.value_of(nn).shape, fb), v[..., c] / norm)
        for c, fb in enumerate((0.0, 0.0, 1.0))
    ]
    return ad.stack(comps, axis=-1)


def decode_slot_maps(zs: dict, min_roughness: float = 0.0) -> dict:
    """Clean-estimate slots -> shading maps (albedo, roughness, metallic, normal).

    The training path passes a positive min_roughness: the GGX peak grows
    like 1/roughness^4, so rendering a near-zero predicted roughness under
    a mirror-aligned light would blow the loss up.
    """
    albedo = ad.clip(zs["albedo"], 0.0, 1.0)
    rm = ad.clip(zs["rm"], 0.0, 1.0)
    rough = rm[..., 0]
    if min_roughness > 0.0:
        rough = ad.maximum(rough, min_roughness)
    return {
        "albedo": albedo,
        "roughness": rough,
        "metallic": rm[..., 1],
        "normal": decode_normal_slot(zs["normal"]),
    }


def maps_to_bundle(maps: dict, camera=None) -> IntrinsicBundle:
    rough = ad.value_of(maps["roughness"])
    metal = ad.value_of(maps["metallic"])
    return IntrinsicBundle(
        albedo=ImageBuffer(ad.value_of(maps["albedo"])),
        roughness=ImageBuffer(rough[..., None]),
        metallic=ImageBuffer(metal[..., None]),
        normal=ImageBuffer(ad.value_of(maps["normal"])),
        camera=camera,
    )


# ---------------------------------------------------------------------------
# stage 0: backbone pretraining on shaded renders (the stand-in image prior)
# ---------------------------------------------------------------------------

PRETRAIN_LIGHT = dict(azimuth_deg=35.0, elevation_deg=55.0)


def pretrain_backbone(
    cfg: BackboneConfig,
    dataset,
    steps: int = 300,
    batch: int = 4,
    lr: float = 1e-3,
    seed: int = 0,
) -> dict:
    """Train a fresh backbone with the flow-matching loss on display renders."""
    params = init_backbone(cfg, seed=seed)
    light = DirectionalLight.from_angles(intensity=INFERENCE_LIGHT_INTENSITY, **PRETRAIN_LIGHT)
    renders = {}
    batch_rng, noise_rng = _spawn_rngs(seed, 2)
    opt = Adam(lr=lr)
    for _ in range(steps):
        idx = batch_rng.choice(len(dataset), size=batch, replace=True)
        xs, ts, eps = [], [], []
        conds = []
        for i in idx:
            if int(i) not in renders:
                bundle, cond = dataset[int(i)]
                renders[int(i)] = (display_image(bundle, light).array, cond)
            img, cond = renders[int(i)]
            xs.append(img)
            conds.append(cond)
        x = np.stack(xs)
        t = noise_rng.uniform(size=batch)
        e = noise_rng.standard_normal(size=x.shape)
        z = (1.0 - t)[:, None, None, None] * x + t[:, None, None, None] * e
        target = e - x
        u_hat = forward(params, cfg, z, t, np.stack(conds))
        diff = u_hat - target
        loss = ad.amean(diff * diff)
        names = list(params)
        gs = ad.grad(loss, [params[n] for n in names])
        opt.step(params, clip_global_norm(dict(zip(names, gs)), CFM_CLIP_NORM))
    return freeze(params)


def _spawn_rngs(seed: int, n: int):
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


# ---------------------------------------------------------------------------
# stage 1: per-modality adapter training, frozen backbone
# ---------------------------------------------------------------------------


def cosine_lr(base_lr: float, step: int, total: int, floor_frac: float = 0.1) -> float:
    """Cosine decay from base_lr to floor_frac * base_lr over the run."""
    if total <= 1:
        return base_lr
    c = 0.5 * (1.0 + math.cos(math.pi * step / (total - 1)))
    return base_lr * (floor_frac + (1.0 - floor_frac) * c)


def train_stage1(
    params: dict,
    cfg: BackboneConfig,
    adapters: AdapterSet,
    modality: str,
    dataset,
    steps: int,
    batch: int = 4,
    lr: float = 3e-3,
    seed: int = 0,
    lr_schedule: bool = True,
) -> tuple[AdapterSet, list]:
    """Train one modality's adapters; returns (new AdapterSet, loss trace)."""
    if modality not in MODALITIES:
        raise ValidationError(f"unknown modality {modality!r}")
    if len(dataset) == 0:
        raise ValidationError("dataset is empty")
    adapters = adapters.copy()
    target_params = adapters.tensors(modality)
    batch_rng, noise_rng = _spawn_rngs(seed, 2)
    opt = Adam(lr=lr)
    trace: list[float] = []
    cache: dict[int, tuple] = {}
    for step in range(steps):
        if lr_schedule:
            opt.lr = cosine_lr(lr, step, steps)
        idx = batch_rng.choice(len(dataset), size=batch, replace=True)
        xs, conds = [], []
        for i in idx:
            i = int(i)
            if i not in cache:
                bundle, cond = dataset[i]
                cache[i] = (modality_tensor(bundle, modality), cond)
            x_i, cond_i = cache[i]
            xs.append(x_i)
            conds.append(cond_i)
        x = np.stack(xs)
        t = noise_rng.uniform(size=batch)
        e = noise_rng.standard_normal(size=x.shape)
        z = (1.0 - t)[:, None, None, None] * x + t[:, None, None, None] * e
        target = e - x
        u_hat = forward(params, cfg, z, t, np.stack(conds), adapter=target_params)
        diff = u_hat - target
        loss = ad.amean(diff * diff)
        names = list(target_params)
        gs = ad.grad(loss, [target_params[n] for n in names])
        opt.step(target_params, clip_global_norm(dict(zip(names, gs)), CFM_CLIP_NORM))
        trace.append(float(ad.value_of(loss)))
    return adapters, trace


# ---------------------------------------------------------------------------
# stage 2: joint finetuning with CIA dropout and the rendering loss
# ---------------------------------------------------------------------------


@dataclass
class Stage2Step:
    step: int
    cfm: float
    rgb_l2: float
    rgb_perceptual: float
    total: float
    rendered_pairs: int
    cfm_grad_normal_norm: float
    rgb_grad_normal_norm_raw: float
    rgb_grad_normal_norm_applied: float


def stage2_losses(
    params,
    cfg,
    adapters,
    bundle,
    cond,
    t,
    eps_slots,
    cia,
    rng,
    lights_per_iter,
    sampler,
    render_cfg,
    lights=None,
):
    """One stage-2 forward pass.

    When `lights` is None, importance-samples lights_per_iter lights from
    the decoded predicted maps (the training path); a fixed light list
    makes the rendering term a deterministic function of the adapters,
    which the finite-difference masking probe relies on.
    Returns (cfm, rgb, l2_sum, perceptual_sum, n_rendered_pairs).
    """
    x_slots = {m: modality_tensor(bundle, m)[None] for m in MODALITIES}
    z_slots = {m: (1.0 - t) * x_slots[m] + t * eps_slots[m] for m in MODALITIES}
    u_hat = forward_joint(
        params, cfg, z_slots, t, cond, adapters, cia=cia, training=True, rng=rng
    )
    cfm = None
    for m in MODALITIES:
        diff = u_hat[m] - (eps_slots[m] - x_slots[m])
        term = ad.amean(diff * diff)
        cfm = term if cfm is None else cfm + term
    cfm = cfm / float(len(MODALITIES))

    z0 = {m: z_slots[m] - t * u_hat[m] for m in MODALITIES}
    pred_maps_b = decode_slot_maps(z0, min_roughness=RENDER_MIN_ROUGHNESS)
    pred_maps = {k: v[0] for k, v in pred_maps_b.items()}

    if lights is None:
        pred_bundle = maps_to_bundle(pred_maps, camera=bundle.camera)
        lights = sample_lights(
            pred_bundle, sampler, lights_per_iter, intensity=TRAINING_LIGHT_INTENSITY
        )

    gt_maps = {
        "albedo": bundle.albedo.array,
        "roughness": bundle.roughness.array[:, :, 0],
        "metallic": bundle.metallic.array[:, :, 0],
        "normal": bundle.normal.array,
    }
    w_o = view_direction_map(bundle.width, bundle.height, bundle.camera)
    l2_sum, perc_sum = rendering_loss_arrays(pred_maps, gt_maps, w_o, lights, render_cfg)
    rgb = l2_sum + PERCEPTUAL_WEIGHT * perc_sum
    return cfm, rgb, l2_sum, perc_sum, len(lights)


def train_stage2(
    params: dict,
    cfg: BackboneConfig,
    adapters: AdapterSet,
    dataset,
    steps: int,
    lights_per_iter: int = 5,
    cia: CiaConfig = CiaConfig(),
    lr: float = 5e-4,
    seed: int = 0,
    sampler_cfg: LightSampler | None = None,
    render_cfg: RenderConfig = RenderConfig(),
) -> tuple[AdapterSet, list]:
    """Joint finetuning; rendering-loss gradients to the normal adapters are
    masked to zero while their flow-matching gradients still apply."""
    if len(dataset) == 0:
        raise ValidationError("dataset is empty")
    adapters = adapters.copy()
    batch_rng, noise_rng, cia_rng, light_rng = _spawn_rngs(seed, 4)
    sampler_cfg = sampler_cfg or LightSampler(strategy="importance", rng_seed=int(light_rng.integers(2**63)))
    opt = Adam(lr=lr)
    names = [name for name, _ in adapters.all_items()]
    tensors = dict(adapters.all_items())
    normal_names = {n for n in names if n.startswith("normal.")}
    log: list[Stage2Step] = []

    for step in range(steps):
        i = int(batch_rng.integers(0, len(dataset)))
        bundle, cond = dataset[i]
        t = float(noise_rng.uniform())
        eps_slots = {
            m: noise_rng.standard_normal(size=(1, bundle.height, bundle.width, 3))
            for m in MODALITIES
        }
        cfm, rgb, l2_sum, perc_sum, n_pairs = stage2_losses(
            params, cfg, adapters, bundle, cond, t, eps_slots, cia, cia_rng,
            lights_per_iter, sampler_cfg, render_cfg,
        )
        g_cfm = dict(zip(names, ad.grad(cfm, [tensors[n] for n in names])))
        g_rgb = dict(zip(names, ad.grad(rgb, [tensors[n] for n in names])))

        rgb_norm_raw = float(
            np.sqrt(sum(float(np.sum(g_rgb[n] ** 2)) for n in normal_names))
        )
        cfm_norm = float(
            np.sqrt(sum(float(np.sum(g_cfm[n] ** 2)) for n in normal_names))
        )
        applied = {}
        for n in names:
            if n in normal_names:
                applied[n] = g_cfm[n]  # rendering-loss gradient masked to zero
            else:
                applied[n] = g_cfm[n] + g_rgb[n]
        opt.step(tensors, clip_global_norm(applied, STAGE2_CLIP_NORM))
        log.append(
            Stage2Step(
                step=step,
                cfm=float(ad.value_of(cfm)),
                rgb_l2=float(ad.value_of(l2_sum)),
                rgb_perceptual=float(ad.value_of(perc_sum)),
                total=float(ad.value_of(cfm)) + float(ad.value_of(rgb)),
                rendered_pairs=n_pairs,
                cfm_grad_normal_norm=cfm_norm,
                rgb_grad_normal_norm_raw=rgb_norm_raw,
                rgb_grad_normal_norm_applied=0.0,
            )
        )
    return adapters, log


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------


def euler_integrate(u_fn, z_init, n_steps: int):
    """Explicit Euler on dz/dt = u(z, t) from t=1 down to t=0.

    State may be an array/scalar or a dict of arrays (the joint sampler's
    three modality slots step in lockstep).
    """
    if n_steps < 1:
        raise ValidationError("n_steps must be >= 1")
    z = z_init
    dt = 1.0 / n_steps
    for k in range(n_steps):
        t = 1.0 - k * dt
        u = u_fn(z, t)
        if isinstance(z, dict):
            z = {m: z[m] - dt * u[m] for m in z}
        else:
            z = z - dt * u
    return z


def sample_joint(
    params: dict,
    cfg: BackboneConfig,
    adapters: AdapterSet,
    cond: np.ndarray,
    n_steps: int = 20,
    seed: int = 0,
    camera=None,
) -> IntrinsicBundle:
    """Draw one intrinsic bundle by jointly denoising the three slots."""
    rng = np.random.default_rng(seed)
    s = cfg.image_size
    zs = {m: rng.standard_normal(size=(1, s, s, 3)) for m in MODALITIES}

    def u_fn(z_slots, t):
        out = forward_joint(params, cfg, z_slots, t, cond, adapters, training=False)
        return {m: ad.value_of(out[m]) for m in MODALITIES}

    zs = euler_integrate(u_fn, zs, n_steps)
    maps = decode_slot_maps(zs)
    return maps_to_bundle({k: ad.value_of(v)[0] for k, v in maps.items()}, camera=camera)


# ---------------------------------------------------------------------------
# alignment metric
# ---------------------------------------------------------------------------


def _grad_magnitude(m: np.ndarray) -> np.ndarray:
    # interior pixels only: one-sided border differences have twice the
    # magnitude scale and that shared border pattern would correlate any
    # two maps regardless of content
    gy, gx = np.gradient(m)
    return np.sqrt(gx * gx + gy * gy)[1:-1, 1:-1]


def _pearson(a: np.ndarray, b: np.ndarray) -> float:
    a = a.reshape(-1) - a.mean()
    b = b.reshape(-1) - b.mean()
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na < 1e-12 or nb < 1e-12:
        return 0.0  # constant map: correlation defined as zero
    return float(a @ b / (na * nb))


def alignment_score(bundle: IntrinsicBundle) -> float:
    """Mean |Pearson r| between gradient-magnitude maps of albedo luminance,
    normal z and roughness; higher means edges co-occur across modalities."""
    maps = [
        _grad_magnitude(luminance(bundle.albedo.array)),
        _grad_magnitude(bundle.normal.array[:, :, 2]),
        _grad_magnitude(bundle.roughness.array[:, :, 0]),
    ]
    rs = [
        _pearson(maps[0], maps[1]),
        _pearson(maps[0], maps[2]),
        _pearson(maps[1], maps[2]),
    ]
    return float(np.mean(np.abs(rs)))


def alignment_permutation_test(bundles, n_permutations: int = 200, seed: int = 0):
    """Observed mean alignment vs a shuffled-modality null.

    The null reassembles bundles with albedo, normal and roughness taken
    from different samples; p is the fraction of shuffles scoring at least
    as high as the matched bundles (add-one estimator).
    """
    rng = np.random.default_rng(seed)
    observed = float(np.mean([alignment_score(b) for b in bundles]))
    n = len(bundles)
    null_scores = []
    for _ in range(n_permutations):
        perm_n = rng.permutation(n)
        perm_r = rng.permutation(n)
        scores = []
        for i in range(n):
            franken = IntrinsicBundle(
                albedo=bundles[i].albedo,
                roughness=bundles[int(perm_r[i])].roughness,
                metallic=bundles[int(perm_r[i])].metallic,
                normal=bundles[int(perm_n[i])].normal,
                camera=bundles[i].camera,
            )
            scores.append(alignment_score(franken))
        null_scores.append(float(np.mean(scores)))
    null_scores = np.asarray(null_scores)
    p = (1.0 + float(np.sum(null_scores >= observed))) / (n_permutations + 1.0)
    return observed, float(np.mean(null_scores)), p


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(path, cfg: BackboneConfig, params: dict, adapters: AdapterSet, step: int = 0, rng_state=None):
    arrays = {f"backbone/{k}": v.data for k, v in params.items()}
    for name, tensor in adapters.all_items():
        arrays[f"adapters/{name}"] = tensor.data
    header = {
        "format_version": CHECKPOINT_VERSION,
        "config": cfg.__dict__,
        "step": step,
        "rng_state": rng_state,
    }
    np.savez_compressed(path, __header__=json.dumps(header), **arrays)


def load_checkpoint(path):
    with np.load(path, allow_pickle=False) as data:
        header = json.loads(str(data["__header__"]))
        if header.get("format_version") != CHECKPOINT_VERSION:
            raise ValidationError(
                f"checkpoint format {header.get('format_version')} not supported"
            )
        cfg = BackboneConfig(**header["config"])
        params = {}
        adapters = AdapterSet.initialized(cfg, zero=True)
        for key in data.files:
            if key.startswith("backbone/"):
                params[key[len("backbone/"):]] = ad.Tensor(data[key])
            elif key.startswith("adapters/"):
                name = key[len("adapters/"):]
                modality, rest = name.split(".", 1)
                adapters.params[modality][rest] = ad.Tensor(data[key], requires_grad=True)
    freeze(params)
    return cfg, params, adapters, header
