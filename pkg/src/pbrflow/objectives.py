"""Training objectives and the gradient-check harness.

The flow-matching pieces operate on arbitrary "buffer stacks" (any-shape
arrays). The rendering loss renders the predicted and ground-truth
G-buffers under the same lights and compares them in linear space with a
mean-squared term plus 0.1 x a multiscale perceptual term.

The perceptual term is pluggable. The default is NOT LPIPS (which needs
a pretrained network): it is the mean of per-level MSEs over a 3-level
Gaussian pyramid, which keeps the pixel + multiscale structure of the
loss while staying fully specified and gradient-checkable.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .core import DimensionMismatchError, ImageBuffer, IntrinsicBundle, ValidationError
from .shading import DirectionalLight, RenderConfig, shade_arrays, view_direction_map

PERCEPTUAL_WEIGHT = 0.1
PYRAMID_LEVELS = 3


@dataclass(frozen=True)
class NoisySample:
    """Linear interpolant z_t = (1-t) x + t eps and its target field eps - x."""

    z_t: np.ndarray
    t: float
    eps: np.ndarray
    u_target: np.ndarray


@dataclass(frozen=True)
class LossBreakdown:
    """Stage-2 loss pieces; rgb terms are sums over the light list."""

    cfm: float
    rgb_l2: float
    rgb_perceptual: float
    total: float

    @staticmethod
    def combine(cfm: float, fragment: "LossBreakdown") -> "LossBreakdown":
        return LossBreakdown(
            cfm=cfm,
            rgb_l2=fragment.rgb_l2,
            rgb_perceptual=fragment.rgb_perceptual,
            total=cfm + fragment.rgb_l2 + PERCEPTUAL_WEIGHT * fragment.rgb_perceptual,
        )


def make_noisy(x: np.ndarray, t: float, eps: np.ndarray) -> NoisySample:
    x = np.asarray(x, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if x.shape != eps.shape:
        raise DimensionMismatchError("data vs noise", x.shape, eps.shape)
    if not 0.0 <= t <= 1.0:
        raise ValidationError(f"t must lie in [0, 1], got {t}")
    return NoisySample(z_t=(1.0 - t) * x + t * eps, t=float(t), eps=eps, u_target=eps - x)


def cfm_loss(u_hat, sample: NoisySample):
    """Mean squared error against the target vector field (mean over all
    elements, so the value does not scale with batch size)."""
    if ad.value_of(u_hat).shape != sample.u_target.shape:
        raise DimensionMismatchError("prediction vs target", ad.value_of(u_hat).shape, sample.u_target.shape)
    diff = u_hat - sample.u_target
    out = ad.amean(diff * diff)
    return out if ad.is_tensor(out) else float(out)


def estimate_clean(sample_z, t: float, u_hat):
    """One-step clean estimate z - t * u."""
    if ad.value_of(sample_z).shape != ad.value_of(u_hat).shape:
        raise DimensionMismatchError("z vs u", ad.value_of(sample_z).shape, ad.value_of(u_hat).shape)
    return sample_z - t * u_hat


def _down2(img):
    """Gaussian-ish downsample: [1,2,1]/4 along each axis (edge-replicated), stride 2."""
    p = ad.concatenate([img[:1], img, img[-1:]], axis=0)
    v = (p[:-2] + 2.0 * p[1:-1] + p[2:]) * 0.25
    p = ad.concatenate([v[:, :1], v, v[:, -1:]], axis=1)
    h = (p[:, :-2] + 2.0 * p[:, 1:-1] + p[:, 2:]) * 0.25
    return h[::2, ::2]


def _mse(a, b):
    d = a - b
    return ad.amean(d * d)


def pyramid_perceptual(pred, target, levels: int = PYRAMID_LEVELS):
    """Average of per-level MSEs over a Gaussian pyramid (level 0 = input)."""
    total = _mse(pred, target)
    a, b = pred, target
    for _ in range(levels - 1):
        a, b = _down2(a), _down2(b)
        total = total + _mse(a, b)
    return total / float(levels)


PerceptualFn = Callable[[object, object], object]


def _bundle_maps(bundle: IntrinsicBundle) -> dict:
    return {
        "albedo": bundle.albedo.array,
        "roughness": bundle.roughness.array[:, :, 0],
        "metallic": bundle.metallic.array[:, :, 0],
        "normal": bundle.normal.array,
    }


def rendering_loss_arrays(
    pred: Mapping,
    gt: Mapping,
    w_o_map: np.ndarray,
    lights: Sequence[DirectionalLight],
    cfg: RenderConfig = RenderConfig(),
    perceptual: PerceptualFn = pyramid_perceptual,
):
    """Sum over lights of MSE + 0.1 x perceptual between pred and gt renders.

    `pred` map values may be autodiff Tensors; gradients flow through the
    shader into the predicted maps. Returns (l2_sum, perceptual_sum).
    """
    if not lights:
        raise ValidationError("lights must be nonempty")
    l2_sum = None
    perc_sum = None
    for light in lights:
        img_pred = shade_arrays(
            pred["albedo"], pred["roughness"], pred["metallic"], pred["normal"],
            w_o_map, light.direction, light.intensity, cfg,
        )
        img_gt = shade_arrays(
            gt["albedo"], gt["roughness"], gt["metallic"], gt["normal"],
            w_o_map, light.direction, light.intensity, cfg,
        )
        img_gt = ad.value_of(img_gt)
        l2 = _mse(img_pred, img_gt)
        perc = perceptual(img_pred, img_gt)
        l2_sum = l2 if l2_sum is None else l2_sum + l2
        perc_sum = perc if perc_sum is None else perc_sum + perc
    return l2_sum, perc_sum


def rendering_loss(
    pred_bundle: IntrinsicBundle,
    gt_bundle: IntrinsicBundle,
    lights: Sequence[DirectionalLight],
    cfg: RenderConfig = RenderConfig(),
    perceptual: PerceptualFn = pyramid_perceptual,
) -> LossBreakdown:
    """Rendering-loss fragment (cfm field zero) for two bundles under shared lights."""
    if (pred_bundle.height, pred_bundle.width) != (gt_bundle.height, gt_bundle.width):
        raise DimensionMismatchError(
            "pred vs gt",
            (pred_bundle.height, pred_bundle.width),
            (gt_bundle.height, gt_bundle.width),
        )
    w_o = view_direction_map(pred_bundle.width, pred_bundle.height, pred_bundle.camera)
    l2, perc = rendering_loss_arrays(
        _bundle_maps(pred_bundle), _bundle_maps(gt_bundle), w_o, lights, cfg, perceptual
    )
    l2 = float(ad.value_of(l2))
    perc = float(ad.value_of(perc))
    return LossBreakdown(
        cfm=0.0, rgb_l2=l2, rgb_perceptual=perc, total=l2 + PERCEPTUAL_WEIGHT * perc
    )


@dataclass(frozen=True)
class GradCheckReport:
    max_rel_err: float
    n_checked: int
    n_clamped: int
    passed: bool

    def to_json_dict(self) -> dict:
        return {
            "max_rel_err": self.max_rel_err,
            "n_checked": self.n_checked,
            "n_clamped": self.n_clamped,
            "pass": self.passed,
        }


def grad_check(
    loss_fn: Callable[[ad.Tensor], ad.Tensor],
    params: np.ndarray,
    rel_tol: float = 1e-4,
    n_coords: int = 64,
    h: float = 1e-4,
    rng_seed: int = 0,
    clamp_mask: np.ndarray | None = None,
) -> GradCheckReport:
    """Compare backprop gradients of loss_fn against central finite differences.

    Checks up to n_coords randomly chosen coordinates (all of them when the
    parameter is small). Coordinates marked in clamp_mask sit inside a clamp
    region where the subgradient convention makes the comparison meaningless;
    they are skipped and counted.
    """
    params = np.asarray(params, dtype=np.float64)
    leaf = ad.Tensor(params.copy(), requires_grad=True)
    loss0 = loss_fn(leaf)
    if not np.isfinite(ad.value_of(loss0)):
        raise ValidationError("loss is not finite at the evaluation point")
    (analytic,) = ad.grad(loss0, [leaf])

    rng = np.random.default_rng(rng_seed)
    total = params.size
    coords = np.arange(total) if total <= n_coords else rng.choice(total, size=n_coords, replace=False)

    mask_flat = None
    if clamp_mask is not None:
        mask_flat = np.asarray(clamp_mask, dtype=bool).reshape(-1)
        if mask_flat.size != total:
            raise DimensionMismatchError("clamp_mask vs params", clamp_mask.shape, params.shape)

    flat = params.reshape(-1)
    analytic_flat = analytic.reshape(-1)
    max_rel = 0.0
    n_checked = 0
    n_clamped = 0
    for idx in coords:
        if mask_flat is not None and mask_flat[idx]:
            n_clamped += 1
            continue
        orig = flat[idx]
        probe = flat.copy()
        probe[idx] = orig + h
        fp = float(ad.value_of(loss_fn(ad.Tensor(probe.reshape(params.shape)))))
        probe[idx] = orig - h
        fm = float(ad.value_of(loss_fn(ad.Tensor(probe.reshape(params.shape)))))
        fd = (fp - fm) / (2.0 * h)
        a = analytic_flat[idx]
        scale = max(abs(a), abs(fd), 1e-8)
        max_rel = max(max_rel, abs(a - fd) / scale)
        n_checked += 1
    return GradCheckReport(
        max_rel_err=float(max_rel),
        n_checked=n_checked,
        n_clamped=n_clamped,
        passed=bool(max_rel <= rel_tol),
    )
