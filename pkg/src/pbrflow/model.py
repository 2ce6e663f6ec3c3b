"""Toy patch-transformer velocity model with per-modality low-rank adapters.

The frozen backbone plays the role of a pretrained image prior. Three
adapter sets (albedo, normal, packed roughness-metallic) attach low-rank
corrections to the q/k/v/out projections of every block. During joint
denoising, self-attention is replaced by cross-intrinsic attention: each
slot's queries attend to the keys/values of all three slots concatenated
along the sequence axis in a fixed order, so the modalities can exchange
layout information. During training each block falls back to plain
self-attention with probability dropout_p (shared decision across slots,
since cross-attention needs everyone's keys at once).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .core import ValidationError

# fixed concatenation order for cross-intrinsic keys/values
MODALITIES = ("rm", "normal", "albedo")
ATTN_PROJS = ("wq", "wk", "wv", "wo")
TIME_FEATURES = 8  # sin/cos pairs
LN_EPS = 1e-5


@dataclass(frozen=True)
class BackboneConfig:
    image_size: int = 64
    patch_size: int = 8
    hidden_dim: int = 128
    n_blocks: int = 6
    n_heads: int = 4
    cond_dim: int = 16
    adapter_rank: int = 8
    # velocity is formed from the bounded clean prediction as
    # (z - x_hat) / max(t, velocity_floor); without the floor the network
    # itself would have to produce unbounded 1/t scales near t = 0
    velocity_floor: float = 0.05

    def __post_init__(self):
        if self.image_size % self.patch_size != 0:
            raise ValidationError(
                f"image_size {self.image_size} not divisible by patch_size {self.patch_size}"
            )
        if self.hidden_dim % self.n_heads != 0:
            raise ValidationError(
                f"hidden_dim {self.hidden_dim} not divisible by n_heads {self.n_heads}"
            )

    @property
    def tokens(self) -> int:
        return (self.image_size // self.patch_size) ** 2

    @property
    def patch_dim(self) -> int:
        return self.patch_size * self.patch_size * 3


@dataclass(frozen=True)
class CiaConfig:
    dropout_p: float = 0.25
    rng_seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.dropout_p <= 1.0:
            raise ValidationError(f"dropout_p must lie in [0, 1], got {self.dropout_p}")


@dataclass(frozen=True)
class ModalitySlot:
    kind: str
    pixels: np.ndarray  # (B, S, S, 3) or (S, S, 3)

    def __post_init__(self):
        if self.kind not in MODALITIES:
            raise ValidationError(f"unknown modality {self.kind!r}, expected one of {MODALITIES}")

    def batched(self) -> np.ndarray:
        px = np.asarray(self.pixels, dtype=np.float64)
        return px[None] if px.ndim == 3 else px


def _init(rng, shape, scale):
    return ad.Tensor(rng.normal(scale=scale, size=shape), requires_grad=True)


def init_backbone(cfg: BackboneConfig, seed: int = 0) -> dict:
    """Fresh backbone parameter dict; everything requires_grad until frozen."""
    rng = np.random.default_rng(seed)
    d = cfg.hidden_dim
    params: dict[str, ad.Tensor] = {}
    params["patch.w"] = _init(rng, (cfg.patch_dim, d), 1.0 / math.sqrt(cfg.patch_dim))
    params["patch.b"] = ad.Tensor(np.zeros(d), requires_grad=True)
    ctx_dim = 2 * TIME_FEATURES + cfg.cond_dim
    params["cond.w"] = _init(rng, (ctx_dim, d), 1.0 / math.sqrt(ctx_dim))
    params["cond.b"] = ad.Tensor(np.zeros(d), requires_grad=True)
    params["pos"] = _init(rng, (cfg.tokens + 1, d), 0.02)
    for i in range(cfg.n_blocks):
        p = f"blocks.{i}"
        params[f"{p}.ln1.g"] = ad.Tensor(np.ones(d), requires_grad=True)
        params[f"{p}.ln1.b"] = ad.Tensor(np.zeros(d), requires_grad=True)
        for proj in ATTN_PROJS:
            params[f"{p}.attn.{proj}"] = _init(rng, (d, d), 1.0 / math.sqrt(d))
            params[f"{p}.attn.{proj}.bias"] = ad.Tensor(np.zeros(d), requires_grad=True)
        params[f"{p}.ln2.g"] = ad.Tensor(np.ones(d), requires_grad=True)
        params[f"{p}.ln2.b"] = ad.Tensor(np.zeros(d), requires_grad=True)
        params[f"{p}.mlp.w1"] = _init(rng, (d, 4 * d), 1.0 / math.sqrt(d))
        params[f"{p}.mlp.b1"] = ad.Tensor(np.zeros(4 * d), requires_grad=True)
        params[f"{p}.mlp.w2"] = _init(rng, (4 * d, d), 1.0 / math.sqrt(4 * d))
        params[f"{p}.mlp.b2"] = ad.Tensor(np.zeros(d), requires_grad=True)
        # time modulation (scale/shift/gate per sub-block): the velocity
        # field scales like 1/t near t=0, which additive conditioning
        # cannot express; starts as the identity block (scales/shifts 0,
        # gates 1)
        ada_b = np.zeros(6 * d)
        ada_b[4 * d :] = 1.0
        params[f"{p}.ada.w"] = ad.Tensor(np.zeros((2 * TIME_FEATURES, 6 * d)), requires_grad=True)
        params[f"{p}.ada.b"] = ad.Tensor(ada_b, requires_grad=True)
    params["final.g"] = ad.Tensor(np.ones(d), requires_grad=True)
    params["final.b"] = ad.Tensor(np.zeros(d), requires_grad=True)
    params["head.w"] = _init(rng, (d, cfg.patch_dim), 1.0 / math.sqrt(d))
    params["head.b"] = ad.Tensor(np.zeros(cfg.patch_dim), requires_grad=True)
    # time-gated input skip: the velocity target carries the input's own
    # white noise, which cannot pass through the token bottleneck, so it
    # routes around the transformer. The patch-level projection (identity
    # at init) lets the skip learn local denoising instead of copying raw
    # pixels. Starts dead (gate 0): the brief generic pretrain learns it
    # partially, per-modality adapter deltas finish the job.
    params["skip.w"] = ad.Tensor(np.zeros((2 * TIME_FEATURES, 3)), requires_grad=True)
    params["skip.b"] = ad.Tensor(np.zeros(3), requires_grad=True)
    params["skip.proj"] = ad.Tensor(np.eye(cfg.patch_dim), requires_grad=True)
    return params


def freeze(params: dict) -> dict:
    for t in params.values():
        t.requires_grad = False
    return params


@dataclass
class AdapterSet:
    """Per-modality low-rank corrections over the frozen backbone.

    Every attention projection of every block carries an (A, B) pair, and
    each modality additionally adapts the per-pixel decode: a low-rank
    pair on the output head plus an additive correction to the time-gated
    input skip. Attention-only adaptation measurably saturates at this
    scale (the modality shift is largely a per-pixel decode change), so
    the decode path must be adaptable too. All pieces are zero at B /
    delta = 0, where the model equals the frozen backbone exactly.
    """

    cfg: BackboneConfig
    params: dict = field(default_factory=dict)  # modality -> name -> Tensor

    @staticmethod
    def initialized(cfg: BackboneConfig, seed: int = 0, zero: bool = False) -> "AdapterSet":
        rng = np.random.default_rng(seed)
        d, r = cfg.hidden_dim, cfg.adapter_rank
        params: dict[str, dict[str, ad.Tensor]] = {}
        for modality in MODALITIES:
            mp: dict[str, ad.Tensor] = {}
            for i in range(cfg.n_blocks):
                for proj in ATTN_PROJS:
                    base = f"blocks.{i}.attn.{proj}"
                    if zero:
                        a = np.zeros((d, r))
                    else:
                        a = rng.normal(scale=1.0 / math.sqrt(d), size=(d, r))
                    mp[f"{base}.A"] = ad.Tensor(a, requires_grad=True)
                    mp[f"{base}.B"] = ad.Tensor(np.zeros((r, d)), requires_grad=True)
            head_a = np.zeros((d, r)) if zero else rng.normal(scale=1.0 / math.sqrt(d), size=(d, r))
            mp["head.A"] = ad.Tensor(head_a, requires_grad=True)
            mp["head.B"] = ad.Tensor(np.zeros((r, cfg.patch_dim)), requires_grad=True)
            mp["skip.dw"] = ad.Tensor(np.zeros((2 * TIME_FEATURES, 3)), requires_grad=True)
            mp["skip.db"] = ad.Tensor(np.zeros(3), requires_grad=True)
            pd = cfg.patch_dim
            proj_a = np.zeros((pd, r)) if zero else rng.normal(scale=1.0 / math.sqrt(pd), size=(pd, r))
            mp["skip.projA"] = ad.Tensor(proj_a, requires_grad=True)
            mp["skip.projB"] = ad.Tensor(np.zeros((r, pd)), requires_grad=True)
            params[modality] = mp
        return AdapterSet(cfg=cfg, params=params)

    def tensors(self, modality: str) -> dict:
        return self.params[modality]

    def all_items(self):
        for modality, mp in self.params.items():
            for name, tensor in mp.items():
                yield f"{modality}.{name}", tensor

    def copy(self) -> "AdapterSet":
        out = {
            m: {k: ad.Tensor(v.data.copy(), requires_grad=v.requires_grad) for k, v in mp.items()}
            for m, mp in self.params.items()
        }
        return AdapterSet(cfg=self.cfg, params=out)

    def checksum(self) -> str:
        import hashlib

        h = hashlib.sha256()
        for name, tensor in sorted(self.all_items()):
            h.update(name.encode())
            h.update(np.ascontiguousarray(tensor.data).tobytes())
        return h.hexdigest()


def params_checksum(params: dict) -> str:
    import hashlib

    h = hashlib.sha256()
    for name in sorted(params):
        h.update(name.encode())
        h.update(np.ascontiguousarray(params[name].data).tobytes())
    return h.hexdigest()


def time_features(t) -> np.ndarray:
    """Features of the flow time, shape (B, 2 * TIME_FEATURES).

    Raw t and 1-t come first: integer-period Fourier pairs alone alias the
    two endpoints (every sin vanishes and every cos is 1 at both t=0 and
    t=1), and the model must treat pure noise and clean data differently.
    """
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    freqs = 2.0 ** np.arange(TIME_FEATURES - 1)  # pi, 2pi, 4pi, ...
    ang = math.pi * t[:, None] * freqs[None, :]
    return np.concatenate([t[:, None], 1.0 - t[:, None], np.sin(ang), np.cos(ang)], axis=1)


def patchify(x, patch: int):
    b, s = ad.value_of(x).shape[0], ad.value_of(x).shape[1]
    g = s // patch
    x = ad.reshape(x, (b, g, patch, g, patch, 3))
    x = ad.transpose(x, (0, 1, 3, 2, 4, 5))
    return ad.reshape(x, (b, g * g, patch * patch * 3))


def unpatchify(tokens, patch: int, size: int):
    b = ad.value_of(tokens).shape[0]
    g = size // patch
    x = ad.reshape(tokens, (b, g, g, patch, patch, 3))
    x = ad.transpose(x, (0, 1, 3, 2, 4, 5))
    return ad.reshape(x, (b, size, size, 3))


def layer_norm(x, g, b):
    mu = ad.amean(x, axis=-1, keepdims=True)
    xc = x - mu
    var = ad.amean(xc * xc, axis=-1, keepdims=True)
    return xc / ad.sqrt(var + LN_EPS) * g + b


def _proj(x, params, name, adapter):
    y = ad.matmul(x, params[name]) + params[f"{name}.bias"]
    if adapter is not None:
        y = y + ad.matmul(ad.matmul(x, adapter[f"{name}.A"]), adapter[f"{name}.B"])
    return y


def split_heads(x, n_heads: int):
    b, t, d = ad.value_of(x).shape
    x = ad.reshape(x, (b, t, n_heads, d // n_heads))
    return ad.transpose(x, (0, 2, 1, 3))


def merge_heads(x):
    b, h, t, dh = ad.value_of(x).shape
    return ad.reshape(ad.transpose(x, (0, 2, 1, 3)), (b, t, h * dh))


def scaled_attention(q, k, v):
    """Standard scaled dot-product attention on (B, H, T, dh) stacks."""
    dh = ad.value_of(q).shape[-1]
    scores = ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))) * (1.0 / math.sqrt(dh))
    return ad.matmul(ad.softmax(scores, axis=-1), v)


def cross_intrinsic_attention(q, k_parts, v_parts):
    """Attention of one slot's queries over all slots' keys/values.

    k_parts/v_parts are sequences ordered like MODALITIES; they concatenate
    along the sequence axis, so the output shape equals the query's.
    """
    shapes = {tuple(ad.value_of(k).shape[-1:]) for k in list(k_parts) + list(v_parts)}
    if len(shapes) != 1:
        raise ValidationError(f"key/value head dims differ: {shapes}")
    k_all = ad.concatenate(list(k_parts), axis=-2)
    v_all = ad.concatenate(list(v_parts), axis=-2)
    return scaled_attention(q, k_all, v_all)


def _time_cond_inputs(cfg, x, t, cond):
    b = ad.value_of(x).shape[0]
    tf = time_features(t)
    if tf.shape[0] == 1 and b > 1:
        tf = np.repeat(tf, b, axis=0)
    cond = np.asarray(cond, dtype=np.float64)
    cond = np.broadcast_to(cond, (b, cfg.cond_dim)) if cond.ndim == 1 else cond
    return tf, cond


def _embed(params, cfg, x, tf, cond):
    tokens = patchify(x, cfg.patch_size)
    tokens = ad.matmul(tokens, params["patch.w"]) + params["patch.b"]
    b = ad.value_of(tokens).shape[0]
    ctx = np.concatenate([tf, cond], axis=1)
    tok0 = ad.matmul(ctx, params["cond.w"]) + params["cond.b"]
    tok0 = ad.reshape(tok0, (b, 1, cfg.hidden_dim))
    return ad.concatenate([tok0, tokens], axis=1) + params["pos"]


def _block_mod(params, cfg, i, tf):
    """Per-block time modulation: (scale1, shift1, scale2, shift2, gate1, gate2)."""
    d = cfg.hidden_dim
    mod = ad.matmul(tf, params[f"blocks.{i}.ada.w"]) + params[f"blocks.{i}.ada.b"]
    b = tf.shape[0]
    return tuple(
        ad.reshape(mod[:, j * d : (j + 1) * d], (b, 1, d)) for j in range(6)
    )


def _block_qkv(params, cfg, i, h, adapter, mod):
    s1, sh1 = mod[0], mod[1]
    a = layer_norm(h, params[f"blocks.{i}.ln1.g"], params[f"blocks.{i}.ln1.b"])
    a = a * (1.0 + s1) + sh1
    q = split_heads(_proj(a, params, f"blocks.{i}.attn.wq", adapter), cfg.n_heads)
    k = split_heads(_proj(a, params, f"blocks.{i}.attn.wk", adapter), cfg.n_heads)
    v = split_heads(_proj(a, params, f"blocks.{i}.attn.wv", adapter), cfg.n_heads)
    return q, k, v


def _block_finish(params, cfg, i, h, attn_heads, adapter, mod):
    s2, sh2, g1, g2 = mod[2], mod[3], mod[4], mod[5]
    attn = _proj(merge_heads(attn_heads), params, f"blocks.{i}.attn.wo", adapter)
    h = h + g1 * attn
    m = layer_norm(h, params[f"blocks.{i}.ln2.g"], params[f"blocks.{i}.ln2.b"])
    m = m * (1.0 + s2) + sh2
    m = ad.matmul(m, params[f"blocks.{i}.mlp.w1"]) + params[f"blocks.{i}.mlp.b1"]
    m = ad.matmul(ad.gelu(m), params[f"blocks.{i}.mlp.w2"]) + params[f"blocks.{i}.mlp.b2"]
    return h + g2 * m


def _head(params, cfg, h, x, tf, adapter=None):
    h = layer_norm(h, params["final.g"], params["final.b"])
    tokens = h[:, 1:, :]
    out = ad.matmul(tokens, params["head.w"]) + params["head.b"]
    if adapter is not None:
        out = out + ad.matmul(ad.matmul(tokens, adapter["head.A"]), adapter["head.B"])
    out = unpatchify(out, cfg.patch_size, cfg.image_size)

    x_patches = patchify(x, cfg.patch_size)
    passed = ad.matmul(x_patches, params["skip.proj"])
    if adapter is not None:
        passed = passed + ad.matmul(
            ad.matmul(x_patches, adapter["skip.projA"]), adapter["skip.projB"]
        )
    passed = unpatchify(passed, cfg.patch_size, cfg.image_size)
    gamma = ad.matmul(tf, params["skip.w"]) + params["skip.b"]  # (B, 3)
    if adapter is not None:
        gamma = gamma + ad.matmul(tf, adapter["skip.dw"]) + adapter["skip.db"]
    b = tf.shape[0]
    return out + ad.reshape(gamma, (b, 1, 1, 3)) * passed


def _to_velocity(cfg, x_hat, z, t):
    """u = (z - x_hat) / max(t, floor): the clean-prediction form of eps - x."""
    t_arr = np.atleast_1d(np.asarray(t, dtype=np.float64))
    inv = 1.0 / np.maximum(t_arr, cfg.velocity_floor)
    b = ad.value_of(z).shape[0]
    if inv.shape[0] == 1 and b > 1:
        inv = np.repeat(inv, b, axis=0)
    return (z - x_hat) * inv.reshape(b, 1, 1, 1)


def forward(params, cfg: BackboneConfig, x, t, cond, adapter=None):
    """Single-modality velocity prediction with plain self-attention."""
    tf, cond = _time_cond_inputs(cfg, x, t, cond)
    h = _embed(params, cfg, x, tf, cond)
    for i in range(cfg.n_blocks):
        mod = _block_mod(params, cfg, i, tf)
        q, k, v = _block_qkv(params, cfg, i, h, adapter, mod)
        h = _block_finish(params, cfg, i, h, scaled_attention(q, k, v), adapter, mod)
    x_hat = _head(params, cfg, h, x, tf, adapter)
    return _to_velocity(cfg, x_hat, x, t)


def forward_joint(
    params,
    cfg: BackboneConfig,
    slots: dict,
    t,
    cond,
    adapters: AdapterSet,
    cia: CiaConfig = CiaConfig(),
    training: bool = False,
    rng: np.random.Generator | None = None,
):
    """Joint velocity prediction for the three modality slots.

    slots maps modality -> input array/Tensor (B, S, S, 3), one entry per
    MODALITIES. Each block runs cross-intrinsic attention, except that in
    training mode the whole block falls back to per-slot self-attention
    with probability cia.dropout_p (one shared draw per block per call).
    Returns modality -> prediction.
    """
    missing = set(MODALITIES) - set(slots)
    if missing:
        raise ValidationError(f"slots missing modalities: {sorted(missing)}")
    shapes = {m: tuple(ad.value_of(slots[m]).shape) for m in MODALITIES}
    if len(set(shapes.values())) != 1:
        raise ValidationError(f"slot shapes differ: {shapes}")
    if training and rng is None:
        rng = np.random.default_rng(cia.rng_seed)

    tf, cond = _time_cond_inputs(cfg, slots[MODALITIES[0]], t, cond)
    hs = {m: _embed(params, cfg, slots[m], tf, cond) for m in MODALITIES}
    for i in range(cfg.n_blocks):
        use_self = bool(training and rng.uniform() < cia.dropout_p)
        mod = _block_mod(params, cfg, i, tf)
        qkv = {m: _block_qkv(params, cfg, i, hs[m], adapters.tensors(m), mod) for m in MODALITIES}
        for m in MODALITIES:
            q, k, v = qkv[m]
            if use_self:
                attn = scaled_attention(q, k, v)
            else:
                attn = cross_intrinsic_attention(
                    q, [qkv[n][1] for n in MODALITIES], [qkv[n][2] for n in MODALITIES]
                )
            hs[m] = _block_finish(params, cfg, i, hs[m], attn, adapters.tensors(m), mod)
    return {
        m: _to_velocity(
            cfg, _head(params, cfg, hs[m], slots[m], tf, adapters.tensors(m)), slots[m], t
        )
        for m in MODALITIES
    }
