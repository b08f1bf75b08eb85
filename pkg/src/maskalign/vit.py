"""Vision transformer encoder over an arbitrary subset of patch tokens.

Pre-norm blocks, fixed 2-d sine-cosine positional embeddings, and a [CLS]
token prepended to whatever visible patches the caller selects.  Every
block's output is recorded (pre final norm) together with the last block's
attention weights, which downstream code uses for alignment targets and
attentive masking.
"""

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ConfigError
from .tensor import (Tensor, add, broadcast_to, concat, gelu, layernorm,
                     linear, matmul, mean_axis, mul, narrow, reshape, softmax,
                     transpose)


@dataclass
class ViTConfig:
    image_h: int = 32
    image_w: int = 32
    channels: int = 3
    patch_size: int = 4
    embed_dim: int = 96
    depth: int = 6
    num_heads: int = 3
    mlp_ratio: float = 4.0
    drop_path_rate: float = 0.0

    def __post_init__(self):
        p = self.patch_size
        if p <= 0 or self.image_h % p or self.image_w % p:
            raise ConfigError(
                f"image {self.image_h}x{self.image_w} not divisible by patch size {p}")
        if self.embed_dim % self.num_heads:
            raise ConfigError(
                f"embed_dim {self.embed_dim} not divisible by num_heads {self.num_heads}")
        if self.embed_dim % 4:
            # sin-cos table splits the dim in four (sin/cos x two axes)
            raise ConfigError(f"embed_dim {self.embed_dim} must be a multiple of 4")
        if not 0.0 <= self.drop_path_rate <= 1.0:
            raise ConfigError(f"drop_path_rate {self.drop_path_rate} outside [0, 1]")

    @property
    def grid_h(self):
        return self.image_h // self.patch_size

    @property
    def grid_w(self):
        return self.image_w // self.patch_size

    @property
    def n_patches(self):
        return self.grid_h * self.grid_w

    @property
    def head_dim(self):
        return self.embed_dim // self.num_heads

    @property
    def patch_dim(self):
        return self.patch_size * self.patch_size * self.channels

    @property
    def mlp_dim(self):
        return int(self.embed_dim * self.mlp_ratio)


@dataclass
class EncoderOutput:
    per_block: list  # depth token maps, post-block, pre final norm
    last_attention: np.ndarray  # [h, n, n] or [B, h, n, n], rows sum to 1
    final: Tensor  # last block output after the final LayerNorm


# ---------------------------------------------------------------------------
# positional embeddings
# ---------------------------------------------------------------------------

def _sincos_1d(dim, pos):
    omega = np.arange(dim // 2, dtype=np.float64) / (dim / 2.0)
    omega = 1.0 / 10000.0 ** omega
    out = np.outer(pos.astype(np.float64), omega)
    return np.concatenate([np.sin(out), np.cos(out)], axis=1)


@lru_cache(maxsize=8)
def sincos_pos_table(grid_h, grid_w, dim):
    """Fixed [N+1, dim] table; row 0 (the [CLS] slot) is zeros."""
    if dim % 4 != 0:  # half per axis, half of that sin vs cos
        raise ConfigError(f"sin-cos table needs dim divisible by 4, got {dim}")
    gy, gx = np.meshgrid(np.arange(grid_h), np.arange(grid_w), indexing="ij")
    emb = np.concatenate([_sincos_1d(dim // 2, gy.reshape(-1)),
                          _sincos_1d(dim // 2, gx.reshape(-1))], axis=1)
    table = np.concatenate([np.zeros((1, dim)), emb], axis=0)
    return np.ascontiguousarray(table, dtype=np.float32)


# ---------------------------------------------------------------------------
# patch <-> image
# ---------------------------------------------------------------------------

def patchify(image, patch_size):
    """[C,H,W] (or [B,C,H,W]) -> [N, P*P*C] (or [B, N, P*P*C]), raster order."""
    arr = np.asarray(image)
    single = arr.ndim == 3
    if single:
        arr = arr[None]
    b, c, h, w = arr.shape
    p = patch_size
    if h % p or w % p:
        raise ConfigError(f"image {h}x{w} not divisible by patch size {p}")
    gh, gw = h // p, w // p
    out = arr.reshape(b, c, gh, p, gw, p).transpose(0, 2, 4, 1, 3, 5)
    out = np.ascontiguousarray(out).reshape(b, gh * gw, p * p * c)
    return out[0] if single else out


def unpatchify(patches, patch_size, image_h, image_w):
    """Inverse of patchify."""
    arr = np.asarray(patches)
    single = arr.ndim == 2
    if single:
        arr = arr[None]
    p = patch_size
    gh, gw = image_h // p, image_w // p
    b, n, d = arr.shape
    c = d // (p * p)
    if n != gh * gw or d != p * p * c:
        raise ConfigError(f"patch array {arr.shape} does not match {image_h}x{image_w}/P={p}")
    out = arr.reshape(b, gh, gw, c, p, p).transpose(0, 3, 1, 4, 2, 5)
    out = np.ascontiguousarray(out).reshape(b, c, image_h, image_w)
    return out[0] if single else out


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------

def trunc_normal(rng, shape, std=0.02):
    """Normal(0, std) resampled until everything lies within 2 std."""
    x = rng.standard_normal(shape) * std
    bad = np.abs(x) > 2.0 * std
    while bad.any():
        x[bad] = rng.standard_normal(int(bad.sum())) * std
        bad = np.abs(x) > 2.0 * std
    return x.astype(np.float32)


def init_vit_params(cfg: ViTConfig, rng, num_classes=None):
    """Flat name -> Tensor dict; every entry requires_grad."""
    d, hid = cfg.embed_dim, cfg.mlp_dim

    def w(shape):
        return Tensor(trunc_normal(rng, shape), requires_grad=True)

    def zeros(shape):
        return Tensor(np.zeros(shape, dtype=np.float32), requires_grad=True)

    def ones(shape):
        return Tensor(np.ones(shape, dtype=np.float32), requires_grad=True)

    params = {"patch_proj.w": w((cfg.patch_dim, d)), "patch_proj.b": zeros((d,)),
              "cls": w((1, 1, d))}
    for i in range(cfg.depth):
        k = f"blocks.{i}."
        params[k + "ln1.g"] = ones((d,))
        params[k + "ln1.b"] = zeros((d,))
        params[k + "attn.qkv.w"] = w((d, 3 * d))
        params[k + "attn.qkv.b"] = zeros((3 * d,))
        params[k + "attn.out.w"] = w((d, d))
        params[k + "attn.out.b"] = zeros((d,))
        params[k + "ln2.g"] = ones((d,))
        params[k + "ln2.b"] = zeros((d,))
        params[k + "mlp.fc1.w"] = w((d, hid))
        params[k + "mlp.fc1.b"] = zeros((hid,))
        params[k + "mlp.fc2.w"] = w((hid, d))
        params[k + "mlp.fc2.b"] = zeros((d,))
    params["norm.g"] = ones((d,))
    params["norm.b"] = zeros((d,))
    if num_classes is not None:
        params["head.w"] = w((d, num_classes))
        params["head.b"] = zeros((num_classes,))
    return params


# ---------------------------------------------------------------------------
# forward
# ---------------------------------------------------------------------------

def embed(params, cfg: ViTConfig, patches, visible_idx):
    """Gather visible patches, project, add positions, prepend [CLS].

    patches: [N, P*P*C] or [B, N, P*P*C] (raw data, no grad); visible_idx:
    matching [k] or [B, k] int array.  Returns [(k+1), D] or [B, (k+1), D].
    """
    pat = np.asarray(patches)
    if pat.dtype != np.float64:  # float64 allowed for 64-bit check paths
        pat = pat.astype(np.float32, copy=False)
    idx = np.asarray(visible_idx, dtype=np.intp)
    single = pat.ndim == 2
    if single:
        pat, idx = pat[None], idx[None]
    b, n, _ = pat.shape
    if idx.ndim != 2 or idx.shape[0] != b:
        raise ConfigError(f"visible_idx shape {idx.shape} does not match batch {b}")
    bad = (idx < 0) | (idx >= n)
    if bad.any():
        raise IndexError(f"visible index {int(idx[bad][0])} out of range [0, {n})")
    table = sincos_pos_table(cfg.grid_h, cfg.grid_w, cfg.embed_dim).astype(pat.dtype)

    vis = pat[np.arange(b)[:, None], idx]  # [B, k, ppc]
    x = linear(Tensor(vis), params["patch_proj.w"], params["patch_proj.b"])
    x = add(x, Tensor(table[idx + 1]))
    cls = add(broadcast_to(params["cls"], (b, 1, cfg.embed_dim)), Tensor(table[:1]))
    out = concat([cls, x], axis=1)
    return reshape(out, out.data.shape[1:]) if single else out


def drop_path(x, rate, rng, train):
    """Per-sample residual drop; identity at eval or rate 0 (no rng draw)."""
    if not train or rate <= 0.0:
        return x
    if rate >= 1.0:
        return mul(x, 0.0)
    b = x.data.shape[0]
    keep = (rng.random(b) >= rate).astype(x.data.dtype) / np.asarray(1.0 - rate, x.data.dtype)
    mask = keep.reshape((b,) + (1,) * (x.data.ndim - 1))
    return mul(x, Tensor(mask))


def _attention(params, prefix, cfg: ViTConfig, x):
    b, n, d = x.data.shape
    h, hd = cfg.num_heads, cfg.head_dim
    qkv = linear(x, params[prefix + "attn.qkv.w"], params[prefix + "attn.qkv.b"])

    def split(i):
        part = narrow(qkv, 2, i * d, d)
        return transpose(reshape(part, (b, n, h, hd)), (0, 2, 1, 3))  # [B,h,n,hd]

    q, k, v = split(0), split(1), split(2)
    scores = mul(matmul(q, transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(hd))
    attn = softmax(scores, axis=-1)  # [B,h,n,n]
    out = reshape(transpose(matmul(attn, v), (0, 2, 1, 3)), (b, n, d))
    out = linear(out, params[prefix + "attn.out.w"], params[prefix + "attn.out.b"])
    return out, attn


def block_forward(params, cfg: ViTConfig, index, tokens, train=False, rng=None):
    """One pre-norm block; returns (tokens, attention weights)."""
    single = tokens.data.ndim == 2
    x = reshape(tokens, (1,) + tokens.data.shape) if single else tokens
    k = f"blocks.{index}."
    rate = cfg.drop_path_rate
    h = layernorm(x, scale=params[k + "ln1.g"], bias=params[k + "ln1.b"])
    att_out, attn = _attention(params, k, cfg, h)
    x = add(x, drop_path(att_out, rate, rng, train))
    h = layernorm(x, scale=params[k + "ln2.g"], bias=params[k + "ln2.b"])
    h = linear(gelu(linear(h, params[k + "mlp.fc1.w"], params[k + "mlp.fc1.b"])),
               params[k + "mlp.fc2.w"], params[k + "mlp.fc2.b"])
    x = add(x, drop_path(h, rate, rng, train))
    if single:
        return reshape(x, x.data.shape[1:]), attn
    return x, attn


def encoder_forward(params, cfg: ViTConfig, tokens, train=False, rng=None):
    """Run all blocks; record per-block outputs and last-layer attention."""
    single = tokens.data.ndim == 2
    x = reshape(tokens, (1,) + tokens.data.shape) if single else tokens
    per_block = []
    attn = None
    for i in range(cfg.depth):
        x, attn = block_forward(params, cfg, i, x, train=train, rng=rng)
        per_block.append(x)
    final = layernorm(x, scale=params["norm.g"], bias=params["norm.b"])
    attn_w = attn.data
    if single:
        per_block = [reshape(t, t.data.shape[1:]) for t in per_block]
        final = reshape(final, final.data.shape[1:])
        attn_w = attn_w[0]
    return EncoderOutput(per_block=per_block, last_attention=attn_w, final=final)


def cls_feature(out: EncoderOutput):
    """Final-norm [CLS] row: [D] or [B, D]."""
    axis = out.final.data.ndim - 2
    row = narrow(out.final, axis, 0, 1)
    return reshape(row, row.data.shape[:axis] + (row.data.shape[-1],))


def mean_patch_feature(out: EncoderOutput):
    """Mean over patch tokens of the final-norm output: [D] or [B, D]."""
    axis = out.final.data.ndim - 2
    n = out.final.data.shape[axis]
    patches = narrow(out.final, axis, 1, n - 1)
    return mean_axis(patches, axis)
