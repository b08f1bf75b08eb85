"""Analytic FLOP model of the pretraining paradigms plus wall-clock probes.

Three paradigms: inpainting runs the encoder over every patch token,
decoder-style runs it over visible tokens and a decoder over the full set,
alignment runs it over visible tokens only plus K adaptor projections.
Attention cost scales with n^2 * D * depth, linear cost with n * D^2 * depth.
"""

import time
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .masking import random_mask, visible_count
from .tensor import Tensor
from .vit import ViTConfig, embed, encoder_forward, init_vit_params, patchify

PARADIGMS = ("inpainting", "decoder", "alignment")


@dataclass
class ModelDims:
    n_patches: int = 196
    embed_dim: int = 768
    depth: int = 12
    top_k: int = 3  # alignment adaptor levels
    teacher_dim: int = None  # adaptor output dim; defaults to embed_dim
    decoder_depth: int = 2
    decoder_dim: int = None  # defaults to embed_dim

    def __post_init__(self):
        if min(self.n_patches, self.embed_dim, self.depth) <= 0:
            raise ConfigError("model dims must be positive")
        if self.teacher_dim is None:
            self.teacher_dim = self.embed_dim
        if self.decoder_dim is None:
            self.decoder_dim = self.embed_dim


@dataclass
class CostReport:
    paradigm: str
    n_patches: int
    mask_ratio: float
    patch_tokens: int  # visible patch tokens through the encoder
    seq_len: int  # patch tokens + [CLS]
    encoder_attn_flops: float
    encoder_linear_flops: float
    extra_attn_flops: float  # decoder blocks
    extra_linear_flops: float  # decoder blocks or adaptors
    total_flops: float
    baseline_flops: float  # same encoder over the intact image
    forward_ratio: float  # patch_tokens / n_patches
    attn_flop_ratio: float
    total_flop_ratio: float


def _attn_flops(n, d, depth):
    # scores q@k plus attn@v: 2 MACs per (query, key, channel) per block
    return 4.0 * n * n * d * depth


def _linear_flops(n, d, depth, mlp_ratio=4.0):
    # qkv (3D^2) + out (D^2) + mlp (2 * mlp_ratio * D^2) MACs per token per block
    return 2.0 * n * d * d * (4.0 + 2.0 * mlp_ratio) * depth


def bench_cost(dims: ModelDims, mask_ratio, paradigm) -> CostReport:
    if paradigm not in PARADIGMS:
        raise ConfigError(f"paradigm {paradigm!r} not in {PARADIGMS}")
    n = dims.n_patches
    d = dims.embed_dim
    if paradigm == "inpainting":
        patch_tokens = n  # masked positions still occupy encoder slots
    else:
        patch_tokens = visible_count(n, mask_ratio)
    seq = patch_tokens + 1
    enc_attn = _attn_flops(seq, d, dims.depth)
    enc_lin = _linear_flops(seq, d, dims.depth)
    extra_attn = extra_lin = 0.0
    if paradigm == "decoder":
        # decoder re-inflates to the full token set
        dec_seq = n + 1
        extra_attn = _attn_flops(dec_seq, dims.decoder_dim, dims.decoder_depth)
        extra_lin = _linear_flops(dec_seq, dims.decoder_dim, dims.decoder_depth)
    elif paradigm == "alignment":
        # K adaptor projections over the student's own tokens
        extra_lin = 2.0 * seq * d * dims.teacher_dim * dims.top_k
    base_attn = _attn_flops(n + 1, d, dims.depth)
    base_lin = _linear_flops(n + 1, d, dims.depth)
    baseline = base_attn + base_lin
    total = enc_attn + enc_lin + extra_attn + extra_lin
    return CostReport(
        paradigm=paradigm, n_patches=n, mask_ratio=mask_ratio,
        patch_tokens=patch_tokens, seq_len=seq,
        encoder_attn_flops=enc_attn, encoder_linear_flops=enc_lin,
        extra_attn_flops=extra_attn, extra_linear_flops=extra_lin,
        total_flops=total, baseline_flops=baseline,
        forward_ratio=patch_tokens / n,
        attn_flop_ratio=(enc_attn + extra_attn) / base_attn,
        total_flop_ratio=total / baseline)


# ---------------------------------------------------------------------------
# live cross-checks
# ---------------------------------------------------------------------------

def live_shape_audit(vit_cfg: ViTConfig, mask_ratio, seed=0):
    """Run one real masked forward; return the shapes it instantiated."""
    rng = np.random.default_rng(seed)
    params = init_vit_params(vit_cfg, rng)
    img = rng.standard_normal(
        (vit_cfg.channels, vit_cfg.image_h, vit_cfg.image_w)).astype(np.float32)
    plan = random_mask(vit_cfg.n_patches, mask_ratio, rng)
    pat = patchify(img, vit_cfg.patch_size)
    out = encoder_forward(params, vit_cfg,
                          embed(params, vit_cfg, pat, plan.visible_idx))
    return {
        "patch_tokens": plan.n_visible,
        "seq_len": out.per_block[0].data.shape[0],
        "attn_rows": out.last_attention.shape[-2],
        "attn_cols": out.last_attention.shape[-1],
        "depth": len(out.per_block),
    }


def measure_forward_seconds(vit_cfg: ViTConfig, seq_len, batch=8, repeats=5):
    """Best-of wall clock of the implemented encoder at a given token count."""
    rng = np.random.default_rng(0)
    params = init_vit_params(vit_cfg, rng)
    tokens = Tensor(rng.standard_normal(
        (batch, seq_len, vit_cfg.embed_dim)).astype(np.float32))
    encoder_forward(params, vit_cfg, tokens)  # warm up
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        encoder_forward(params, vit_cfg, tokens)
        best = min(best, time.perf_counter() - t0)
    return best


def wall_clock_ratio(vit_cfg: ViTConfig, mask_ratio, batch=8, repeats=5):
    """Measured student-forward time at masked vs intact token counts."""
    n = vit_cfg.n_patches
    short = visible_count(n, mask_ratio) + 1
    full = n + 1
    t_short = measure_forward_seconds(vit_cfg, short, batch, repeats)
    t_full = measure_forward_seconds(vit_cfg, full, batch, repeats)
    return t_short / t_full, t_short, t_full


def report_rows(report: CostReport):
    """CSV-friendly (key, value) rows."""
    return [(k, getattr(report, k)) for k in (
        "paradigm", "n_patches", "mask_ratio", "patch_tokens", "seq_len",
        "encoder_attn_flops", "encoder_linear_flops", "extra_attn_flops",
        "extra_linear_flops", "total_flops", "baseline_flops",
        "forward_ratio", "attn_flop_ratio", "total_flop_ratio")]
