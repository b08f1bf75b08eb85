"""Feature alignment head: per-block adaptors, the learnable mixing matrix,
target normalization, and the smooth-L1 alignment loss.

Predictions for target level j are built from student block outputs x_i as
yhat_j = sum_i w_ij * A_i(x_i) (dynamic mode) or yhat_j = A_{S-K+j}(x_{S-K+j})
(layerwise mode). Targets are the frozen teacher's last K block outputs
gathered at the visible positions and normalized per token; no gradient ever
flows into them.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .masking import MaskPlan
from .tensor import (Tensor, add, gelu, linear, mul, narrow, reshape,
                     smooth_l1_mean)
from .vit import trunc_normal

_MODES = ("dynamic", "layerwise")
_ADAPTORS = ("linear", "mlp")
_NORMS = ("layernorm", "batchnorm", "none")


@dataclass
class AlignmentConfig:
    mode: str = "dynamic"
    top_k: int = 3
    adaptor_kind: str = "linear"
    include_cls: bool = False
    normalize: str = "layernorm"

    def __post_init__(self):
        if self.mode not in _MODES:
            raise ConfigError(f"alignment mode {self.mode!r} not in {_MODES}")
        if self.adaptor_kind not in _ADAPTORS:
            raise ConfigError(f"adaptor kind {self.adaptor_kind!r} not in {_ADAPTORS}")
        if self.normalize not in _NORMS:
            raise ConfigError(f"normalize {self.normalize!r} not in {_NORMS}")
        if self.top_k < 1:
            raise ConfigError(f"top_k must be >= 1, got {self.top_k}")


@dataclass
class AlignmentHead:
    config: AlignmentConfig
    student_depth: int
    params: dict  # name -> Tensor


@dataclass
class TargetSet:
    levels: list  # K numpy arrays, [k, D_t] or [B, k, D_t]


def init_alignment_head(cfg: AlignmentConfig, student_depth, student_dim,
                        teacher_dim, teacher_depth, rng):
    k, s = cfg.top_k, student_depth
    if k > min(s, teacher_depth):
        raise ConfigError(
            f"top_k {k} exceeds min(student depth {s}, teacher depth {teacher_depth})")
    params = {}
    for i in range(s):
        p = f"adaptors.{i}."
        if cfg.adaptor_kind == "linear":
            params[p + "w"] = Tensor(trunc_normal(rng, (student_dim, teacher_dim)),
                                     requires_grad=True)
            params[p + "b"] = Tensor(np.zeros(teacher_dim, dtype=np.float32),
                                     requires_grad=True)
        else:
            params[p + "fc1.w"] = Tensor(trunc_normal(rng, (student_dim, student_dim)),
                                         requires_grad=True)
            params[p + "fc1.b"] = Tensor(np.zeros(student_dim, dtype=np.float32),
                                         requires_grad=True)
            params[p + "fc2.w"] = Tensor(trunc_normal(rng, (student_dim, teacher_dim)),
                                         requires_grad=True)
            params[p + "fc2.b"] = Tensor(np.zeros(teacher_dim, dtype=np.float32),
                                         requires_grad=True)
    if cfg.mode == "dynamic":
        # start from layer-wise alignment: w_ij = 1 iff i = S-K+j
        w = np.zeros((s, k), dtype=np.float32)
        for j in range(k):
            w[s - k + j, j] = 1.0
        params["W"] = Tensor(w, requires_grad=True)
    return AlignmentHead(config=cfg, student_depth=s, params=params)


def _adaptor(head: AlignmentHead, i, x):
    p = head.params
    if head.config.adaptor_kind == "linear":
        return linear(x, p[f"adaptors.{i}.w"], p[f"adaptors.{i}.b"])
    h = gelu(linear(x, p[f"adaptors.{i}.fc1.w"], p[f"adaptors.{i}.fc1.b"]))
    return linear(h, p[f"adaptors.{i}.fc2.w"], p[f"adaptors.{i}.fc2.b"])


def adapt_and_mix(per_block, head: AlignmentHead):
    """Student block outputs -> K prediction maps."""
    s, k = head.student_depth, head.config.top_k
    if len(per_block) != s:
        raise ShapeError(f"got {len(per_block)} block outputs for depth {s}")
    if head.config.mode == "layerwise":
        return [_adaptor(head, s - k + j, per_block[s - k + j]) for j in range(k)]
    adapted = [_adaptor(head, i, per_block[i]) for i in range(s)]
    w = head.params["W"]
    preds = []
    for j in range(k):
        acc = None
        for i in range(s):
            w_ij = reshape(narrow(narrow(w, 0, i, 1), 1, j, 1), ())
            term = mul(adapted[i], w_ij)
            acc = term if acc is None else add(acc, term)
        preds.append(acc)
    return preds


def _gather_targets(level, plan, include_cls):
    """Rows of one teacher level at visible positions (teacher row 0 is [CLS])."""
    arr = np.asarray(level.data if isinstance(level, Tensor) else level)
    if isinstance(plan, MaskPlan):
        rows = plan.visible_idx + 1
        if include_cls:
            rows = np.concatenate([[0], rows])
        if arr.ndim != 2:
            raise ShapeError(f"single plan needs a 2-d level, got {arr.shape}")
        return arr[rows]
    # one plan per image
    vis = np.stack([p.visible_idx for p in plan]) + 1
    if include_cls:
        vis = np.concatenate([np.zeros((len(plan), 1), dtype=np.intp), vis], axis=1)
    if arr.ndim != 3 or arr.shape[0] != len(plan):
        raise ShapeError(f"{len(plan)} plans need a [B, n, d] level, got {arr.shape}")
    return arr[np.arange(len(plan))[:, None], vis]


def normalize_targets(teacher_levels, plan, cfg: AlignmentConfig, eps=1e-6):
    """Last K teacher levels, gathered at visible positions, normalized.

    teacher_levels is the teacher's full per_block list; gradients never flow
    into the result (plain arrays).
    """
    k = cfg.top_k
    if k > len(teacher_levels):
        raise ConfigError(f"top_k {k} exceeds teacher depth {len(teacher_levels)}")
    out = []
    for level in teacher_levels[-k:]:
        t = _gather_targets(level, plan, cfg.include_cls).astype(np.float32, copy=True)
        if cfg.normalize == "layernorm":
            mu = t.mean(axis=-1, keepdims=True, dtype=np.float64)
            var = t.var(axis=-1, keepdims=True, dtype=np.float64)
            t = ((t - mu) / np.sqrt(var + eps)).astype(np.float32)
        elif cfg.normalize == "batchnorm":
            flat = t.reshape(-1, t.shape[-1])
            mu = flat.mean(axis=0, dtype=np.float64)
            var = flat.var(axis=0, dtype=np.float64)
            t = ((t - mu) / np.sqrt(var + eps)).astype(np.float32)
        out.append(t)
    return TargetSet(levels=out)


def alignment_loss(preds, targets: TargetSet):
    """Smooth-L1, mean over all elements of all K levels."""
    if len(preds) != len(targets.levels):
        raise ShapeError(f"{len(preds)} predictions vs {len(targets.levels)} target levels")
    total = None
    for p, t in zip(preds, targets.levels):
        if p.data.shape != t.shape:
            raise ShapeError(f"prediction {p.data.shape} vs target {t.shape}")
        term = smooth_l1_mean(p, t)
        total = term if total is None else add(total, term)
    return mul(total, 1.0 / len(preds))


def maskalign_step(student_out, teacher_out, plan, head: AlignmentHead,
                   cfg: AlignmentConfig):
    """Compose adapt_and_mix -> normalize_targets -> alignment_loss."""
    preds = adapt_and_mix(student_out.per_block, head)
    if not cfg.include_cls:
        # student row 0 is [CLS]; align patch rows only
        preds = [narrow(p, p.data.ndim - 2, 1, p.data.shape[-2] - 1) for p in preds]
    targets = normalize_targets(teacher_out.per_block, plan, cfg)
    return alignment_loss(preds, targets)
