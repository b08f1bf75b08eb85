"""Visible/masked patch partitions: random or attentive."""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError


@dataclass
class MaskPlan:
    n_total: int
    ratio: float
    visible_idx: np.ndarray  # strictly increasing
    masked_idx: np.ndarray  # complement, strictly increasing

    def __post_init__(self):
        self.visible_idx = np.asarray(self.visible_idx, dtype=np.intp)
        self.masked_idx = np.asarray(self.masked_idx, dtype=np.intp)

    @property
    def n_visible(self):
        return len(self.visible_idx)


def visible_count(n, ratio):
    """round-half-up of N*(1-r)."""
    if not 0.0 <= ratio < 1.0:
        raise ConfigError(f"mask ratio {ratio} outside [0, 1)")
    k = int(np.floor(n * (1.0 - ratio) + 0.5))
    if k < 1:
        raise ConfigError(f"mask ratio {ratio} leaves no visible patch for N={n}")
    return k


def _plan_from_visible(n, ratio, vis):
    vis = np.sort(np.asarray(vis, dtype=np.intp))
    mask = np.setdiff1d(np.arange(n, dtype=np.intp), vis, assume_unique=True)
    return MaskPlan(n_total=n, ratio=ratio, visible_idx=vis, masked_idx=mask)


def random_mask(n, ratio, rng):
    """Uniform sample without replacement of round(N*(1-r)) visible indices."""
    k = visible_count(n, ratio)
    vis = rng.choice(n, size=k, replace=False)
    return _plan_from_visible(n, ratio, vis)


def attention_scores(teacher_attn):
    """Mean over heads of the [CLS] row, patch columns only: [N]."""
    attn = np.asarray(teacher_attn)
    if attn.ndim != 3 or attn.shape[1] != attn.shape[2]:
        raise ShapeError(f"expected [h, n, n] attention, got {attn.shape}")
    return attn[:, 0, 1:].mean(axis=0)


def attentive_mask(n, ratio, scores, mode="topk", rng=None):
    """Keep patches the teacher's [CLS] token attends to.

    ``scores`` is a per-patch score vector [N], or a teacher attention map
    [h, n+1, n+1] reduced through :func:`attention_scores` first. topk keeps
    the round(N*(1-r)) highest-scoring patches, ties broken toward the lower
    index; stochastic samples that many without replacement with probability
    proportional to score.
    """
    k = visible_count(n, ratio)
    scores = np.asarray(scores)
    if scores.ndim == 3:
        scores = attention_scores(scores)
    elif scores.ndim != 1:
        raise ShapeError(f"expected [N] scores or [h, n, n] attention, got {scores.shape}")
    if len(scores) != n:
        raise ShapeError(f"score vector length {len(scores)} != n_total {n}")
    if mode == "topk":
        # stable sort on (-score, index) keeps the lower index on ties
        order = np.lexsort((np.arange(n), -scores))
        vis = order[:k]
    elif mode == "stochastic":
        if rng is None:
            raise ConfigError("stochastic attentive masking needs an rng")
        p = scores.astype(np.float64)
        if (p < 0).any():
            raise ConfigError("stochastic attentive masking needs nonnegative scores")
        p = p / p.sum()
        vis = rng.choice(n, size=k, replace=False, p=p)
    else:
        raise ConfigError(f"unknown attentive mode {mode!r}")
    return _plan_from_visible(n, ratio, vis)


def apply_mask(rows, plan: MaskPlan):
    """Gather rows at the plan's visible indices (ascending)."""
    arr = np.asarray(rows)
    if arr.shape[0] != plan.n_total:
        raise ShapeError(f"row count {arr.shape[0]} != plan n_total {plan.n_total}")
    return arr[plan.visible_idx]
