"""AdamW with decoupled weight decay, cosine schedule, layer-wise LR decay."""

import math

import numpy as np

from . import backend
from .errors import ConfigError


def no_decay_param(name):
    """Biases, norm scales, and the [CLS] token are excluded from decay."""
    return name.endswith(".b") or name.endswith(".g") or name.endswith("cls")


class AdamW:
    """Decoupled decay applied before the bias-corrected Adam update.

    params: name -> Tensor with requires_grad. lr is set per step by the
    caller (schedules live outside). lr_scales optionally multiplies the
    step lr per parameter (layer-wise decay).
    """

    def __init__(self, params, lr=1.5e-4, weight_decay=0.05,
                 betas=(0.9, 0.95), eps=1e-8, lr_scales=None):
        self.params = dict(params)
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.lr_scales = lr_scales or {}
        self.step_count = 0
        self.m = {k: np.zeros_like(t.data) for k, t in self.params.items()}
        self.v = {k: np.zeros_like(t.data) for k, t in self.params.items()}

    def step(self, lr=None):
        if lr is not None:
            self.lr = lr
        self.step_count += 1
        bc1 = 1.0 - self.beta1 ** self.step_count
        bc2 = 1.0 - self.beta2 ** self.step_count
        for name, t in self.params.items():
            if t.grad is None:
                continue
            step_lr = self.lr * self.lr_scales.get(name, 1.0)
            wd = 0.0 if no_decay_param(name) else self.weight_decay
            p = np.ascontiguousarray(t.data).reshape(-1)
            g = np.ascontiguousarray(t.grad, dtype=t.data.dtype).reshape(-1)
            m = self.m[name].reshape(-1)
            v = self.v[name].reshape(-1)
            backend.kernels.adamw_update(p, g, m, v, step_lr, wd,
                                         self.beta1, self.beta2, self.eps, bc1, bc2)
            t.data = p.reshape(t.data.shape)

    def zero_grad(self):
        for t in self.params.values():
            t.grad = None


def cosine_lr(step, total_steps, warmup_fraction, base_lr):
    """Linear ramp to base_lr, then cosine decay to zero."""
    if not 0 <= step < total_steps:
        raise ConfigError(f"step {step} outside [0, {total_steps})")
    if not 0.0 <= warmup_fraction < 1.0:
        raise ConfigError(f"warmup_fraction {warmup_fraction} outside [0, 1)")
    warmup = warmup_fraction * total_steps
    if step < warmup:
        return base_lr * step / warmup
    progress = (step - warmup) / max(total_steps - warmup, 1e-12)
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


def layerwise_lr_scale(layer_id, num_layers, decay):
    """decay^(num_layers + 1 - layer_id); id 0 = patch embed, last = head."""
    if not 0 <= layer_id <= num_layers + 1:
        raise ConfigError(f"layer_id {layer_id} outside [0, {num_layers + 1}]")
    return decay ** (num_layers + 1 - layer_id)


def param_layer_id(name, num_layers):
    """Map a parameter name to its layer-decay group."""
    if name.startswith("blocks."):
        return int(name.split(".")[1]) + 1
    if name.startswith("head."):
        return num_layers + 1
    if name.startswith("norm."):
        return num_layers  # final norm rides with the last block
    return 0  # patch projection, cls token


def layer_decay_scales(param_names, num_layers, decay):
    """name -> lr multiplier for fine-tuning."""
    return {n: layerwise_lr_scale(param_layer_id(n, num_layers), num_layers, decay)
            for n in param_names}
