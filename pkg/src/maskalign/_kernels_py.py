"""Pure-numpy kernel backend.

Twin of the compiled ``_ckernels`` extension: identical signatures, selected
at import time by :mod:`maskalign.backend` when the extension is missing (or
forced via ``MASKALIGN_BACKEND=python``). Elementwise kernels take 1-D
contiguous arrays, row kernels take C-contiguous ``[rows, d]`` arrays, both
in float32 or float64. Reductions accumulate in float64 to stay close to the
compiled backend.
"""

import numpy as np

_GELU_C = 0.7978845608028654  # sqrt(2/pi)
_GELU_A = 0.044715


def gelu_fwd(x):
    """-> (y, t) with t = tanh(c*(x + a*x^3)) cached for the backward pass."""
    u = _GELU_C * (x + _GELU_A * x * x * x)
    t = np.tanh(u)
    return 0.5 * x * (1.0 + t), t


def gelu_bwd(x, t, g):
    du = _GELU_C * (1.0 + 3.0 * _GELU_A * x * x)
    return g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)


def softmax_fwd(x):
    y = x - x.max(axis=-1, keepdims=True)
    np.exp(y, out=y)
    y /= y.sum(axis=-1, keepdims=True)
    return y


def softmax_bwd(y, g):
    dot = (y * g).sum(axis=-1, keepdims=True)
    return y * (g - dot)


def layernorm_fwd(x, eps):
    mean = x.mean(axis=-1, keepdims=True, dtype=np.float64)
    var = np.square(x - mean).mean(axis=-1, keepdims=True, dtype=np.float64)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = ((x - mean) * rstd).astype(x.dtype)
    return xhat, rstd[:, 0].astype(x.dtype)


def layernorm_bwd(xhat, rstd, gh):
    d = xhat.shape[-1]
    m1 = gh.sum(axis=-1, keepdims=True, dtype=np.float64) / d
    m2 = (gh * xhat).sum(axis=-1, keepdims=True, dtype=np.float64) / d
    return (rstd[:, None] * (gh - m1 - xhat * m2)).astype(xhat.dtype)


def smooth_l1_sum(pred, target):
    d = pred - target
    a = np.abs(d)
    vals = np.where(a <= 1.0, 0.5 * d * d, a - 0.5)
    return float(vals.sum(dtype=np.float64))


def smooth_l1_bwd(pred, target, gscale):
    d = pred - target
    return (gscale * np.clip(d, -1.0, 1.0)).astype(pred.dtype)


def adamw_update(p, g, m, v, lr, wd, beta1, beta2, eps, bc1, bc2):
    # Decoupled decay first, then the bias-corrected Adam step; all in-place.
    if wd != 0.0:
        p *= 1.0 - lr * wd
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * g * g
    p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
