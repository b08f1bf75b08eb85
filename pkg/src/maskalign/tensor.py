"""Dense tensors with reverse-mode automatic differentiation.

A :class:`Tensor` wraps a row-major numpy buffer (float32 for training
state; float64 is allowed so checks can run a parallel 64-bit path). Ops
executed inside a ``with Tape():`` block append operation records to that
tape whenever an input is tracked; ``tape.backward(loss)`` (or the module
function :func:`backward`) replays the records in reverse creation order,
which is a valid topological order because every input tensor exists before
the op that consumes it. Each record is visited exactly once per traversal.

Gradients accumulate by summation over paths. Only leaves created with
``requires_grad=True`` receive a ``.grad`` buffer; intermediate results are
propagated through a scratch map and never acquire one.

Broadcasting is intentionally limited to what the model needs: equal
shapes, a trailing-axes operand (bias vectors), and scalars.
"""

from __future__ import annotations

import numpy as np

from . import backend
from .errors import ShapeError

__all__ = [
    "Tensor", "Tape", "backward",
    "add", "sub", "mul", "neg", "matmul", "linear",
    "reshape", "transpose", "narrow", "concat", "broadcast_to", "gather_rows",
    "softmax", "layernorm", "gelu",
    "sum_all", "mean_all", "mean_axis",
    "smooth_l1_mean", "cross_entropy",
]

_FLOAT_DTYPES = (np.float32, np.float64)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "node")

    def __init__(self, data, requires_grad=False, dtype=None):
        if isinstance(data, Tensor):
            raise TypeError("wrapping a Tensor in a Tensor; use .detach() or .data")
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.node = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return self.data.item()

    def detach(self):
        """View of the same buffer with no tape reference and no grad."""
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flags = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype.name}{flags})"

    # arithmetic sugar; the module-level functions carry the real contracts
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], (tuple, list)) else shape)

    def transpose(self, *axes):
        return transpose(self, axes[0] if len(axes) == 1 and isinstance(axes[0], (tuple, list)) else axes)

    def sum(self):
        return sum_all(self)

    def mean(self):
        return mean_all(self)


class TapeRecord:
    __slots__ = ("inputs", "output", "backward", "tape")

    def __init__(self, inputs, output, backward, tape):
        self.inputs = inputs
        self.output = output
        self.backward = backward
        self.tape = tape


_ACTIVE_TAPES: list["Tape"] = []


class Tape:
    """Ordered record list for one differentiation pass.

    Use as a context manager around the forward computation; ops only record
    while a tape is active, so anything built outside (teacher passes, eval)
    stays detached for free.

    Tapes are single-use: ``backward`` releases the recorded graph when the
    sweep finishes. Records and result tensors point at each other, so
    without the explicit release every training step's intermediates would
    sit in cyclic blobs waiting for the gc while holding hundreds of MB.
    """

    def __init__(self):
        self.records: list[TapeRecord] = []

    def __enter__(self):
        _ACTIVE_TAPES.append(self)
        return self

    def __exit__(self, *exc):
        popped = _ACTIVE_TAPES.pop()
        assert popped is self, "tapes must unwind in LIFO order"
        return False

    def backward(self, loss):
        """Populate ``.grad`` on every requires-grad leaf reachable from loss."""
        if not isinstance(loss, Tensor):
            raise TypeError("backward expects a Tensor loss")
        if loss.data.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.data.shape}")
        if loss.node is None or loss.node.tape is not self:
            raise ShapeError("loss is not a result recorded on this tape")
        pending = {id(loss): np.ones_like(loss.data)}
        try:
            for rec in reversed(self.records):
                g = pending.pop(id(rec.output), None)
                if g is None:
                    continue
                for t, gt in zip(rec.inputs, rec.backward(g)):
                    if gt is None:
                        continue
                    if t.requires_grad:
                        if t.grad is None:
                            t.grad = np.zeros_like(t.data)
                        t.grad += gt
                    elif t.node is not None:
                        key = id(t)
                        prev = pending.get(key)
                        # out-of-place: gt may be a view into another grad buffer
                        pending[key] = gt if prev is None else prev + gt
        finally:
            self.release()

    def release(self):
        """Drop the recorded graph and break tensor<->record cycles."""
        for rec in self.records:
            if rec.output is not None:
                rec.output.node = None
            rec.inputs = ()
            rec.output = None
            rec.backward = None
            rec.tape = None
        self.records.clear()


def backward(loss):
    """Run the backward sweep of the tape that produced ``loss``."""
    if not isinstance(loss, Tensor) or loss.node is None:
        raise ShapeError("loss is not on a tape; compute it inside `with Tape():`")
    loss.node.tape.backward(loss)


def _tracked(t):
    return t.requires_grad or t.node is not None


def _record(out, inputs, backward_fn):
    if _ACTIVE_TAPES and any(_tracked(t) for t in inputs):
        tape = _ACTIVE_TAPES[-1]
        rec = TapeRecord(inputs, out, backward_fn, tape)
        tape.records.append(rec)
        out.node = rec
    return out


def _as_tensor(x, like=None):
    if isinstance(x, Tensor):
        return x
    dtype = like.data.dtype if like is not None else None
    return Tensor(np.asarray(x), dtype=dtype)


def _check_dtype(a, b):
    if a.data.dtype != b.data.dtype:
        raise ShapeError(f"mixed dtypes {a.data.dtype} vs {b.data.dtype}")


def _reduce_to(g, shape):
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gd, sd) in enumerate(zip(g.shape, shape)) if sd == 1 and gd != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise and structural ops
# ---------------------------------------------------------------------------

def add(a, b):
    a = _as_tensor(a)
    b = _as_tensor(b, like=a)
    _check_dtype(a, b)
    ta, tb = _tracked(a), _tracked(b)
    ash, bsh = a.data.shape, b.data.shape

    def bwd(g):
        return (_reduce_to(g, ash) if ta else None,
                _reduce_to(g, bsh) if tb else None)

    return _record(Tensor(a.data + b.data), (a, b), bwd)


def sub(a, b):
    a = _as_tensor(a)
    b = _as_tensor(b, like=a)
    _check_dtype(a, b)
    ta, tb = _tracked(a), _tracked(b)
    ash, bsh = a.data.shape, b.data.shape

    def bwd(g):
        return (_reduce_to(g, ash) if ta else None,
                _reduce_to(-g, bsh) if tb else None)

    return _record(Tensor(a.data - b.data), (a, b), bwd)


def mul(a, b):
    a = _as_tensor(a)
    b = _as_tensor(b, like=a)
    _check_dtype(a, b)
    ta, tb = _tracked(a), _tracked(b)
    ad, bd = a.data, b.data

    def bwd(g):
        return (_reduce_to(g * bd, ad.shape) if ta else None,
                _reduce_to(g * ad, bd.shape) if tb else None)

    return _record(Tensor(ad * bd), (a, b), bwd)


def neg(a):
    a = _as_tensor(a)

    def bwd(g):
        return (-g,)

    return _record(Tensor(-a.data), (a,), bwd)


def matmul(a, b):
    """Matrix product over the last two axes; leading axes broadcast."""
    a = _as_tensor(a)
    b = _as_tensor(b, like=a)
    _check_dtype(a, b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError(f"matmul needs >=2-d operands, got {a.data.shape} @ {b.data.shape}")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.data.shape} @ {b.data.shape}")
    ta, tb = _tracked(a), _tracked(b)
    ad, bd = a.data, b.data

    def bwd(g):
        ga = gb = None
        if ta:
            ga = _reduce_to(g @ np.swapaxes(bd, -1, -2), ad.shape)
        if tb:
            gb = _reduce_to(np.swapaxes(ad, -1, -2) @ g, bd.shape)
        return ga, gb

    return _record(Tensor(ad @ bd), (a, b), bwd)


def linear(x, w, b=None):
    """``x @ w + b`` with leading axes flattened into one GEMM."""
    if x.data.ndim == 2:
        y = matmul(x, w)
    else:
        lead = x.data.shape[:-1]
        y = reshape(matmul(reshape(x, (-1, x.data.shape[-1])), w), lead + (w.data.shape[-1],))
    return y if b is None else add(y, b)


def reshape(a, shape):
    a = _as_tensor(a)
    old = a.data.shape

    def bwd(g):
        return (g.reshape(old),)

    return _record(Tensor(a.data.reshape(shape)), (a,), bwd)


def transpose(a, axes):
    a = _as_tensor(a)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def bwd(g):
        return (np.transpose(g, inv),)

    return _record(Tensor(np.transpose(a.data, axes)), (a,), bwd)


def narrow(a, axis, start, length):
    """Contiguous slice ``[start, start+length)`` along ``axis``."""
    a = _as_tensor(a)
    n = a.data.shape[axis]
    if not (0 <= start and start + length <= n):
        raise ShapeError(f"narrow [{start}:{start + length}) out of range for axis size {n}")
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    ashape = a.data.shape

    def bwd(g):
        dz = np.zeros(ashape, dtype=g.dtype)
        dz[idx] = g
        return (dz,)

    return _record(Tensor(a.data[idx]), (a,), bwd)


def concat(tensors, axis=0):
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat of zero tensors")
    nd0 = tensors[0].data.ndim
    for t in tensors[1:]:
        if t.data.ndim != nd0:
            raise ShapeError(f"concat rank mismatch: {nd0} vs {t.data.ndim}")
    if not -nd0 <= axis < nd0:
        raise ShapeError(f"concat axis {axis} out of range for rank {nd0}")
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)
    nd = tensors[0].data.ndim

    def bwd(g):
        outs = []
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if not _tracked(t):
                outs.append(None)
                continue
            idx = [slice(None)] * nd
            idx[axis] = slice(lo, hi)
            outs.append(g[tuple(idx)])
        return tuple(outs)

    return _record(Tensor(np.concatenate([t.data for t in tensors], axis=axis)),
                   tuple(tensors), bwd)


def broadcast_to(a, shape):
    a = _as_tensor(a)
    ashape = a.data.shape

    def bwd(g):
        return (_reduce_to(g, ashape),)

    return _record(Tensor(np.ascontiguousarray(np.broadcast_to(a.data, shape))), (a,), bwd)


def gather_rows(a, idx):
    """Select rows of the first axis; backward scatters (sums duplicates)."""
    a = _as_tensor(a)
    idx = np.asarray(idx, dtype=np.intp)
    if idx.ndim != 1:
        raise ShapeError(f"gather_rows needs a 1-d index list, got shape {idx.shape}")
    n = a.data.shape[0]
    bad = (idx < 0) | (idx >= n)
    if bad.any():
        raise IndexError(f"gather_rows index {int(idx[bad][0])} out of range [0, {n})")
    ashape = a.data.shape

    def bwd(g):
        dz = np.zeros(ashape, dtype=g.dtype)
        np.add.at(dz, idx, g)
        return (dz,)

    return _record(Tensor(a.data[idx]), (a,), bwd)


# ---------------------------------------------------------------------------
# nonlinearities and reductions (kernel-backed)
# ---------------------------------------------------------------------------

def _norm_axis(ndim, axis):
    ax = axis + ndim if axis < 0 else axis
    if not 0 <= ax < ndim:
        raise ShapeError(f"axis {axis} invalid for {ndim}-d tensor")
    return ax


def _rows_view(arr, ax):
    """C-contiguous 2-d view with ``ax`` moved last; returns (view, restore)."""
    if ax == arr.ndim - 1:
        moved = arr
    else:
        moved = np.moveaxis(arr, ax, -1)
    flat = np.ascontiguousarray(moved).reshape(-1, moved.shape[-1])
    shape = moved.shape

    def restore(flat2):
        out = flat2.reshape(shape)
        if ax != arr.ndim - 1:
            out = np.ascontiguousarray(np.moveaxis(out, -1, ax))
        return out

    return flat, restore


def softmax(x, axis=-1):
    """Max-shifted softmax along ``axis``; rows sum to one."""
    x = _as_tensor(x)
    ax = _norm_axis(x.data.ndim, axis)
    flat, restore = _rows_view(x.data, ax)
    y2 = backend.kernels.softmax_fwd(flat)

    def bwd(g):
        g2, _ = _rows_view(g, ax)
        return (restore(backend.kernels.softmax_bwd(y2, g2)),)

    return _record(Tensor(restore(y2)), (x,), bwd)


def layernorm(x, axis=-1, eps=1e-6, scale=None, bias=None):
    """Zero-mean unit-variance per slice along ``axis``; optional affine."""
    x = _as_tensor(x)
    if eps <= 0:
        raise ShapeError(f"layernorm eps must be positive, got {eps}")
    ax = _norm_axis(x.data.ndim, axis)
    flat, restore = _rows_view(x.data, ax)
    xhat, rstd = backend.kernels.layernorm_fwd(flat, eps)
    y2 = xhat
    if scale is not None:
        y2 = y2 * scale.data
    if bias is not None:
        y2 = y2 + bias.data
    inputs = (x,) + ((scale,) if scale is not None else ()) + ((bias,) if bias is not None else ())
    ts = scale is not None and _tracked(scale)
    tb = bias is not None and _tracked(bias)
    tx = _tracked(x)

    def bwd(g):
        g2, _ = _rows_view(g, ax)
        gh = g2 * scale.data if scale is not None else g2
        outs = []
        if tx:
            outs.append(restore(backend.kernels.layernorm_bwd(xhat, rstd, np.ascontiguousarray(gh))))
        else:
            outs.append(None)
        if scale is not None:
            outs.append((g2 * xhat).sum(axis=0, dtype=np.float64).astype(xhat.dtype) if ts else None)
        if bias is not None:
            outs.append(g2.sum(axis=0, dtype=np.float64).astype(xhat.dtype) if tb else None)
        return tuple(outs)

    return _record(Tensor(restore(np.ascontiguousarray(y2))), inputs, bwd)


def gelu(x):
    """Gaussian error linear unit (tanh approximation)."""
    x = _as_tensor(x)
    flat = np.ascontiguousarray(x.data).reshape(-1)
    y, t = backend.kernels.gelu_fwd(flat)

    def bwd(g):
        gflat = np.ascontiguousarray(g).reshape(-1)
        return (backend.kernels.gelu_bwd(flat, t, gflat).reshape(x.data.shape),)

    return _record(Tensor(y.reshape(x.data.shape)), (x,), bwd)


def sum_all(a):
    a = _as_tensor(a)
    ashape = a.data.shape

    def bwd(g):
        return (np.broadcast_to(g, ashape),)

    return _record(Tensor(a.data.sum()), (a,), bwd)


def mean_all(a):
    a = _as_tensor(a)
    ashape = a.data.shape
    n = a.data.size

    def bwd(g):
        return (np.broadcast_to(g / n, ashape),)

    return _record(Tensor(a.data.mean(dtype=a.data.dtype)), (a,), bwd)


def mean_axis(a, axis):
    a = _as_tensor(a)
    ax = _norm_axis(a.data.ndim, axis)
    n = a.data.shape[ax]
    ashape = a.data.shape

    def bwd(g):
        return (np.broadcast_to(np.expand_dims(g / n, ax), ashape).copy(),)

    return _record(Tensor(a.data.mean(axis=ax, dtype=a.data.dtype)), (a,), bwd)


def smooth_l1_mean(pred, target):
    """Mean smooth-L1: 0.5 d^2 for |d|<=1 else |d|-0.5, d = pred - target.

    ``target`` is a plain array; no gradient flows into it.
    """
    pred = _as_tensor(pred)
    tgt = np.asarray(target, dtype=pred.data.dtype)
    if tgt.shape != pred.data.shape:
        raise ShapeError(f"smooth_l1 shapes disagree: {pred.data.shape} vs {tgt.shape}")
    pflat = np.ascontiguousarray(pred.data).reshape(-1)
    tflat = np.ascontiguousarray(tgt).reshape(-1)
    n = pflat.shape[0]
    val = backend.kernels.smooth_l1_sum(pflat, tflat) / n

    def bwd(g):
        return (backend.kernels.smooth_l1_bwd(pflat, tflat, float(g) / n).reshape(pred.data.shape),)

    return _record(Tensor(np.asarray(val, dtype=pred.data.dtype)), (pred,), bwd)


def cross_entropy(logits, labels):
    """Mean softmax cross-entropy from logits ``[n, classes]``."""
    logits = _as_tensor(logits)
    if logits.data.ndim != 2:
        raise ShapeError(f"cross_entropy expects [n, classes], got {logits.data.shape}")
    labels = np.asarray(labels)
    n = logits.data.shape[0]
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    ez = np.exp(z)
    p = ez / ez.sum(axis=1, keepdims=True)
    nll = np.log(ez.sum(axis=1)) - z[np.arange(n), labels]
    val = nll.mean(dtype=logits.data.dtype)

    def bwd(g):
        dp = p.copy()
        dp[np.arange(n), labels] -= 1.0
        return ((float(g) / n) * dp,)

    return _record(Tensor(np.asarray(val, dtype=logits.data.dtype)), (logits,), bwd)
