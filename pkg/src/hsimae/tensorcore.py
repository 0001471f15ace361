"""Dense float64 tensors with reverse-mode automatic differentiation.

Small, CPU-only engine: enough operations for a transformer
encoder/decoder, the reconstruction losses, and an AdamW optimizer.
All arithmetic is 64-bit; there is no broadcasting beyond
scalar-with-tensor.
"""

import numpy as np
from scipy.special import erf

# arccos input is clamped into this open interval so the gradient
# -1/sqrt(1-x^2) stays finite for (anti)parallel spectra.
ARCCOS_CLAMP = 1e-7
# inputs outside [-1-ARCCOS_SLACK, 1+ARCCOS_SLACK] are a hard error
ARCCOS_SLACK = 1e-9

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class DomainError(ValueError):
    """Operand values lie outside the operation's domain."""


def _as_array(data):
    arr = np.asarray(data, dtype=np.float64)
    return arr


class Tensor:
    """A float64 array plus the bookkeeping for reverse-mode gradients."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        self.data = _as_array(data)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- graph plumbing ---------------------------------------------------

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def backward(self):
        """Reverse-mode sweep from a scalar root; fills .grad on leaves."""
        if self.data.ndim != 0 and self.data.size != 1:
            raise ShapeError(
                f"backward root must be scalar, got shape {self.data.shape}")
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operator sugar ---------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)


def _wrap(other):
    if isinstance(other, Tensor):
        return other
    return Tensor(other)


def _result(data, parents, backward):
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _binary_shapes(a, b, op):
    if a.data.shape == b.data.shape:
        return
    if a.data.ndim == 0 or b.data.ndim == 0:
        return
    raise ShapeError(f"{op}: shape mismatch {a.data.shape} vs {b.data.shape}")


def _reduce_to(grad, shape):
    # undo scalar-with-tensor broadcast
    if grad.shape == shape:
        return grad
    return np.sum(grad).reshape(shape)


# -- elementwise ---------------------------------------------------------


def add(a, b):
    a, b = _wrap(a), _wrap(b)
    _binary_shapes(a, b, "add")

    def backward(g):
        if a.requires_grad:
            a._accumulate(_reduce_to(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_reduce_to(g, b.data.shape))

    return _result(a.data + b.data, (a, b), backward)


def sub(a, b):
    a, b = _wrap(a), _wrap(b)
    _binary_shapes(a, b, "sub")

    def backward(g):
        if a.requires_grad:
            a._accumulate(_reduce_to(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_reduce_to(-g, b.data.shape))

    return _result(a.data - b.data, (a, b), backward)


def mul(a, b):
    a, b = _wrap(a), _wrap(b)
    _binary_shapes(a, b, "mul")

    def backward(g):
        if a.requires_grad:
            a._accumulate(_reduce_to(g * b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_reduce_to(g * a.data, b.data.shape))

    return _result(a.data * b.data, (a, b), backward)


def div(a, b):
    a, b = _wrap(a), _wrap(b)
    _binary_shapes(a, b, "div")

    def backward(g):
        if a.requires_grad:
            a._accumulate(_reduce_to(g / b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_reduce_to(-g * a.data / (b.data * b.data),
                                     b.data.shape))

    return _result(a.data / b.data, (a, b), backward)


def scale(a, c):
    a = _wrap(a)
    c = float(c)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * c)

    return _result(a.data * c, (a,), backward)


def sqrt(a):
    a = _wrap(a)
    if np.any(a.data < 0):
        raise DomainError("sqrt of negative value")
    out_data = np.sqrt(a.data)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * 0.5 / out_data)

    return _result(out_data, (a,), backward)


def log(a):
    a = _wrap(a)
    if np.any(a.data <= 0):
        raise DomainError("log of non-positive value")

    def backward(g):
        if a.requires_grad:
            a._accumulate(g / a.data)

    return _result(np.log(a.data), (a,), backward)


def gelu(a):
    """Exact-erf GELU: x * Phi(x)."""
    a = _wrap(a)
    x = a.data
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))

    def backward(g):
        if a.requires_grad:
            pdf = _INV_SQRT2PI * np.exp(-0.5 * x * x)
            a._accumulate(g * (cdf + x * pdf))

    return _result(x * cdf, (a,), backward)


def arccos(a):
    """Arccos with inputs clamped away from +-1; gradient at the clamp."""
    a = _wrap(a)
    x = a.data
    if np.any(x < -1.0 - ARCCOS_SLACK) or np.any(x > 1.0 + ARCCOS_SLACK):
        raise DomainError(
            f"arccos input outside [-1, 1]: range [{x.min()}, {x.max()}]")
    clamped = np.clip(x, -1.0 + ARCCOS_CLAMP, 1.0 - ARCCOS_CLAMP)

    def backward(g):
        if a.requires_grad:
            a._accumulate(-g / np.sqrt(1.0 - clamped * clamped))

    return _result(np.arccos(clamped), (a,), backward)


def add_rowvec(a, v):
    """Add a length-n vector to every row of an (m, n) matrix."""
    a, v = _wrap(a), _wrap(v)
    if a.data.ndim != 2 or v.data.shape != (a.data.shape[1],):
        raise ShapeError(
            f"add_rowvec: {a.data.shape} with vector {v.data.shape}")

    def backward(g):
        if a.requires_grad:
            a._accumulate(g)
        if v.requires_grad:
            v._accumulate(np.sum(g, axis=0))

    return _result(a.data + v.data, (a, v), backward)


# -- reductions and shape ops --------------------------------------------


def tsum(a, axis=None, keepdims=False):
    a = _wrap(a)

    def backward(g):
        if not a.requires_grad:
            return
        if axis is None:
            a._accumulate(np.full(a.data.shape, float(g)))
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            a._accumulate(np.broadcast_to(gg, a.data.shape))

    return _result(np.sum(a.data, axis=axis, keepdims=keepdims), (a,), backward)


def tmean(a, axis=None, keepdims=False):
    a = _wrap(a)
    n = a.data.size if axis is None else a.data.shape[axis]
    return scale(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(a, shape):
    a = _wrap(a)
    if int(np.prod(shape)) != a.data.size:
        raise ShapeError(f"reshape {a.data.shape} -> {shape}: size mismatch")

    def backward(g):
        if a.requires_grad:
            a._accumulate(g.reshape(a.data.shape))

    return _result(a.data.reshape(shape), (a,), backward)


def transpose(a):
    a = _wrap(a)
    if a.data.ndim != 2:
        raise ShapeError(f"transpose expects a matrix, got {a.data.shape}")

    def backward(g):
        if a.requires_grad:
            a._accumulate(g.T)

    return _result(a.data.T.copy(), (a,), backward)


def gather_rows(a, index):
    """Select rows of a matrix; gradient scatter-adds over repeats."""
    a = _wrap(a)
    index = np.asarray(index, dtype=np.int64)
    if a.data.ndim != 2:
        raise ShapeError(f"gather_rows expects a matrix, got {a.data.shape}")

    def backward(g):
        if a.requires_grad:
            acc = np.zeros_like(a.data)
            np.add.at(acc, index, g)
            a._accumulate(acc)

    return _result(a.data[index], (a,), backward)


def slice_cols(a, lo, hi):
    a = _wrap(a)
    if a.data.ndim != 2 or not 0 <= lo < hi <= a.data.shape[1]:
        raise ShapeError(f"slice_cols [{lo}:{hi}] of {a.data.shape}")

    def backward(g):
        if a.requires_grad:
            acc = np.zeros_like(a.data)
            acc[:, lo:hi] = g
            a._accumulate(acc)

    return _result(a.data[:, lo:hi].copy(), (a,), backward)


def concat_cols(parts):
    parts = [_wrap(p) for p in parts]
    sizes = [p.data.shape[1] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if p.requires_grad:
                p._accumulate(g[:, lo:hi])

    return _result(np.concatenate([p.data for p in parts], axis=1),
                   tuple(parts), backward)


def concat_rows(parts):
    parts = [_wrap(p) for p in parts]
    sizes = [p.data.shape[0] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if p.requires_grad:
                p._accumulate(g[lo:hi])

    return _result(np.concatenate([p.data for p in parts], axis=0),
                   tuple(parts), backward)


# -- linear algebra -------------------------------------------------------


def matmul(a, b):
    a, b = _wrap(a), _wrap(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(
            f"matmul expects matrices, got {a.data.shape} and {b.data.shape}")
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(
            f"matmul: inner extents differ, {a.data.shape} vs {b.data.shape}")

    def backward(g):
        if a.requires_grad:
            a._accumulate(g @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ g)

    return _result(a.data @ b.data, (a, b), backward)


def softmax(a, axis=-1):
    a = _wrap(a)
    x = a.data
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"softmax axis {axis} invalid for shape {x.shape}")
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / np.sum(e, axis=axis, keepdims=True)

    def backward(g):
        if a.requires_grad:
            inner = np.sum(g * out_data, axis=axis, keepdims=True)
            a._accumulate(out_data * (g - inner))

    return _result(out_data, (a,), backward)


def layer_norm(a, gain, bias, eps=1e-6):
    """Normalize over the last axis to zero mean / unit variance, then affine."""
    a, gain, bias = _wrap(a), _wrap(gain), _wrap(bias)
    if eps < 0:
        raise DomainError("layer_norm eps must be >= 0")
    n = a.data.shape[-1]
    if gain.data.shape != (n,) or bias.data.shape != (n,):
        raise ShapeError(
            f"layer_norm affine params must have shape ({n},), got "
            f"{gain.data.shape} and {bias.data.shape}")
    mu = np.mean(a.data, axis=-1, keepdims=True)
    var = np.mean((a.data - mu) ** 2, axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (a.data - mu) * inv_std

    def backward(g):
        if gain.requires_grad:
            gain._accumulate(np.sum(g * xhat, axis=tuple(range(g.ndim - 1))))
        if bias.requires_grad:
            bias._accumulate(np.sum(g, axis=tuple(range(g.ndim - 1))))
        if a.requires_grad:
            gx = g * gain.data
            m1 = np.mean(gx, axis=-1, keepdims=True)
            m2 = np.mean(gx * xhat, axis=-1, keepdims=True)
            a._accumulate(inv_std * (gx - m1 - xhat * m2))

    return _result(gain.data * xhat + bias.data, (a, gain, bias), backward)


def check_finite(t, context=""):
    data = t.data if isinstance(t, Tensor) else np.asarray(t)
    if not np.all(np.isfinite(data)):
        raise FloatingPointError(f"non-finite values encountered {context}")
    return t
