"""Differentiable primitives.

Each function returns a :class:`Tensor` whose backward closure maps the
output adjoint to one adjoint per parent (``None`` for untracked parents).
Broadcasting follows numpy; adjoints are summed back to the parent shape.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .tensor import Tensor, as_tensor, make_node

_LOG_EPS = 1e-12


def _const(x, like):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.data.dtype))


def _pair(a, b):
    if isinstance(a, Tensor):
        return a, _const(b, a)
    b = as_tensor(b)
    return _const(a, b), b


def unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    ndim_extra = grad.ndim - len(shape)
    if ndim_extra > 0:
        grad = grad.sum(axis=tuple(range(ndim_extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def check_shape(cond, message):
    if not cond:
        raise ValueError(message)


# -- arithmetic ----------------------------------------------------------

def add(a, b):
    a, b = _pair(a, b)
    out = a.data + b.data

    def back(g):
        return unbroadcast(g, a.shape), unbroadcast(g, b.shape)

    return make_node(out, (a, b), back)


def sub(a, b):
    a, b = _pair(a, b)
    out = a.data - b.data

    def back(g):
        return unbroadcast(g, a.shape), unbroadcast(-g, b.shape)

    return make_node(out, (a, b), back)


def mul(a, b):
    a, b = _pair(a, b)
    out = a.data * b.data

    def back(g):
        ga = unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return make_node(out, (a, b), back)


def div(a, b):
    a, b = _pair(a, b)
    out = a.data / b.data

    def back(g):
        ga = unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = unbroadcast(-g * a.data / (b.data * b.data), b.shape) if b.requires_grad else None
        return ga, gb

    return make_node(out, (a, b), back)


def neg(a):
    return make_node(-a.data, (a,), lambda g: (-g,))


def scale(a, c):
    c = float(c)
    return make_node(a.data * a.data.dtype.type(c), (a,), lambda g: (g * g.dtype.type(c),))


def matmul(a, b):
    a, b = _pair(a, b)
    check_shape(a.ndim == 2 and b.ndim == 2, f"matmul expects 2-D operands, got {a.shape} @ {b.shape}")
    check_shape(a.shape[1] == b.shape[0], f"matmul shape mismatch {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def back(g):
        ga = g @ b.data.T if a.requires_grad else None
        gb = a.data.T @ g if b.requires_grad else None
        return ga, gb

    return make_node(out, (a, b), back)


def exp(a):
    out = np.exp(a.data)
    return make_node(out, (a,), lambda g: (g * out,))


def log(a):
    return make_node(np.log(a.data), (a,), lambda g: (g / a.data,))


def square(a):
    return make_node(a.data * a.data, (a,), lambda g: (2 * g * a.data,))


def sqrt(a):
    out = np.sqrt(a.data)
    return make_node(out, (a,), lambda g: (g / (2 * out),))


def tanh(a):
    out = np.tanh(a.data)
    return make_node(out, (a,), lambda g: (g * (1 - out * out),))


# -- reductions and shape ---------------------------------------------------

def sum(a, axis=None, keepdims=False):
    out = np.sum(a.data, axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return make_node(np.asarray(out, dtype=a.dtype), (a,), back)


def mean(a, axis=None, keepdims=False):
    count = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return scale(sum(a, axis=axis, keepdims=keepdims), 1.0 / max(int(count), 1))


def reshape(a, shape):
    out = a.data.reshape(shape)
    return make_node(out, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes=None):
    out = np.transpose(a.data, axes)
    inverse = None if axes is None else np.argsort(axes)
    return make_node(out, (a,), lambda g: (np.transpose(g, inverse),))


def getitem(a, index):
    out = a.data[index]

    def back(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)

    return make_node(np.array(out, copy=True), (a,), back)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def back(g):
        grads = []
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            if not t.requires_grad:
                grads.append(None)
                continue
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            grads.append(g[tuple(sl)])
        return tuple(grads)

    return make_node(out, tuple(tensors), back)


def split(a, sizes, axis=-1):
    """Split along ``axis`` into consecutive blocks of the given widths."""
    axis = axis % a.ndim
    check_shape(int(np.sum(sizes)) == a.shape[axis], f"split sizes {sizes} do not cover axis of {a.shape}")
    pieces = []
    start = 0
    for width in sizes:
        sl = [slice(None)] * a.ndim
        sl[axis] = slice(start, start + width)
        pieces.append(slice_(a, tuple(sl)))
        start += width
    return pieces


def slice_(a, index):
    """Basic (view) slicing; cheaper than :func:`getitem` for contiguous blocks."""
    out = a.data[index]

    def back(g):
        full = np.zeros_like(a.data)
        full[index] = g
        return (full,)

    return make_node(out, (a,), back)


def _width(shape):
    """Trailing size of a row-major block; explicit so zero-row arrays reshape too."""
    return int(np.prod(shape[1:], dtype=np.int64))


def _selection(idx, n_rows, dtype):
    m = len(idx)
    return sp.csr_matrix((np.ones(m, dtype=dtype), (np.arange(m), idx)), shape=(m, n_rows))


def take_rows(a, idx):
    """Gather rows ``a[idx]``; adjoint scatters back with a sparse product."""
    idx = np.asarray(idx, dtype=np.int64)
    out = a.data[idx]

    def back(g):
        sel = _selection(idx, a.shape[0], g.dtype)
        return (np.asarray(sel.T @ g.reshape(len(idx), _width(a.shape))).reshape(a.shape),)

    return make_node(out, (a,), back)


def scatter_rows(base, idx, rows):
    """Copy of ``base`` with ``base[idx] = rows``; differentiable in both."""
    base = as_tensor(base)
    rows = _const(rows, base)
    idx = np.asarray(idx, dtype=np.int64)
    check_shape(len(np.unique(idx)) == len(idx), "scatter_rows indices must be distinct")
    out = base.data.copy()
    out[idx] = rows.data

    def back(g):
        gb = None
        if base.requires_grad:
            gb = g.copy()
            gb[idx] = 0
        gr = g[idx] if rows.requires_grad else None
        return gb, gr

    return make_node(out, (base, rows), back)


def segment_matrix(ids, num_segments, dtype, mean=False):
    """Sparse (num_segments x len(ids)) pooling matrix."""
    ids = np.asarray(ids, dtype=np.int64)
    n = len(ids)
    weights = np.ones(n, dtype=dtype)
    if mean and n:
        counts = np.bincount(ids, minlength=num_segments).astype(dtype)
        weights = weights / counts[ids]
    return sp.csr_matrix((weights, (ids, np.arange(n))), shape=(num_segments, n))


def segment_sum(a, ids, num_segments):
    return _pool(a, segment_matrix(ids, num_segments, a.dtype))


def segment_mean(a, ids, num_segments):
    """Mean of the rows sharing an id; empty segments give zero rows."""
    check_shape(len(ids) == a.shape[0], f"{len(ids)} segment ids for {a.shape[0]} rows")
    return _pool(a, segment_matrix(ids, num_segments, a.dtype, mean=True))


def _pool(a, mat):
    flat = a.data.reshape(a.shape[0], _width(a.shape))
    out = np.asarray(mat @ flat).reshape((mat.shape[0],) + a.shape[1:]).astype(a.dtype, copy=False)

    def back(g):
        gflat = g.reshape(g.shape[0], _width(a.shape))
        return (np.asarray(mat.T @ gflat).reshape(a.shape).astype(a.dtype, copy=False),)

    return make_node(out, (a,), back)


# -- activations -------------------------------------------------------------

def relu(a):
    mask = a.data > 0
    return make_node(a.data * mask, (a,), lambda g: (g * mask,))


def leaky_relu(a, slope=0.2):
    one, neg_slope = a.dtype.type(1.0), a.dtype.type(slope)
    factor = np.where(a.data > 0, one, neg_slope)
    return make_node(a.data * factor, (a,), lambda g: (g * factor,))


def prelu(a, alpha):
    """Leaky ReLU whose negative slope ``alpha`` (shape (1,) or (D,)) is learned."""
    pos = a.data > 0
    out = np.where(pos, a.data, alpha.data * a.data)

    def back(g):
        ga = g * np.where(pos, 1.0, alpha.data).astype(a.dtype)
        galpha = None
        if alpha.requires_grad:
            galpha = unbroadcast(g * np.where(pos, 0.0, a.data).astype(a.dtype), alpha.shape)
        return ga, galpha

    return make_node(out.astype(a.dtype, copy=False), (a, alpha), back)


def sigmoid(a):
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return make_node(out, (a,), lambda g: (g * out * (1 - out),))


def log_softmax(a, axis=-1):
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    probs = np.exp(out)

    def back(g):
        return (g - probs * g.sum(axis=axis, keepdims=True),)

    return make_node(out, (a,), back)


def softmax(a, axis=-1):
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return make_node(out, (a,), back)


def dropout(a, p, training, rng=None):
    """Inverted dropout: kept units are scaled by 1/(1-p) so the mean is unchanged."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must lie in [0, 1), got {p}")
    if not training or p == 0.0:
        return a
    if rng is None:
        raise ValueError("training-mode dropout needs an explicit generator")
    dtype = a.dtype if a.dtype in (np.float32, np.float64) else np.float64
    keep = (rng.random(a.shape, dtype=dtype) >= p).astype(a.dtype)
    keep *= a.dtype.type(1.0 / (1.0 - p))
    return make_node(a.data * keep, (a,), lambda g: (g * keep,))


# -- normalisation -----------------------------------------------------------

def batch_norm(a, gamma, beta, running_mean, running_var, training, momentum=0.1, eps=1e-5):
    """Batch normalisation over axis 0.  Running statistics are updated in place."""
    x = a.data
    if training and x.shape[0] > 1:
        mu = x.mean(axis=0)
        var = x.var(axis=0)
        n = x.shape[0]
        running_mean *= 1 - momentum
        running_mean += momentum * mu
        running_var *= 1 - momentum
        running_var += momentum * var * n / (n - 1)
        inv = 1.0 / np.sqrt(var + eps)
        xhat = (x - mu) * inv
        out = xhat * gamma.data + beta.data

        def back(g):
            gx_hat = g * gamma.data
            gx = inv / n * (n * gx_hat - gx_hat.sum(axis=0) - xhat * (gx_hat * xhat).sum(axis=0))
            return gx.astype(x.dtype, copy=False), (g * xhat).sum(axis=0), g.sum(axis=0)

        return make_node(out.astype(x.dtype, copy=False), (a, gamma, beta), back)
    inv = (1.0 / np.sqrt(running_var + eps)).astype(x.dtype)
    xhat = (x - running_mean.astype(x.dtype)) * inv
    out = xhat * gamma.data + beta.data

    def back_eval(g):
        return g * gamma.data * inv, (g * xhat).sum(axis=0), g.sum(axis=0)

    return make_node(out.astype(x.dtype, copy=False), (a, gamma, beta), back_eval)


def layer_norm(a, gamma, beta, eps=1e-5):
    x = a.data
    d = x.shape[-1]
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * inv
    out = xhat * gamma.data + beta.data

    def back(g):
        gx_hat = g * gamma.data
        gx = inv / d * (d * gx_hat - gx_hat.sum(axis=-1, keepdims=True)
                        - xhat * (gx_hat * xhat).sum(axis=-1, keepdims=True))
        flat_g = g.reshape(-1, d)
        flat_xhat = xhat.reshape(-1, d)
        return gx.astype(x.dtype, copy=False), (flat_g * flat_xhat).sum(axis=0), flat_g.sum(axis=0)

    return make_node(out.astype(x.dtype, copy=False), (a, gamma, beta), back)


# -- distances and losses ------------------------------------------------------

def l1_diff(a, b):
    """Row-wise L1 norm of ``a - b``."""
    d = sub(a, b)
    sign = np.sign(d.data)
    out = np.abs(d.data).reshape(d.shape[0], _width(d.shape)).sum(axis=1)
    return make_node(out, (d,), lambda g: ((g.reshape((-1,) + (1,) * (d.ndim - 1)) * sign),))


def l2_diff(a, b):
    """Row-wise Euclidean norm of ``a - b``; the adjoint at a zero difference is zero."""
    d = sub(a, b)
    flat = d.data.reshape(d.shape[0], _width(d.shape))
    norm = np.sqrt((flat * flat).sum(axis=1))
    safe = np.where(norm > 0, norm, 1.0)

    def back(g):
        coef = np.where(norm > 0, g / safe, 0.0).astype(d.dtype)
        return ((coef[:, None] * flat).reshape(d.shape),)

    return make_node(norm.astype(d.dtype, copy=False), (d,), back)


def cross_entropy(logits, target, reduction="mean"):
    """Softmax cross-entropy of (N, K) logits against integer targets."""
    target = np.asarray(target, dtype=np.int64)
    check_shape(logits.ndim == 2 and len(target) == logits.shape[0],
                f"cross_entropy expects (N, K) logits and N targets, got {logits.shape} / {target.shape}")
    if len(target) and (target.min() < 0 or target.max() >= logits.shape[1]):
        raise ValueError("cross_entropy target outside [0, K)")
    logp = log_softmax(logits, axis=1)
    picked = getitem(logp, (np.arange(len(target)), target))
    losses = neg(picked)
    if reduction == "none":
        return losses
    return mean(losses)


def binary_cross_entropy_with_logits(logits, target, reduction="mean"):
    """Stable BCE from logits: max(x,0) - x*t + log(1 + exp(-|x|))."""
    t = np.asarray(target, dtype=logits.dtype)
    check_shape(t.shape == logits.shape, f"target shape {t.shape} != logits shape {logits.shape}")
    x = logits.data
    out = np.maximum(x, 0) - x * t + np.log1p(np.exp(-np.abs(x)))
    probs = sigmoid(Tensor(x, dtype=x.dtype)).data

    def back(g):
        return (g * (probs - t),)

    losses = make_node(out.astype(x.dtype, copy=False), (logits,), back)
    if reduction == "none":
        return losses
    return mean(losses)


def binary_cross_entropy(probs, target, eps=1e-7, reduction="mean"):
    """BCE on probabilities clamped to [eps, 1 - eps]."""
    t = np.asarray(target, dtype=probs.dtype)
    check_shape(t.shape == probs.shape, f"target shape {t.shape} != probability shape {probs.shape}")
    p = np.clip(probs.data, eps, 1 - eps)
    inside = (probs.data > eps) & (probs.data < 1 - eps)
    out = -(t * np.log(p) + (1 - t) * np.log(1 - p))

    def back(g):
        return (g * inside * (p - t) / (p * (1 - p)),)

    losses = make_node(out.astype(probs.dtype, copy=False), (probs,), back)
    if reduction == "none":
        return losses
    return mean(losses)


def l2_normalize(a, eps=1e-12):
    """Scale each row to unit Euclidean norm."""
    x = a.data
    norm = np.sqrt((x * x).sum(axis=-1, keepdims=True))
    norm = np.maximum(norm, eps)
    y = x / norm

    def back(g):
        return ((g - y * (g * y).sum(axis=-1, keepdims=True)) / norm,)

    return make_node(y, (a,), back)


def cosine_similarity(a, b, eps=1e-12):
    """Row-wise cosine similarity."""
    a, b = _pair(a, b)
    return sum(mul(l2_normalize(a, eps), l2_normalize(b, eps)), axis=-1)


def weighted_sum(terms, weights):
    """sum_k weights[k] * terms[k]; zero-weight terms are skipped entirely."""
    total = None
    for term, w in zip(terms, weights):
        if w == 0 or term is None:
            continue
        part = scale(term, w)
        total = part if total is None else add(total, part)
    if total is None:
        return Tensor(0.0)
    return total
