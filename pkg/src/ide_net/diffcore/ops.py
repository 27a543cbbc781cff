"""Differentiable primitives over :class:`Tensor`.

Every function computes its forward value with numpy and registers a
backward closure that accumulates exact gradients into its inputs.
"""
from __future__ import annotations

import builtins
from typing import Optional, Sequence

import numpy as np
from scipy.special import erf, expit

from .tensor import DTYPE, ShapeMismatch, Tensor, as_tensor, make_node

PROB_FLOOR = 1e-7
_SQRT2 = np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _check_broadcast(a: Tensor, b: Tensor, op: str):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeMismatch(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# -- elementwise arithmetic ---------------------------------------------
def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")

    def backward(out):
        if a.requires_grad:
            a._accumulate(_unbroadcast(out.grad, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(out.grad, b.shape))

    return make_node(a.data + b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")

    def backward(out):
        if a.requires_grad:
            a._accumulate(_unbroadcast(out.grad * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(out.grad * a.data, b.shape))

    return make_node(a.data * b.data, (a, b), backward)


def scale(a, factor: float) -> Tensor:
    a = as_tensor(a)
    factor = float(factor)

    def backward(out):
        a._accumulate(out.grad * factor)

    return make_node(a.data * factor, (a,), backward)


def matmul(a, b) -> Tensor:
    """Batched matrix product with numpy broadcasting over leading axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    try:
        out_data = a.data @ b.data
    except ValueError:
        raise ShapeMismatch(f"matmul: incompatible batch shapes {a.shape} @ {b.shape}") from None

    def backward(out):
        g = out.grad
        if a.requires_grad:
            if a.ndim == 2 and g.ndim > 2 and b.ndim == g.ndim:
                # shared left matrix against a batch
                ga = np.swapaxes(g, -1, -2).reshape(-1, a.shape[0]).T @ np.swapaxes(b.data, -1, -2).reshape(-1, a.shape[1])
                a._accumulate(ga)
            else:
                a._accumulate(_unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
        if b.requires_grad:
            if b.ndim == 2 and a.ndim > 2:
                # shared weight matrix: fold the batch axes into rows
                b._accumulate(a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1]))
            else:
                b._accumulate(_unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))

    return make_node(out_data, (a, b), backward)


# -- structural ------------------------------------------------------------
def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeMismatch(f"concat: {exc}") from None
    ax = axis % data.ndim
    bounds = np.cumsum([0] + [t.shape[ax] for t in tensors])

    def backward(out):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                idx = [builtins.slice(None)] * out.grad.ndim
                idx[ax] = builtins.slice(lo, hi)
                t._accumulate(out.grad[tuple(idx)])

    return make_node(data, tensors, backward)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        data = np.stack([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeMismatch(f"stack: {exc}") from None

    def backward(out):
        parts = np.moveaxis(out.grad, axis, 0)
        for t, g in zip(tensors, parts):
            if t.requires_grad:
                t._accumulate(g)

    return make_node(data, tensors, backward)


def slice(a, index) -> Tensor:  # noqa: A001 - mirrors the primitive's name
    a = as_tensor(a)
    data = a.data[index]

    parts = index if isinstance(index, tuple) else (index,)
    basic = all(isinstance(i, (builtins.slice, int, np.integer)) or i is None or i is Ellipsis for i in parts)

    def backward(out):
        g = np.zeros_like(a.data)
        if basic:
            g[index] = out.grad
        else:
            np.add.at(g, index, out.grad)
        a._accumulate(g)

    return make_node(np.array(data, dtype=DTYPE), (a,), backward)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        data = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeMismatch(f"reshape: {exc}") from None

    def backward(out):
        a._accumulate(out.grad.reshape(a.shape))

    return make_node(data, (a,), backward)


def transpose(a, axes: Optional[Sequence[int]] = None) -> Tensor:
    a = as_tensor(a)
    axes = tuple(axes) if axes else tuple(reversed(range(a.ndim)))
    inverse = tuple(np.argsort(axes))

    def backward(out):
        a._accumulate(np.transpose(out.grad, inverse))

    return make_node(np.transpose(a.data, axes), (a,), backward)


def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(out):
        g = out.grad
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(g, a.shape).copy())

    return make_node(np.asarray(data, dtype=DTYPE), (a,), backward)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        count = a.size
    else:
        axes = (axis,) if np.isscalar(axis) else tuple(axis)
        count = int(np.prod([a.shape[ax] for ax in axes]))
    return scale(sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


# -- nonlinearities --------------------------------------------------------
def gelu(a) -> Tensor:
    """Exact GELU, ``x * Phi(x)``."""
    a = as_tensor(a)
    x = a.data
    cdf = 0.5 * (1.0 + erf(x / _SQRT2))

    def backward(out):
        pdf = _INV_SQRT2PI * np.exp(-0.5 * x * x)
        a._accumulate(out.grad * (cdf + x * pdf))

    return make_node(x * cdf, (a,), backward)


def _sigmoid(x: np.ndarray, out: Optional[np.ndarray] = None) -> np.ndarray:
    return expit(x, out=out) if out is not None else expit(x)


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    y = _sigmoid(a.data)

    def backward(out):
        a._accumulate(out.grad * y * (1.0 - y))

    return make_node(y, (a,), backward)


def tanh(a) -> Tensor:
    a = as_tensor(a)
    y = np.tanh(a.data)

    def backward(out):
        a._accumulate(out.grad * (1.0 - y * y))

    return make_node(y, (a,), backward)


def log(a) -> Tensor:
    a = as_tensor(a)

    def backward(out):
        a._accumulate(out.grad / a.data)

    return make_node(np.log(a.data), (a,), backward)


def clamp(a, lo: float, hi: float) -> Tensor:
    """Clip values; gradient passes only where the input is inside ``[lo, hi]``."""
    a = as_tensor(a)
    inside = (a.data >= lo) & (a.data <= hi)

    def backward(out):
        a._accumulate(out.grad * inside)

    return make_node(np.clip(a.data, lo, hi), (a,), backward)


def softmax(a, axis: int = -1) -> Tensor:
    """Softmax along ``axis``. ``-inf`` logits get weight 0; a row of all
    ``-inf`` yields all zeros instead of NaN."""
    a = as_tensor(a)
    x = a.data
    peak = np.max(x, axis=axis, keepdims=True)
    dead = ~np.isfinite(peak)
    peak = np.where(dead, 0.0, peak)
    e = np.exp(x - peak)
    total = e.sum(axis=axis, keepdims=True)
    y = np.where(dead, 0.0, e / np.where(total == 0.0, 1.0, total))

    def backward(out):
        g = out.grad
        a._accumulate(y * (g - (g * y).sum(axis=axis, keepdims=True)))

    return make_node(y, (a,), backward)


def layer_norm(a, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then apply the affine ``gamma``/``beta``
    (shape ``(d,)`` or anything broadcastable against ``a``)."""
    a, gamma, beta = as_tensor(a), as_tensor(gamma), as_tensor(beta)
    d = a.shape[-1]
    if gamma.shape[-1:] != (d,) or beta.shape[-1:] != (d,):
        raise ShapeMismatch(f"layer_norm: affine shapes {gamma.shape}/{beta.shape} vs feature dim {d}")
    _check_broadcast(a, gamma, "layer_norm")
    mu = a.data.mean(axis=-1, keepdims=True)
    xc = a.data - mu
    inv_std = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv_std

    def backward(out):
        g = out.grad
        if gamma.requires_grad:
            gamma._accumulate(_unbroadcast(g * xhat, gamma.shape))
        if beta.requires_grad:
            beta._accumulate(_unbroadcast(g, beta.shape))
        if a.requires_grad:
            gx = g * gamma.data
            a._accumulate(
                inv_std * (gx - gx.mean(axis=-1, keepdims=True) - xhat * (gx * xhat).mean(axis=-1, keepdims=True))
            )

    return make_node(xhat * gamma.data + beta.data, (a, gamma, beta), backward)


def dropout(a, p: float, rng: Optional[np.random.Generator] = None, mask: Optional[np.ndarray] = None) -> Tensor:
    """Inverted dropout. Pass ``mask`` to freeze the keep pattern."""
    a = as_tensor(a)
    if p <= 0.0 and mask is None:
        return a
    if mask is None:
        if rng is None:
            raise ValueError("dropout needs an rng or an explicit mask")
        mask = (rng.random(a.shape) >= p) / (1.0 - p)
    mask = np.asarray(mask, dtype=DTYPE)

    def backward(out):
        a._accumulate(out.grad * mask)

    return make_node(a.data * mask, (a,), backward)


# -- losses ----------------------------------------------------------------
def mse(pred, target) -> Tensor:
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeMismatch(f"mse: {pred.shape} vs {target.shape}")
    diff = pred.data - target.data
    n = diff.size

    def backward(out):
        g = out.grad * 2.0 * diff / n
        if pred.requires_grad:
            pred._accumulate(g)
        if target.requires_grad:
            target._accumulate(-g)

    return make_node(np.asarray((diff * diff).sum() / n), (pred, target), backward)


def bce_masked(p, target, mask=None, floor: float = PROB_FLOOR) -> Tensor:
    """Mean binary cross-entropy over entries where ``mask`` is nonzero.

    Probabilities are clamped to ``[floor, 1 - floor]``; an all-zero mask
    gives a zero loss with zero gradient.
    """
    p = as_tensor(p)
    t = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=DTYPE)
    m = np.ones_like(p.data) if mask is None else np.asarray(mask, dtype=DTYPE)
    if t.shape != p.shape or m.shape != p.shape:
        raise ShapeMismatch(f"bce_masked: {p.shape} vs target {t.shape} / mask {m.shape}")
    count = m.sum()
    pc = np.clip(p.data, floor, 1.0 - floor)
    inside = (p.data >= floor) & (p.data <= 1.0 - floor)
    terms = -(t * np.log(pc) + (1.0 - t) * np.log(1.0 - pc))
    value = (m * terms).sum() / count if count > 0 else 0.0

    def backward(out):
        if count == 0:
            return
        dp = (-t / pc + (1.0 - t) / (1.0 - pc)) * inside
        p._accumulate(out.grad * m * dp / count)

    return make_node(np.asarray(value), (p,), backward)


def entropy(p, axis: int = -1, floor: float = PROB_FLOOR) -> Tensor:
    """``-sum p log p`` along ``axis`` with ``p`` clamped below at ``floor``
    inside the log (so ``0 log 0`` contributes 0)."""
    p = as_tensor(p)
    pc = np.maximum(p.data, floor)
    logp = np.log(pc)

    def backward(out):
        g = np.expand_dims(out.grad, axis)
        # d/dp of -p*log(max(p, floor)); the log term is constant below floor
        d = -(logp + (p.data >= floor))
        p._accumulate(g * d)

    return make_node(-(p.data * logp).sum(axis=axis), (p,), backward)
