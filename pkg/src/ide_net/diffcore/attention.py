from __future__ import annotations

from typing import Optional

import numpy as np

from . import ops
from .tensor import ShapeMismatch, Tensor, as_tensor


def scaled_dot_product_attention(q: Tensor, k: Tensor, v: Tensor, additive_mask: Optional[np.ndarray] = None) -> Tensor:
    """``softmax(q k^T / sqrt(d) + mask) v`` over the last two axes."""
    d = q.shape[-1]
    scores = ops.scale(ops.matmul(q, ops.transpose(k, _swap_last(k.ndim))), 1.0 / np.sqrt(d))
    if additive_mask is not None:
        scores = ops.add(scores, additive_mask)
    return ops.matmul(ops.softmax(scores, axis=-1), v)


def _swap_last(ndim: int) -> tuple[int, ...]:
    axes = list(range(ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return tuple(axes)


def build_additive_mask(n_tokens: int, key_mask: Optional[np.ndarray] = None,
                        causal: bool = False) -> Optional[np.ndarray]:
    """Additive logits from a boolean key mask ``(*batch, n)`` (True = hidden)
    and/or a causal mask. The result broadcasts against
    ``(*batch, heads, n, n)``."""
    if key_mask is None and not causal:
        return None
    mask = np.zeros((n_tokens, n_tokens))
    if causal:
        mask = np.where(np.triu(np.ones((n_tokens, n_tokens), dtype=bool), k=1), -np.inf, 0.0)
    if key_mask is not None:
        key_mask = np.asarray(key_mask, dtype=bool)
        if key_mask.shape[-1] != n_tokens:
            raise ShapeMismatch(f"key mask has {key_mask.shape[-1]} tokens, expected {n_tokens}")
        mask = mask + np.where(key_mask, -np.inf, 0.0)[..., None, None, :]
    return mask


def multi_head_attention(x, wq, wk, wv, wo, bq, bk, bv, bo, n_heads: int,
                         key_mask: Optional[np.ndarray] = None, causal: bool = False) -> Tensor:
    """Multi-head self-attention over ``x`` of shape ``(..., n_tokens, d)``.

    Weights are ``(d, d)`` and biases ``(d,)`` (any bias may be None). With
    grouped weights ``(G, d, d)`` / biases ``(G, d)``, ``x`` is
    ``(G, ..., n_tokens, d)`` and each group uses its own projections.
    Returns the attention output before any residual connection.
    """
    x = as_tensor(x)
    grouped = as_tensor(wq).ndim == 3
    if grouped:
        g_count, *batch, n, d = x.shape
    else:
        g_count = 1
        *batch, n, d = x.shape
    if d % n_heads:
        raise ShapeMismatch(f"model width {d} not divisible by {n_heads} heads")
    dh = d // n_heads
    m = int(np.prod(batch)) if batch else 1
    flat = ops.reshape(x, (g_count, m * n, d))

    def weight(w):
        return w if grouped else ops.reshape(w, (1, d, d))

    def bias(b):
        return ops.reshape(b, (g_count, 1, d))

    def heads(w, b):
        y = ops.matmul(flat, weight(w))
        if b is not None:
            y = ops.add(y, bias(b))
        return ops.transpose(ops.reshape(y, (g_count, m, n, n_heads, dh)), (0, 1, 3, 2, 4))

    q, k, v = heads(wq, bq), heads(wk, bk), heads(wv, bv)
    if key_mask is not None:
        key_mask = np.asarray(key_mask, dtype=bool).reshape(g_count, m, n)
    mask = build_additive_mask(n, key_mask, causal)
    ctx = scaled_dot_product_attention(q, k, v, mask)  # (G, m, H, n, dh)
    ctx = ops.reshape(ops.transpose(ctx, (0, 1, 3, 2, 4)), (g_count, m * n, d))
    out = ops.matmul(ctx, weight(wo))
    if bo is not None:
        out = ops.add(out, bias(bo))
    return ops.reshape(out, x.shape)
