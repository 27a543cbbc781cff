"""Scalar-valued probes around each autodiff primitive, for finite-difference checks."""
from __future__ import annotations

import numpy as np

from ide_net.diffcore import Tensor, ops


def _probe(out: Tensor, seed: int) -> Tensor:
    # a fixed random linear functional keeps every output coordinate in play
    weights = np.random.default_rng(seed).normal(size=out.shape)
    return ops.sum(ops.mul(out, weights))


def primitive_cases(seed: int = 0):
    """``(name, f, inputs)`` triples; ``f(*inputs)`` is a scalar Tensor."""
    rng = np.random.default_rng(seed)
    t = lambda *shape: Tensor(rng.normal(size=shape))
    probs = lambda *shape: Tensor(rng.uniform(0.05, 0.95, size=shape))
    mask = (rng.uniform(size=(4, 5)) > 0.3).astype(float)
    target01 = (rng.uniform(size=(4, 5)) > 0.5).astype(float)
    drop_mask = (rng.uniform(size=(3, 4)) > 0.25).astype(float)
    return [
        ("matmul", lambda a, b: _probe(ops.matmul(a, b), 1), [t(3, 4), t(4, 2)]),
        ("matmul_batched", lambda a, b: _probe(ops.matmul(a, b), 2), [t(2, 3, 4), t(4, 5)]),
        ("add_broadcast", lambda a, b: _probe(ops.add(a, b), 3), [t(3, 4), t(4)]),
        ("mul", lambda a, b: _probe(ops.mul(a, b), 4), [t(3, 4), t(3, 1)]),
        ("scale", lambda a: _probe(ops.scale(a, -2.5), 5), [t(3, 4)]),
        ("concat", lambda a, b: _probe(ops.concat([a, b], axis=1), 6), [t(2, 3), t(2, 4)]),
        ("slice", lambda a: _probe(a[1:, ::2], 7), [t(4, 5)]),
        ("reshape_transpose", lambda a: _probe(ops.transpose(ops.reshape(a, (3, 2, 2)), (2, 0, 1)), 8), [t(4, 3)]),
        ("sum_mean", lambda a: ops.add(_probe(ops.sum(a, axis=0), 9), ops.mean(ops.mul(a, a))), [t(3, 4)]),
        ("gelu", lambda a: _probe(ops.gelu(a), 10), [t(3, 4)]),
        ("sigmoid", lambda a: _probe(ops.sigmoid(a), 11), [t(3, 4)]),
        ("tanh", lambda a: _probe(ops.tanh(a), 12), [t(3, 4)]),
        ("softmax", lambda a: _probe(ops.softmax(a, axis=-1), 13), [t(3, 4)]),
        ("softmax_axis0", lambda a: _probe(ops.softmax(a, axis=0), 14), [t(3, 4)]),
        ("layer_norm", lambda a, g, b: _probe(ops.layer_norm(a, g, b), 15), [t(3, 6), t(6), t(6)]),
        ("dropout_frozen_mask", lambda a: _probe(ops.dropout(a, 0.25, mask=drop_mask), 16), [t(3, 4)]),
        ("dropout_p0", lambda a: _probe(ops.dropout(a, 0.0, np.random.default_rng(0)), 17), [t(3, 4)]),
        ("mse", lambda a, b: ops.mse(a, b), [t(3, 4), t(3, 4)]),
        ("bce_masked", lambda p: ops.bce_masked(p, target01, mask), [probs(4, 5)]),
        ("entropy", lambda p: _probe(ops.entropy(p, axis=-1), 18), [probs(3, 4)]),
        ("log", lambda p: _probe(ops.log(p), 19), [probs(3, 4)]),
        ("softmax_entropy", lambda a: ops.mean(ops.entropy(ops.softmax(a, axis=-1))), [t(5, 3)]),
    ]
