from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from .tensor import Tensor


def check_gradients(f: Callable[..., Tensor], inputs: Sequence[Tensor], eps: float = 1e-5,
                    max_coords: Optional[int] = None, seed: int = 0) -> float:
    """Max relative error between backprop and central-difference gradients.

    ``f(*inputs)`` must return a scalar Tensor. The error for one coordinate
    is ``|g_ad - g_fd| / max(1e-8, |g_ad| + |g_fd|)``. With ``max_coords``
    only that many coordinates per input are probed (chosen with ``seed``).
    """
    for x in inputs:
        x.data = np.ascontiguousarray(x.data)
        x.requires_grad = True
        x.zero_grad()
    out = f(*inputs)
    if out.size != 1:
        raise ValueError("check_gradients needs a scalar-valued function")
    out.backward()
    analytic = [x.grad.copy() for x in inputs]

    rng = np.random.default_rng(seed)
    worst = 0.0
    for x, g_ad in zip(inputs, analytic):
        flat = x.data.reshape(-1)
        g_flat = g_ad.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = rng.choice(flat.size, size=max_coords, replace=False)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + eps
            up = f(*inputs).item()
            flat[i] = orig - eps
            down = f(*inputs).item()
            flat[i] = orig
            g_fd = (up - down) / (2.0 * eps)
            err = abs(g_flat[i] - g_fd) / max(1e-8, abs(g_flat[i]) + abs(g_fd))
            worst = max(worst, err)
    return worst
