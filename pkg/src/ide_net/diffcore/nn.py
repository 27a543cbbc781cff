"""Parameter containers built on the diffcore primitives."""
from __future__ import annotations

from typing import Iterator, Optional

import numpy as np

from . import ops
from .attention import multi_head_attention
from .recurrent import lstm_sequence
from .tensor import DTYPE, Tensor, as_tensor


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape or (fan_in, fan_out))


def parameter(data) -> Tensor:
    return Tensor(np.asarray(data, dtype=DTYPE), requires_grad=True)


class Module:
    training = True

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            path = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield path, value
            elif isinstance(value, Module):
                yield from value.named_parameters(path + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{path}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def modules(self) -> Iterator["Module"]:
        yield self
        for value in vars(self).values():
            if isinstance(value, Module):
                yield from value.modules()
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        yield from item.modules()

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]):
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        unexpected = set(state) - set(own)
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(unexpected)}")
        for name, p in own.items():
            value = np.asarray(state[name], dtype=DTYPE)
            if value.shape != p.shape:
                raise ValueError(f"{name}: shape {value.shape} != {p.shape}")
            p.data = value.copy()


class Linear(Module):
    """Affine map. With ``groups=G`` it holds G independent maps and expects
    inputs with a leading group axis."""

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, groups: Optional[int] = None):
        self.groups = groups
        if groups is None:
            self.weight = parameter(glorot_uniform(rng, d_in, d_out))
            self.bias = parameter(np.zeros(d_out))
        else:
            self.weight = parameter(np.stack([glorot_uniform(rng, d_in, d_out) for _ in range(groups)]))
            self.bias = parameter(np.zeros((groups, d_out)))

    def __call__(self, x) -> Tensor:
        if self.groups is None:
            return ops.add(ops.matmul(x, self.weight), self.bias)
        x = as_tensor(x)
        g, d_in, d_out = self.weight.shape
        flat = ops.reshape(x, (g, -1, d_in))
        y = ops.add(ops.matmul(flat, self.weight), ops.reshape(self.bias, (g, 1, d_out)))
        return ops.reshape(y, (*x.shape[:-1], d_out))


class LayerNorm(Module):
    def __init__(self, d: int, groups: Optional[int] = None):
        self.groups = groups
        shape = (d,) if groups is None else (groups, d)
        self.gamma = parameter(np.ones(shape))
        self.beta = parameter(np.zeros(shape))

    def __call__(self, x) -> Tensor:
        if self.groups is None:
            return ops.layer_norm(x, self.gamma, self.beta)
        x = as_tensor(x)
        g, d = self.gamma.shape
        y = ops.layer_norm(
            ops.reshape(x, (g, -1, d)), ops.reshape(self.gamma, (g, 1, d)), ops.reshape(self.beta, (g, 1, d))
        )
        return ops.reshape(y, x.shape)


class Dropout(Module):
    """Dropout driven by a caller-owned generator; identity in eval mode."""

    def __init__(self, p: float, rng: Optional[np.random.Generator] = None):
        self.p = p
        self.rng = rng

    def __call__(self, x) -> Tensor:
        if not self.training or self.p <= 0.0 or self.rng is None:
            return x
        return ops.dropout(x, self.p, self.rng)


class MLP(Module):
    """``Linear -> GELU -> Linear``."""

    def __init__(self, d_in: int, d_hidden: int, d_out: int, rng: np.random.Generator,
                 groups: Optional[int] = None):
        self.fc1 = Linear(d_in, d_hidden, rng, groups)
        self.fc2 = Linear(d_hidden, d_out, rng, groups)

    def __call__(self, x) -> Tensor:
        return self.fc2(ops.gelu(self.fc1(x)))


class MultiHeadSelfAttention(Module):
    """Self-attention with a residual connection and post layer norm."""

    def __init__(self, d: int, n_heads: int, rng: np.random.Generator, groups: Optional[int] = None):
        if d % n_heads:
            raise ValueError(f"width {d} not divisible by {n_heads} heads")
        self.n_heads = n_heads

        def w():
            if groups is None:
                return parameter(glorot_uniform(rng, d, d))
            return parameter(np.stack([glorot_uniform(rng, d, d) for _ in range(groups)]))

        bias_shape = (d,) if groups is None else (groups, d)
        self.wq, self.wk, self.wv, self.wo = w(), w(), w(), w()
        # no key bias: it shifts every logit of a query equally and cancels in softmax
        self.bq, self.bv, self.bo = (parameter(np.zeros(bias_shape)) for _ in range(3))
        self.norm = LayerNorm(d, groups)

    def __call__(self, x, key_mask=None, causal: bool = False) -> Tensor:
        att = multi_head_attention(
            x, self.wq, self.wk, self.wv, self.wo, self.bq, None, self.bv, self.bo,
            self.n_heads, key_mask=key_mask, causal=causal,
        )
        return self.norm(ops.add(x, att))


class LSTM(Module):
    """Single-layer LSTM; forget-gate bias starts at 1."""

    def __init__(self, d_in: int, d_hidden: int, rng: np.random.Generator, groups: Optional[int] = None):
        if groups is None:
            self.w_ih = parameter(glorot_uniform(rng, d_in, 4 * d_hidden))
            self.w_hh = parameter(glorot_uniform(rng, d_hidden, 4 * d_hidden))
        else:
            self.w_ih = parameter(np.stack([glorot_uniform(rng, d_in, 4 * d_hidden) for _ in range(groups)]))
            self.w_hh = parameter(np.stack([glorot_uniform(rng, d_hidden, 4 * d_hidden) for _ in range(groups)]))
        b = np.zeros((1 if groups is None else groups, 4 * d_hidden))
        b[:, d_hidden : 2 * d_hidden] = 1.0
        self.bias = parameter(b[0] if groups is None else b)

    def __call__(self, x, h0=None, c0=None):
        return lstm_sequence(x, self.w_ih, self.w_hh, self.bias, h0, c0)
