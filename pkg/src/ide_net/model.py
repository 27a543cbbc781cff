"""IDE-Net: shared interaction feature extractor, whether/when/what heads,
probability fusion and the type-weighted trajectory predictor."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .diffcore import ops
from .diffcore.nn import LSTM, MLP, Dropout, Linear, Module, MultiHeadSelfAttention
from .diffcore.tensor import ShapeMismatch, Tensor, as_tensor

STB_VARIANTS = ("mixed", "lstm_only", "transformer_only")


@dataclass
class ModelConfig:
    d_hidden: int = 384
    n_heads: int = 16
    n_stb_per_module: int = 2
    C: int = 3
    k: int = 5
    feature_dim: int = 2
    dropout: float = 0.01
    stb_variant: str = "mixed"

    def __post_init__(self):
        if self.d_hidden % self.n_heads:
            raise ValueError(f"d_hidden {self.d_hidden} not divisible by n_heads {self.n_heads}")
        if self.C < 2:
            raise ValueError("C must be >= 2")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.stb_variant not in STB_VARIANTS:
            raise ValueError(f"stb_variant must be one of {STB_VARIANTS}")

    @classmethod
    def paper(cls) -> "ModelConfig":
        return cls()

    @classmethod
    def desk(cls, d_hidden: int = 32, **overrides) -> "ModelConfig":
        values = dict(d_hidden=d_hidden, n_heads=4)
        values.update(overrides)
        return cls(**values)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ModelOutput:
    p_whether: Tensor  # (B,)
    p_when: Tensor  # (B, T)
    p_what: Tensor  # (B, T, C)
    traj_pred: Optional[Tensor]  # (B, T-k, 2, k, 2)
    fusion: Optional[Tensor] = None  # (B, T, C+1)
    features: Optional[Tensor] = None  # (B, 2, T, d)


def sinusoidal_embedding(steps: int, d: int) -> np.ndarray:
    pos = np.arange(steps)[:, None]
    i = np.arange(d)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / d)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


class STBlock(Module):
    """Spatial attention across the two agents at each step, then a temporal
    pass per agent. Input and output are ``(B, 2, T, d)``, or
    ``(G, B, 2, T, d)`` when built with ``groups=G`` (G independent blocks
    evaluated together).

    The temporal pass is a left-to-right LSTM (or, for the transformer-only
    variant, self-attention over time), so with ``causal=True`` no output at
    step ``t`` depends on inputs after ``t``.
    """

    def __init__(self, d: int, n_heads: int, rng: np.random.Generator, variant: str = "mixed",
                 causal: bool = False, dropout: float = 0.0, dropout_rng=None, groups: Optional[int] = None):
        self.variant = variant
        self.causal = causal
        self.groups = groups
        self.spatial = MultiHeadSelfAttention(d, n_heads, rng, groups) if variant != "lstm_only" else None
        if variant == "transformer_only":
            self.temporal_att = MultiHeadSelfAttention(d, n_heads, rng, groups)
            self.temporal = None
        else:
            self.temporal = LSTM(d, d, rng, groups)
            self.temporal_att = None
        self.drop = Dropout(dropout, dropout_rng)

    def __call__(self, x) -> Tensor:
        x = as_tensor(x)
        lead = () if self.groups is None else (self.groups,)
        if x.ndim != 4 + len(lead) or x.shape[: len(lead)] != lead or x.shape[len(lead) + 1] != 2:
            raise ShapeMismatch(f"ST-B expects ({'G, ' if lead else ''}B, 2, T, d), got {x.shape}")
        b, _, steps, d = x.shape[len(lead):]
        if self.spatial is not None:
            # agents become the token axis: (..., B, T, 2, d)
            perm = tuple(range(len(lead))) + tuple(len(lead) + i for i in (0, 2, 1, 3))
            tokens = ops.transpose(x, perm)
            x = ops.transpose(self.spatial(tokens), perm)
        seqs = ops.reshape(x, (*lead, b * 2, steps, d))
        if self.temporal is not None:
            seqs, _ = self.temporal(seqs)
        else:
            seqs = self.temporal_att(seqs, causal=self.causal)
        return self.drop(ops.reshape(seqs, (*lead, b, 2, steps, d)))


class STStack(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, causal: bool = False, dropout_rng=None,
                 groups: Optional[int] = None):
        self.blocks = [
            STBlock(cfg.d_hidden, cfg.n_heads, rng, cfg.stb_variant, causal, cfg.dropout, dropout_rng, groups)
            for _ in range(cfg.n_stb_per_module)
        ]

    def __call__(self, x) -> Tensor:
        for block in self.blocks:
            x = block(x)
        return x


class Extractor(Module):
    """Input projection (linear + GELU) followed by stacked ST-Bs."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, causal: bool = False, dropout_rng=None,
                 groups: Optional[int] = None):
        self.use_position_embedding = cfg.stb_variant == "transformer_only"
        self.proj = Linear(cfg.feature_dim, cfg.d_hidden, rng, groups)
        self.stack = STStack(cfg, rng, causal, dropout_rng, groups)

    def __call__(self, x) -> Tensor:
        h = ops.gelu(self.proj(x))
        if self.use_position_embedding:
            h = ops.add(h, sinusoidal_embedding(h.shape[-2], h.shape[-1])[None])
        return self.stack(h)


def probability_fusion(p_whether, p_when, p_what) -> Tensor:
    """Per-step weights over ``C + 1`` pathways.

    Channel 0 is no-interaction with weight ``1 - p_whether * p_when[t]``;
    channel ``c`` gets ``p_whether * p_when[t] * p_what[t, c]``. Rows sum to 1
    whenever the ``p_what`` rows do. Shapes: ``(B,)``, ``(B, T)``,
    ``(B, T, C)`` -> ``(B, T, C + 1)``.
    """
    p_whether, p_when, p_what = as_tensor(p_whether), as_tensor(p_when), as_tensor(p_what)
    b, steps = p_when.shape
    active = ops.mul(ops.reshape(p_whether, (b, 1)), p_when)  # (B, T)
    active3 = ops.reshape(active, (b, steps, 1))
    idle = ops.add(ops.scale(active3, -1.0), 1.0)
    return ops.concat([idle, ops.mul(active3, p_what)], axis=-1)


TASK_STACKS = ("whether", "when", "what")


class IDENet(Module):
    """The full network. Inputs are ``(B, 2, T, F)`` prepared features whose
    first two channels are the normalized positions.

    The whether/when/what stacks share one input and are evaluated as one
    grouped stack (group order as in ``TASK_STACKS``); the ``C + 1``
    trajectory extractors likewise (group 0 is the no-interaction pathway).
    """

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        self.dropout_rng = np.random.default_rng([seed, 1])
        drng = self.dropout_rng
        d = cfg.d_hidden
        self.shared = Extractor(cfg, rng, dropout_rng=drng)
        self.task_stacks = STStack(cfg, rng, dropout_rng=drng, groups=len(TASK_STACKS))
        self.whether_mlp = MLP(d, d, 1, rng)
        self.when_mlp = MLP(d, d, 1, rng)
        self.what_mlp = MLP(d, d, cfg.C, rng)
        self.tp_extractors = Extractor(cfg, rng, causal=True, dropout_rng=drng, groups=cfg.C + 1)
        self.tp_out = MLP(d, d, 2 * cfg.k, rng)

    # -- pieces ----------------------------------------------------------
    def _check_input(self, x) -> Tensor:
        x = as_tensor(x)
        if x.ndim != 4 or x.shape[1] != 2 or x.shape[3] != self.cfg.feature_dim:
            raise ShapeMismatch(f"expected input (B, 2, T, {self.cfg.feature_dim}), got {x.shape}")
        return x

    def extract_features(self, x) -> Tensor:
        return self.shared(self._check_input(x))

    def heads(self, features, tasks: Optional[set] = None):
        """``(p_whether (B,), p_when (B, T), p_what (B, T, C))``; a head left
        out of ``tasks`` returns None."""
        tasks = set(TASK_STACKS) if tasks is None else tasks
        b, _, steps, d = features.shape
        stacked = self.task_stacks(ops.stack([features] * len(TASK_STACKS), axis=0))
        p_whether = p_when = p_what = None
        if "whether" in tasks:
            pooled = ops.mean(stacked[0], axis=(1, 2))  # (B, d)
            p_whether = ops.sigmoid(ops.reshape(self.whether_mlp(pooled), (b,)))
        if "when" in tasks:
            per_step = ops.mean(stacked[1], axis=1)  # (B, T, d)
            p_when = ops.sigmoid(ops.reshape(self.when_mlp(per_step), (b, steps)))
        if "what" in tasks:
            per_step = ops.mean(stacked[2], axis=1)
            p_what = ops.softmax(self.what_mlp(per_step), axis=-1)
        return p_whether, p_when, p_what

    def trajectory_predictor(self, x, w) -> Tensor:
        """Predicted future positions ``(B, T-k, 2, k, 2)`` from the
        ``w``-weighted sum of the ``C + 1`` causal extractors."""
        x = self._check_input(x)
        w = as_tensor(w)
        b, _, steps, _ = x.shape
        k = self.cfg.k
        groups = self.cfg.C + 1
        if steps <= k:
            raise ShapeMismatch(f"trajectory prediction needs T > k ({steps} <= {k})")
        if w.shape != (b, steps, groups):
            raise ShapeMismatch(f"fusion weights {w.shape}, expected {(b, steps, groups)}")
        streams = self.tp_extractors(Tensor(np.broadcast_to(x.data, (groups, *x.shape))))  # (G, B, 2, T, d)
        gate = ops.reshape(ops.transpose(w, (2, 0, 1)), (groups, b, 1, steps, 1))
        fused = ops.sum(ops.mul(streams, gate), axis=0)  # (B, 2, T, d)
        horizon = steps - k
        head_in = fused[:, :, :horizon]
        offsets = ops.reshape(self.tp_out(head_in), (b, 2, horizon, k, 2))
        pred = ops.add(offsets, x.data[:, :, :horizon, None, :2])
        return ops.transpose(pred, (0, 2, 1, 3, 4))

    def forward(self, x, tasks: Optional[set] = None, detach: frozenset = frozenset()) -> ModelOutput:
        """Full pass. ``tasks`` selects which of whether/when/what/tp run;
        names in ``detach`` feed the fusion block without gradient."""
        tasks = {"whether", "when", "what", "tp"} if tasks is None else set(tasks)
        features = self.extract_features(x)
        p_whether, p_when, p_what = self.heads(features, tasks)
        b, _, steps, _ = features.shape
        traj = fusion = None
        if "tp" in tasks:
            fw = p_whether if p_whether is not None else Tensor(np.ones(b))
            fn = p_when if p_when is not None else Tensor(np.ones((b, steps)))
            ft = p_what if p_what is not None else Tensor(np.full((b, steps, self.cfg.C), 1.0 / self.cfg.C))
            if "whether" in detach:
                fw = fw.detach()
            if "when" in detach:
                fn = fn.detach()
            if "what" in detach:
                ft = ft.detach()
            fusion = probability_fusion(fw, fn, ft)
            traj = self.trajectory_predictor(x, fusion)
        return ModelOutput(p_whether, p_when, p_what, traj, fusion, features)

    __call__ = forward
