"""The six training losses and their weighted total."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .autolabel import NOT_SURE
from .diffcore import ops
from .diffcore.ops import PROB_FLOOR
from .diffcore.tensor import ShapeMismatch, Tensor, as_tensor

TERMS = ("whether", "when", "traj", "prior", "uncertainty", "rotation")


@dataclass
class LossWeights:
    whether: float = 0.233
    when: float = 0.233
    traj: float = 0.007
    prior: float = 0.233
    uncertainty: float = 0.007
    rotation: float = 0.023

    def __post_init__(self):
        for name in TERMS:
            if getattr(self, name) < 0:
                raise ValueError(f"loss weight {name} must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class LossReport:
    terms: dict[str, float]
    total: float
    counts: dict[str, int] = field(default_factory=dict)
    total_tensor: Tensor | None = field(default=None, repr=False)

    def to_json(self) -> dict:
        return {"total": self.total, **{k: self.terms.get(k, 0.0) for k in TERMS}, "counts": dict(self.counts)}


def whether_loss(p_whether, labels) -> Tensor:
    """BCE over samples whose label is 0 or 1; NOT_SURE samples are left out."""
    labels = np.asarray(labels)
    p = as_tensor(p_whether)
    if labels.shape != p.shape:
        raise ShapeMismatch(f"whether labels {labels.shape} vs predictions {p.shape}")
    valid = labels != NOT_SURE
    return ops.bce_masked(p, np.where(valid, labels, 0).astype(float), valid.astype(float))


def when_loss(p_when, per_step, whether_labels) -> Tensor:
    """Per-step BCE averaged over every step of every labeled sample."""
    p = as_tensor(p_when)
    per_step = np.asarray(per_step, dtype=float)
    whether_labels = np.asarray(whether_labels)
    if per_step.shape != p.shape:
        raise ShapeMismatch(f"per-step labels {per_step.shape} vs predictions {p.shape}")
    mask = np.broadcast_to((whether_labels != NOT_SURE)[..., None], p.shape).astype(float)
    return ops.bce_masked(p, per_step, mask)


def future_targets(positions: np.ndarray, k: int) -> np.ndarray:
    """From ``(B, 2, T, 2)`` positions build ``(B, T-k, 2, k, 2)`` with entry
    ``[b, t, a, j]`` = position of agent ``a`` at step ``t + 1 + j``."""
    positions = np.asarray(positions)
    steps = positions.shape[2]
    if steps <= k:
        raise ShapeMismatch(f"need T > k, got T={steps}, k={k}")
    idx = np.arange(steps - k)[:, None] + 1 + np.arange(k)[None, :]  # (T-k, k)
    fut = positions[:, :, idx]  # (B, 2, T-k, k, 2)
    return fut.transpose(0, 2, 1, 3, 4)


def tp_loss(traj_pred, positions, k: int) -> Tensor:
    pred = as_tensor(traj_pred)
    target = future_targets(positions, k)
    if target.shape != pred.shape:
        raise ShapeMismatch(f"trajectory prediction {pred.shape} vs target {target.shape}")
    return ops.mse(pred, target)


def prior_loss(p_what) -> Tensor:
    """``sum_c pbar_c log pbar_c`` with ``pbar`` the type distribution
    averaged over every sample and step (the negative entropy of the mean)."""
    p = as_tensor(p_what)
    c = p.shape[-1]
    pbar = ops.mean(ops.reshape(p, (-1, c)), axis=0)
    return ops.scale(ops.entropy(pbar, axis=-1, floor=PROB_FLOOR), -1.0)


def uncertainty_loss(p_what) -> Tensor:
    """Mean per-step entropy of the type distribution."""
    p = as_tensor(p_what)
    return ops.mean(ops.entropy(p, axis=-1, floor=PROB_FLOOR))


def rotation_invariant_loss(p_rot1, p_rot2) -> Tensor:
    """Mean squared difference between type probabilities of the same
    samples under two rotations."""
    p1, p2 = as_tensor(p_rot1), as_tensor(p_rot2)
    if p1.shape != p2.shape:
        raise ShapeMismatch(f"rotation variants differ in shape: {p1.shape} vs {p2.shape}")
    return ops.mse(p1, p2)


def total_loss(parts: dict, weights: LossWeights, counts: dict | None = None) -> LossReport:
    """Weighted sum of whichever terms are present in ``parts`` (missing
    terms count as zero). Terms with weight zero are not added to the graph."""
    unknown = set(parts) - set(TERMS)
    if unknown:
        raise KeyError(f"unknown loss terms {sorted(unknown)}")
    total = None
    values = {}
    for name in TERMS:
        if name not in parts:
            values[name] = 0.0
            continue
        term = as_tensor(parts[name])
        values[name] = float(term.data)
        w = getattr(weights, name)
        if w == 0.0:
            continue
        weighted = ops.scale(term, w)
        total = weighted if total is None else ops.add(total, weighted)
    if total is None:
        total = Tensor(np.asarray(0.0))
    return LossReport(values, float(total.data), dict(counts or {}), total)
