"""Structural checks shared by the model tests and the acceptance run."""
from __future__ import annotations

import numpy as np

from ide_net.diffcore import Tensor, check_gradients, ops
from ide_net.losses import prior_loss, rotation_invariant_loss, tp_loss, uncertainty_loss, when_loss, whether_loss
from ide_net.diffcore import Linear
from ide_net.model import IDENet, ModelConfig, STBlock


def tiny_model(seed: int = 0, **overrides) -> IDENet:
    cfg = ModelConfig.desk(16, n_heads=2, dropout=0.0, **overrides)
    return IDENet(cfg, seed=seed).eval()


def permutation_error(model: IDENet, x: np.ndarray) -> float:
    """Largest deviation from the agent-swap contract on one input."""
    out = model(Tensor(x))
    swapped = model(Tensor(x[:, ::-1].copy()))
    errs = [
        np.abs(out.features.data[:, ::-1] - swapped.features.data).max(),
        np.abs(out.traj_pred.data[:, :, ::-1] - swapped.traj_pred.data).max(),
        np.abs(out.p_whether.data - swapped.p_whether.data).max(),
        np.abs(out.p_when.data - swapped.p_when.data).max(),
        np.abs(out.p_what.data - swapped.p_what.data).max(),
    ]
    return float(max(errs))


def causality_error(model: IDENet, x: np.ndarray, w: np.ndarray, t: int, rng: np.random.Generator) -> float:
    """Change in trajectory predictions for steps <= t after perturbing every
    input frame after t (fusion weights held fixed)."""
    base = model.trajectory_predictor(Tensor(x), Tensor(w)).data
    y = x.copy()
    y[:, :, t + 1 :] += rng.normal(scale=3.0, size=y[:, :, t + 1 :].shape)
    pert = model.trajectory_predictor(Tensor(y), Tensor(w)).data
    upto = min(t + 1, base.shape[1])
    return float(np.abs(base[:, :upto] - pert[:, :upto]).max())


def random_fusion(rng: np.random.Generator, b: int, steps: int, groups: int) -> np.ndarray:
    w = rng.uniform(size=(b, steps, groups))
    return w / w.sum(-1, keepdims=True)


def stb_gradient_error(seed: int = 0, steps: int = 12, d: int = 16) -> float:
    rng = np.random.default_rng(seed)
    block = STBlock(d, 2, rng)
    x = Tensor(rng.normal(size=(2, 2, steps, d)))
    target = rng.normal(size=(2, 2, steps, d))
    params = [x] + [p for _, p in block.named_parameters()]
    return check_gradients(lambda *_: ops.mse(block(x), target), params, max_coords=12, seed=seed)


LOSS_TERMS = ("whether", "when", "traj", "prior", "uncertainty", "rotation")


def stb_loss_graph(term: str, seed: int = 0, steps: int = 12, d: int = 16, k: int = 5):
    """``(f, params)``: one ST-B followed by a small readout into one loss
    term. Probabilities come from per-step agent-mean features."""
    rng = np.random.default_rng(seed)
    block = STBlock(d, 2, rng)
    proj = Linear(2, d, rng)
    read = Linear(d, 3, rng)
    traj_out = Linear(d, 2 * k, rng)
    x1 = rng.normal(size=(2, 2, steps, 2))
    theta = rng.uniform(0, 2 * np.pi)
    rot = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    x2 = x1 @ rot.T
    whether = np.array([1, 0])
    per_step = np.zeros((2, steps))
    per_step[0, 3:8] = 1

    def features(x):
        return block(ops.gelu(proj(Tensor(x))))  # (B, 2, T, d)

    def p_what(x):
        return ops.softmax(read(ops.mean(features(x), axis=1)), axis=-1)

    def f(*_):
        if term == "whether":
            pooled = ops.mean(features(x1), axis=(1, 2))
            return whether_loss(ops.sigmoid(read(pooled)[:, 0]), whether)
        if term == "when":
            return when_loss(ops.sigmoid(read(ops.mean(features(x1), axis=1))[:, :, 0]), per_step, whether)
        if term == "traj":
            h = features(x1)[:, :, : steps - k]
            offsets = ops.reshape(traj_out(h), (2, 2, steps - k, k, 2))
            pred = ops.transpose(ops.add(offsets, x1[:, :, : steps - k, None, :]), (0, 2, 1, 3, 4))
            return tp_loss(pred, x1, k)
        if term == "prior":
            return prior_loss(p_what(x1))
        if term == "uncertainty":
            return uncertainty_loss(p_what(x1))
        return rotation_invariant_loss(p_what(x1), p_what(x2))

    params = [p for m in (block, proj, read, traj_out) for _, p in m.named_parameters()]
    return f, params


def stb_loss_gradient_error(term: str, seed: int = 0, max_coords: int = 6) -> float:
    f, params = stb_loss_graph(term, seed)
    return check_gradients(f, params, max_coords=max_coords, seed=seed)
