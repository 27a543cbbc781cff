"""Multi-task training loop, batched prediction and checkpoint files."""
from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .autolabel import NOT_SURE
from .diffcore import checkpoint
from .diffcore.optim import OptimizerState, adamw_step
from .evalkit import interval_from_probs, iou06_accuracy, whether_accuracy
from .losses import (
    LossWeights,
    prior_loss,
    rotation_invariant_loss,
    total_loss,
    tp_loss,
    uncertainty_loss,
    when_loss,
    whether_loss,
)
from .model import IDENet, ModelConfig
from .prep import NormStats, build_features, center_coords, fit_norm, rotate_positions
from .trajio import JointSample

TASKS = ("whether", "when", "what", "tp")


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 250
    batch_size: int = 32
    lr: float = 3e-6
    weight_decay: float = 1e-7
    warmup_ratio: float = 0.01
    clip_norm: float = 10.0
    seed: int = 0
    val_fraction: float = 0.1
    tasks: tuple[str, ...] = TASKS
    weights: LossWeights = field(default_factory=LossWeights)
    include_velocity: bool = False
    gate_by_whether: bool = True

    def __post_init__(self):
        if isinstance(self.weights, dict):
            self.weights = LossWeights(**self.weights)
        self.tasks = tuple(self.tasks)
        bad = set(self.tasks) - set(TASKS)
        if bad:
            raise ValueError(f"unknown tasks {sorted(bad)}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError("val_fraction must lie in [0, 1)")

    def effective_weights(self) -> LossWeights:
        """Loss weights with the terms of switched-off tasks zeroed."""
        w = LossWeights(**asdict(self.weights))
        if "whether" not in self.tasks:
            w.whether = 0.0
        if "when" not in self.tasks:
            w.when = 0.0
        if "tp" not in self.tasks:
            w.traj = 0.0
        if "what" not in self.tasks:
            w.prior = w.uncertainty = w.rotation = 0.0
        return w

    def to_dict(self) -> dict:
        out = asdict(self)
        out["tasks"] = list(self.tasks)
        return out


@dataclass
class Batch:
    positions: np.ndarray  # (B, 2, T, 2) centered and normalized
    whether: np.ndarray  # (B,)
    per_step: np.ndarray  # (B, T)
    ids: list[str]


@dataclass
class TrainResult:
    model: IDENet
    stats: NormStats
    best_epoch: int
    history: list[dict]
    train_ids: list[str]
    val_ids: list[str]


# -- data --------------------------------------------------------------------
def split_train_val(samples: Sequence[JointSample], val_fraction: float, seed: int):
    order = np.random.default_rng([seed, 17]).permutation(len(samples))
    n_val = int(round(val_fraction * len(samples)))
    if len(samples) - n_val < 1:
        raise ValueError("no samples left for training")
    val_idx = set(order[:n_val].tolist())
    train = [s for i, s in enumerate(samples) if i not in val_idx]
    val = [s for i, s in enumerate(samples) if i in val_idx]
    return train, val


def normalized_positions(samples: Sequence[JointSample], stats: NormStats) -> list[np.ndarray]:
    return [center_coords(s).positions() / stats.scale for s in samples]


def _label_arrays(sample: JointSample) -> tuple[int, np.ndarray]:
    if sample.labels is None:
        return NOT_SURE, np.zeros(sample.T)
    return int(sample.labels.whether), np.asarray(sample.labels.per_step, dtype=float)


def make_batches(samples: Sequence[JointSample], positions: Sequence[np.ndarray], batch_size: int,
                 rng: Optional[np.random.Generator]) -> list[Batch]:
    """Bucket by T (no padding), split each bucket into near-equal batches
    and, when ``rng`` is given, shuffle both samples and batch order."""
    buckets: dict[int, list[int]] = {}
    for i, s in enumerate(samples):
        buckets.setdefault(s.T, []).append(i)
    batches = []
    for steps in sorted(buckets):
        idx = np.asarray(buckets[steps])
        if rng is not None:
            idx = rng.permutation(idx)
        n_chunks = int(np.ceil(len(idx) / batch_size))
        for chunk in np.array_split(idx, n_chunks):
            labels = [_label_arrays(samples[i]) for i in chunk]
            batches.append(Batch(
                np.stack([positions[i] for i in chunk]),
                np.array([w for w, _ in labels]),
                np.stack([p for _, p in labels]),
                [samples[i].sample_id for i in chunk],
            ))
    if rng is not None:
        batches = [batches[i] for i in rng.permutation(len(batches))]
    return batches


def _features(pos: np.ndarray, angles: np.ndarray, cfg: TrainConfig, frame_period: float = 0.1) -> np.ndarray:
    return build_features(rotate_positions(pos, angles), frame_period, cfg.include_velocity)


# -- one step ----------------------------------------------------------------
def batch_loss(model: IDENet, batch: Batch, cfg: TrainConfig, rng: np.random.Generator):
    """Forward both rotation variants of ``batch`` and assemble the losses.

    The first variant runs every enabled task; the second only feeds the
    rotation-consistency term, so only its type head is evaluated.
    """
    weights = cfg.effective_weights()
    angles = rng.uniform(0.0, 2 * np.pi, size=(len(batch.ids), 2))
    x1 = _features(batch.positions, angles[:, 0], cfg)
    out = model(x1, tasks=set(cfg.tasks))
    parts = {}
    counts = {"samples": len(batch.ids), "labeled": int(np.sum(batch.whether != NOT_SURE))}
    if out.p_whether is not None:
        parts["whether"] = whether_loss(out.p_whether, batch.whether)
    if out.p_when is not None:
        parts["when"] = when_loss(out.p_when, batch.per_step, batch.whether)
    if out.traj_pred is not None:
        parts["traj"] = tp_loss(out.traj_pred, x1[..., :2], model.cfg.k)
    if out.p_what is not None:
        parts["prior"] = prior_loss(out.p_what)
        parts["uncertainty"] = uncertainty_loss(out.p_what)
        if weights.rotation > 0:
            x2 = _features(batch.positions, angles[:, 1], cfg)
            out2 = model(x2, tasks={"what"})
            parts["rotation"] = rotation_invariant_loss(out.p_what, out2.p_what)
    return total_loss(parts, weights, counts), out


# -- prediction --------------------------------------------------------------
def predict(model: IDENet, stats: NormStats, samples: Sequence[JointSample], angles=None, batch_size: int = 64,
            include_velocity: bool = False, tasks=("whether", "when", "what")) -> dict:
    """Evaluation-mode outputs per sample (lists aligned with ``samples``).
    ``angles`` (one per sample) rotates the inputs; default is no rotation."""
    was_training = model.training
    model.eval()
    try:
        positions = normalized_positions(samples, stats)
        angles = np.zeros(len(samples)) if angles is None else np.asarray(angles, dtype=float)
        out = {"p_whether": [None] * len(samples), "p_when": [None] * len(samples),
               "p_what": [None] * len(samples), "traj_pred": [None] * len(samples)}
        order = {}
        for i, s in enumerate(samples):
            order.setdefault(s.T, []).append(i)
        for steps, idx in order.items():
            for start in range(0, len(idx), batch_size):
                chunk = idx[start : start + batch_size]
                pos = np.stack([positions[i] for i in chunk])
                x = build_features(rotate_positions(pos, angles[chunk]), samples[chunk[0]].frame_period,
                                   include_velocity)
                res = model(x, tasks=set(tasks))
                for j, i in enumerate(chunk):
                    for key in out:
                        val = getattr(res, key)
                        if val is not None:
                            out[key][i] = val.data[j].copy()
        return out
    finally:
        model.train(was_training)


def predicted_intervals(pred: dict, gate_by_whether: bool = True) -> list:
    """Longest above-threshold run of ``p_when``; when gated, samples with
    ``p_whether < 0.5`` get no interval."""
    out = []
    for pw, pwhen in zip(pred["p_whether"], pred["p_when"]):
        if pwhen is None or (gate_by_whether and pw is not None and pw < 0.5):
            out.append(None)
        else:
            out.append(interval_from_probs(pwhen))
    return out


def supervised_metrics(pred: dict, samples: Sequence[JointSample], gate_by_whether: bool = True) -> dict:
    labels = [s.labels for s in samples]
    metrics = {}
    if pred["p_whether"][0] is not None:
        try:
            metrics["whether_accuracy"] = whether_accuracy([float(p) for p in pred["p_whether"]],
                                                           [lab.whether for lab in labels])
        except ValueError:
            pass
    if pred["p_when"][0] is not None:
        try:
            metrics["iou06_accuracy"] = iou06_accuracy(
                predicted_intervals(pred, gate_by_whether), [lab.window for lab in labels],
                [lab.whether for lab in labels])
        except ValueError:
            pass
    return metrics


# -- training ----------------------------------------------------------------
def train(samples: Sequence[JointSample], model_cfg: ModelConfig, cfg: TrainConfig,
          log: Optional[Callable[[dict], None]] = None, log_path=None) -> TrainResult:
    """Train on labeled samples (NOT_SURE labels only feed the unsupervised
    terms). Returns the model restored to its best validation epoch."""
    train_set, val_set = split_train_val(list(samples), cfg.val_fraction, cfg.seed)
    stats = fit_norm([center_coords(s) for s in train_set])
    train_pos = normalized_positions(train_set, stats)
    val_pos = normalized_positions(val_set, stats)
    model = IDENet(model_cfg, seed=cfg.seed)
    params = model.parameters()
    steps_per_epoch = len(make_batches(train_set, train_pos, cfg.batch_size, None))
    opt = OptimizerState(lr=cfg.lr, weight_decay=cfg.weight_decay, warmup_ratio=cfg.warmup_ratio,
                         clip_norm=cfg.clip_norm, total_steps=max(1, steps_per_epoch * cfg.epochs))
    rng = np.random.default_rng([cfg.seed, 23])
    history: list[dict] = []
    best = (-np.inf, 0, model.state_dict())
    sink = open(log_path, "w", encoding="utf-8") if log_path is not None else None
    try:
        for epoch in range(1, cfg.epochs + 1):
            t0 = time.perf_counter()
            model.train()
            sums: dict[str, float] = {}
            n_batches = 0
            for b, batch in enumerate(make_batches(train_set, train_pos, cfg.batch_size, rng)):
                for p in params:
                    p.grad = None
                report, _ = batch_loss(model, batch, cfg, rng)
                if not np.isfinite(report.total):
                    raise TrainingDiverged(f"non-finite loss at epoch {epoch}, batch {b}: {report.to_json()}")
                report.total_tensor.backward()
                grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]
                norm = adamw_step(params, grads, opt)
                if not np.isfinite(norm):
                    raise TrainingDiverged(f"non-finite gradient norm at epoch {epoch}, batch {b}")
                for k, v in report.to_json().items():
                    if k != "counts":
                        sums[k] = sums.get(k, 0.0) + v
                n_batches += 1
            entry = {"epoch": epoch, "lr": opt.effective_lr(),
                     "train": {k: v / max(1, n_batches) for k, v in sums.items()}}
            if val_set:
                entry["val"] = _validate(model, val_set, val_pos, stats, cfg)
                score = entry["val"]["score"]
            else:
                score = -entry["train"]["total"]
            entry["seconds"] = time.perf_counter() - t0
            history.append(entry)
            if score > best[0]:
                best = (score, epoch, model.state_dict())
            if sink is not None:
                sink.write(json.dumps(entry) + "\n")
                sink.flush()
            if log is not None:
                log(entry)
    finally:
        if sink is not None:
            sink.close()
    model.load_state_dict(best[2])
    model.eval()
    return TrainResult(model, stats, best[1], history, [s.sample_id for s in train_set],
                       [s.sample_id for s in val_set])


def _validate(model: IDENet, val_set, val_pos, stats: NormStats, cfg: TrainConfig) -> dict:
    """Validation loss (fixed seeded rotations, dropout off) and, when the
    supervised heads are on, whether/IoU accuracy. ``score`` ranks epochs."""
    model.eval()
    rng = np.random.default_rng([cfg.seed, 29])
    total = 0.0
    n = 0
    for batch in make_batches(val_set, val_pos, cfg.batch_size, None):
        report, _ = batch_loss(model, batch, cfg, rng)
        total += report.total * len(batch.ids)
        n += len(batch.ids)
    out = {"total": total / max(1, n)}
    if "whether" in cfg.tasks or "when" in cfg.tasks:
        pred = predict(model, stats, val_set, include_velocity=cfg.include_velocity,
                       tasks=[t for t in ("whether", "when") if t in cfg.tasks])
        out.update(supervised_metrics(pred, val_set, cfg.gate_by_whether))
    supervised = [out[k] for k in ("whether_accuracy", "iou06_accuracy") if k in out]
    out["score"] = float(sum(supervised)) - 1e-3 * out["total"] if supervised else -out["total"]
    model.train()
    return out


# -- checkpoints -------------------------------------------------------------
def save_checkpoint(directory, model: IDENet, stats: NormStats, train_cfg: Optional[TrainConfig] = None,
                    extra: Optional[dict] = None):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    checkpoint.save(directory / "weights.json", model.state_dict())
    (directory / "model_config.json").write_text(json.dumps(model.cfg.to_dict(), indent=2) + "\n", encoding="utf-8")
    stats.save(directory / "norm.json")
    if train_cfg is not None:
        (directory / "train_config.json").write_text(json.dumps(train_cfg.to_dict(), indent=2) + "\n",
                                                     encoding="utf-8")
    if extra:
        (directory / "run.json").write_text(json.dumps(extra, indent=2) + "\n", encoding="utf-8")


def load_checkpoint(directory) -> tuple[IDENet, NormStats, dict]:
    directory = Path(directory)
    if not (directory / "weights.json").exists():
        raise FileNotFoundError(f"no checkpoint in {directory}")
    cfg = ModelConfig(**json.loads((directory / "model_config.json").read_text(encoding="utf-8")))
    model = IDENet(cfg)
    state, _ = checkpoint.load(directory / "weights.json")
    model.load_state_dict(state)
    model.eval()
    stats = NormStats.load(directory / "norm.json")
    train_cfg_path = directory / "train_config.json"
    train_cfg = json.loads(train_cfg_path.read_text(encoding="utf-8")) if train_cfg_path.exists() else {}
    return model, stats, train_cfg
