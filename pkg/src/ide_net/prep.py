"""Coordinate invariance (re-centering), rotation normalization (one global
scale) and orientation invariance (random rotations) for model inputs."""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .trajio import JointSample


class PrepError(ValueError):
    pass


class EmptyInput(PrepError):
    pass


class DegenerateScale(PrepError):
    pass


class SingleRotationWarning(UserWarning):
    """Fewer than two rotations per sample: the rotation-consistency loss has
    no pair to compare."""


@dataclass(frozen=True)
class NormStats:
    scale: float

    def __post_init__(self):
        if not (np.isfinite(self.scale) and self.scale > 0):
            raise DegenerateScale(f"scale must be positive and finite, got {self.scale}")

    def to_json(self) -> dict:
        return {"scale": float(self.scale)}

    @classmethod
    def from_json(cls, data: dict) -> "NormStats":
        return cls(float(data["scale"]))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_json()) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "NormStats":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass
class PreparedSample:
    features: np.ndarray  # (2, T, F); channels 0-1 are positions
    rotation_angle: float
    source_id: str

    @property
    def positions(self) -> np.ndarray:
        return self.features[..., :2]


def _map_tracks(sample: JointSample, fn_xy, fn_vel) -> JointSample:
    a, b = sample.track_a, sample.track_b
    return sample.with_tracks(a.replace(fn_xy(a.xy), fn_vel(a.vel)), b.replace(fn_xy(b.xy), fn_vel(b.vel)))


def center_coords(sample: JointSample) -> JointSample:
    """Translate so the midpoint of the two frame-0 positions is the origin."""
    mid = 0.5 * (sample.track_a.xy[0] + sample.track_b.xy[0])
    return _map_tracks(sample, lambda xy: xy - mid, lambda v: v)


def fit_norm(train_samples: Sequence[JointSample]) -> NormStats:
    """``scale = sqrt(mean((x^2 + y^2) / 2))`` over every position of every
    (already centered) training sample."""
    if len(train_samples) == 0:
        raise EmptyInput("fit_norm needs at least one sample")
    total, count = 0.0, 0
    for s in train_samples:
        pos = s.positions()
        total += float((pos * pos).sum()) / 2.0
        count += pos.shape[0] * pos.shape[1]
    scale = float(np.sqrt(total / count))
    if scale == 0.0:
        raise DegenerateScale("all training positions are at the origin")
    return NormStats(scale)


def apply_norm(sample: JointSample, stats: NormStats) -> JointSample:
    """Divide positions (and velocities, to keep them consistent) by ``stats.scale``."""
    return _map_tracks(sample, lambda xy: xy / stats.scale, lambda v: v / stats.scale)


def rotation_matrix(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def rotate(sample: JointSample, theta: float) -> JointSample:
    rot = rotation_matrix(theta)
    return _map_tracks(sample, lambda xy: xy @ rot.T, lambda v: v @ rot.T)


def draw_angles(rng: np.random.Generator, n: int, num_rotations: int) -> np.ndarray:
    return rng.uniform(0.0, 2 * np.pi, size=(n, num_rotations))


def rotate_positions(pos: np.ndarray, angles: np.ndarray) -> np.ndarray:
    """Rotate ``pos`` of shape ``(N, ..., 2)`` by one angle per sample."""
    c, s = np.cos(angles), np.sin(angles)
    rot = np.stack([np.stack([c, -s], -1), np.stack([s, c], -1)], -2)  # (N, 2, 2)
    extra = (1,) * (pos.ndim - 2)
    return np.einsum("n...j,n...ij->n...i", pos, rot.reshape(len(angles), *extra, 2, 2))


def build_features(pos: np.ndarray, frame_period: float = 0.1, include_velocity: bool = False) -> np.ndarray:
    """Model features from positions ``(..., T, 2)``: the positions, plus
    finite-difference velocities when requested."""
    if not include_velocity:
        return np.ascontiguousarray(pos)
    vel = np.gradient(pos, frame_period, axis=-2)
    return np.concatenate([pos, vel], axis=-1)


def prepare_batch(samples: Sequence[JointSample], stats: NormStats, rng_seed: int, num_rotations: int = 2,
                  include_velocity: bool = False) -> list[tuple[PreparedSample, ...]]:
    """Normalize centered samples and emit ``num_rotations`` randomly rotated
    variants of each, angles drawn from U(0, 2*pi)."""
    if num_rotations < 2:
        warnings.warn("num_rotations < 2 leaves the rotation-consistency loss undefined",
                      SingleRotationWarning, stacklevel=2)
    if num_rotations < 1:
        raise PrepError("num_rotations must be >= 1")
    rng = np.random.default_rng(rng_seed)
    angles = draw_angles(rng, len(samples), num_rotations)
    out = []
    for sample, row in zip(samples, angles):
        pos = sample.positions() / stats.scale
        variants = []
        for theta in row:
            rotated = pos @ rotation_matrix(theta).T
            variants.append(PreparedSample(build_features(rotated, sample.frame_period, include_velocity),
                                           float(theta), sample.sample_id))
        out.append(tuple(variants))
    return out
