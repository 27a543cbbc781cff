"""Evaluation metrics: interval accuracy, type statistics and the
relative distance/speed density."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .autolabel import NOT_SURE

TYPE_SYMBOLS = ("N", "Y", "C")


class EmptyInput(ValueError):
    pass


@dataclass(frozen=True)
class IntervalPrediction:
    start: int
    end: int

    def __post_init__(self):
        if self.start > self.end:
            raise ValueError(f"interval start {self.start} after end {self.end}")

    def __len__(self):
        return self.end - self.start + 1


def _as_interval(x) -> Optional[IntervalPrediction]:
    if x is None or isinstance(x, IntervalPrediction):
        return x
    return IntervalPrediction(int(x[0]), int(x[1]))


def interval_from_probs(p_when: Sequence[float], threshold: float = 0.5) -> Optional[IntervalPrediction]:
    """Longest run of steps with ``p >= threshold``; earliest run on ties."""
    above = np.concatenate([[False], np.asarray(p_when) >= threshold, [False]])
    edges = np.diff(above.astype(np.int8))
    starts = np.nonzero(edges == 1)[0]
    ends = np.nonzero(edges == -1)[0] - 1
    if len(starts) == 0:
        return None
    best = int(np.argmax(ends - starts))  # argmax returns the first maximum
    return IntervalPrediction(int(starts[best]), int(ends[best]))


def iou(pred, gt) -> float:
    """Intersection over union of inclusive integer frame ranges."""
    pred, gt = _as_interval(pred), _as_interval(gt)
    inter = max(0, min(pred.end, gt.end) - max(pred.start, gt.start) + 1)
    union = len(pred) + len(gt) - inter
    return inter / union


def iou06_accuracy(preds: Sequence, gts: Sequence, whether: Optional[Sequence[int]] = None,
                   threshold: float = 0.6) -> float:
    """Fraction of samples predicted correctly. A sample with a ground-truth
    window counts when IoU > ``threshold``; one without (whether 0) counts
    when no interval is predicted. NOT_SURE samples are skipped."""
    if len(preds) != len(gts):
        raise ValueError("predictions and ground truth differ in length")
    if whether is None:
        whether = [0 if g is None else 1 for g in gts]
    hits = total = 0
    for p, g, w in zip(preds, gts, whether):
        if w == NOT_SURE:
            continue
        total += 1
        p, g = _as_interval(p), _as_interval(g)
        if g is None:
            hits += p is None
        elif p is not None and iou(p, g) > threshold:
            hits += 1
    if total == 0:
        raise EmptyInput("no labeled samples to score")
    return hits / total


def whether_accuracy(p_whether: Sequence[float], labels: Sequence[int], threshold: float = 0.5) -> float:
    p = np.asarray(p_whether)
    labels = np.asarray(labels)
    valid = labels != NOT_SURE
    if not valid.any():
        raise EmptyInput("no labeled samples to score")
    return float(np.mean((p[valid] >= threshold).astype(int) == labels[valid]))


def _window_mask(T: int, window) -> np.ndarray:
    mask = np.zeros(T, dtype=bool)
    if window is not None:
        w = _as_interval(window)
        mask[w.start : w.end + 1] = True
    return mask


def in_window_rows(p_what: Sequence[np.ndarray], windows: Sequence) -> np.ndarray:
    """Stack the ``p_what`` rows of all steps inside the given windows."""
    rows = [np.asarray(p)[_window_mask(len(p), w)] for p, w in zip(p_what, windows)]
    rows = [r for r in rows if len(r)]
    if not rows:
        return np.zeros((0, np.asarray(p_what[0]).shape[-1] if len(p_what) else 0))
    return np.concatenate(rows)


def type_ratio(p_what: Sequence[np.ndarray], windows: Optional[Sequence] = None) -> np.ndarray:
    """Per type, the share of in-window steps whose argmax is that type.
    Without ``windows`` every step counts. All zeros when no step qualifies."""
    if windows is None:
        rows = np.concatenate([np.asarray(p).reshape(-1, np.asarray(p).shape[-1]) for p in p_what])
    else:
        rows = in_window_rows(p_what, windows)
    c = rows.shape[-1] if rows.ndim == 2 and rows.shape[-1] else np.asarray(p_what[0]).shape[-1]
    if len(rows) == 0:
        return np.zeros(c)
    return np.bincount(np.argmax(rows, axis=-1), minlength=c) / len(rows)


def dominance_ratio(p_what: Sequence[np.ndarray], windows: Sequence, conf: float = 0.9) -> float:
    """Share of in-window steps whose top type probability exceeds ``conf``."""
    rows = in_window_rows(p_what, windows)
    if len(rows) == 0:
        raise EmptyInput("no in-window steps")
    return float(np.mean(rows.max(axis=-1) > conf))


def pattern_sequence(p_what: np.ndarray, window, symbols: Sequence[str] = TYPE_SYMBOLS) -> list[str]:
    """Per-step argmax types inside ``window`` with adjacent repeats collapsed."""
    w = _as_interval(window)
    arg = np.argmax(np.asarray(p_what)[w.start : w.end + 1], axis=-1)
    out: list[str] = []
    for a in arg:
        sym = symbols[a] if a < len(symbols) else str(int(a))
        if not out or out[-1] != sym:
            out.append(sym)
    return out


def pattern_histogram(p_what: Sequence[np.ndarray], windows: Sequence) -> dict[str, int]:
    hist: dict[str, int] = {}
    for p, w in zip(p_what, windows):
        if w is None:
            continue
        key = "-".join(pattern_sequence(p, w))
        hist[key] = hist.get(key, 0) + 1
    return dict(sorted(hist.items(), key=lambda kv: (-kv[1], kv[0])))


def relative_features(sample) -> np.ndarray:
    """``(T, 2)``: inter-agent distance and magnitude of velocity difference."""
    pos = sample.positions()
    vel = sample.velocities()
    dist = np.hypot(*(pos[0] - pos[1]).T)
    dv = np.hypot(*(vel[0] - vel[1]).T)
    return np.stack([dist, dv], axis=-1)


def silverman_bandwidth(points: np.ndarray) -> np.ndarray:
    """Per-axis ``sigma * n^(-1/6)`` (the two-dimensional Silverman rule).
    A zero-spread axis falls back to 1."""
    points = np.atleast_2d(points)
    n = len(points)
    sigma = points.std(axis=0, ddof=1) if n > 1 else np.ones(points.shape[1])
    sigma = np.where(sigma > 0, sigma, 1.0)
    return sigma * n ** (-1.0 / 6.0)


def kde_2d(points, bandwidth=None, grid=None, grid_size: int = 64, extent: float = 5.0):
    """Product-Gaussian KDE. ``grid`` is ``(xs, ys)``; by default it spans
    the data range widened by ``extent`` bandwidths. Returns
    ``(xs, ys, density)`` with ``density[i, j]`` at ``(xs[i], ys[j])``."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if len(points) == 0:
        raise EmptyInput("kde_2d needs at least one point")
    h = silverman_bandwidth(points) if bandwidth is None else np.asarray(bandwidth, dtype=np.float64)
    if np.any(h <= 0):
        raise ValueError("bandwidths must be positive")
    if grid is None:
        lo = points.min(axis=0) - extent * h
        hi = points.max(axis=0) + extent * h
        xs, ys = np.linspace(lo[0], hi[0], grid_size), np.linspace(lo[1], hi[1], grid_size)
    else:
        xs, ys = (np.asarray(g, dtype=np.float64) for g in grid)
    kx = np.exp(-0.5 * ((xs[:, None] - points[None, :, 0]) / h[0]) ** 2)  # (gx, n)
    ky = np.exp(-0.5 * ((ys[:, None] - points[None, :, 1]) / h[1]) ** 2)  # (gy, n)
    density = kx @ ky.T / (len(points) * 2 * np.pi * h[0] * h[1])
    return xs, ys, density


# -- serialization -----------------------------------------------------------
def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, IntervalPrediction):
        return [value.start, value.end]
    return value


def metrics_json(metrics: dict) -> str:
    return json.dumps(_jsonable(metrics), indent=2, sort_keys=True) + "\n"


def kde_grid_csv(xs: np.ndarray, ys: np.ndarray, density: np.ndarray) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["rel_distance", "rel_speed", "density"])
    for i, x in enumerate(xs):
        for j, y in enumerate(ys):
            writer.writerow([f"{x:.9g}", f"{y:.9g}", f"{density[i, j]:.9g}"])
    return buf.getvalue()


def step_assignments_csv(rows: Sequence[dict]) -> str:
    """Rows with keys sample_id, step, p_when, type, conf_0..conf_{C-1}."""
    if not rows:
        return ""
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()
