"""Rule-based whether/when labels for two-vehicle samples.

Two rules are applied. The stop rule looks for one vehicle standing still
while the other passes through the rectangle in front of it. The arrival-gap
rule finds where the two paths cross and compares the constant-speed times
at which each vehicle would reach that point. Window endpoints are frame
indices within the sample (0 .. T-1).
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np

from .trajio import AgentTrack, JointSample

NOT_SURE = -100
TTC_MODES = ("gap", "own_min")


@dataclass(frozen=True)
class RuleConfig:
    stop_positive_s: float = 3.0
    stop_negative_s: float = 1.0
    proximity_m: float = 20.0
    ttc_positive_s: float = 3.0
    ttc_negative_s: float = 8.0
    stop_speed_eps: float = 0.1
    front_zone_length_m: float = 10.0
    front_zone_width_m: float = 4.0
    heading_min_dist_m: float = 0.5
    ttc_mode: str = "gap"

    def __post_init__(self):
        if not self.stop_negative_s < self.stop_positive_s:
            raise ValueError("stop_negative_s must be below stop_positive_s")
        if not self.ttc_positive_s < self.ttc_negative_s:
            raise ValueError("ttc_positive_s must be below ttc_negative_s")
        if self.ttc_mode not in TTC_MODES:
            raise ValueError(f"ttc_mode must be one of {TTC_MODES}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class InteractionLabels:
    whether: int
    window: Optional[tuple[int, int]]
    per_step: np.ndarray

    def __post_init__(self):
        self.per_step = np.asarray(self.per_step, dtype=np.int64)
        if self.whether not in (0, 1, NOT_SURE):
            raise ValueError(f"whether must be 0, 1 or {NOT_SURE}")
        if self.whether == 1:
            if self.window is None:
                raise ValueError("a positive label needs a window")
            s, e = self.window
            if not 0 <= s <= e < len(self.per_step):
                raise ValueError(f"window {self.window} outside 0..{len(self.per_step) - 1}")
            expected = np.zeros(len(self.per_step), dtype=np.int64)
            expected[s : e + 1] = 1
            if not np.array_equal(expected, self.per_step):
                raise ValueError("per_step disagrees with the window")
        elif self.window is not None or self.per_step.any():
            raise ValueError("only positive labels carry a window")

    @classmethod
    def make(cls, whether: int, T: int, window: Optional[tuple[int, int]] = None) -> "InteractionLabels":
        per_step = np.zeros(T, dtype=np.int64)
        if whether == 1:
            per_step[window[0] : window[1] + 1] = 1
        return cls(whether, tuple(int(v) for v in window) if window is not None else None, per_step)

    @property
    def T(self) -> int:
        return len(self.per_step)

    def to_json(self) -> dict:
        start, end = self.window if self.window is not None else (None, None)
        return {"whether": int(self.whether), "start": start, "end": end}

    @classmethod
    def from_json(cls, data: dict, T: int) -> "InteractionLabels":
        window = None if data.get("start") is None else (int(data["start"]), int(data["end"]))
        return cls.make(int(data["whether"]), T, window)

    def dumps(self) -> str:
        return json.dumps(self.to_json())


# -- geometry ----------------------------------------------------------------
def cumulative_arc(xy: np.ndarray) -> np.ndarray:
    seg = np.hypot(*np.diff(xy, axis=0).T)
    return np.concatenate([[0.0], np.cumsum(seg)])


def path_intersection(track_a: AgentTrack, track_b: AgentTrack):
    """First crossing of the two position polylines in order of arc length
    along ``track_a``. Returns ``(point, arc_a, arc_b)`` or None."""
    pa, pb = track_a.xy, track_b.xy
    arc_a, arc_b = cumulative_arc(pa), cumulative_arc(pb)
    a0, da = pa[:-1], np.diff(pa, axis=0)
    b0, db = pb[:-1], np.diff(pb, axis=0)
    len_a = np.hypot(da[:, 0], da[:, 1])
    len_b = np.hypot(db[:, 0], db[:, 1])
    ia = np.nonzero(len_a > 0)[0]
    ib = np.nonzero(len_b > 0)[0]
    if len(ia) == 0 or len(ib) == 0:
        return None

    # Every segment pair at once: a0 + t da = b0 + u db.
    A0, DA = a0[ia][:, None, :], da[ia][:, None, :]
    B0, DB = b0[ib][None, :, :], db[ib][None, :, :]
    diff = B0 - A0
    denom = DA[..., 0] * DB[..., 1] - DA[..., 1] * DB[..., 0]
    scale = len_a[ia][:, None] * len_b[ib][None, :]
    parallel = np.abs(denom) <= 1e-12 * scale
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (diff[..., 0] * DB[..., 1] - diff[..., 1] * DB[..., 0]) / denom
        u = (diff[..., 0] * DA[..., 1] - diff[..., 1] * DA[..., 0]) / denom
    tol = 1e-12
    hit = ~parallel & (t >= -tol) & (t <= 1 + tol) & (u >= -tol) & (u <= 1 + tol)

    candidates = []
    for i, j in zip(*np.nonzero(hit)):
        ti, uj = float(np.clip(t[i, j], 0, 1)), float(np.clip(u[i, j], 0, 1))
        sa, sb = ia[i], ib[j]
        candidates.append((arc_a[sa] + ti * len_a[sa], arc_b[sb] + uj * len_b[sb], a0[sa] + ti * da[sa]))
    # collinear overlaps: take the earliest shared point along A
    for i, j in zip(*np.nonzero(parallel)):
        sa, sb = ia[i], ib[j]
        cross = diff[i, j, 0] * DA[i, 0, 1] - diff[i, j, 1] * DA[i, 0, 0]
        if abs(cross) > 1e-9 * len_a[sa]:
            continue
        unit = da[sa] / len_a[sa]
        p0 = float(np.dot(b0[sb] - a0[sa], unit))
        p1 = float(np.dot(b0[sb] + db[sb] - a0[sa], unit))
        lo, hi = max(0.0, min(p0, p1)), min(len_a[sa], max(p0, p1))
        if lo > hi + 1e-12:
            continue
        point = a0[sa] + lo * unit
        sb_off = float(np.hypot(*(point - b0[sb])))
        candidates.append((arc_a[sa] + lo, arc_b[sb] + sb_off, point))
    if not candidates:
        return None
    best = min(candidates, key=lambda c: (c[0], c[1]))
    return (float(best[2][0]), float(best[2][1])), float(best[0]), float(best[1])


def ttc_at(track: AgentTrack, t: int, arc_to_point: float, stop_speed_eps: float = 0.1,
           arc: Optional[np.ndarray] = None) -> float:
    """Constant-speed time for ``track`` to reach the point ``arc_to_point``
    metres along its own path, seen from frame index ``t``."""
    arc = cumulative_arc(track.xy) if arc is None else arc
    remaining = arc_to_point - arc[t]
    speed = float(track.speed[t])
    if speed < stop_speed_eps or remaining < 0:
        return float("inf")
    return remaining / speed


def ttc_series(track: AgentTrack, arc_to_point: float, stop_speed_eps: float = 0.1) -> np.ndarray:
    arc = cumulative_arc(track.xy)
    return np.array([ttc_at(track, t, arc_to_point, stop_speed_eps, arc) for t in range(len(track))])


def detect_stops(track: AgentTrack, cfg: RuleConfig = RuleConfig()) -> list[tuple[int, int]]:
    """Maximal runs of frame indices with speed below ``stop_speed_eps``."""
    slow = np.concatenate([[False], track.speed < cfg.stop_speed_eps, [False]])
    edges = np.diff(slow.astype(np.int8))
    starts = np.nonzero(edges == 1)[0]
    ends = np.nonzero(edges == -1)[0] - 1
    return [(int(s), int(e)) for s, e in zip(starts, ends)]


def stop_heading(xy: np.ndarray, start: int, min_dist: float) -> Optional[np.ndarray]:
    """Unit heading of the last motion before frame ``start``: the direction
    from the latest earlier frame at least ``min_dist`` away to the stop
    position. Falls back to the first such motion after the stop."""
    here = xy[start]
    for k in range(start - 1, -1, -1):
        d = here - xy[k]
        n = float(np.hypot(*d))
        if n >= min_dist:
            return d / n
    for k in range(start + 1, len(xy)):
        d = xy[k] - here
        n = float(np.hypot(*d))
        if n >= min_dist:
            return d / n
    return None


def _zone_frame(origin: np.ndarray, heading: np.ndarray, pts: np.ndarray) -> np.ndarray:
    rel = pts - origin
    along = rel @ heading
    across = rel @ np.array([-heading[1], heading[0]])
    return np.stack([along, across], axis=-1)


def front_zone_distance(origin, heading, pts, cfg: RuleConfig) -> np.ndarray:
    """Euclidean distance from points to the front-zone rectangle (0 inside)."""
    local = _zone_frame(np.asarray(origin), np.asarray(heading), np.atleast_2d(pts))
    half = cfg.front_zone_width_m / 2
    dx = np.maximum(np.maximum(-local[:, 0], local[:, 0] - cfg.front_zone_length_m), 0.0)
    dy = np.maximum(np.abs(local[:, 1]) - half, 0.0)
    return np.hypot(dx, dy)


def _stop_rule(sample: JointSample, cfg: RuleConfig):
    """Return ``(verdict, window)`` with verdict in {1, NOT_SURE, 0, None}."""
    dt = sample.frame_period
    tracks = sample.tracks
    positive = None
    unsure = negative = False
    for who in (0, 1):
        stopper, passer = tracks[who], tracks[1 - who]
        for s, e in detect_stops(stopper, cfg):
            duration = (e - s) * dt
            if duration < cfg.stop_negative_s:
                negative = True
                continue
            if duration < cfg.stop_positive_s:
                unsure = True
                continue
            heading = stop_heading(stopper.xy, s, cfg.heading_min_dist_m)
            if heading is None:
                continue
            dist = front_zone_distance(stopper.xy[s], heading, passer.xy, cfg)
            inside = dist <= 0.0
            during = np.nonzero(inside[s : e + 1])[0]
            if len(during) == 0:
                continue
            f_in = s + int(during[0])
            l_end = f_in
            while l_end + 1 < sample.T and inside[l_end + 1]:
                l_end += 1
            l_start = int(np.nonzero(dist < cfg.proximity_m)[0][0])
            if positive is None or f_in < positive[0]:
                positive = (f_in, (l_start, l_end))
    if positive is not None:
        return 1, positive[1]
    if unsure:
        return NOT_SURE, None
    if negative:
        return 0, None
    return None, None


def arrival_gap(sample: JointSample, cfg: RuleConfig = RuleConfig()):
    """``(g, crossing)`` where ``g`` is the rule-2 statistic (inf when never
    defined) and ``crossing`` the path intersection or None."""
    crossing = path_intersection(sample.track_a, sample.track_b)
    if crossing is None:
        return float("inf"), None
    _, arc_a, arc_b = crossing
    ta = ttc_series(sample.track_a, arc_a, cfg.stop_speed_eps)
    tb = ttc_series(sample.track_b, arc_b, cfg.stop_speed_eps)
    if cfg.ttc_mode == "gap":
        both = np.isfinite(ta) & np.isfinite(tb)
        g = float(np.min(np.abs(ta[both] - tb[both]))) if both.any() else float("inf")
    else:
        g = float(min(ta.min(), tb.min()))
    return g, crossing


def _gap_window(sample: JointSample, crossing, cfg: RuleConfig) -> tuple[int, int]:
    point, arc_a, arc_b = crossing
    point = np.asarray(point)
    near = np.ones(sample.T, dtype=bool)
    passed = np.zeros(sample.T, dtype=bool)
    for track, arc_p in ((sample.track_a, arc_a), (sample.track_b, arc_b)):
        near &= np.hypot(*(track.xy - point).T) < cfg.proximity_m
        passed |= cumulative_arc(track.xy) > arc_p
    l_end = int(np.argmax(passed)) if passed.any() else sample.T - 1
    l_start = int(np.argmax(near)) if near.any() else l_end
    return min(l_start, l_end), l_end


def label_pair(sample: JointSample, cfg: RuleConfig = RuleConfig()) -> InteractionLabels:
    verdict, window = _stop_rule(sample, cfg)
    if verdict is not None:
        return InteractionLabels.make(verdict, sample.T, window)
    g, crossing = arrival_gap(sample, cfg)
    if crossing is None or not np.isfinite(g) or g > cfg.ttc_negative_s:
        return InteractionLabels.make(0, sample.T)
    if g < cfg.ttc_positive_s:
        return InteractionLabels.make(1, sample.T, _gap_window(sample, crossing, cfg))
    return InteractionLabels.make(NOT_SURE, sample.T)


def balance_negatives(samples: Sequence[JointSample], seed: int) -> list[JointSample]:
    """Keep positives and not-sure samples; subsample negatives down to the
    positive count. Input order is preserved."""
    pos = [i for i, s in enumerate(samples) if s.labels.whether == 1]
    neg = [i for i, s in enumerate(samples) if s.labels.whether == 0]
    keep = set(range(len(samples)))
    if len(neg) > len(pos):
        chosen = np.random.default_rng(seed).choice(len(neg), size=len(pos), replace=False)
        keep -= set(neg) - {neg[k] for k in chosen}
    return [s for i, s in enumerate(samples) if i in keep]


def label_counts(samples: Sequence[JointSample]) -> dict:
    counts = {"positive": 0, "negative": 0, "not_sure": 0}
    for s in samples:
        key = {1: "positive", 0: "negative", NOT_SURE: "not_sure"}[s.labels.whether]
        counts[key] += 1
    counts["total"] = len(samples)
    return counts
