"""Synthetic two-vehicle encounters with known ground truth.

Three scenario families are produced: two paths crossing at a known point
(optionally with the later vehicle yielding), a stop-sign approach where one
vehicle halts while the other passes in front of it, and non-interacting
pairs. Speeds follow piecewise constant-acceleration profiles along straight
or gently curved paths; every scenario is finally placed under a random rigid
transform.

All randomness comes from ``numpy.random.default_rng(seed)`` (PCG64 seeded
through SeedSequence), one generator per scenario.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .trajio import (
    DEFAULT_FRAME_PERIOD,
    AgentTrack,
    JointSample,
    finite_difference_velocity,
    format_tracks,
    read_sample_csv,
)

KINDS = ("crossing", "stop_sign", "non_interacting")
DEFAULT_STEPS = 60
DEFAULT_JITTER_SIGMA = 0.05


class InfeasibleConfig(ValueError):
    pass


@dataclass
class ScenarioMeta:
    kind: str
    collision_point: Optional[tuple[float, float]] = None
    stop_intervals: list[list[tuple[int, int]]] = field(default_factory=lambda: [[], []])
    yielding_agent: Optional[int] = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown scenario kind {self.kind!r}")
        if self.kind == "crossing" and self.collision_point is None:
            raise ValueError("crossing scenarios need a collision point")
        if self.kind == "non_interacting" and self.collision_point is not None:
            # a late crossing records its path crossing under params instead
            raise ValueError("non-interacting scenarios carry no collision point")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["collision_point"] = None if self.collision_point is None else list(self.collision_point)
        out["stop_intervals"] = [[list(iv) for iv in per_agent] for per_agent in self.stop_intervals]
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioMeta":
        cp = data.get("collision_point")
        return cls(
            kind=data["kind"],
            collision_point=None if cp is None else (float(cp[0]), float(cp[1])),
            stop_intervals=[[tuple(int(v) for v in iv) for iv in per] for per in data.get("stop_intervals", [[], []])],
            yielding_agent=data.get("yielding_agent"),
            params=dict(data.get("params", {})),
        )


# -- configs -----------------------------------------------------------------
@dataclass
class _Common:
    steps: int = DEFAULT_STEPS
    frame_period: float = DEFAULT_FRAME_PERIOD
    jitter: bool = False
    jitter_sigma: float = DEFAULT_JITTER_SIGMA
    random_placement: bool = True


@dataclass
class CrossingConfig(_Common):
    """``arrival_gap`` is the constant-speed arrival-time difference at the
    crossing point (seconds). ``yielding`` None means: the later vehicle
    yields when the gap is below 3 s."""

    speed_a: Optional[float] = None
    speed_b: Optional[float] = None
    crossing_angle: Optional[float] = None  # radians between the two headings
    arrival_gap: Optional[float] = None
    first_arrival: Optional[float] = None  # seconds until the earlier vehicle reaches the point
    yielding: Optional[bool] = None
    yield_speed: Optional[float] = None
    decel: float = 3.0
    curvature_a: float = 0.0
    curvature_b: float = 0.0


@dataclass
class StopSignConfig(_Common):
    """Vehicle A stops for ``stop_duration`` seconds; vehicle B crosses A's
    lane ahead of the stop. ``passer`` is ``"during"`` (B crosses A's front
    zone while A is stopped), ``"after"`` (B crosses once A has left) or
    ``"away"`` (B drives a far parallel corridor)."""

    stop_duration: Optional[float] = None
    passer: str = "during"
    approach_speed: Optional[float] = None
    speed_b: Optional[float] = None
    decel: float = 4.0
    stop_frame: Optional[int] = None
    zone_offset: Optional[float] = None  # metres from the stop position to B's path


@dataclass
class NonInteractingConfig(_Common):
    """``layout`` is ``"parallel"`` (disjoint corridors) or ``"late_crossing"``
    (paths cross but the arrival gap is at least ``min_gap`` seconds)."""

    layout: Optional[str] = None
    arrival_gap: Optional[float] = None
    min_gap: float = 9.0
    lateral_offset: Optional[float] = None
    speed_a: Optional[float] = None
    speed_b: Optional[float] = None


# -- kinematics --------------------------------------------------------------
class SpeedProfile:
    """Piecewise constant acceleration. ``phases`` is a list of
    ``(duration, accel)``; the last phase extends forever. Speed is clamped
    at zero by construction of the phases, not at evaluation time."""

    def __init__(self, v0: float, phases: Sequence[tuple[float, float]]):
        self.knots = [0.0]
        self.v = [float(v0)]
        self.s = [0.0]
        self.acc = []
        for duration, acc in phases:
            self.acc.append(float(acc))
            t0, v0_, s0 = self.knots[-1], self.v[-1], self.s[-1]
            self.knots.append(t0 + duration)
            self.v.append(v0_ + acc * duration)
            self.s.append(s0 + v0_ * duration + 0.5 * acc * duration * duration)
        self.acc.append(0.0)
        if min(self.v) < -1e-9:
            raise InfeasibleConfig("speed profile goes negative")

    def arc(self, t: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=np.float64)
        idx = np.clip(np.searchsorted(self.knots, t, side="right") - 1, 0, len(self.knots) - 1)
        tau = t - np.asarray(self.knots)[idx]
        v = np.asarray(self.v)[idx]
        a = np.asarray(self.acc)[idx]
        return np.asarray(self.s)[idx] + v * tau + 0.5 * a * tau * tau


@dataclass
class Path2D:
    """A straight line or circular arc through ``anchor`` with ``heading``
    there; ``anchor_arc`` is the arc length at which the anchor is reached."""

    anchor: np.ndarray
    heading: float
    anchor_arc: float
    curvature: float = 0.0

    def point(self, s: np.ndarray) -> np.ndarray:
        u = np.asarray(s, dtype=np.float64) - self.anchor_arc
        k = self.curvature
        if abs(k) < 1e-12:
            local = np.stack([u, np.zeros_like(u)], axis=-1)
        else:
            local = np.stack([np.sin(k * u) / k, (1.0 - np.cos(k * u)) / k], axis=-1)
        c, sn = np.cos(self.heading), np.sin(self.heading)
        rot = np.array([[c, -sn], [sn, c]])
        return np.asarray(self.anchor) + local @ rot.T


def _pick(value, rng: np.random.Generator, low: float, high: float) -> float:
    """Use ``value`` when configured, otherwise draw uniformly. The draw is
    made either way so that fixing one parameter does not shift the others."""
    drawn = float(rng.uniform(low, high))
    return drawn if value is None else float(value)


def _build_sample(sample_id: str, xy_a: np.ndarray, xy_b: np.ndarray, cfg: _Common, rng: np.random.Generator,
                  meta: ScenarioMeta) -> JointSample:
    # random rigid placement (rotation about the origin, then translation)
    theta = float(rng.uniform(0.0, 2 * np.pi))
    shift = rng.uniform(-50.0, 50.0, size=2)
    noise = rng.normal(0.0, cfg.jitter_sigma, size=(2, cfg.steps, 2)) if cfg.jitter else None
    if cfg.random_placement:
        c, s = np.cos(theta), np.sin(theta)
        rot = np.array([[c, -s], [s, c]])
        xy_a = xy_a @ rot.T + shift
        xy_b = xy_b @ rot.T + shift
        if meta.collision_point is not None:
            meta.collision_point = tuple(float(v) for v in (np.asarray(meta.collision_point) @ rot.T + shift))
        if "path_crossing_point" in meta.params:
            p = np.asarray(meta.params["path_crossing_point"]) @ rot.T + shift
            meta.params["path_crossing_point"] = [float(p[0]), float(p[1])]
    if noise is not None:
        xy_a = xy_a + noise[0]
        xy_b = xy_b + noise[1]
    frames = np.arange(cfg.steps)
    dt = cfg.frame_period
    track_a = AgentTrack("a", frames, xy_a, finite_difference_velocity(xy_a, dt), dt)
    track_b = AgentTrack("b", frames, xy_b, finite_difference_velocity(xy_b, dt), dt)
    return JointSample(sample_id, track_a, track_b, meta=meta)


def _times(cfg: _Common) -> np.ndarray:
    return np.arange(cfg.steps) * cfg.frame_period


def _rest_intervals(profile: SpeedProfile, cfg: _Common) -> list[tuple[int, int]]:
    """Frames on which the designed profile holds the vehicle still."""
    out = []
    for k in range(len(profile.knots) - 1):
        if profile.v[k] <= 1e-12 and abs(profile.acc[k]) < 1e-12:
            t0, t1 = profile.knots[k], profile.knots[k + 1]
            f0 = int(np.ceil(t0 / cfg.frame_period - 1e-9))
            f1 = min(int(np.floor(t1 / cfg.frame_period + 1e-9)), cfg.steps - 1)
            if f1 > f0:
                out.append((f0, f1))
    return out


# -- generators --------------------------------------------------------------
def gen_crossing(seed: int, cfg: Optional[CrossingConfig] = None) -> JointSample:
    cfg = cfg or CrossingConfig()
    rng = np.random.default_rng(seed)
    angle = _pick(cfg.crossing_angle, rng, np.pi / 3, 2 * np.pi / 3)
    if abs(np.sin(angle)) < 1e-6:
        raise InfeasibleConfig("crossing requested but the paths are parallel")
    va = _pick(cfg.speed_a, rng, 6.0, 10.0)
    vb = _pick(cfg.speed_b, rng, 6.0, 10.0)
    if va <= 0 or vb <= 0:
        raise InfeasibleConfig("speeds must be positive")
    gap = _pick(cfg.arrival_gap, rng, 0.2, 2.2)
    first = _pick(cfg.first_arrival, rng, 2.0, 2.8)
    b_first = bool(rng.integers(2))
    v_yield = _pick(cfg.yield_speed, rng, 3.0, 4.5)
    if gap < 0:
        raise InfeasibleConfig("arrival gap must be >= 0")
    yielding = (gap < 3.0) if cfg.yielding is None else cfg.yielding

    arrive = {0: first + gap, 1: first} if b_first else {0: first, 1: first + gap}
    late = 0 if b_first else 1
    speeds = (va, vb)
    profiles = []
    for agent in (0, 1):
        v = speeds[agent]
        if yielding and agent == late and v > v_yield:
            t_dec = max(0.3, first - 1.4)
            t_ramp = (v - v_yield) / cfg.decel
            # hold the crawl until shortly after the other vehicle has passed
            t_hold = max(0.0, first + 0.4 - (t_dec + t_ramp))
            profiles.append(SpeedProfile(v, [(t_dec, 0.0), (t_ramp, -cfg.decel), (t_hold, 0.0),
                                             (t_ramp, cfg.decel)]))
        else:
            profiles.append(SpeedProfile(v, []))

    point = np.zeros(2)
    headings = (0.0, angle)
    curvatures = (cfg.curvature_a, cfg.curvature_b)
    t = _times(cfg)
    xys = []
    for agent in (0, 1):
        path = Path2D(point, headings[agent], speeds[agent] * arrive[agent], curvatures[agent])
        xys.append(path.point(profiles[agent].arc(t)))
    meta = ScenarioMeta(
        "crossing",
        collision_point=(0.0, 0.0),
        stop_intervals=[[], []],
        yielding_agent=late if yielding else None,
        params=dict(arrival_gap=gap, first_arrival=first, speeds=[va, vb], crossing_angle=angle,
                    first_agent=1 - late, yielding=yielding),
    )
    return _build_sample(f"crossing-{seed}", xys[0], xys[1], cfg, rng, meta)


def gen_stop_sign(seed: int, cfg: Optional[StopSignConfig] = None) -> JointSample:
    cfg = cfg or StopSignConfig()
    rng = np.random.default_rng(seed)
    duration = _pick(cfg.stop_duration, rng, 3.3, 4.2)
    va = _pick(cfg.approach_speed, rng, 3.5, 6.0)
    vb = _pick(cfg.speed_b, rng, 6.0, 10.0)
    offset = _pick(cfg.zone_offset, rng, 3.0, 7.0)
    drawn_frame = int(rng.integers(14, 19))
    side = 1.0 if rng.integers(2) else -1.0
    if duration < 0:
        raise InfeasibleConfig("stop_duration must be >= 0")
    if cfg.passer not in ("during", "after", "away"):
        raise InfeasibleConfig(f"unknown passer timing {cfg.passer!r}")
    if va <= 0 or vb <= 0 or cfg.decel <= 0:
        raise InfeasibleConfig("speeds and deceleration must be positive")
    dt = cfg.frame_period
    t_brake = va / cfg.decel
    if cfg.stop_frame is None:
        stop_frame = max(drawn_frame, int(np.ceil(t_brake / dt - 1e-9)))
    else:
        stop_frame = int(cfg.stop_frame)
    t_stop = stop_frame * dt
    t_cruise = t_stop - t_brake
    if t_cruise < 0:
        raise InfeasibleConfig("vehicle cannot stop by the requested frame")
    prof_a = SpeedProfile(va, [(t_cruise, 0.0), (t_brake, -cfg.decel), (duration, 0.0), (t_brake, cfg.decel)])
    stop_arc = va * t_cruise + 0.5 * va * t_brake

    # A drives along +x and stops at the origin; B's lane is perpendicular,
    # ``offset`` metres ahead of A's stop position.
    t = _times(cfg)
    xy_a = Path2D(np.zeros(2), 0.0, stop_arc).point(prof_a.arc(t))
    if cfg.passer == "during":
        t_cross = t_stop + duration * float(rng.uniform(0.35, 0.65))
    elif cfg.passer == "after":
        t_cross = t_stop + duration + 2 * t_brake + float(rng.uniform(0.8, 1.5))
    else:
        t_cross = t_stop + duration * float(rng.uniform(0.35, 0.65))
    if cfg.passer == "away":
        anchor = np.array([offset, side * 45.0])
        heading_b = np.pi if side > 0 else 0.0
    else:
        anchor = np.array([offset, 0.0])
        heading_b = -side * np.pi / 2
    xy_b = Path2D(anchor, heading_b, vb * t_cross).point(SpeedProfile(vb, []).arc(t))

    stops = _rest_intervals(prof_a, cfg) if duration > 0 else []
    meta = ScenarioMeta(
        "stop_sign",
        collision_point=None,
        stop_intervals=[stops, []],
        yielding_agent=0,
        params=dict(stop_duration=duration, passer=cfg.passer, approach_speed=va, speed_b=vb,
                    zone_offset=offset, crossing_time=t_cross),
    )
    if cfg.passer != "away":
        meta.params["path_crossing_point"] = [offset, 0.0]
    return _build_sample(f"stop_sign-{seed}", xy_a, xy_b, cfg, rng, meta)


def gen_non_interacting(seed: int, cfg: Optional[NonInteractingConfig] = None) -> JointSample:
    cfg = cfg or NonInteractingConfig()
    rng = np.random.default_rng(seed)
    layout_draw = "parallel" if rng.integers(2) else "late_crossing"
    layout = cfg.layout or layout_draw
    va = _pick(cfg.speed_a, rng, 6.0, 10.0)
    vb = _pick(cfg.speed_b, rng, 6.0, 10.0)
    gap = _pick(cfg.arrival_gap, rng, cfg.min_gap, cfg.min_gap + 6.0)
    lateral = _pick(cfg.lateral_offset, rng, 30.0, 60.0)
    angle = float(rng.uniform(np.pi / 3, 2 * np.pi / 3))
    first = float(rng.uniform(1.0, 4.0))
    opposite = bool(rng.integers(2))
    t = _times(cfg)
    params = dict(layout=layout, speeds=[va, vb])
    if layout == "parallel":
        xy_a = Path2D(np.zeros(2), 0.0, 0.0).point(va * t)
        heading_b = np.pi if opposite else 0.0
        start_b = np.array([va * t[-1] if opposite else 0.0, lateral])
        xy_b = Path2D(start_b, heading_b, 0.0).point(vb * t)
        params["lateral_offset"] = lateral
    elif layout == "late_crossing":
        xy_a = Path2D(np.zeros(2), 0.0, va * first).point(va * t)
        xy_b = Path2D(np.zeros(2), angle, vb * (first + gap)).point(vb * t)
        params.update(arrival_gap=gap, path_crossing_point=[0.0, 0.0])
    else:
        raise InfeasibleConfig(f"unknown layout {layout!r}")
    meta = ScenarioMeta("non_interacting", collision_point=None, stop_intervals=[[], []], params=params)
    return _build_sample(f"non_interacting-{seed}", xy_a, xy_b, cfg, rng, meta)


GENERATORS = {"crossing": gen_crossing, "stop_sign": gen_stop_sign, "non_interacting": gen_non_interacting}


# -- datasets ----------------------------------------------------------------
@dataclass
class ScenarioMix:
    """Counts per scenario family. Crossing and stop-sign counts are split
    between clearly positive parameters and negative or ambiguous ones by
    the ``*_negative`` and ``*_unsure`` fractions."""

    crossing: int = 0
    stop_sign: int = 0
    non_interacting: int = 0
    crossing_unsure: float = 0.0
    stop_negative: float = 0.3
    stop_unsure: float = 0.0
    steps: int = DEFAULT_STEPS
    jitter: bool = False

    def __post_init__(self):
        for name in ("crossing", "stop_sign", "non_interacting"):
            if getattr(self, name) < 0:
                raise ValueError(f"scenario count {name} must be >= 0")
        for name in ("crossing_unsure", "stop_negative", "stop_unsure"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.stop_negative + self.stop_unsure > 1.0:
            raise ValueError("stop_negative + stop_unsure must not exceed 1")

    @property
    def total(self) -> int:
        return self.crossing + self.stop_sign + self.non_interacting

    @classmethod
    def balanced(cls, n: int, **kw) -> "ScenarioMix":
        """About half positives (yielding crossings plus long stops) and half
        negatives (non-interacting pairs plus short stops)."""
        n_stop = int(round(0.35 * n))
        n_cross = int(round(0.25 * n))
        return cls(crossing=n_cross, stop_sign=n_stop, non_interacting=n - n_stop - n_cross,
                   stop_negative=0.3, **kw)


def generate_dataset(mix: ScenarioMix, seed: int) -> list[JointSample]:
    """Deterministic list of samples; scenario ``i`` draws from seed
    ``[seed, i]`` so samples do not depend on the rest of the mix."""
    plan = (["crossing"] * mix.crossing + ["stop_sign"] * mix.stop_sign
            + ["non_interacting"] * mix.non_interacting)
    order = np.random.default_rng([seed, 0x5EED]).permutation(len(plan))
    samples = []
    for i, j in enumerate(order):
        kind = plan[j]
        sub = np.random.default_rng([seed, i])
        scenario_seed = int(sub.integers(2 ** 63))
        u = float(sub.uniform())
        common = dict(steps=mix.steps, jitter=mix.jitter)
        if kind == "crossing":
            if u < mix.crossing_unsure:
                # early first arrival so both vehicles reach the point in view
                extra = dict(arrival_gap=float(sub.uniform(3.3, 4.6)), first_arrival=float(sub.uniform(0.3, 0.8)))
            else:
                extra = {}
            sample = gen_crossing(scenario_seed, CrossingConfig(**extra, **common))
        elif kind == "stop_sign":
            if u < mix.stop_negative:
                dur = float(sub.uniform(0.3, 0.7))
            elif u < mix.stop_negative + mix.stop_unsure:
                dur = float(sub.uniform(1.4, 2.6))
            else:
                dur = None
            sample = gen_stop_sign(scenario_seed, StopSignConfig(stop_duration=dur, **common))
        else:
            sample = gen_non_interacting(scenario_seed, NonInteractingConfig(**common))
        sample.sample_id = f"s{seed}-{i:05d}-{sample.sample_id}"
        samples.append(sample)
    return samples


# -- files -------------------------------------------------------------------
def write_sample(directory, sample: JointSample) -> tuple[Path, Path]:
    """Write ``<id>.csv`` plus the ``<id>.json`` metadata sidecar."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    csv_path = directory / f"{sample.sample_id}.csv"
    meta_path = directory / f"{sample.sample_id}.json"
    csv_path.write_text(format_tracks([sample.track_a, sample.track_b]), encoding="utf-8")
    meta = sample.meta.to_dict() if isinstance(sample.meta, ScenarioMeta) else (sample.meta or {})
    meta_path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return csv_path, meta_path


def read_sample(csv_path) -> JointSample:
    """Inverse of ``write_sample``; the sidecar is optional."""
    csv_path = Path(csv_path)
    sample = read_sample_csv(csv_path)
    meta_path = csv_path.with_suffix(".json")
    if meta_path.exists():
        sample.meta = ScenarioMeta.from_dict(json.loads(meta_path.read_text(encoding="utf-8")))
    return sample
