"""Trajectory tables: parsing, serialization and two-agent sample assembly."""
from __future__ import annotations

import csv
import io
import itertools
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional

import numpy as np

DEFAULT_FRAME_PERIOD = 0.1
MIN_SAMPLE_STEPS = 10
CSV_COLUMNS = ("track_id", "frame_id", "x", "y", "vx", "vy")


class TrajIOError(ValueError):
    pass


class MalformedRow(TrajIOError):
    pass


class DuplicateFrame(TrajIOError):
    pass


class FrameGap(TrajIOError):
    pass


@dataclass(frozen=True)
class TrackPoint:
    frame: int
    t: float
    x: float
    y: float
    vx: float
    vy: float


@dataclass(eq=False)
class AgentTrack:
    """One agent's contiguous track, stored column-wise.

    ``xy`` and ``vel`` are ``(n, 2)`` float arrays aligned with ``frames``.
    """

    agent_id: str
    frames: np.ndarray
    xy: np.ndarray
    vel: np.ndarray
    frame_period: float = DEFAULT_FRAME_PERIOD

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.int64)
        self.xy = np.asarray(self.xy, dtype=np.float64).reshape(-1, 2)
        self.vel = np.asarray(self.vel, dtype=np.float64).reshape(-1, 2)
        n = len(self.frames)
        if n < 2:
            raise TrajIOError(f"track {self.agent_id!r} needs at least 2 points, got {n}")
        if self.xy.shape[0] != n or self.vel.shape[0] != n:
            raise TrajIOError(f"track {self.agent_id!r}: column lengths differ")
        if np.any(np.diff(self.frames) != 1):
            raise FrameGap(f"track {self.agent_id!r} has non-contiguous frames")
        if not (np.all(np.isfinite(self.xy)) and np.all(np.isfinite(self.vel))):
            raise MalformedRow(f"track {self.agent_id!r} has non-finite values")

    def __len__(self):
        return len(self.frames)

    def __eq__(self, other):
        if not isinstance(other, AgentTrack):
            return NotImplemented
        return (
            self.agent_id == other.agent_id
            and np.array_equal(self.frames, other.frames)
            and np.array_equal(self.xy, other.xy)
            and np.array_equal(self.vel, other.vel)
        )

    @property
    def first_frame(self) -> int:
        return int(self.frames[0])

    @property
    def last_frame(self) -> int:
        return int(self.frames[-1])

    @property
    def speed(self) -> np.ndarray:
        return np.hypot(self.vel[:, 0], self.vel[:, 1])

    @property
    def points(self) -> list[TrackPoint]:
        return [
            TrackPoint(int(f), float(f) * self.frame_period, float(p[0]), float(p[1]), float(v[0]), float(v[1]))
            for f, p, v in zip(self.frames, self.xy, self.vel)
        ]

    def clip(self, start: int, end: int) -> "AgentTrack":
        """Restrict to the inclusive frame range ``[start, end]``."""
        i0 = start - self.first_frame
        i1 = end - self.first_frame + 1
        return AgentTrack(self.agent_id, self.frames[i0:i1], self.xy[i0:i1], self.vel[i0:i1], self.frame_period)

    def replace(self, xy=None, vel=None) -> "AgentTrack":
        return AgentTrack(
            self.agent_id,
            self.frames,
            self.xy if xy is None else xy,
            self.vel if vel is None else vel,
            self.frame_period,
        )


@dataclass(eq=False)
class JointSample:
    sample_id: str
    track_a: AgentTrack
    track_b: AgentTrack
    labels: Optional[Any] = None
    meta: Optional[Any] = None

    def __post_init__(self):
        if not np.array_equal(self.track_a.frames, self.track_b.frames):
            raise TrajIOError(f"sample {self.sample_id!r}: tracks do not share a frame range")
        if len(self.track_a) < MIN_SAMPLE_STEPS:
            raise TrajIOError(
                f"sample {self.sample_id!r}: T={len(self.track_a)} below minimum {MIN_SAMPLE_STEPS}"
            )

    @property
    def T(self) -> int:
        return len(self.track_a)

    @property
    def frame_period(self) -> float:
        return self.track_a.frame_period

    @property
    def tracks(self) -> tuple[AgentTrack, AgentTrack]:
        return self.track_a, self.track_b

    def positions(self) -> np.ndarray:
        """Positions stacked as ``(2, T, 2)``."""
        return np.stack([self.track_a.xy, self.track_b.xy])

    def velocities(self) -> np.ndarray:
        return np.stack([self.track_a.vel, self.track_b.vel])

    def with_tracks(self, track_a: AgentTrack, track_b: AgentTrack) -> "JointSample":
        return JointSample(self.sample_id, track_a, track_b, self.labels, self.meta)

    def with_labels(self, labels) -> "JointSample":
        return JointSample(self.sample_id, self.track_a, self.track_b, labels, self.meta)


def finite_difference_velocity(xy: np.ndarray, frame_period: float) -> np.ndarray:
    """Central differences inside, one-sided at the ends."""
    return np.gradient(np.asarray(xy, dtype=np.float64), frame_period, axis=0)


def _to_float(value: str, row_no: int, column: str) -> float:
    try:
        out = float(value)
    except (TypeError, ValueError):
        raise MalformedRow(f"row {row_no}: column {column!r} is not numeric: {value!r}") from None
    if not np.isfinite(out):
        raise MalformedRow(f"row {row_no}: column {column!r} is not finite: {value!r}")
    return out


def parse_tracks(csv_text: str, frame_period: float = DEFAULT_FRAME_PERIOD) -> list[AgentTrack]:
    """Parse a ``track_id,frame_id,x,y[,vx,vy]`` table into tracks.

    Extra columns (heading, size, ...) are ignored. When the velocity columns
    are absent they are derived from positions by finite differences.
    """
    reader = csv.DictReader(io.StringIO(csv_text))
    if reader.fieldnames is None:
        return []
    fields = [f.strip() for f in reader.fieldnames]
    reader.fieldnames = fields
    missing = {"track_id", "frame_id", "x", "y"} - set(fields)
    if missing:
        raise MalformedRow(f"header lacks columns {sorted(missing)}")
    has_vel = "vx" in fields and "vy" in fields

    rows: dict[str, dict[int, tuple]] = {}
    for row_no, row in enumerate(reader, start=2):
        track_id = (row.get("track_id") or "").strip()
        if not track_id:
            raise MalformedRow(f"row {row_no}: empty track_id")
        frame_f = _to_float(row["frame_id"], row_no, "frame_id")
        if frame_f != int(frame_f):
            raise MalformedRow(f"row {row_no}: frame_id {row['frame_id']!r} is not an integer")
        frame = int(frame_f)
        vals = tuple(_to_float(row[c], row_no, c) for c in (("x", "y", "vx", "vy") if has_vel else ("x", "y")))
        per_track = rows.setdefault(track_id, {})
        if frame in per_track:
            raise DuplicateFrame(f"track {track_id!r} has frame {frame} twice")
        per_track[frame] = vals

    tracks = []
    for track_id, per_track in rows.items():
        frames = np.array(sorted(per_track), dtype=np.int64)
        if np.any(np.diff(frames) != 1):
            raise FrameGap(f"track {track_id!r} has non-contiguous frames")
        vals = np.array([per_track[f] for f in frames], dtype=np.float64)
        xy = vals[:, :2]
        vel = vals[:, 2:4] if has_vel else finite_difference_velocity(xy, frame_period)
        tracks.append(AgentTrack(track_id, frames, xy, vel, frame_period))
    return tracks


def format_tracks(tracks: list[AgentTrack]) -> str:
    """Serialize tracks to CSV text; floats use 17 significant digits so
    parsing the output reproduces the arrays exactly."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for track in tracks:
        for f, p, v in zip(track.frames, track.xy, track.vel):
            writer.writerow([track.agent_id, int(f), *(f"{val:.17g}" for val in (p[0], p[1], v[0], v[1]))])
    return buf.getvalue()


def pair_samples(tracks: list[AgentTrack], min_overlap: int = MIN_SAMPLE_STEPS) -> list[JointSample]:
    """One sample per unordered pair of tracks overlapping by ``min_overlap`` frames or more."""
    if min_overlap < MIN_SAMPLE_STEPS:
        raise ValueError(f"min_overlap must be >= {MIN_SAMPLE_STEPS}")
    ordered = sorted(tracks, key=lambda tr: tr.agent_id)
    samples = []
    for a, b in itertools.combinations(ordered, 2):
        start = max(a.first_frame, b.first_frame)
        end = min(a.last_frame, b.last_frame)
        if end - start + 1 < min_overlap:
            continue
        samples.append(JointSample(f"{a.agent_id}-{b.agent_id}", a.clip(start, end), b.clip(start, end)))
    return samples


def read_sample_csv(path, frame_period: float = DEFAULT_FRAME_PERIOD, sample_id: Optional[str] = None) -> JointSample:
    """Read a two-track CSV file as one sample (tracks ordered by appearance)."""
    path = Path(path)
    tracks = parse_tracks(path.read_text(encoding="utf-8"), frame_period)
    if len(tracks) != 2:
        raise TrajIOError(f"{path}: expected exactly 2 tracks, found {len(tracks)}")
    a, b = tracks
    start = max(a.first_frame, b.first_frame)
    end = min(a.last_frame, b.last_frame)
    if end < start:
        raise TrajIOError(f"{path}: tracks do not overlap")
    return JointSample(sample_id or path.stem, a.clip(start, end), b.clip(start, end))

