"""Brute-force reference labeler built on shapely geometry.

It re-derives every rule quantity frame by frame (stop runs, front-zone
polygons, polyline crossings, per-frame TTC) without touching the package's
own geometry helpers, so agreement with ``label_pair`` is meaningful.
"""
from __future__ import annotations

import math

from shapely.geometry import LineString, MultiPoint, Point, Polygon

NOT_SURE = -100


def _speeds(track):
    return [math.hypot(vx, vy) for vx, vy in track.vel]


def _stop_runs(speeds, eps):
    runs, start = [], None
    for i, v in enumerate(speeds):
        if v < eps and start is None:
            start = i
        elif v >= eps and start is not None:
            runs.append((start, i - 1))
            start = None
    if start is not None:
        runs.append((start, len(speeds) - 1))
    return runs


def _heading(xy, start, min_dist):
    sx, sy = xy[start]
    for k in reversed(range(start)):
        dx, dy = sx - xy[k][0], sy - xy[k][1]
        if math.hypot(dx, dy) >= min_dist:
            n = math.hypot(dx, dy)
            return dx / n, dy / n
    for k in range(start + 1, len(xy)):
        dx, dy = xy[k][0] - sx, xy[k][1] - sy
        if math.hypot(dx, dy) >= min_dist:
            n = math.hypot(dx, dy)
            return dx / n, dy / n
    return None


def _zone(origin, heading, length, width):
    ox, oy = origin
    hx, hy = heading
    nx, ny = -hy * width / 2, hx * width / 2
    return Polygon([
        (ox + nx, oy + ny),
        (ox + hx * length + nx, oy + hy * length + ny),
        (ox + hx * length - nx, oy + hy * length - ny),
        (ox - nx, oy - ny),
    ])


def _stop_verdict(sample, cfg):
    dt = sample.frame_period
    best = None
    unsure = negative = False
    tracks = (sample.track_a, sample.track_b)
    for who in (0, 1):
        stopper, passer = tracks[who], tracks[1 - who]
        for s, e in _stop_runs(_speeds(stopper), cfg.stop_speed_eps):
            duration = (e - s) * dt
            if duration < cfg.stop_negative_s:
                negative = True
            elif duration < cfg.stop_positive_s:
                unsure = True
            else:
                heading = _heading([tuple(p) for p in stopper.xy], s, cfg.heading_min_dist_m)
                if heading is None:
                    continue
                zone = _zone(tuple(stopper.xy[s]), heading, cfg.front_zone_length_m, cfg.front_zone_width_m)
                pts = [Point(*p) for p in passer.xy]
                inside = [zone.covers(p) for p in pts]
                hits = [f for f in range(s, e + 1) if inside[f]]
                if not hits:
                    continue
                f_in = hits[0]
                end = f_in
                while end + 1 < len(pts) and inside[end + 1]:
                    end += 1
                start = next(f for f in range(len(pts)) if zone.distance(pts[f]) < cfg.proximity_m)
                if best is None or f_in < best[0]:
                    best = (f_in, (start, end))
    if best is not None:
        return 1, best[1]
    if unsure:
        return NOT_SURE, None
    if negative:
        return 0, None
    return None, None


def _points_of(geom):
    if geom.is_empty:
        return []
    if isinstance(geom, Point):
        return [geom]
    if isinstance(geom, MultiPoint):
        return list(geom.geoms)
    if hasattr(geom, "geoms"):
        out = []
        for g in geom.geoms:
            out.extend(_points_of(g))
        return out
    return [Point(c) for c in geom.coords]  # line pieces of a collinear overlap


def crossing(sample):
    la = LineString([tuple(p) for p in sample.track_a.xy])
    lb = LineString([tuple(p) for p in sample.track_b.xy])
    pts = _points_of(la.intersection(lb))
    if not pts:
        return None
    p = min(pts, key=lambda q: la.project(q))
    return (p.x, p.y), la.project(p), lb.project(p)


def _travelled(xy, t):
    return LineString([tuple(p) for p in xy[: t + 1]]).length if t > 0 else 0.0


def _ttc(track, t, arc, eps):
    vx, vy = track.vel[t]
    speed = math.hypot(vx, vy)
    remaining = arc - _travelled(track.xy, t)
    if speed < eps or remaining < 0:
        return math.inf
    return remaining / speed


def oracle_label(sample, cfg):
    """``(whether, window)`` with window None unless whether == 1."""
    verdict, window = _stop_verdict(sample, cfg)
    if verdict is not None:
        return verdict, window
    hit = crossing(sample)
    if hit is None:
        return 0, None
    (px, py), arc_a, arc_b = hit
    gaps = []
    for t in range(sample.T):
        ta = _ttc(sample.track_a, t, arc_a, cfg.stop_speed_eps)
        tb = _ttc(sample.track_b, t, arc_b, cfg.stop_speed_eps)
        if math.isfinite(ta) and math.isfinite(tb):
            gaps.append(abs(ta - tb))
    if not gaps:
        return 0, None
    g = min(gaps)
    if g > cfg.ttc_negative_s:
        return 0, None
    if g >= cfg.ttc_positive_s:
        return NOT_SURE, None
    end = None
    for t in range(sample.T):
        if _travelled(sample.track_a.xy, t) > arc_a or _travelled(sample.track_b.xy, t) > arc_b:
            end = t
            break
    if end is None:
        end = sample.T - 1
    start = None
    for t in range(sample.T):
        da = math.hypot(sample.track_a.xy[t][0] - px, sample.track_a.xy[t][1] - py)
        db = math.hypot(sample.track_b.xy[t][0] - px, sample.track_b.xy[t][1] - py)
        if da < cfg.proximity_m and db < cfg.proximity_m:
            start = t
            break
    if start is None or start > end:
        start = end
    return 1, (start, end)
