"""Seeded scenario suite straddling every labeling threshold."""
from __future__ import annotations

import math

from ide_net.synthgen import (
    CrossingConfig,
    NonInteractingConfig,
    StopSignConfig,
    gen_crossing,
    gen_non_interacting,
    gen_stop_sign,
)

STOP_DURATIONS = (0.5, 2.0, 4.0)
ARRIVAL_GAPS = (1.0, 5.0, 12.0)


def _crossing(seed: int, gap: float):
    first = 2.4 if gap < 3 else 1.0
    # long enough that both vehicles reach the crossing point in view
    steps = max(60, int(math.ceil((first + gap + 2.5) / 0.1)))
    return gen_crossing(seed, CrossingConfig(arrival_gap=gap, first_arrival=first, steps=steps))


def threshold_suite(n: int = 200, base_seed: int = 1000) -> list:
    """``n`` samples cycling through stop durations x passer timing, arrival
    gaps and both non-interacting layouts."""
    makers = []
    for dur in STOP_DURATIONS:
        for passer in ("during", "after", "away"):
            makers.append(lambda s, d=dur, p=passer: gen_stop_sign(s, StopSignConfig(stop_duration=d, passer=p)))
    for gap in ARRIVAL_GAPS:
        makers.append(lambda s, g=gap: _crossing(s, g))
        makers.append(lambda s, g=gap: _crossing(s, g))
    for layout in ("parallel", "late_crossing"):
        makers.append(lambda s, lay=layout: gen_non_interacting(s, NonInteractingConfig(layout=lay)))
    makers.append(lambda s: gen_crossing(s, CrossingConfig(curvature_a=0.01, curvature_b=-0.008)))
    return [makers[i % len(makers)](base_seed + i) for i in range(n)]
