"""Spatio-temporal correlation filter (STCF) for background-activity noise."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Iterator

import numba
import numpy as np

from .events import Event, EventArray, SensorGeometry

NEVER = np.iinfo(np.int64).min // 4  # "never fired"; far enough from the minimum to subtract safely


@dataclass(frozen=True)
class StcfConfig:
    window_us: int = 5000
    support: int = 2
    radius: int = 1

    def __post_init__(self):
        if self.window_us <= 0:
            raise ValueError("stcf window_us must be > 0")
        if self.support < 1:
            raise ValueError("stcf support must be >= 1")
        if self.radius < 1:
            raise ValueError("stcf radius must be >= 1")


class TimestampMap:
    """Per-pixel last-event timestamp grid."""

    def __init__(self, geometry: SensorGeometry):
        self.geometry = geometry
        self.ts = np.full(geometry.shape, NEVER, dtype=np.int64)

    def fired(self) -> np.ndarray:
        return self.ts != NEVER


def stcf_accept(e: Event, state: TimestampMap, cfg: StcfConfig) -> bool:
    """Classify one event as signal (True) or noise, then record its timestamp.

    Support is the number of distinct neighbouring pixels in the
    ``(2r+1)^2`` box (centre excluded) whose last event is no older than the
    window. Noise events still update the map.
    """
    ts = state.ts
    h, w = ts.shape
    r = cfg.radius
    y0, y1 = max(e.y - r, 0), min(e.y + r + 1, h)
    x0, x1 = max(e.x - r, 0), min(e.x + r + 1, w)
    box = ts[y0:y1, x0:x1]
    limit = e.t - cfg.window_us
    n = int(np.count_nonzero(box >= limit))
    if ts[e.y, e.x] >= limit:
        n -= 1
    ts[e.y, e.x] = e.t
    return n >= cfg.support


@numba.njit(cache=True, nogil=True)
def _stcf_kernel(xs, ys, tt, ts, window, support, radius):
    h, w = ts.shape
    n = len(tt)
    keep = np.zeros(n, dtype=np.bool_)
    for i in range(n):
        x = xs[i]
        y = ys[i]
        t = tt[i]
        limit = t - window
        count = 0
        for yy in range(max(y - radius, 0), min(y + radius + 1, h)):
            for xx in range(max(x - radius, 0), min(x + radius + 1, w)):
                if (xx != x or yy != y) and ts[yy, xx] >= limit:
                    count += 1
        keep[i] = count >= support
        ts[y, x] = t
    return keep


def stcf_mask(events: EventArray, geometry: SensorGeometry, cfg: StcfConfig,
              state: TimestampMap | None = None) -> np.ndarray:
    """Boolean keep-mask over a whole stream (batch form of :func:`stcf_accept`)."""
    if state is None:
        state = TimestampMap(geometry)
    if len(events) == 0:
        return np.zeros(0, dtype=bool)
    return _stcf_kernel(events.x, events.y, events.t, state.ts,
                        np.int64(cfg.window_us), cfg.support, cfg.radius)


def filter_stream(events: Iterable[Event], geometry: SensorGeometry,
                  cfg: StcfConfig) -> Iterator[Event]:
    """Yield the accepted events, order preserved."""
    if isinstance(events, EventArray):
        mask = stcf_mask(events, geometry, cfg)
        yield from events[mask]
        return
    state = TimestampMap(geometry)
    for e in events:
        if stcf_accept(e, state, cfg):
            yield e
