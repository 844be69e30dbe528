"""
Event data model, text-format ingestion and synthetic stream generation.

Events use the line format of the Event Camera Dataset: ``t x y p`` with
``t`` in decimal seconds. Internally timestamps are integer microseconds.
"""

from __future__ import annotations

import os
import warnings
from dataclasses import dataclass
from typing import Iterable, Iterator, NamedTuple, Sequence

import numpy as np


class EventError(ValueError):
    """Base class for malformed event data."""


class EventParseError(EventError):
    def __init__(self, msg: str, lineno: int | None = None):
        self.lineno = lineno
        prefix = f"line {lineno}: " if lineno is not None else ""
        super().__init__(prefix + msg)


class EventRangeError(EventParseError):
    pass


class EventOrderError(EventError):
    def __init__(self, index: int, t_prev: int, t: int):
        self.index = index
        super().__init__(f"timestamp decreases at event {index}: {t} < {t_prev}")


class Event(NamedTuple):
    x: int
    y: int
    polarity: bool
    t: int  # microseconds


@dataclass(frozen=True)
class SensorGeometry:
    width: int
    height: int

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError(f"invalid sensor geometry {self.width}x{self.height}")

    @classmethod
    def parse(cls, text: str) -> "SensorGeometry":
        """Parse ``WxH`` (e.g. ``240x180``)."""
        try:
            w, h = text.lower().split("x")
            return cls(int(w), int(h))
        except ValueError as exc:
            raise ValueError(f"bad geometry {text!r}, expected WxH") from exc

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    def contains(self, x: int, y: int) -> bool:
        return 0 <= x < self.width and 0 <= y < self.height


DAVIS240 = SensorGeometry(240, 180)


def _seconds_to_us(text: str) -> int:
    # exact decimal floor; float multiplication would turn 0.003811 into 3810
    if text.startswith("-"):
        raise ValueError("negative timestamp")
    whole, _, frac = text.partition(".")
    if not whole:
        whole = "0"
    if not (whole.isdigit() and (frac == "" or frac.isdigit())):
        raise ValueError(f"bad timestamp {text!r}")
    return int(whole) * 1_000_000 + int((frac + "000000")[:6])


def _us_to_seconds(t: int) -> str:
    return f"{t // 1_000_000}.{t % 1_000_000:06d}"


def parse_event_line(line: str, geometry: SensorGeometry | None = None,
                     lineno: int | None = None) -> Event:
    fields = line.split()
    if len(fields) != 4:
        raise EventParseError(f"expected 4 fields, got {len(fields)}", lineno)
    ts, xs, ys, ps = fields
    try:
        t = _seconds_to_us(ts)
        x = int(xs)
        y = int(ys)
        p = int(ps)
    except ValueError as exc:
        raise EventParseError(str(exc), lineno) from exc
    if p not in (0, 1):
        raise EventParseError(f"polarity must be 0 or 1, got {p}", lineno)
    if x < 0 or y < 0:
        raise EventRangeError(f"negative coordinate ({x}, {y})", lineno)
    if geometry is not None and not geometry.contains(x, y):
        raise EventRangeError(
            f"({x}, {y}) outside {geometry.width}x{geometry.height} sensor", lineno)
    return Event(x, y, p == 1, t)


def format_event_line(e: Event) -> str:
    return f"{_us_to_seconds(e.t)} {e.x} {e.y} {int(e.polarity)}"


def load_stream(path: str | os.PathLike, geometry: SensorGeometry | None = None
                ) -> Iterator[Event]:
    """Lazily yield events from a text file, checking timestamp order.

    Blank lines and ``#`` comments are skipped.
    """
    t_prev = -1
    index = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            e = parse_event_line(line, geometry, lineno)
            if e.t < t_prev:
                raise EventOrderError(index, t_prev, e.t)
            t_prev = e.t
            index += 1
            yield e


def write_stream(path: str | os.PathLike, events: "Iterable[Event] | EventArray") -> int:
    """Write events in the ``t x y p`` text format, returns the event count."""
    if isinstance(events, EventArray):
        n = len(events)
        if n:
            secs = events.t // 1_000_000
            frac = events.t % 1_000_000
            body = "\n".join(
                f"{s}.{f:06d} {x} {y} {p}"
                for s, f, x, y, p in zip(secs.tolist(), frac.tolist(), events.x.tolist(),
                                         events.y.tolist(), events.p.astype(np.int8).tolist()))
        else:
            body = ""
    else:
        lines = [format_event_line(e) for e in events]
        n = len(lines)
        body = "\n".join(lines)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(body)
        if n:
            fh.write("\n")
    return n


@dataclass
class EventArray:
    """Column-oriented event stream used by the batch kernels."""

    x: np.ndarray  # int32
    y: np.ndarray  # int32
    p: np.ndarray  # bool
    t: np.ndarray  # int64, microseconds

    def __post_init__(self):
        self.x = np.ascontiguousarray(self.x, dtype=np.int32)
        self.y = np.ascontiguousarray(self.y, dtype=np.int32)
        self.p = np.ascontiguousarray(self.p, dtype=np.bool_)
        self.t = np.ascontiguousarray(self.t, dtype=np.int64)
        n = len(self.t)
        if not (len(self.x) == len(self.y) == len(self.p) == n):
            raise ValueError("event columns differ in length")

    def __len__(self) -> int:
        return len(self.t)

    def __iter__(self) -> Iterator[Event]:
        for x, y, p, t in zip(self.x.tolist(), self.y.tolist(), self.p.tolist(), self.t.tolist()):
            yield Event(x, y, p, t)

    def __getitem__(self, idx) -> "EventArray | Event":
        if isinstance(idx, (int, np.integer)):
            return Event(int(self.x[idx]), int(self.y[idx]), bool(self.p[idx]), int(self.t[idx]))
        return EventArray(self.x[idx], self.y[idx], self.p[idx], self.t[idx])

    @classmethod
    def empty(cls) -> "EventArray":
        return cls(np.empty(0), np.empty(0), np.empty(0), np.empty(0))

    @classmethod
    def from_events(cls, events: Iterable[Event]) -> "EventArray":
        if isinstance(events, EventArray):
            return events
        rows = list(events)
        if not rows:
            return cls.empty()
        x, y, p, t = zip(*rows)
        return cls(np.array(x), np.array(y), np.array(p), np.array(t))

    def check(self, geometry: SensorGeometry) -> None:
        """Validate coordinates and ordering, raising the loader's errors."""
        bad = np.flatnonzero((self.x < 0) | (self.x >= geometry.width)
                             | (self.y < 0) | (self.y >= geometry.height))
        if bad.size:
            i = int(bad[0])
            raise EventRangeError(f"event {i} at ({self.x[i]}, {self.y[i]}) outside "
                                  f"{geometry.width}x{geometry.height} sensor")
        back = np.flatnonzero(np.diff(self.t) < 0)
        if back.size:
            i = int(back[0]) + 1
            raise EventOrderError(i, int(self.t[i - 1]), int(self.t[i]))


def load_arrays(path: str | os.PathLike, geometry: SensorGeometry | None = None) -> EventArray:
    """Eager column loader; same validation as :func:`load_stream`, much faster."""
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UserWarning)  # empty file
            raw = np.loadtxt(path, dtype=np.float64, comments="#", ndmin=2)
    except ValueError:
        # rerun the line parser to report the offending line number
        return EventArray.from_events(load_stream(path, geometry))
    if raw.size == 0:
        return EventArray.empty()
    if raw.shape[1] != 4:
        return EventArray.from_events(load_stream(path, geometry))
    t_s, x, y, p = raw.T
    ok = ((t_s >= 0).all() and np.isin(p, (0.0, 1.0)).all()
          and (x == np.floor(x)).all() and (y == np.floor(y)).all()
          and (x >= 0).all() and (y >= 0).all())
    if not ok:
        return EventArray.from_events(load_stream(path, geometry))
    # datasets carry at most ns resolution, so rounding to 1e-3 us is exact
    t_us = np.floor(np.round(t_s * 1e6, 3)).astype(np.int64)
    arr = EventArray(x, y, p == 1.0, t_us)
    if geometry is not None:
        arr.check(geometry)
    else:
        arr.check(SensorGeometry(int(arr.x.max()) + 1, int(arr.y.max()) + 1))
    return arr


def synth_stream(profile: Sequence[tuple[float, float]], geometry: SensorGeometry,
                 seed: int = 0, t0: int = 0) -> EventArray:
    """Piecewise-constant-rate stream with uniformly random pixel positions.

    ``profile`` is a list of ``(duration_us, rate_eps)`` segments. Each segment
    holds ``floor(duration * rate / 1e6)`` evenly spaced events.
    """
    rng = np.random.default_rng(seed)
    ts = []
    start = t0
    for duration, rate in profile:
        if rate < 0 or duration < 0:
            raise ValueError("segment duration and rate must be non-negative")
        n = int(duration * rate // 1e6)
        if n > 0:
            ts.append(start + (np.arange(n, dtype=np.int64) * int(duration)) // n)
        start += int(duration)
    t = np.concatenate(ts) if ts else np.empty(0, dtype=np.int64)
    n = len(t)
    x = rng.integers(0, geometry.width, n)
    y = rng.integers(0, geometry.height, n)
    p = rng.integers(0, 2, n).astype(bool)
    return EventArray(x, y, p, t)
