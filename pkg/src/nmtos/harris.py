"""
Frame-based Harris scoring of TOS snapshots and event classification.

The TOS is updated event by event; every ``lut_period`` accepted events a
snapshot is scored with Harris and becomes the lookup table (LUT) for the
following events. Events before the first refresh see an all-zero LUT.
"""

from __future__ import annotations

import json
import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from math import comb
from typing import Iterable, Iterator

import numpy as np
from scipy import ndimage

from .denoise import StcfConfig, stcf_mask
from .events import Event, EventArray, SensorGeometry
from .tos import FaultModel, TosConfig, TosSurface, update_batch


@dataclass(frozen=True)
class HarrisConfig:
    sobel_aperture: int = 5
    window_aperture: int = 5
    k: float = 0.04
    score_threshold: float = 3.0e7  # about the median score at a clean corner

    def __post_init__(self):
        for name in ("sobel_aperture", "window_aperture"):
            a = getattr(self, name)
            if a < 3 or a % 2 == 0:
                raise ValueError(f"{name} must be odd and >= 3, got {a}")
        if not 0.0 < self.k < 0.25:
            raise ValueError(f"harris k must be in (0, 0.25), got {self.k}")

    @property
    def margin(self) -> int:
        return self.sobel_aperture // 2 + self.window_aperture // 2


@dataclass
class HarrisLut:
    scores: np.ndarray  # float64, (height, width)
    frame_index: int = -1  # -1: initial all-zero table

    @property
    def geometry(self) -> SensorGeometry:
        h, w = self.scores.shape
        return SensorGeometry(w, h)

    @classmethod
    def zeros(cls, geometry: SensorGeometry) -> "HarrisLut":
        return cls(np.zeros(geometry.shape), -1)


def sobel_kernels(aperture: int) -> tuple[np.ndarray, np.ndarray]:
    """Separable (smoothing, derivative) taps of a Sobel operator.

    Same construction as OpenCV: binomial smoothing, and a central
    difference convolved with a shorter binomial. Aperture 5 gives
    ``[1, 4, 6, 4, 1]`` and ``[-1, -2, 0, 2, 1]``.
    """
    n = aperture - 1
    smooth = np.array([comb(n, i) for i in range(n + 1)], dtype=np.float64)
    inner = np.array([comb(n - 2, i) for i in range(n - 1)], dtype=np.float64)
    deriv = np.convolve(inner, [-1.0, 0.0, 1.0])
    return smooth, deriv


def harris_response(frame: np.ndarray, cfg: HarrisConfig) -> np.ndarray:
    img = np.asarray(frame, dtype=np.float64) / 255.0
    smooth, deriv = sobel_kernels(cfg.sobel_aperture)
    gx = ndimage.correlate1d(ndimage.correlate1d(img, deriv, axis=1, mode="constant"),
                             smooth, axis=0, mode="constant")
    gy = ndimage.correlate1d(ndimage.correlate1d(img, deriv, axis=0, mode="constant"),
                             smooth, axis=1, mode="constant")
    box = np.ones(cfg.window_aperture)

    def boxsum(a):
        a = ndimage.correlate1d(a, box, axis=0, mode="constant")
        return ndimage.correlate1d(a, box, axis=1, mode="constant")

    sxx = boxsum(gx * gx)
    syy = boxsum(gy * gy)
    sxy = boxsum(gx * gy)
    r = sxx * syy - sxy * sxy - cfg.k * (sxx + syy) ** 2
    m = cfg.margin
    r[:m, :] = 0.0
    r[-m:, :] = 0.0
    r[:, :m] = 0.0
    r[:, -m:] = 0.0
    return r


def harris_lut(frame: np.ndarray, cfg: HarrisConfig, frame_index: int = 0) -> HarrisLut:
    return HarrisLut(harris_response(frame, cfg), frame_index)


def classify_event(e: Event, lut: HarrisLut, cfg: HarrisConfig) -> tuple[bool, float]:
    score = float(lut.scores[e.y, e.x])
    return score > cfg.score_threshold, score


@dataclass(frozen=True)
class PipelineConfig:
    stcf: StcfConfig | None = field(default_factory=StcfConfig)  # None disables denoising
    tos: TosConfig = field(default_factory=TosConfig)
    harris: HarrisConfig = field(default_factory=HarrisConfig)
    lut_period: int = 5000
    lut_period_unit: str = "events"  # or "us"

    def __post_init__(self):
        if self.lut_period < 1:
            raise ValueError("lut_period must be >= 1")
        if self.lut_period_unit not in ("events", "us"):
            raise ValueError(f"unknown lut_period_unit {self.lut_period_unit!r}")


@dataclass
class DetectionResult:
    events: EventArray  # accepted events only
    scores: np.ndarray
    is_corner: np.ndarray
    surfaces: list[TosSurface]
    n_input: int
    n_luts: int

    def __len__(self) -> int:
        return len(self.events)

    def records(self) -> Iterator[tuple[Event, bool, float]]:
        for e, c, s in zip(self.events, self.is_corner.tolist(), self.scores.tolist()):
            yield e, c, s

    def frame(self, polarity: int = 0) -> np.ndarray:
        return self.surfaces[polarity].values()


def _chunk_bounds(events: EventArray, cfg: PipelineConfig) -> list[tuple[int, int]]:
    n = len(events)
    if n == 0:
        return []
    if cfg.lut_period_unit == "events":
        edges = list(range(0, n, cfg.lut_period)) + [n]
    else:
        t0 = int(events.t[0])
        marks = np.arange(t0 + cfg.lut_period, int(events.t[-1]) + 1, cfg.lut_period)
        edges = [0] + np.searchsorted(events.t, marks, side="left").tolist() + [n]
    return [(a, b) for a, b in zip(edges[:-1], edges[1:]) if b > a]


def run_pipeline(events: Iterable[Event] | EventArray, geometry: SensorGeometry,
                 cfg: PipelineConfig | None = None, fault: FaultModel | None = None,
                 serial: bool = True) -> DetectionResult:
    """STCF -> event-by-event TOS -> periodic Harris LUT -> per-event lookup.

    With ``serial=False`` the Harris scoring of one snapshot overlaps the TOS
    update of the next chunk; refresh points are the same, so the output is
    identical to the serial run.
    """
    cfg = cfg or PipelineConfig()
    ev = EventArray.from_events(events)
    n_input = len(ev)
    if cfg.stcf is not None and n_input:
        ev = ev[stcf_mask(ev, geometry, cfg.stcf)]
    n = len(ev)
    planes = 2 if cfg.tos.per_polarity else 1
    surfaces = [TosSurface(geometry, cfg.tos) for _ in range(planes)]
    plane_idx = ev.p.astype(np.intp) if planes == 2 else np.zeros(n, dtype=np.intp)
    scores = np.zeros(n, dtype=np.float64)
    luts = [HarrisLut.zeros(geometry) for _ in range(planes)]
    chunks = _chunk_bounds(ev, cfg)
    pool = None if serial else ThreadPoolExecutor(max_workers=1)
    pending = None
    n_luts = 0
    try:
        for ci, (a, b) in enumerate(chunks):
            sub = ev[a:b]
            sub_planes = plane_idx[a:b]
            for p, surf in enumerate(surfaces):
                part = sub if planes == 1 else sub[sub_planes == p]
                update_batch(surf, part, fault)
            if pending is not None:
                luts = pending.result()
                pending = None
            for p in range(planes):
                sel = sub_planes == p
                scores[a:b][sel] = luts[p].scores[sub.y[sel], sub.x[sel]]
            if ci == len(chunks) - 1:
                break
            frames = [s.values() for s in surfaces]
            n_luts += 1
            job = _score_frames
            if pool is None:
                luts = job(frames, cfg.harris, ci)
            else:
                pending = pool.submit(job, frames, cfg.harris, ci)
    finally:
        if pool is not None:
            pool.shutdown(wait=True)
    is_corner = scores > cfg.harris.score_threshold
    return DetectionResult(ev, scores, is_corner, surfaces, n_input, n_luts)


def _score_frames(frames, hcfg, index):
    return [harris_lut(f, hcfg, index) for f in frames]


CSV_HEADER = "t_us,x,y,polarity,score,is_corner"


def write_detections_csv(path: str | os.PathLike, result: DetectionResult) -> None:
    ev = result.events
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(CSV_HEADER + "\n")
        if len(ev) == 0:
            return
        rows = zip(ev.t.tolist(), ev.x.tolist(), ev.y.tolist(), ev.p.astype(np.int8).tolist(),
                   result.scores.tolist(), result.is_corner.astype(np.int8).tolist())
        fh.write("\n".join(f"{t},{x},{y},{p},{s!r},{c}" for t, x, y, p, s, c in rows))
        fh.write("\n")


def read_detections_csv(path: str | os.PathLike) -> dict[str, np.ndarray]:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != CSV_HEADER:
            raise ValueError(f"unexpected header {header!r}")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    cols = CSV_HEADER.split(",")
    if data.size == 0:
        return {c: np.empty(0) for c in cols}
    return dict(zip(cols, data.T))


def write_score_map(path: str | os.PathLike, lut: HarrisLut) -> None:
    """Little-endian float32 grid behind a length-prefixed JSON header."""
    h, w = lut.scores.shape
    header = json.dumps({"width": w, "height": h, "frame_index": lut.frame_index,
                         "dtype": "<f4"}).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(lut.scores.astype("<f4").tobytes())


def read_score_map(path: str | os.PathLike) -> HarrisLut:
    with open(path, "rb") as fh:
        (hlen,) = struct.unpack("<I", fh.read(4))
        meta = json.loads(fh.read(hlen))
        data = np.frombuffer(fh.read(), dtype="<f4")
    scores = data.reshape(meta["height"], meta["width"]).astype(np.float64)
    return HarrisLut(scores, meta["frame_index"])
