"""
Corner-detection quality: synthetic scenes with known corners, per-event
precision-recall curves, and clean-vs-faulted comparisons.

AUC convention: trapezoidal area over the achieved (recall, precision)
points, preceded by one anchor at recall 0 carrying the precision of the
highest threshold. No point is extrapolated to recall 1.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from .events import EventArray, SensorGeometry
from .harris import DetectionResult, PipelineConfig, run_pipeline
from .tos import FaultModel, write_pgm

AUC_CONVENTION = ("trapezoid over achieved recall range; anchor at recall 0 with the "
                  "precision of the top threshold; no extrapolation to recall 1")


class DegenerateLabelsError(ValueError):
    pass


@dataclass
class PrCurve:
    precision: np.ndarray  # anchor first, then one point per distinct score (descending)
    recall: np.ndarray
    thresholds: np.ndarray  # +inf for the anchor
    auc: float
    positives: int
    negatives: int

    def points(self) -> list[list[float]]:
        return [[float(r), float(p)] for r, p in zip(self.recall, self.precision)]


def pr_curve(scores: Sequence[float], labels: Sequence[bool]) -> PrCurve:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    if scores.shape != labels.shape:
        raise ValueError("scores and labels differ in length")
    n_pos = int(labels.sum())
    n_neg = int(len(labels) - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise DegenerateLabelsError(
            f"need both classes, got {n_pos} positive / {n_neg} negative")
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    tp = np.cumsum(labels[order])
    # last index of each run of equal scores
    last = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    tp = tp[last].astype(np.float64)
    npred = (last + 1).astype(np.float64)
    precision = tp / npred
    recall = tp / n_pos
    precision = np.r_[precision[0], precision]
    recall = np.r_[0.0, recall]
    thresholds = np.r_[np.inf, s[last]]
    auc = float(np.trapezoid(precision, recall))
    return PrCurve(precision, recall, thresholds, auc, n_pos, n_neg)


@dataclass(frozen=True)
class SyntheticScene:
    """A rigid polygon translating and rotating across the sensor.

    The centre moves at ``velocity`` and reflects off the sensor borders so
    the polygon stays in view for arbitrarily long streams. Each edge emits
    events as a Poisson process of ``edge_rate`` events per pixel of edge
    length per millisecond, positioned exactly on the edge at the event time
    plus Gaussian jitter. ``noise_rate`` adds uniform background activity
    (events per pixel per second).
    """

    geometry: SensorGeometry = SensorGeometry(240, 180)
    vertices: tuple = ((-22.0, -16.0), (18.0, -24.0), (26.0, 14.0), (-10.0, 24.0),
                       (-26.0, 4.0))
    center: tuple = (40.0, 90.0)
    velocity: tuple = (1000.0, 0.0)  # px/s
    omega: float = 2.0  # rad/s
    duration_us: int = 150_000
    edge_rate: float = 2.0
    jitter_px: float = 0.5
    noise_rate: float = 0.5
    seed: int = 0

    @classmethod
    def square(cls, **kw) -> "SyntheticScene":
        kw.setdefault("vertices", ((-20.0, -20.0), (20.0, -20.0), (20.0, 20.0), (-20.0, 20.0)))
        kw.setdefault("omega", 0.0)
        return cls(**kw)

    @classmethod
    def polygon(cls, **kw) -> "SyntheticScene":
        return cls(**kw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["geometry"] = f"{self.geometry.width}x{self.geometry.height}"
        return d

    @property
    def radius(self) -> float:
        return float(np.max(np.hypot(*np.asarray(self.vertices, dtype=np.float64).T)))

    @property
    def perimeter(self) -> float:
        v = np.asarray(self.vertices, dtype=np.float64)
        return float(np.hypot(*(np.roll(v, -1, axis=0) - v).T).sum())

    @property
    def expected_rate_eps(self) -> float:
        w, h = self.geometry.width, self.geometry.height
        return self.perimeter * self.edge_rate * 1000.0 + self.noise_rate * w * h

    def _center_at(self, t):
        out = []
        for axis, size in enumerate((self.geometry.width, self.geometry.height)):
            lo, hi = self.radius + 1.0, size - 1.0 - self.radius - 1.0
            raw = self.center[axis] + self.velocity[axis] * t
            span = hi - lo
            if span <= 0:
                out.append(np.full_like(t, (size - 1) / 2.0))
                continue
            u = np.mod(raw - lo, 2.0 * span)
            out.append(lo + np.where(u < span, u, 2.0 * span - u))
        return out

    def corners_at(self, t_us) -> np.ndarray:
        """Corner positions, shape ``(..., n_vertices, 2)`` as (x, y)."""
        t = np.asarray(t_us, dtype=np.float64) * 1e-6
        v = np.asarray(self.vertices, dtype=np.float64)
        cx, cy = self._center_at(t)
        th = self.omega * t
        c, s = np.cos(th)[..., None], np.sin(th)[..., None]
        x = cx[..., None] + c * v[:, 0] - s * v[:, 1]
        y = cy[..., None] + s * v[:, 0] + c * v[:, 1]
        return np.stack([x, y], axis=-1)

    def render(self, max_events: int | None = None) -> EventArray:
        rng = np.random.default_rng(self.seed)
        w, h = self.geometry.width, self.geometry.height
        v = np.asarray(self.vertices, dtype=np.float64)
        lengths = np.hypot(*(np.roll(v, -1, axis=0) - v).T)
        xs, ys, ps, ts = [], [], [], []
        nv = len(v)
        for i in range(nv):
            n = rng.poisson(lengths[i] * self.edge_rate * self.duration_us / 1000.0)
            t = rng.integers(0, self.duration_us, n)
            corners = self.corners_at(t)
            a, b = corners[:, i], corners[:, (i + 1) % nv]
            u = rng.random(n)[:, None]
            pts = a + u * (b - a) + rng.normal(0.0, self.jitter_px, (n, 2))
            xs.append(pts[:, 0])
            ys.append(pts[:, 1])
            ps.append(np.full(n, i % 2 == 0))
            ts.append(t)
        n_noise = rng.poisson(self.noise_rate * w * h * self.duration_us * 1e-6)
        xs.append(rng.uniform(-0.5, w - 0.5, n_noise))
        ys.append(rng.uniform(-0.5, h - 0.5, n_noise))
        ps.append(rng.random(n_noise) < 0.5)
        ts.append(rng.integers(0, self.duration_us, n_noise))
        x = np.floor(np.concatenate(xs) + 0.5).astype(np.int64)
        y = np.floor(np.concatenate(ys) + 0.5).astype(np.int64)
        p = np.concatenate(ps)
        t = np.concatenate(ts)
        inside = (x >= 0) & (x < w) & (y >= 0) & (y < h)
        x, y, p, t = x[inside], y[inside], p[inside], t[inside]
        order = np.argsort(t, kind="stable")
        if max_events is not None:
            order = order[:max_events]
        return EventArray(x[order], y[order], p[order], t[order])


def ground_truth_labels(events: EventArray, scene: SyntheticScene,
                        tolerance_px: float = 3.0) -> np.ndarray:
    """True where an event lies within ``tolerance_px`` of a true corner at its time."""
    if len(events) == 0:
        return np.zeros(0, dtype=bool)
    corners = scene.corners_at(events.t)  # (n, k, 2)
    d = np.hypot(corners[..., 0] - events.x[:, None], corners[..., 1] - events.y[:, None])
    return d.min(axis=1) <= tolerance_px


@dataclass
class BerRun:
    ber: float
    seed: int
    detections: DetectionResult
    curve: PrCurve
    delta_auc: float = 0.0


@dataclass
class BerReport:
    runs: list[BerRun]
    config: dict = field(default_factory=dict)

    def auc(self, ber: float) -> float:
        return next(r.curve.auc for r in self.runs if r.ber == ber)

    def delta(self, ber: float) -> float:
        return next(r.delta_auc for r in self.runs if r.ber == ber)

    def to_json(self) -> dict:
        return {
            "auc_convention": AUC_CONVENTION,
            "config": self.config,
            "results": [{"ber": r.ber, "seed": r.seed, "auc": r.curve.auc,
                         "delta_auc": r.delta_auc, "events": len(r.detections),
                         "positives": r.curve.positives,
                         "curve": r.curve.points()} for r in self.runs],
        }

    def write(self, out_dir: str | os.PathLike, frames: bool = True) -> None:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "pr_report.json"), "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, indent=2)
        for r in self.runs:
            tag = f"ber_{r.ber:g}"
            with open(os.path.join(out_dir, f"pr_{tag}.csv"), "w", encoding="utf-8") as fh:
                fh.write("threshold,recall,precision\n")
                for th, rc, pr in zip(r.curve.thresholds, r.curve.recall, r.curve.precision):
                    fh.write(f"{th!r},{rc!r},{pr!r}\n")
            if frames:
                write_pgm(os.path.join(out_dir, f"tos_{tag}.pgm"), r.detections.frame(0))


def ber_experiment(events: EventArray, geometry: SensorGeometry, labels_fn,
                   cfg: PipelineConfig | None = None,
                   ber_list: Sequence[float] = (0.0, 0.002, 0.025), seed: int = 0,
                   per_word: bool = False, serial: bool = True) -> BerReport:
    """Run the pipeline once per BER and compare each AUC with the clean run.

    ``labels_fn`` maps the accepted events of a run to ground-truth labels.
    Fault seeds are spawned from ``seed``, one per entry of ``ber_list``.
    """
    cfg = cfg or PipelineConfig()
    if cfg.tos.mode != "quantized":
        cfg = replace(cfg, tos=replace(cfg.tos, mode="quantized"))
    bers = list(ber_list)
    if 0.0 not in bers:
        bers = [0.0] + bers
    for b in bers:
        if not 0.0 <= b <= 1.0:
            raise ValueError(f"ber must be in [0, 1], got {b}")
    seeds = [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(len(bers))]

    def one(args):
        b, s = args
        fault = None if b == 0.0 else FaultModel(b, s, per_word=per_word)
        det = run_pipeline(events, geometry, cfg, fault)
        curve = pr_curve(det.scores, labels_fn(det.events))
        return BerRun(b, s, det, curve)

    jobs = list(zip(bers, seeds))
    if serial:
        runs = [one(j) for j in jobs]
    else:
        with ThreadPoolExecutor() as pool:
            runs = list(pool.map(one, jobs))
    clean = next(r.curve.auc for r in runs if r.ber == 0.0)
    for r in runs:
        r.delta_auc = clean - r.curve.auc
    return BerReport(runs, {"ber_list": bers, "seed": seed, "per_word": per_word})
