"""
Behavioural model of the near-memory TOS macro.

Covers the row-pipelined patch timing, the operating-point table, the
round-robin DVFS rate estimator, per-event energy/drop accounting and the
conventional digital baseline it is compared against.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numba
import numpy as np

from .events import Event, SensorGeometry

# phase shares of the per-row period (PCH, MO, CMP, WR), measured at 0.6 V
PHASE_FRACTIONS = (0.139, 0.306, 0.278, 0.278)

# energy breakdown at 1.2 V; documented, not modelled
POWER_BREAKDOWN_1V2 = {"peripheral": 0.459, "array": 0.319, "driver": 0.116, "sense_amp": 0.106}

REFERENCE_PATCH = 7
BLOCK_ROWS = 180
BLOCK_COLS = 600  # bit columns: 120 pixels x 5 bits
WORD_BITS = 5

CONVENTIONAL_CLOCK_MHZ = 500
CONVENTIONAL_CYCLES_PER_PIXEL = 4
CONVENTIONAL_ENERGY_PJ = 167.0  # at P = 7


@dataclass(frozen=True)
class PipelinePhases:
    t1: float  # precharge
    t2: float  # minus-one
    t3: float  # compare
    t4: float  # write-back

    def __post_init__(self):
        if min(self.t1, self.t2, self.t3, self.t4) <= 0:
            raise ValueError("phase delays must be > 0")

    @property
    def row_period(self) -> float:
        return self.t1 + self.t2 + self.t3 + self.t4

    @classmethod
    def from_fractions(cls, total_ns: float, patch_size: int = REFERENCE_PATCH,
                       fractions: Sequence[float] = PHASE_FRACTIONS) -> "PipelinePhases":
        """Phase delays whose pipelined patch latency equals ``total_ns``."""
        f1, f2, f3, f4 = fractions
        period = total_ns / (patch_size * (f1 + f2) + f3 + f4)
        return cls(f1 * period, f2 * period, f3 * period, f4 * period)


def patch_latency(patch_size: int, phases: PipelinePhases, pipelined: bool = True) -> float:
    """Patch update time in ns.

    Decoupled read/write bitlines let the next row's precharge and read start
    while the previous row is still comparing and writing back.
    """
    if patch_size < 1:
        raise ValueError("patch_size must be >= 1")
    p = phases
    if pipelined:
        return patch_size * (p.t1 + p.t2) + p.t3 + p.t4
    return patch_size * p.row_period


@dataclass(frozen=True)
class OperatingPoint:
    vdd: float
    patch_latency_ns: float
    energy_pj: float
    ber: float = 0.0
    max_throughput_meps: float | None = None
    source: str = "model"  # "reported" for measured rows, "interpolated" otherwise

    def __post_init__(self):
        if self.patch_latency_ns <= 0 or self.energy_pj < 0:
            raise ValueError(f"bad operating point {self}")
        if self.max_throughput_meps is None:
            object.__setattr__(self, "max_throughput_meps", 1000.0 / self.patch_latency_ns)
        if not 0.0 <= self.ber <= 1.0:
            raise ValueError(f"ber out of range at {self.vdd} V")

    def phases(self, patch_size: int = REFERENCE_PATCH) -> PipelinePhases:
        return PipelinePhases.from_fractions(self.patch_latency_ns, patch_size)

    def at_patch(self, patch_size: int) -> tuple[float, float]:
        """(latency_ns, energy_pj) for a patch size other than the reference 7."""
        if patch_size == REFERENCE_PATCH:
            return self.patch_latency_ns, self.energy_pj
        lat = patch_latency(patch_size, self.phases())
        return lat, self.energy_pj * patch_size ** 2 / REFERENCE_PATCH ** 2


# reported endpoints
NMC_1V2 = OperatingPoint(1.2, 16.0, 139.0, 0.0, 63.1, "reported")
NMC_0V6 = OperatingPoint(0.6, 203.0, 26.0, 0.025, 4.9, "reported")


def _interp(vdd: float, ber: float) -> OperatingPoint:
    """Geometric latency and a + b*vdd^2 energy between the two reported endpoints."""
    lo, hi = NMC_0V6, NMC_1V2
    u = (vdd - lo.vdd) / (hi.vdd - lo.vdd)
    lat = lo.patch_latency_ns * (hi.patch_latency_ns / lo.patch_latency_ns) ** u
    b = (hi.energy_pj - lo.energy_pj) / (hi.vdd ** 2 - lo.vdd ** 2)
    a = lo.energy_pj - b * lo.vdd ** 2
    return OperatingPoint(round(vdd, 3), lat, a + b * vdd ** 2, ber, None, "interpolated")


def default_op_table() -> list[OperatingPoint]:
    rows = [NMC_0V6, _interp(0.61, 0.002)]
    rows += [_interp(v / 10, 0.0) for v in range(7, 12)]
    rows.append(NMC_1V2)
    return rows


def endpoint_op_table() -> list[OperatingPoint]:
    """Only the rows with reported latency/energy (0.61 V keeps its BER)."""
    return [NMC_0V6, _interp(0.61, 0.002), NMC_1V2]


def load_op_table(path: str | os.PathLike) -> list[OperatingPoint]:
    with open(path, encoding="utf-8") as fh:
        rows = json.load(fh)
    if not isinstance(rows, list) or not rows:
        raise ValueError("operating-point table must be a non-empty JSON array")
    table = []
    for row in rows:
        unknown = set(row) - {"vdd", "latency_ns", "energy_pj", "ber",
                              "max_throughput_meps", "source"}
        if unknown:
            raise ValueError(f"unknown operating-point keys {sorted(unknown)}")
        table.append(OperatingPoint(float(row["vdd"]), float(row["latency_ns"]),
                                    float(row["energy_pj"]), float(row.get("ber", 0.0)),
                                    row.get("max_throughput_meps"), row.get("source", "file")))
    return sorted(table, key=lambda op: op.vdd)


def save_op_table(path: str | os.PathLike, table: Iterable[OperatingPoint]) -> None:
    rows = [{"vdd": op.vdd, "latency_ns": op.patch_latency_ns, "energy_pj": op.energy_pj,
             "ber": op.ber, "max_throughput_meps": op.max_throughput_meps,
             "source": op.source} for op in table]
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(rows, fh, indent=2)


class Selection(NamedTuple):
    point: OperatingPoint
    overload: bool


def select_op_point(f_e_meps: float, table: Sequence[OperatingPoint],
                    headroom: float = 1.0) -> Selection:
    """Lowest-voltage point whose capacity covers the estimated rate."""
    need = f_e_meps * headroom
    for op in table:
        if op.max_throughput_meps >= need:
            return Selection(op, False)
    return Selection(max(table, key=lambda op: op.max_throughput_meps), True)


class RateEstimate(NamedTuple):
    t_us: int  # window boundary at which the estimate was produced
    f_e_meps: float
    ptr: int


@dataclass
class DvfsState:
    """Three round-robin counters, each counting for half the window."""

    tw_us: int = 10_000
    bits: int = 20
    counters: list[int] = field(default_factory=lambda: [0, 0, 0])
    ptr: int = 0
    t_origin: int | None = None
    next_boundary: int | None = None

    def __post_init__(self):
        if self.tw_us < 2 or self.tw_us % 2:
            raise ValueError("tw_us must be an even number of microseconds")

    @property
    def stride_us(self) -> int:
        return self.tw_us // 2

    @property
    def counter_max(self) -> int:
        return (1 << self.bits) - 1


def dvfs_tick(state: DvfsState, e: Event | int) -> RateEstimate | None:
    """Count one event; return a new rate estimate when a half-window closed."""
    t = e if isinstance(e, (int, np.integer)) else e.t
    if state.next_boundary is None:
        state.t_origin = int(t)
        state.next_boundary = int(t) + state.stride_us
    est = None
    while t >= state.next_boundary:
        state.ptr = (state.ptr + 1) % 3
        state.counters[state.ptr] = 0
        inactive = sum(state.counters) - state.counters[state.ptr]
        est = RateEstimate(state.next_boundary, inactive / state.tw_us, state.ptr)
        state.next_boundary += state.stride_us
    if state.counters[state.ptr] < state.counter_max:
        state.counters[state.ptr] += 1
    return est


@dataclass
class EnergyLedger:
    buffer_ns: float = 1000.0  # backlog tolerated before an event is dropped
    energy_pj: float = 0.0
    busy_ns: float = 0.0
    processed: int = 0
    dropped: int = 0
    t_first: int | None = None
    t_last: int | None = None
    busy_until_ns: float = 0.0
    histogram: dict = field(default_factory=dict)  # vdd -> processed events

    @property
    def wall_us(self) -> int:
        if self.t_first is None:
            return 0
        return self.t_last - self.t_first + 1

    @property
    def events(self) -> int:
        return self.processed + self.dropped

    def average_power_mw(self, duration_us: float | None = None) -> float:
        d = self.wall_us if duration_us is None else duration_us
        if d <= 0:
            return 0.0
        return self.energy_pj / d * 1e-3  # pJ/us = uW


def account_event(ledger: EnergyLedger, op: OperatingPoint, t_us: int,
                  patch_size: int = REFERENCE_PATCH) -> bool:
    """Charge one event to ``ledger``; returns False if it had to be dropped.

    The macro is a single server: an event starts when both it has arrived
    and the previous update finished. If it would finish later than
    ``buffer_ns`` after its arrival it is dropped and costs nothing.
    """
    lat, energy = op.at_patch(patch_size)
    t_ns = t_us * 1000.0
    if ledger.t_first is None:
        ledger.t_first = t_us
    ledger.t_last = t_us
    start = max(ledger.busy_until_ns, t_ns)
    if start + lat > t_ns + ledger.buffer_ns:
        ledger.dropped += 1
        return False
    ledger.busy_until_ns = start + lat
    ledger.busy_ns += lat
    ledger.energy_pj += energy
    ledger.processed += 1
    ledger.histogram[op.vdd] = ledger.histogram.get(op.vdd, 0) + 1
    return True


def conventional_baseline(patch_size: int = REFERENCE_PATCH) -> tuple[float, float]:
    """(latency_ns, energy_pj) of a sequential digital TOS updater.

    Four cycles per patch pixel at 500 MHz; energy scaled per pixel from the
    7x7 calibration.
    """
    pixels = patch_size ** 2
    latency = pixels * CONVENTIONAL_CYCLES_PER_PIXEL * 1000.0 / CONVENTIONAL_CLOCK_MHZ
    return latency, CONVENTIONAL_ENERGY_PJ * pixels / REFERENCE_PATCH ** 2


def blocks_required(geometry: SensorGeometry) -> int:
    return math.ceil(geometry.width * geometry.height * WORD_BITS / (BLOCK_ROWS * BLOCK_COLS))


@numba.njit(cache=True)
def _simulate_kernel(t, cap, lat, tw, counter_max, use_dvfs, buffer_ns, start_idx):
    n = len(t)
    op_idx = np.empty(n, dtype=np.int64)
    ok = np.zeros(n, dtype=np.bool_)
    est_t = np.empty(n, dtype=np.int64)
    est_f = np.empty(n, dtype=np.float64)
    est_ptr = np.empty(n, dtype=np.int64)
    est_op = np.empty(n, dtype=np.int64)
    n_est = 0
    if n == 0:
        return op_idx, ok, est_t[:0], est_f[:0], est_ptr[:0], est_op[:0], 0.0
    stride = tw // 2
    c = np.zeros(3, dtype=np.int64)
    ptr = 0
    boundary = t[0] + stride
    cur = start_idx
    busy = 0.0
    m = len(cap)
    for i in range(n):
        ti = t[i]
        while ti >= boundary:
            ptr = (ptr + 1) % 3
            c[ptr] = 0
            f = (c[0] + c[1] + c[2]) / tw
            if use_dvfs:
                cur = -1
                best = 0
                for j in range(m):
                    if cap[j] > cap[best]:
                        best = j
                    if cur < 0 and cap[j] >= f:
                        cur = j
                if cur < 0:
                    cur = best
            est_t[n_est] = boundary
            est_f[n_est] = f
            est_ptr[n_est] = ptr
            est_op[n_est] = cur
            n_est += 1
            boundary += stride
        if c[ptr] < counter_max:
            c[ptr] += 1
        t_ns = ti * 1000.0
        s = busy if busy > t_ns else t_ns
        op_idx[i] = cur
        if s + lat[cur] <= t_ns + buffer_ns:
            busy = s + lat[cur]
            ok[i] = True
    return op_idx, ok, est_t[:n_est], est_f[:n_est], est_ptr[:n_est], est_op[:n_est], busy


@dataclass
class HardwareRun:
    table: list[OperatingPoint]
    op_index: np.ndarray  # per event
    processed: np.ndarray  # per-event bool
    trace: list[tuple[RateEstimate, OperatingPoint, bool]]
    ledger: EnergyLedger
    patch_size: int


def simulate_hardware(timestamps: np.ndarray | Sequence[int],
                      table: Sequence[OperatingPoint] | None = None,
                      dvfs: bool = True, tw_us: int = 10_000, bits: int = 20,
                      patch_size: int = REFERENCE_PATCH, headroom: float = 1.0,
                      buffer_ns: float = 1000.0, start: str = "min") -> HardwareRun:
    """Drive the DVFS estimator and ledger over a whole timestamp stream.

    Batch equivalent of calling :func:`dvfs_tick`, :func:`select_op_point`
    and :func:`account_event` per event. Until the first estimate the macro
    runs at the lowest-voltage point (``start="max"`` for the top point).
    Without DVFS it is pinned at the highest-capacity point.
    """
    table = sorted(table or default_op_table(), key=lambda op: op.vdd)
    t = np.ascontiguousarray(timestamps, dtype=np.int64)
    per = [op.at_patch(patch_size) for op in table]
    lat = np.array([p[0] for p in per], dtype=np.float64)
    energy = np.array([p[1] for p in per], dtype=np.float64)
    cap = np.array([op.max_throughput_meps for op in table], dtype=np.float64) / headroom
    top = int(np.argmax(cap))
    if start not in ("min", "max"):
        raise ValueError(f"start must be 'min' or 'max', got {start!r}")
    first = 0 if (dvfs and start == "min") else top
    op_idx, ok, et, ef, eptr, eop, busy = _simulate_kernel(
        t, cap, lat, np.int64(tw_us), np.int64((1 << bits) - 1), dvfs,
        float(buffer_ns), first)
    ledger = EnergyLedger(buffer_ns=buffer_ns)
    if len(t):
        ledger.t_first, ledger.t_last = int(t[0]), int(t[-1])
        done = op_idx[ok]
        ledger.processed = int(ok.sum())
        ledger.dropped = int(len(t) - ledger.processed)
        ledger.energy_pj = float(energy[done].sum())
        ledger.busy_ns = float(lat[done].sum())
        counts = np.bincount(done, minlength=len(table))
        ledger.histogram = {table[j].vdd: int(counts[j]) for j in range(len(table)) if counts[j]}
        ledger.busy_until_ns = float(busy)
    trace = []
    for bt, f, p, j in zip(et.tolist(), ef.tolist(), eptr.tolist(), eop.tolist()):
        overload = f * headroom > table[top].max_throughput_meps
        trace.append((RateEstimate(bt, f, p), table[j], overload))
    return HardwareRun(table, op_idx, ok, trace, ledger, patch_size)


def hardware_report(run: HardwareRun, pinned: HardwareRun | None = None) -> dict:
    """Summary numbers plus the comparison against the conventional design."""
    led = run.ledger
    top = max(run.table, key=lambda op: op.max_throughput_meps)
    low = min(run.table, key=lambda op: op.vdd)
    conv_lat, conv_energy = conventional_baseline(run.patch_size)
    top_lat, top_energy = top.at_patch(run.patch_size)
    low_lat, low_energy = low.at_patch(run.patch_size)
    rep = {
        "events": led.events,
        "processed": led.processed,
        "dropped": led.dropped,
        "wall_us": led.wall_us,
        "total_energy_pj": led.energy_pj,
        "average_power_mw": led.average_power_mw(),
        "busy_ns": led.busy_ns,
        "histogram": {f"{v:g}": n for v, n in sorted(led.histogram.items())},
        "max_point": {"vdd": top.vdd, "latency_ns": top_lat, "energy_pj": top_energy,
                      "throughput_meps": top.max_throughput_meps},
        "min_point": {"vdd": low.vdd, "latency_ns": low_lat, "energy_pj": low_energy,
                      "throughput_meps": low.max_throughput_meps},
        "conventional": {"latency_ns": conv_lat, "energy_pj": conv_energy,
                         "throughput_meps": 1000.0 / conv_lat},
        "speedup_vs_conventional": conv_lat / top_lat,
        "speedup_vs_conventional_min_vdd": conv_lat / low_lat,
        "energy_ratio_vs_conventional": conv_energy / top_energy,
        "energy_ratio_vs_conventional_min_vdd": conv_energy / low_energy,
        "overload_windows": sum(1 for _, _, o in run.trace if o),
        "power_breakdown_1v2": POWER_BREAKDOWN_1V2,
    }
    if pinned is not None:
        rep["energy_without_dvfs_pj"] = pinned.ledger.energy_pj
        rep["average_power_without_dvfs_mw"] = pinned.ledger.average_power_mw()
        rep["dvfs_energy_saving"] = (pinned.ledger.energy_pj / led.energy_pj
                                     if led.energy_pj else float("inf"))
    return rep


def write_dvfs_trace(path: str | os.PathLike, run: HardwareRun) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("t_us,f_e_meps,vdd,capacity_meps,overload\n")
        for est, op, overload in run.trace:
            fh.write(f"{est.t_us},{est.f_e_meps:.6f},{op.vdd:g},"
                     f"{op.max_throughput_meps:.4f},{int(overload)}\n")
