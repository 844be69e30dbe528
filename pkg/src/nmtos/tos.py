"""
Threshold-Ordinal Surface (TOS) maintenance.

Two storage modes share one update rule:

* ``quantized``: each pixel holds a 5-bit code ``s``; value = 224 + s for
  s > 0 and 0 for s = 0. Only values in {0} and [225, 255] are representable,
  which is all a threshold >= 225 ever produces.
* ``reference``: plain 8-bit values, any threshold in [1, 255].

Write-back errors are modelled in quantized mode only: every enabled
write-back (original word nonzero, plus the centre write) XORs its code with a
random flip mask drawn from a :class:`FaultModel`.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import NamedTuple

import numba
import numpy as np

from .events import Event, EventArray, SensorGeometry

CODE_BITS = 5
CODE_MASK = (1 << CODE_BITS) - 1
CODE_OFFSET = 224  # value represented by the omitted high bits (0b111 << 5)
MIN_QUANTIZED_TH = CODE_OFFSET + 1
TOS_MAX = 255


class TosDomainError(ValueError):
    pass


@dataclass(frozen=True)
class TosConfig:
    patch_size: int = 7
    threshold: int = 225
    mode: str = "quantized"  # or "reference"
    per_polarity: bool = False
    zero_decode: int = 0  # value a stored 0 code reads back as (0 or 224)

    def __post_init__(self):
        if self.patch_size < 3 or self.patch_size % 2 == 0:
            raise ValueError(f"patch_size must be odd and >= 3, got {self.patch_size}")
        if self.mode not in ("quantized", "reference"):
            raise ValueError(f"unknown tos mode {self.mode!r}")
        lo = MIN_QUANTIZED_TH if self.mode == "quantized" else 1
        if not lo <= self.threshold <= TOS_MAX:
            raise ValueError(f"threshold must be in [{lo}, 255] in {self.mode} mode, "
                             f"got {self.threshold}")
        if self.zero_decode not in (0, CODE_OFFSET):
            raise ValueError("zero_decode must be 0 or 224")

    @property
    def half(self) -> int:
        return self.patch_size // 2


def encode5(v: int) -> int:
    if v != 0 and not MIN_QUANTIZED_TH <= v <= TOS_MAX:
        raise TosDomainError(f"TOS value {v} is not representable in 5 bits")
    return v & CODE_MASK


def decode5(s: int, zero_decode: int = 0) -> int:
    if not 0 <= s <= CODE_MASK:
        raise TosDomainError(f"code {s} out of 5-bit range")
    return CODE_OFFSET + s if s else zero_decode


@dataclass
class FaultModel:
    """Random write-back bit errors.

    Flip masks are drawn from one seeded generator in write-back order, so a
    per-event replay and the batch kernel see the same faults.
    """

    ber: float
    seed: int = 0
    per_word: bool = False
    fault_center: bool = True

    def __post_init__(self):
        if not 0.0 <= self.ber <= 1.0:
            raise ValueError(f"ber must be in [0, 1], got {self.ber}")
        self._rng = np.random.default_rng(self.seed)
        self._buf = np.empty(0, dtype=np.uint8)
        self._pos = 0

    def _draw(self, n: int) -> np.ndarray:
        if self.per_word:
            u = self._rng.random((n, 2))
            hit = u[:, 0] < self.ber
            return np.where(hit, 1 + np.floor(u[:, 1] * CODE_MASK), 0).astype(np.uint8)
        bits = self._rng.random((n, CODE_BITS)) < self.ber
        return (bits @ (1 << np.arange(CODE_BITS))).astype(np.uint8)

    def available(self, n: int) -> np.ndarray:
        """Return at least ``n`` unconsumed masks without consuming them."""
        left = len(self._buf) - self._pos
        if left < n:
            fresh = self._draw(max(n - left, 4096))
            self._buf = np.concatenate([self._buf[self._pos:], fresh])
            self._pos = 0
        return self._buf[self._pos:]

    def consume(self, n: int) -> None:
        self._pos += n

    def take(self, n: int) -> np.ndarray:
        out = self.available(n)[:n].copy()
        self.consume(n)
        return out


def inject_write_error(s: int, fault: FaultModel) -> int:
    return int(s) ^ int(fault.take(1)[0])


class UpdateTrace(NamedTuple):
    row_start: int
    row_stop: int  # exclusive
    col_start: int
    col_stop: int
    writebacks: int  # enabled write-backs, centre included

    @property
    def rows(self) -> int:
        return self.row_stop - self.row_start


class TosSurface:
    """One TOS plane over the sensor; ``words`` holds codes or 8-bit values per mode."""

    def __init__(self, geometry: SensorGeometry, cfg: TosConfig | None = None):
        self.geometry = geometry
        self.cfg = cfg or TosConfig()
        self.words = np.zeros(geometry.shape, dtype=np.uint8)

    @property
    def quantized(self) -> bool:
        return self.cfg.mode == "quantized"

    def values(self) -> np.ndarray:
        """Decoded 8-bit frame (a copy)."""
        if not self.quantized:
            return self.words.copy()
        table = np.arange(CODE_OFFSET, CODE_OFFSET + 32, dtype=np.uint8)
        table[0] = self.cfg.zero_decode
        return table[self.words]

    def update(self, e: Event, fault: FaultModel | None = None) -> UpdateTrace:
        return tos_update(self, e, fault)

    def update_batch(self, events: EventArray, fault: FaultModel | None = None) -> int:
        """Apply a whole array of events; returns total enabled write-backs."""
        return update_batch(self, events, fault)


def tos_update(surface: TosSurface, e: Event, fault: FaultModel | None = None) -> UpdateTrace:
    cfg = surface.cfg
    words = surface.words
    h, w = words.shape
    r = cfg.half
    y0, y1 = max(e.y - r, 0), min(e.y + r + 1, h)
    x0, x1 = max(e.x - r, 0), min(e.x + r + 1, w)
    patch = words[y0:y1, x0:x1]  # view
    live = patch != 0
    cy, cx = e.y - y0, e.x - x0
    if surface.quantized:
        th_code = cfg.threshold - CODE_OFFSET
        dec = np.where(live, patch.astype(np.int16) - 1, 0)
        new = np.where(dec < th_code, 0, dec).astype(np.uint8)
        center = np.uint8(CODE_MASK)
    else:
        dec = patch.astype(np.int16) - 1
        new = np.where(live & (dec >= cfg.threshold), dec, 0).astype(np.uint8)
        center = np.uint8(TOS_MAX)
    new[cy, cx] = center
    enabled = live.copy()
    enabled[cy, cx] = True
    n_wb = int(enabled.sum())
    if fault is not None:
        if not surface.quantized:
            raise ValueError("fault injection requires quantized mode")
        if not fault.fault_center:
            enabled[cy, cx] = False
        masks = fault.take(int(enabled.sum()))
        new[enabled] ^= masks  # boolean indexing is row-major, as in hardware order
    patch[...] = new
    return UpdateTrace(y0, y1, x0, x1, n_wb)


@numba.njit(cache=True, nogil=True)
def _update_kernel(words, xs, ys, start, stop, half, th, quantized,
                   masks, use_masks, fault_center):
    """Apply events ``start:stop``; stops early when masks would run out.

    Returns (next event index, masks consumed, enabled write-backs).
    """
    h, w = words.shape
    center_val = 31 if quantized else 255
    offset = 224 if quantized else 0
    k = 0
    nwb = 0
    nmask = len(masks)
    budget = (2 * half + 1) * (2 * half + 1)
    i = start
    while i < stop:
        if use_masks and nmask - k < budget:
            break
        x = xs[i]
        y = ys[i]
        for yy in range(max(y - half, 0), min(y + half + 1, h)):
            for xx in range(max(x - half, 0), min(x + half + 1, w)):
                if xx == x and yy == y:
                    v = center_val
                    nwb += 1
                    if use_masks and fault_center:
                        v ^= masks[k]
                        k += 1
                    words[yy, xx] = v
                    continue
                s = words[yy, xx]
                if s == 0:
                    continue
                d = s - 1
                v = 0 if d + offset < th else d
                nwb += 1
                if use_masks:
                    v ^= masks[k]
                    k += 1
                words[yy, xx] = v
        i += 1
    return i, k, nwb


def update_batch(surface: TosSurface, events: EventArray, fault: FaultModel | None = None,
                 start: int = 0, stop: int | None = None) -> int:
    cfg = surface.cfg
    stop = len(events) if stop is None else stop
    if stop <= start:
        return 0
    if fault is not None and not surface.quantized:
        raise ValueError("fault injection requires quantized mode")
    quantized = surface.quantized
    total = 0
    i = start
    if fault is None:
        _, _, total = _update_kernel(surface.words, events.x, events.y, start, stop, cfg.half,
                                     cfg.threshold, quantized, np.zeros(0, np.uint8),
                                     False, False)
        return total
    chunk = cfg.patch_size ** 2 * min(stop - start, 8192)
    while i < stop:
        masks = fault.available(chunk)
        i, used, nwb = _update_kernel(surface.words, events.x, events.y, i, stop, cfg.half,
                                      cfg.threshold, quantized, masks, True, fault.fault_center)
        fault.consume(used)
        total += nwb
    return total


def snapshot(surface: TosSurface) -> np.ndarray:
    return surface.values()


def write_pgm(path: str | os.PathLike, frame: np.ndarray) -> None:
    frame = np.asarray(frame, dtype=np.uint8)
    h, w = frame.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(frame.tobytes())


def read_pgm(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        end = pos
        while not data[end:end + 1].isspace():
            end += 1
        tokens.append(data[pos:end])
        pos = end
    if tokens[0] != b"P5":
        raise ValueError("not a binary PGM")
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise ValueError("only 8-bit PGM supported")
    pos += 1
    return np.frombuffer(data[pos:pos + w * h], dtype=np.uint8).reshape(h, w).copy()
