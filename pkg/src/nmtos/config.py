"""Run configuration: JSON file (nested or dotted keys) plus flag overrides."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .denoise import StcfConfig
from .events import SensorGeometry
from .harris import HarrisConfig, PipelineConfig
from .tos import TosConfig


class ConfigError(ValueError):
    pass


DEFAULTS: dict[str, Any] = {
    "geometry": "240x180",
    "seed": 0,
    "output_dir": ".",
    "stcf.enabled": True,
    "stcf.window_us": 5000,
    "stcf.support": 2,
    "stcf.radius": 1,
    "tos.patch_size": 7,
    "tos.threshold": 225,
    "tos.mode": "quantized",
    "tos.per_polarity": False,
    "tos.zero_decode": 0,
    "harris.sobel_aperture": 5,
    "harris.window_aperture": 5,
    "harris.k": 0.04,
    "harris.score_threshold": 3.0e7,
    "lut.period": 5000,
    "lut.unit": "events",
    "fault.ber": 0.0,
    "fault.per_word": False,
    "fault.center": True,
    "dvfs.enabled": True,
    "dvfs.window_us": 10_000,
    "dvfs.counter_bits": 20,
    "dvfs.headroom": 1.0,
    "dvfs.op_table": None,
    "hw.buffer_ns": 1000.0,
    "eval.tolerance_px": 3.0,
    "eval.ber_list": [0.0, 0.002, 0.025],
    "scene.kind": "polygon",
    "scene.duration_us": 150_000,
    "scene.edge_rate": 2.0,
    "scene.velocity_x": 1000.0,
    "scene.velocity_y": 0.0,
    "scene.omega": 2.0,
    "scene.jitter_px": 0.5,
    "scene.noise_rate": 0.5,
}


def _flatten(d: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def _typed(key: str, value: Any) -> Any:
    default = DEFAULTS[key]
    if value is None or default is None:
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key} must be true/false, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, (int, float)) or value != int(value):
            raise ConfigError(f"{key} must be an integer, got {value!r}")
        return int(value)
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key} must be a number, got {value!r}")
        return float(value)
    if isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigError(f"{key} must be a list")
        return [float(v) for v in value]
    return value


@dataclass
class RunConfig:
    values: dict = field(default_factory=lambda: dict(DEFAULTS))

    @classmethod
    def load(cls, path: str | os.PathLike | None = None,
             overrides: dict | None = None) -> "RunConfig":
        raw: dict = {}
        if path is not None:
            try:
                with open(path, encoding="utf-8") as fh:
                    raw = json.load(fh)
            except (OSError, json.JSONDecodeError) as exc:
                raise ConfigError(f"cannot read config {path}: {exc}") from exc
            if not isinstance(raw, dict):
                raise ConfigError("config file must hold a JSON object")
        flat = _flatten(raw)
        flat.update({k: v for k, v in (overrides or {}).items() if v is not None})
        unknown = sorted(set(flat) - set(DEFAULTS))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        values = dict(DEFAULTS)
        for k, v in flat.items():
            values[k] = _typed(k, v)
        cfg = cls(values)
        cfg.validate()
        return cfg

    def __getitem__(self, key: str) -> Any:
        return self.values[key]

    @property
    def geometry(self) -> SensorGeometry:
        try:
            return SensorGeometry.parse(self["geometry"])
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def stcf(self) -> StcfConfig | None:
        if not self["stcf.enabled"]:
            return None
        return StcfConfig(self["stcf.window_us"], self["stcf.support"], self["stcf.radius"])

    def tos(self, mode: str | None = None) -> TosConfig:
        return TosConfig(self["tos.patch_size"], self["tos.threshold"], mode or self["tos.mode"],
                         self["tos.per_polarity"], self["tos.zero_decode"])

    def harris(self) -> HarrisConfig:
        return HarrisConfig(self["harris.sobel_aperture"], self["harris.window_aperture"],
                            self["harris.k"], self["harris.score_threshold"])

    def pipeline(self, mode: str | None = None) -> PipelineConfig:
        return PipelineConfig(self.stcf(), self.tos(mode), self.harris(),
                              self["lut.period"], self["lut.unit"])

    def seeds(self) -> dict[str, int]:
        """Per-stage seeds split from the master seed."""
        names = ("scene", "stream", "fault")
        kids = np.random.SeedSequence(self["seed"]).spawn(len(names))
        return {n: int(k.generate_state(1)[0]) for n, k in zip(names, kids)}

    def validate(self) -> None:
        try:
            self.geometry
            self.pipeline()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if not 0.0 <= self["fault.ber"] <= 1.0:
            raise ConfigError(f"fault.ber must be in [0, 1], got {self['fault.ber']}")
        for b in self["eval.ber_list"]:
            if not 0.0 <= b <= 1.0:
                raise ConfigError(f"ber values must be in [0, 1], got {b}")
        if self["dvfs.window_us"] < 2 or self["dvfs.window_us"] % 2:
            raise ConfigError("dvfs.window_us must be an even number >= 2")
        if not 1 <= self["dvfs.counter_bits"] <= 62:
            raise ConfigError("dvfs.counter_bits must be in [1, 62]")
        if self["dvfs.headroom"] <= 0:
            raise ConfigError("dvfs.headroom must be > 0")
        if self["eval.tolerance_px"] < 0:
            raise ConfigError("eval.tolerance_px must be >= 0")
        if self["scene.kind"] not in ("polygon", "square"):
            raise ConfigError(f"unknown scene.kind {self['scene.kind']!r}")

    def to_dict(self) -> dict:
        return dict(self.values)
