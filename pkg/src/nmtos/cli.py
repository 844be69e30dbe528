"""
Command-line front end.

Exit codes: 0 success, 2 configuration error, 3 data error.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time

from .config import ConfigError, RunConfig
from .denoise import stcf_mask
from .events import EventArray, EventError, load_arrays, synth_stream, write_stream
from .evaluate import (AUC_CONVENTION, SyntheticScene, ber_experiment, ground_truth_labels)
from .harris import run_pipeline, write_detections_csv, write_score_map, harris_lut
from .hwmodel import (default_op_table, hardware_report, load_op_table, simulate_hardware,
                      write_dvfs_trace)
from .tos import FaultModel, write_pgm

EXIT_OK, EXIT_CONFIG, EXIT_DATA = 0, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: config error: {message}\n")


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--geometry", help="sensor size WxH")
    p.add_argument("--output-dir", help="directory for outputs")
    p.add_argument("--serial", action="store_true",
                   help="force the sequential execution mode")
    return p


def _input_args(p: argparse.ArgumentParser, synthetic=("polygon", "square")) -> None:
    p.add_argument("input", nargs="?", help="event file ('t x y p' lines)")
    p.add_argument("--synthetic", choices=synthetic, help="use a synthetic scene instead")
    p.add_argument("--events", type=int, help="number of synthetic events to generate")


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    ap = _Parser(prog="nmtos", description="Near-memory TOS corner-detection simulator")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("filter", parents=[common], help="STCF-denoise an event file")
    p.add_argument("input")
    p.add_argument("-o", "--output", help="filtered event file")

    p = sub.add_parser("detect", parents=[common], help="run the corner pipeline")
    _input_args(p)
    p.add_argument("-o", "--output", help="detections CSV")
    p.add_argument("--tos-mode", choices=("quantized", "reference"))
    p.add_argument("--lut-period", type=int)
    p.add_argument("--threshold", type=float, help="Harris score threshold")
    p.add_argument("--ber", type=float, help="write-back bit error rate")
    p.add_argument("--pgm", action="store_true", help="dump the final TOS frame")
    p.add_argument("--score-map", action="store_true", help="dump the last Harris LUT")

    for name, helptext in (("simulate", "hardware energy/latency report"),
                           ("dvfs-trace", "DVFS rate/voltage trace")):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("input", nargs="?")
        p.add_argument("--profile", help="synthetic rate profile 'dur_us:rate_eps,...'")
        p.add_argument("--no-dvfs", action="store_true", help="pin the maximum voltage")
        p.add_argument("--no-stcf", action="store_true", help="feed every event to the TOS")
        p.add_argument("--op-table", help="operating-point JSON table")
        p.add_argument("-o", "--output")

    p = sub.add_parser("eval", parents=[common], help="precision-recall under write errors")
    _input_args(p)
    p.add_argument("--ber", help="comma-separated BER list, e.g. 0,0.002,0.025")
    p.add_argument("--per-word", action="store_true", help="BER applies per word, not per bit")
    p.add_argument("--lut-period", type=int)
    p.add_argument("--tolerance", type=float, help="ground-truth radius in pixels")

    p = sub.add_parser("render-tos", parents=[common], help="write the TOS frame as PGM")
    _input_args(p)
    p.add_argument("--ber", type=float)
    p.add_argument("--tos-mode", choices=("quantized", "reference"))
    p.add_argument("-o", "--output")
    return ap


def _config(args, **extra) -> RunConfig:
    over = {"seed": args.seed, "geometry": args.geometry, "output_dir": args.output_dir}
    over.update(extra)
    return RunConfig.load(args.config, over)


def _out(cfg: RunConfig, explicit: str | None, default_name: str) -> str:
    if explicit:
        d = os.path.dirname(explicit)
        if d:
            os.makedirs(d, exist_ok=True)
        return explicit
    os.makedirs(cfg["output_dir"], exist_ok=True)
    return os.path.join(cfg["output_dir"], default_name)


def _scene(cfg: RunConfig, kind: str, n_events: int | None = None) -> SyntheticScene:
    make = SyntheticScene.square if kind == "square" else SyntheticScene.polygon
    g = cfg.geometry
    kw = dict(geometry=g, duration_us=cfg["scene.duration_us"],
              edge_rate=cfg["scene.edge_rate"],
              velocity=(cfg["scene.velocity_x"], cfg["scene.velocity_y"]),
              jitter_px=cfg["scene.jitter_px"], noise_rate=cfg["scene.noise_rate"],
              center=(min(40.0, g.width / 2), g.height / 2), seed=cfg.seeds()["scene"])
    if kind != "square":
        kw["omega"] = cfg["scene.omega"]
    scene = make(**kw)
    if n_events is not None:
        kw["duration_us"] = math.ceil(n_events / scene.expected_rate_eps * 1e6 * 1.05) + 1
        scene = make(**kw)
    return scene


def _events(args, cfg: RunConfig) -> tuple[EventArray, SyntheticScene | None]:
    if getattr(args, "synthetic", None):
        scene = _scene(cfg, args.synthetic, args.events)
        return scene.render(max_events=args.events), scene
    if not args.input:
        raise ConfigError("an input file or --synthetic is required")
    return load_arrays(args.input, cfg.geometry), None


def _manifest(cfg: RunConfig, command: str, extra: dict | None = None) -> dict:
    m = {"command": command, "config": cfg.to_dict(), "seeds": cfg.seeds()}
    m.update(extra or {})
    return m


def cmd_filter(args) -> int:
    cfg = _config(args)
    ev = load_arrays(args.input, cfg.geometry)
    stcf = cfg.stcf()
    kept = ev[stcf_mask(ev, cfg.geometry, stcf)] if stcf is not None else ev
    out = _out(cfg, args.output, "filtered.txt")
    write_stream(out, kept)
    print(f"kept {len(kept)} of {len(ev)}")
    return EXIT_OK


def cmd_detect(args) -> int:
    over = {"tos.mode": args.tos_mode, "lut.period": args.lut_period,
            "harris.score_threshold": args.threshold, "fault.ber": args.ber}
    cfg = _config(args, **over)
    t0 = time.perf_counter()
    ev, scene = _events(args, cfg)
    pcfg = cfg.pipeline()
    fault = None
    if cfg["fault.ber"] > 0:
        fault = FaultModel(cfg["fault.ber"], cfg.seeds()["fault"], cfg["fault.per_word"],
                           cfg["fault.center"])
    det = run_pipeline(ev, cfg.geometry, pcfg, fault, serial=args.serial)
    out = _out(cfg, args.output, "detections.csv")
    write_detections_csv(out, det)
    base = os.path.splitext(out)[0]
    if args.pgm:
        for p, surf in enumerate(det.surfaces):
            write_pgm(f"{base}_tos{p}.pgm", surf.values())
    if args.score_map:
        write_score_map(base + "_scores.bin", harris_lut(det.frame(0), pcfg.harris, det.n_luts))
    extra = {"input_events": det.n_input, "accepted_events": len(det),
             "corners": int(det.is_corner.sum()), "luts": det.n_luts}
    if scene is not None:
        extra["scene"] = scene.to_dict()
    with open(base + "_run.json", "w", encoding="utf-8") as fh:
        json.dump(_manifest(cfg, "detect", extra), fh, indent=2)
    print(f"{len(det)} events, {extra['corners']} corners in "
          f"{time.perf_counter() - t0:.2f} s -> {out}")
    return EXIT_OK


def _parse_profile(text: str) -> list[tuple[float, float]]:
    try:
        segs = [tuple(float(v) for v in part.split(":")) for part in text.split(",")]
    except ValueError as exc:
        raise ConfigError(f"bad profile {text!r}") from exc
    if any(len(s) != 2 or s[0] < 0 or s[1] < 0 for s in segs):
        raise ConfigError(f"bad profile {text!r}, expected dur_us:rate_eps,...")
    return segs


def _hardware(args, cfg: RunConfig):
    if args.profile:
        ev = synth_stream(_parse_profile(args.profile), cfg.geometry, cfg.seeds()["stream"])
    elif args.input:
        ev = load_arrays(args.input, cfg.geometry)
    else:
        raise ConfigError("an input file or --profile is required")
    stcf = cfg.stcf()
    tos_events = ev[stcf_mask(ev, cfg.geometry, stcf)] if stcf is not None else ev
    table_path = args.op_table or cfg["dvfs.op_table"]
    try:
        table = load_op_table(table_path) if table_path else default_op_table()
    except (OSError, KeyError, ValueError) as exc:
        raise ConfigError(f"operating-point table: {exc}") from exc
    kw = dict(table=table, tw_us=cfg["dvfs.window_us"], bits=cfg["dvfs.counter_bits"],
              patch_size=cfg["tos.patch_size"], headroom=cfg["dvfs.headroom"],
              buffer_ns=cfg["hw.buffer_ns"])
    run = simulate_hardware(tos_events.t, dvfs=cfg["dvfs.enabled"], **kw)
    pinned = simulate_hardware(tos_events.t, dvfs=False, **kw)
    return ev, tos_events, run, pinned


def cmd_simulate(args) -> int:
    cfg = _config(args, **{"dvfs.enabled": False if args.no_dvfs else None,
                           "stcf.enabled": False if args.no_stcf else None})
    ev, tos_events, run, pinned = _hardware(args, cfg)
    rep = hardware_report(run, pinned)
    rep["input_events"] = len(ev)
    rep["tos_events"] = len(tos_events)
    rep["dvfs"] = cfg["dvfs.enabled"]
    rep["vdd_used"] = sorted(run.ledger.histogram)
    out = _out(cfg, args.output, "hardware_report.json")
    with open(out, "w", encoding="utf-8") as fh:
        json.dump(_manifest(cfg, "simulate", {"report": rep}), fh, indent=2)
    print(f"energy {rep['total_energy_pj'] / 1e3:.3f} nJ, power {rep['average_power_mw']:.4f} mW, "
          f"dropped {rep['dropped']} -> {out}")
    return EXIT_OK


def cmd_dvfs_trace(args) -> int:
    cfg = _config(args, **{"dvfs.enabled": False if args.no_dvfs else None,
                           "stcf.enabled": False if args.no_stcf else None})
    _, _, run, _ = _hardware(args, cfg)
    out = _out(cfg, args.output, "dvfs_trace.csv")
    write_dvfs_trace(out, run)
    print(f"{len(run.trace)} estimates -> {out}")
    return EXIT_OK


def _parse_bers(text: str | None) -> list[float] | None:
    if text is None:
        return None
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad --ber list {text!r}") from exc


def cmd_eval(args) -> int:
    cfg = _config(args, **{"eval.ber_list": _parse_bers(args.ber), "lut.period": args.lut_period,
                           "eval.tolerance_px": args.tolerance,
                           "fault.per_word": True if args.per_word else None})
    ev, scene = _events(args, cfg)
    pcfg = cfg.pipeline(mode="quantized")
    if scene is not None:
        tol = cfg["eval.tolerance_px"]
        labels_fn = lambda accepted: ground_truth_labels(accepted, scene, tol)  # noqa: E731
        label_source = "synthetic ground truth"
    else:
        clean = run_pipeline(ev, cfg.geometry, pcfg, serial=args.serial)
        labels_fn = lambda accepted: clean.is_corner  # noqa: E731
        label_source = "clean-pipeline corners (no ground truth)"
    rep = ber_experiment(ev, cfg.geometry, labels_fn, pcfg, cfg["eval.ber_list"],
                         cfg.seeds()["fault"], per_word=cfg["fault.per_word"],
                         serial=args.serial)
    rep.config = _manifest(cfg, "eval", {"labels": label_source,
                                         "auc_convention": AUC_CONVENTION,
                                         "scene": scene.to_dict() if scene else None})
    rep.write(cfg["output_dir"])
    for r in rep.runs:
        print(f"ber {r.ber:g}: auc {r.curve.auc:.4f} delta {r.delta_auc:+.4f}")
    return EXIT_OK


def cmd_render_tos(args) -> int:
    cfg = _config(args, **{"fault.ber": args.ber, "tos.mode": args.tos_mode})
    ev, _ = _events(args, cfg)
    fault = None
    if cfg["fault.ber"] > 0:
        fault = FaultModel(cfg["fault.ber"], cfg.seeds()["fault"], cfg["fault.per_word"],
                           cfg["fault.center"])
    det = run_pipeline(ev, cfg.geometry, cfg.pipeline(), fault, serial=True)
    out = _out(cfg, args.output, "tos.pgm")
    write_pgm(out, det.frame(0))
    print(f"TOS after {len(det)} events -> {out}")
    return EXIT_OK


COMMANDS = {"filter": cmd_filter, "detect": cmd_detect, "simulate": cmd_simulate,
            "dvfs-trace": cmd_dvfs_trace, "eval": cmd_eval, "render-tos": cmd_render_tos}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (EventError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
