import json

import numpy as np
import pytest

from nmtos.cli import main
from nmtos.evaluate import SyntheticScene, ground_truth_labels
from nmtos.events import DAVIS240, EventArray, SensorGeometry, synth_stream, write_stream
from nmtos.harris import CSV_HEADER, read_detections_csv
from nmtos.hwmodel import endpoint_op_table, save_op_table
from nmtos.tos import read_pgm


@pytest.fixture
def stream_file(tmp_path):
    path = tmp_path / "ev.txt"
    write_stream(path, synth_stream([(20_000, 2e6)], DAVIS240, seed=1))
    return path


def test_filter_summary(stream_file, tmp_path, capsys):
    out = tmp_path / "f.txt"
    assert main(["filter", str(stream_file), "-o", str(out)]) == 0
    msg = capsys.readouterr().out.strip()
    kept, total = int(msg.split()[1]), int(msg.split()[3])
    assert msg == f"kept {kept} of {total}" and total == 40_000 and 0 < kept < total
    assert len(out.read_text().splitlines()) == kept


def test_filter_malformed_exit_3(tmp_path, capsys):
    bad = tmp_path / "bad.txt"
    bad.write_text("0.1 1 1 0\n0.2 1 1 0\nnot an event\n")
    assert main(["filter", str(bad), "--output-dir", str(tmp_path)]) == 3
    assert "line 3" in capsys.readouterr().err


def test_missing_file_exit_3(tmp_path):
    assert main(["filter", str(tmp_path / "nope.txt")]) == 3


def test_partial_config_uses_defaults(stream_file, tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"stcf": {"support": 3}}))
    assert main(["filter", str(stream_file), "--config", str(cfg),
                 "--output-dir", str(tmp_path)]) == 0
    kept3 = int(capsys.readouterr().out.split()[1])
    assert main(["filter", str(stream_file), "--output-dir", str(tmp_path)]) == 0
    kept2 = int(capsys.readouterr().out.split()[1])
    assert kept3 < kept2


@pytest.mark.parametrize("content", ['{"stcf": {"frobnicate": 1}}', '{"tos": {"threshold": 9}}',
                                     "[1, 2]", "{oops"])
def test_bad_config_exit_2(stream_file, tmp_path, content):
    cfg = tmp_path / "c.json"
    cfg.write_text(content)
    assert main(["filter", str(stream_file), "--config", str(cfg)]) == 2


def test_usage_errors_exit_2(tmp_path):
    with pytest.raises(SystemExit) as info:
        main(["detect", "--no-such-flag"])
    assert info.value.code == 2
    assert main(["detect", "--output-dir", str(tmp_path)]) == 2  # no input


def test_detect_empty_stream(tmp_path):
    empty = tmp_path / "empty.txt"
    empty.write_text("")
    out = tmp_path / "d.csv"
    assert main(["detect", str(empty), "-o", str(out)]) == 0
    assert out.read_text() == CSV_HEADER + "\n"


def test_detect_square_hits_corners(tmp_path):
    out = tmp_path / "d.csv"
    argv = ["detect", "--synthetic", "square", "--events", "60000", "-o", str(out),
            "--lut-period", "500", "--pgm", "--score-map", "--seed", "2"]
    assert main(argv) == 0
    d = read_detections_csv(out)
    manifest = json.loads((tmp_path / "d_run.json").read_text())
    sc = manifest["scene"]
    scene = SyntheticScene.square(
        geometry=SensorGeometry.parse(sc["geometry"]), center=tuple(sc["center"]),
        velocity=tuple(sc["velocity"]), duration_us=sc["duration_us"], seed=sc["seed"])
    ev = EventArray(d["x"], d["y"], d["polarity"].astype(bool), d["t_us"])
    labels = ground_truth_labels(ev, scene, 3.0)
    hit = d["is_corner"].astype(bool)
    # corner hits are far more likely than chance, and every corner gets some
    assert labels[hit].mean() > 2 * labels.mean()
    corners = scene.corners_at(d["t_us"][hit])
    dist = np.hypot(corners[..., 0] - d["x"][hit, None], corners[..., 1] - d["y"][hit, None])
    assert np.all((dist <= 3).sum(axis=0) > 10)
    assert read_pgm(tmp_path / "d_tos0.pgm").shape == (180, 240)
    assert (tmp_path / "d_scores.bin").exists()
    assert manifest["config"]["lut.period"] == 500 and "seeds" in manifest


def test_reference_and_quantized_csv_identical(tmp_path):
    for mode in ("quantized", "reference"):
        assert main(["detect", "--synthetic", "polygon", "--events", "20000", "--tos-mode", mode,
                     "--lut-period", "700", "-o", str(tmp_path / f"{mode}.csv")]) == 0
    assert (tmp_path / "quantized.csv").read_bytes() == (tmp_path / "reference.csv").read_bytes()


def test_detect_serial_flag_same_output(tmp_path):
    for tag, extra in (("a", []), ("b", ["--serial"])):
        assert main(["detect", "--synthetic", "polygon", "--events", "20000", "--ber", "0.01",
                     "-o", str(tmp_path / f"{tag}.csv")] + extra) == 0
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def _report(path):
    return json.loads(path.read_text())["report"]


def test_simulate_constant_3meps(tmp_path):
    out = tmp_path / "r.json"
    assert main(["simulate", "--profile", "30000:3e6", "--no-stcf", "-o", str(out)]) == 0
    rep = _report(out)
    assert rep["vdd_used"] == [0.6]
    assert rep["dropped"] == 0 and rep["processed"] == 90_000
    assert rep["speedup_vs_conventional"] == pytest.approx(392 / 16)


def test_simulate_no_dvfs_costs_more(tmp_path):
    args = ["--profile", "20000:5e5,10000:2e7,20000:3e6", "--no-stcf"]
    assert main(["simulate", *args, "-o", str(tmp_path / "a.json")]) == 0
    assert main(["simulate", *args, "--no-dvfs", "-o", str(tmp_path / "b.json")]) == 0
    a, b = _report(tmp_path / "a.json"), _report(tmp_path / "b.json")
    assert b["vdd_used"] == [1.2]
    assert b["total_energy_pj"] / a["total_energy_pj"] >= 1
    assert a["energy_without_dvfs_pj"] == pytest.approx(b["total_energy_pj"])


def test_simulate_with_stcf_and_custom_table(stream_file, tmp_path):
    save_op_table(tmp_path / "t.json", endpoint_op_table())
    out = tmp_path / "r.json"
    assert main(["simulate", str(stream_file), "--op-table", str(tmp_path / "t.json"),
                 "-o", str(out)]) == 0
    rep = _report(out)
    assert rep["tos_events"] < rep["input_events"] == 40_000
    assert set(rep["vdd_used"]) <= {0.6, 0.61, 1.2}


def test_simulate_bad_profile_exit_2(tmp_path):
    assert main(["simulate", "--profile", "abc", "--output-dir", str(tmp_path)]) == 2


def test_dvfs_trace(tmp_path):
    out = tmp_path / "t.csv"
    assert main(["dvfs-trace", "--profile", "50000:1e6", "--no-stcf", "-o", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0].startswith("t_us,f_e_meps,vdd")
    assert len(lines) == 1 + 9


def test_eval_three_curves_and_determinism(tmp_path, capsys):
    runs = []
    d = tmp_path / "out"
    for _ in range(2):
        assert main(["eval", "--synthetic", "polygon", "--seed", "7", "--ber", "0,0.002,0.025",
                     "--events", "30000", "--output-dir", str(d)]) == 0
        runs.append((d / "pr_report.json").read_text())
    assert runs[0] == runs[1]
    rep = json.loads(runs[0])
    assert [r["ber"] for r in rep["results"]] == [0.0, 0.002, 0.025]
    assert rep["results"][0]["delta_auc"] == 0.0
    assert rep["config"]["config"]["seed"] == 7
    assert len(capsys.readouterr().out.strip().splitlines()) == 6


def test_eval_real_file_uses_pseudo_labels(tmp_path):
    path = tmp_path / "scene.txt"
    write_stream(path, SyntheticScene(duration_us=20_000).render())
    assert main(["eval", str(path), "--ber", "0.025", "--output-dir", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "pr_report.json").read_text())
    assert rep["config"]["labels"].startswith("clean-pipeline")
    assert rep["results"][0]["auc"] == 1.0


def test_eval_negative_ber_exit_2(tmp_path):
    assert main(["eval", "--synthetic", "polygon", "--ber", "-0.1",
                 "--output-dir", str(tmp_path)]) == 2


def test_render_tos(tmp_path):
    out = tmp_path / "f.pgm"
    assert main(["render-tos", "--synthetic", "polygon", "--events", "5000", "--ber", "0.025",
                 "-o", str(out)]) == 0
    frame = read_pgm(out)
    assert frame.shape == (180, 240) and frame.max() == 255
