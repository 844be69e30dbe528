import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nmtos.events import DAVIS240, SensorGeometry, synth_stream
from nmtos.hwmodel import (NMC_0V6, NMC_1V2, PHASE_FRACTIONS, DvfsState, EnergyLedger,
                           OperatingPoint, PipelinePhases, account_event, blocks_required,
                           conventional_baseline, default_op_table, dvfs_tick,
                           endpoint_op_table, hardware_report, load_op_table, patch_latency,
                           save_op_table, select_op_point, simulate_hardware, write_dvfs_trace)

from oracles import simulate_per_event


def test_latency_formula_examples():
    ones = PipelinePhases(1, 1, 1, 1)
    assert patch_latency(7, ones) == 16
    assert patch_latency(7, ones, pipelined=False) == 28
    p = PipelinePhases(2, 3, 5, 7)
    assert patch_latency(1, p) == patch_latency(1, p, pipelined=False)


def test_low_voltage_phases():
    # phase delays solved by hand from the fractions and the 203 ns total
    manual = PipelinePhases(7.69, 16.92, 15.37, 15.37)
    assert patch_latency(7, manual) == pytest.approx(202.9, abs=0.2)
    assert patch_latency(7, manual, False) == pytest.approx(387.4, abs=0.2)
    solved = PipelinePhases.from_fractions(203.0, 7, PHASE_FRACTIONS)
    for got, want in zip((solved.t1, solved.t2, solved.t3, solved.t4), (7.69, 16.92, 15.37, 15.37)):
        assert got == pytest.approx(want, abs=0.01)
    assert patch_latency(7, solved) == pytest.approx(203.0, abs=1e-9)


@given(st.integers(2, 64), st.floats(0.1, 50), st.floats(0.1, 50), st.floats(0.1, 50),
       st.floats(0.1, 50))
def test_pipelining_always_helps(p, a, b, c, d):
    ph = PipelinePhases(a, b, c, d)
    assert patch_latency(p, ph) < patch_latency(p, ph, pipelined=False)


def test_pipelining_limit():
    ph = PipelinePhases(1, 2, 3, 4)
    big = 10**6
    assert patch_latency(big, ph, False) / patch_latency(big, ph) == pytest.approx(10 / 3, rel=1e-5)


def test_default_table():
    table = default_op_table()
    top = max(table, key=lambda op: op.vdd)
    low = min(table, key=lambda op: op.vdd)
    assert top.vdd == 1.2 and top.max_throughput_meps == 63.1 and top.energy_pj == 139
    assert low.vdd == 0.6 and low.ber == 0.025 and low.patch_latency_ns == 203
    for op in table:
        assert op.max_throughput_meps == pytest.approx(1000 / op.patch_latency_ns, rel=0.01)
    vdds = [op.vdd for op in table]
    assert vdds == sorted(vdds)
    lat = [op.patch_latency_ns for op in table]
    assert lat == sorted(lat, reverse=True)
    assert {op.source for op in table if op.vdd not in (0.6, 1.2)} == {"interpolated"}
    assert next(op for op in table if op.vdd == 0.61).ber == 0.002
    assert [op.vdd for op in endpoint_op_table()] == [0.6, 0.61, 1.2]


def test_op_table_roundtrip(tmp_path):
    save_op_table(tmp_path / "t.json", default_op_table())
    assert load_op_table(tmp_path / "t.json") == default_op_table()
    (tmp_path / "bad.json").write_text(json.dumps([{"vdd": 1.0, "frob": 2}]))
    with pytest.raises((KeyError, ValueError)):
        load_op_table(tmp_path / "bad.json")


def test_selection_examples():
    table = endpoint_op_table()
    assert select_op_point(3.0, table) == (NMC_0V6, False)
    sel = select_op_point(70.0, table)
    assert sel.point == NMC_1V2 and sel.overload
    assert select_op_point(0.0, table).point.vdd == 0.6
    assert select_op_point(3.0, table, headroom=2.0).point.vdd == 1.2


@given(st.floats(0, 100))
def test_selection_feasible_and_minimal(f):
    table = default_op_table()
    op, overload = select_op_point(f, table)
    feasible = [o for o in table if o.max_throughput_meps >= f]
    if feasible:
        assert not overload and op == min(feasible, key=lambda o: o.vdd)
    else:
        assert overload and op.vdd == 1.2


def test_dvfs_constant_rate():
    ev = synth_stream([(100_000, 2e6)], DAVIS240, seed=0)
    state = DvfsState(10_000)
    ests = [e for e in (dvfs_tick(state, int(t)) for t in ev.t) if e is not None]
    # the first estimate sees one filled half-window, later ones two
    assert ests[0].f_e_meps == pytest.approx(1.0, abs=1e-4)
    for e in ests[1:]:
        assert abs(e.f_e_meps - 2.0) <= 1 / 10_000
    assert [e.t_us for e in ests[:3]] == [5000, 10_000, 15_000]


def test_dvfs_pointer_rotation():
    state = DvfsState(10)
    ptrs = [state.ptr]
    for t in range(0, 21):
        est = dvfs_tick(state, t)
        if est is not None:
            ptrs.append(est.ptr)
    assert ptrs == [0, 1, 2, 0, 1]


def test_dvfs_saturation():
    state = DvfsState(10, bits=4)
    for _ in range(100):
        dvfs_tick(state, 0)
    assert state.counters[state.ptr] == 15
    est = dvfs_tick(state, 5)
    assert est.f_e_meps == pytest.approx(15 / 10)


def test_dvfs_gap_emits_latest_estimate():
    state = DvfsState(10)
    dvfs_tick(state, 0)
    est = dvfs_tick(state, 1000)
    assert est.t_us == 1000 and est.f_e_meps == 0.0


def test_window_validation():
    with pytest.raises(ValueError):
        DvfsState(9)


def test_ledger_examples():
    led = EnergyLedger()
    for t in range(1000):
        assert account_event(led, NMC_1V2, t)
    assert led.energy_pj == pytest.approx(139_000)  # 139 nJ
    assert led.processed == 1000 and led.dropped == 0
    empty = EnergyLedger()
    assert (empty.energy_pj, empty.events, empty.average_power_mw()) == (0.0, 0, 0.0)


def test_average_power_low_voltage():
    ev = synth_stream([(10_000, 4e6)], DAVIS240)
    run = simulate_hardware(ev.t, [NMC_0V6], dvfs=False)
    assert run.ledger.dropped == 0
    assert run.ledger.average_power_mw() == pytest.approx(0.104, rel=1e-9)


def test_drop_when_over_capacity():
    led = EnergyLedger(buffer_ns=1000)
    results = [account_event(led, NMC_0V6, 0) for _ in range(10)]
    # 203 ns each: four fit inside the 1 us buffer
    assert results == [True] * 4 + [False] * 6
    assert led.energy_pj == 4 * 26


def test_conventional_baseline():
    lat, energy = conventional_baseline(7)
    assert lat == 392
    assert energy == 167
    for bound in (1.2 * 139, 6.6 * 26):
        assert abs(energy - bound) / bound <= 0.03
    assert conventional_baseline(3)[0] == 72


def test_blocks_required():
    assert blocks_required(DAVIS240) == 2
    assert blocks_required(SensorGeometry(346, 260)) == 5
    assert blocks_required(SensorGeometry(10, 10)) == 1


def test_patch_scaling():
    lat, energy = NMC_1V2.at_patch(5)
    ph = NMC_1V2.phases()
    assert lat == pytest.approx(5 * (ph.t1 + ph.t2) + ph.t3 + ph.t4)
    assert energy == pytest.approx(139 * 25 / 49)


def profile_stream(seed=0):
    prof = [(20_000, 5e5), (10_000, 8e6), (15_000, 6e7), (20_000, 3e6), (5000, 0), (10_000, 1e6)]
    return synth_stream(prof, DAVIS240, seed=seed).t


@pytest.mark.parametrize("dvfs", [True, False])
@pytest.mark.parametrize("table", [default_op_table(), endpoint_op_table()])
def test_batch_matches_per_event_api(dvfs, table):
    t = profile_stream()
    run = simulate_hardware(t, table, dvfs=dvfs)
    led, ests = simulate_per_event(t, table, dvfs=dvfs)
    assert run.ledger.processed == led.processed
    assert run.ledger.dropped == led.dropped
    assert run.ledger.energy_pj == pytest.approx(led.energy_pj, rel=1e-12)
    assert run.ledger.histogram == led.histogram
    # across an idle gap the per-event call only returns the newest boundary
    stride = 5000
    seen = [e for e, _, _ in run.trace
            if np.any((t >= e.t_us) & (t < e.t_us + stride))]
    assert seen == ests


def test_dvfs_never_costs_more():
    for seed in range(3):
        t = profile_stream(seed)
        a = simulate_hardware(t, dvfs=True)
        b = simulate_hardware(t, dvfs=False)
        assert a.ledger.energy_pj <= b.ledger.energy_pj
        assert a.ledger.processed + a.ledger.dropped == len(t)


def test_trace_points_feasible():
    run = simulate_hardware(profile_stream())
    for est, op, overload in run.trace:
        assert overload or op.max_throughput_meps >= est.f_e_meps


def test_report(tmp_path):
    t = profile_stream()
    run = simulate_hardware(t)
    rep = hardware_report(run, simulate_hardware(t, dvfs=False))
    assert rep["speedup_vs_conventional"] == pytest.approx(24.5)
    assert rep["speedup_vs_conventional_min_vdd"] == pytest.approx(392 / 203)
    assert rep["energy_ratio_vs_conventional_min_vdd"] == pytest.approx(167 / 26)
    assert rep["dvfs_energy_saving"] >= 1
    assert rep["events"] == len(t)
    write_dvfs_trace(tmp_path / "trace.csv", run)
    lines = (tmp_path / "trace.csv").read_text().splitlines()
    assert lines[0] == "t_us,f_e_meps,vdd,capacity_meps,overload"
    assert len(lines) == len(run.trace) + 1


def test_operating_point_validation():
    with pytest.raises(ValueError):
        OperatingPoint(1.0, 0.0, 10.0)
    with pytest.raises(ValueError):
        OperatingPoint(1.0, 10.0, 10.0, ber=2.0)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(0, 50_000), min_size=1, max_size=400))
def test_random_streams_conserve_events(ts):
    t = np.sort(np.array(ts))
    run = simulate_hardware(t)
    led, _ = simulate_per_event(t, sorted(default_op_table(), key=lambda o: o.vdd))
    assert run.ledger.processed + run.ledger.dropped == len(t)
    assert run.ledger.processed == led.processed
