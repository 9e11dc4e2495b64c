import time

import pytest

from bagcell.report import (
    MalformedTrace,
    RunReport,
    TraceRecord,
    Tracer,
    audit_interlocks,
    audit_retry_caps,
    config_digest,
    read_trace,
    render_table,
    scan_violations,
    summarize_campaign,
    write_trace,
)


def make_run(i, detected=8, picked=8, placed=8, duration_s=480.0):
    return RunReport(
        test_index=i,
        seed=1000 + i,
        cycles=1,
        stacks_offered=8,
        detected=detected,
        picked=picked,
        placed=placed,
        delivered=placed,
        failed_unhandled=8 - placed,
        duration_s=duration_s,
    )


# --- tracer and trace files ----------------------------------------------


def test_tracer_assigns_contiguous_seqs():
    tracer = Tracer()
    tracer.record("message", 0.0, {"topic": "drop"})
    tracer.record("message", 1.5, {"topic": "fault"})
    assert [r.seq for r in tracer.records] == [0, 1]


def test_tracer_rejects_time_regression():
    tracer = Tracer()
    tracer.record("message", 5.0, {})
    with pytest.raises(ValueError):
        tracer.record("message", 4.0, {})


def test_trace_round_trip(tmp_path):
    tracer = Tracer()
    for i in range(50):
        tracer.record("device_cmd", float(i), {"device": f"d{i}", "op": "extend"})
    path = tmp_path / "trace.jsonl"
    write_trace(path, tracer.records)
    back = read_trace(path)
    assert back == tracer.records


def test_trace_write_is_byte_stable(tmp_path):
    tracer = Tracer()
    tracer.record("message", 0.123456789123, {"b": 2, "a": 1})
    p1, p2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    write_trace(p1, tracer.records)
    write_trace(p2, tracer.records)
    assert p1.read_bytes() == p2.read_bytes()


def test_truncated_trace_line_reports_position(tmp_path):
    tracer = Tracer()
    tracer.record("message", 0.0, {})
    tracer.record("message", 1.0, {})
    path = tmp_path / "trace.jsonl"
    write_trace(path, tracer.records)
    text = path.read_text().splitlines()
    path.write_text(text[0] + "\n" + text[1][: len(text[1]) // 2] + "\n")
    with pytest.raises(MalformedTrace) as info:
        read_trace(path)
    assert info.value.line_no == 2


def test_trace_validation_catches_gaps_and_regressions(tmp_path):
    path = tmp_path / "trace.jsonl"
    good = TraceRecord(0, 0.0, "message", {}).to_line()
    skipped = TraceRecord(2, 1.0, "message", {}).to_line()
    path.write_text(good + "\n" + skipped + "\n")
    with pytest.raises(MalformedTrace):
        read_trace(path)
    backwards = TraceRecord(1, -5.0, "message", {}).to_line()
    path.write_text(good + "\n" + backwards + "\n")
    with pytest.raises(MalformedTrace):
        read_trace(path)
    path.write_text('{"v": 99, "seq": 0, "t": 0, "kind": "x", "data": {}}\n')
    with pytest.raises(MalformedTrace):
        read_trace(path)


def test_large_trace_round_trip_is_fast(tmp_path):
    tracer = Tracer()
    for i in range(100_000):
        tracer.record("message", i * 0.01, {"i": i})
    path = tmp_path / "big.jsonl"
    start = time.perf_counter()
    write_trace(path, tracer.records)
    back = read_trace(path)
    elapsed = time.perf_counter() - start
    assert len(back) == 100_000
    assert back[-1] == tracer.records[-1]
    assert elapsed < 2.0


# --- campaign summaries ---------------------------------------------------


def test_summarize_requires_runs():
    with pytest.raises(ValueError):
        summarize_campaign([], seed=0, digest="x")


def test_single_perfect_run_rates():
    rep = summarize_campaign([make_run(0)], seed=0, digest="x")
    assert rep.detected_rate_pct == 100.0
    assert rep.picked_rate_pct == 100.0
    assert rep.placed_rate_pct == 100.0
    assert rep.mean_duration_min == pytest.approx(8.0)


def test_means_match_hand_arithmetic():
    runs = [make_run(0, 8, 7, 5), make_run(1, 7, 5, 5), make_run(2, 6, 6, 6)]
    rep = summarize_campaign(runs, seed=0, digest="x")
    assert rep.mean_detected == pytest.approx((8 + 7 + 6) / 3)
    assert rep.detected_rate_pct == pytest.approx(100.0 * 21 / 24)
    assert rep.placed_rate_pct == pytest.approx(100.0 * 16 / 24)


def test_render_csv_recomputes_to_reported_means():
    runs = [make_run(i, 8 - (i % 2), 7, 6, duration_s=500.0 + i) for i in range(4)]
    rep = summarize_campaign(runs, seed=0, digest="x")
    csv = render_table(rep, "csv")
    lines = csv.strip().splitlines()
    assert lines[0].split(",") == ["Test", "Detected", "Picked", "Placed", "Time (min)"]
    body = [line.split(",") for line in lines[1:-2]]
    mean_row = lines[-2].split(",")
    assert mean_row[0] == "Mean"
    recomputed = sum(int(row[1]) for row in body) / len(body)
    assert float(mean_row[1]) == pytest.approx(recomputed, abs=1e-9)
    rate_row = lines[-1].split(",")
    assert rate_row[0] == "Rate (%)"
    assert float(rate_row[2]) == pytest.approx(rep.picked_rate_pct, abs=0.005)


def test_render_markdown_and_determinism():
    rep = summarize_campaign([make_run(0)], seed=0, digest="x")
    md1 = render_table(rep, "markdown")
    md2 = render_table(rep, "markdown")
    assert md1 == md2
    assert md1.startswith("| Test |")
    with pytest.raises(ValueError):
        render_table(rep, "latex")


def test_config_digest_is_stable_and_short():
    assert config_digest("{}") == config_digest("{}")
    assert config_digest("{}") != config_digest('{"a": 1}')
    assert len(config_digest("{}")) == 16


def test_run_report_to_dict_rounds_floats():
    run = make_run(0, duration_s=123.4567891234)
    d = run.to_dict()
    assert d["duration_s"] == 123.456789
    assert run.duration_min == pytest.approx(123.4567891234 / 60.0)


# --- trace audits ---------------------------------------------------------


def rec(seq, t, kind, **data):
    return TraceRecord(seq=seq, time=t, kind=kind, data=data)


def test_audit_interlocks_accepts_correct_ordering():
    records = [
        rec(i, float(i), "device_event", device=f"bottom_{i}", event="secured")
        for i in range(8)
    ]
    records += [
        rec(8, 8.0, "device_cmd", device="cutter", op="extend"),
        rec(9, 9.0, "device_cmd", device="door", op="extend"),
        rec(10, 10.0, "device_event", device="door", event="done", op="extend"),
        rec(11, 11.0, "device_cmd", device="pusher_0", op="extend"),
    ]
    assert audit_interlocks(records) == []


def test_audit_interlocks_flags_premature_cutter():
    records = [
        rec(i, float(i), "device_event", device=f"bottom_{i}", event="secured")
        for i in range(7)
    ]
    records.append(rec(7, 7.0, "device_cmd", device="cutter", op="extend"))
    problems = audit_interlocks(records)
    assert len(problems) == 1 and "7/8" in problems[0]


def test_audit_interlocks_flags_pusher_with_door_closed():
    records = [rec(0, 0.0, "device_cmd", device="pusher_2", op="extend")]
    problems = audit_interlocks(records)
    assert len(problems) == 1 and "pusher_2" in problems[0]


def test_audit_interlocks_treats_moving_door_as_closed():
    records = [
        rec(0, 0.0, "device_cmd", device="door", op="extend"),
        rec(1, 1.0, "device_cmd", device="pusher_0", op="extend"),
    ]
    assert len(audit_interlocks(records)) == 1


def test_audit_retry_caps():
    records = [
        rec(0, 0.0, "fault_decision", action="pick", slot=0, attempt=3),
        rec(1, 1.0, "fault_decision", action="pick", slot=1, attempt=1),
    ]
    assert audit_retry_caps(records, {"pick": 3}) == []
    records.append(rec(2, 2.0, "fault_decision", action="pick", slot=0, attempt=4))
    problems = audit_retry_caps(records, {"pick": 3})
    assert len(problems) == 1 and "exceeds cap" in problems[0]
    # Unknown actions are out of scope for the cap audit.
    assert audit_retry_caps(records, {"place": 3}) == []


def test_scan_violations_filters_by_kind():
    records = [
        rec(0, 0.0, "message", topic="drop"),
        rec(1, 1.0, "violation", code="multiple_held"),
    ]
    found = scan_violations(records)
    assert len(found) == 1 and found[0].data["code"] == "multiple_held"
