import gzip
import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from batterylife.ingest import (OTHER_BROADCAST, AppSample, AppState, BatteryEntry, ChargeState,
                                MissingHeader, ParseReport, ScreenAction, ScreenEvent,
                                SensorGroup, SensorSample, TooManyErrors, WidthMismatch,
                                build_user_trace, load_directory, parse_battery_log,
                                parse_event_log, parse_sample_log, write_battery_log,
                                write_event_log, write_sample_log)

BATTERY_HEADER = "user_id,timestamp,charge_state,level\n"


def parse_battery(text, **kw):
    report = ParseReport("battery")
    out = list(parse_battery_log(io.StringIO(text), report, **kw))
    return out, report


def test_battery_line():
    out, report = parse_battery(BATTERY_HEADER + "0a50e09262,1426245782,discharge,54\n")
    assert out == [BatteryEntry("0a50e09262", 1426245782, ChargeState.DISCHARGE, 54)]
    assert report.n_errors == 0


def test_empty_stream_with_header():
    out, report = parse_battery(BATTERY_HEADER)
    assert out == [] and report.n_errors == 0 and report.n_records == 0


def test_missing_header():
    with pytest.raises(MissingHeader):
        parse_battery("u1,1,discharge,50\n")
    with pytest.raises(MissingHeader):
        parse_battery("")


def test_bad_level_is_skipped_and_reported():
    good = "".join(f"u,{t},discharge,50\n" for t in range(1, 200))
    out, report = parse_battery(BATTERY_HEADER + good + "u,500,discharge,101\n")
    assert len(out) == 199
    assert report.n_errors == 1
    lineno, code, _ = report.errors[0]
    assert code == "BadLevel" and lineno == 201


def test_error_cap():
    text = BATTERY_HEADER + "u,1,discharge,50\n" * 10 + "u,x,discharge,50\n"
    with pytest.raises(TooManyErrors):
        parse_battery(text)
    out, report = parse_battery(text, max_error_rate=0.5)
    assert len(out) == 10 and report.errors[0][1] == "BadTimestamp"


def test_crlf_comments_and_charge_tokens():
    text = "# exported\r\n" + BATTERY_HEADER.replace("\n", "\r\n") + \
        "u,1,Discharging,50\r\nu,2,full,100\r\nu,3,usb,99\r\n"
    out, _ = parse_battery(text)
    assert [e.charge_state for e in out] == [ChargeState.DISCHARGE, ChargeState.CHARGE, ChargeState.CHARGE]


def test_gzip_path(tmp_path):
    p = tmp_path / "battery.csv.gz"
    with gzip.open(p, "wt", encoding="utf-8") as fh:
        fh.write(BATTERY_HEADER + "u,5,discharge,40\n")
    assert list(parse_battery_log(p)) == [BatteryEntry("u", 5, ChargeState.DISCHARGE, 40)]


def test_screen_events():
    report = ParseReport("screen")
    text = "user_id,timestamp,action\nu1,100,on\nu1,101,sleep\n" + "u1,102,off\n" * 200
    out = list(parse_event_log(io.StringIO(text), "screen", report))
    assert out[0] == ScreenEvent("u1", 100, ScreenAction.ON)
    assert report.errors[0][1] == "BadState"


def test_broadcast_ids():
    report = ParseReport("broadcast")
    text = "user_id,timestamp,broadcast_type\nu1,100,85\nu1,101,86\n"
    out = list(parse_event_log(io.StringIO(text), "broadcast", report, n_broadcast_types=86))
    assert out[0].broadcast_type == 85
    assert out[1].broadcast_type == OTHER_BROADCAST
    assert report.n_unknown_broadcast == 1 and report.n_errors == 0


def test_sensor_rows():
    t1 = "user_id,timestamp," + ",".join(f"s{i}" for i in range(1, 10)) + "\n"
    t1 += "u1,10," + ",".join(str(i) for i in range(9)) + "\n"
    (s,) = parse_sample_log(io.StringIO(t1), "t1")
    assert s.group is SensorGroup.T1 and len(s.values) == 9 and None not in s.values

    cells = [str(i) for i in range(150)]
    cells[6] = ""
    t2 = "user_id,timestamp," + ",".join(f"s{i}" for i in range(1, 151)) + "\nu1,10," + ",".join(cells) + "\n"
    (s,) = parse_sample_log(io.StringIO(t2), "t2")
    assert s.values[6] is None and s.values[7] == 7.0


def test_sensor_width_mismatch():
    t1 = "user_id,timestamp," + ",".join(f"s{i}" for i in range(1, 9)) + "\n"
    with pytest.raises(WidthMismatch):
        list(parse_sample_log(io.StringIO(t1), "t1"))


def test_app_row():
    text = "user_id,timestamp,app_id,state\nu1,50,com.maps,foreground\n"
    assert list(parse_sample_log(io.StringIO(text), "app")) == [
        AppSample("u1", 50, "com.maps", AppState.FOREGROUND)]


def test_trace_sorted_and_partitioned():
    recs = [BatteryEntry("a", t, ChargeState.DISCHARGE, 50) for t in (30, 10, 20)]
    recs += [BatteryEntry("b", 15, ChargeState.DISCHARGE, 70)]
    traces = build_user_trace(recs)
    assert sorted(traces) == ["a", "b"]
    assert traces["a"].battery_t.tolist() == [10, 20, 30]
    assert traces["b"].battery_t.tolist() == [15]


def test_screen_collapse():
    recs = [ScreenEvent("u", 5, ScreenAction.ON), ScreenEvent("u", 7, ScreenAction.ON),
            ScreenEvent("u", 9, ScreenAction.OFF)]
    tr = build_user_trace(recs)["u"]
    assert tr.screen_t.tolist() == [5, 9]
    assert tr.screen_on.tolist() == [True, False]


def test_duplicates_dropped():
    e = BatteryEntry("u", 5, ChargeState.DISCHARGE, 40)
    tr = build_user_trace([e, e])["u"]
    assert tr.battery_t.tolist() == [5]


def _round_trip(records, tmp_path):
    by_kind = {"battery": [], "screen": [], "broadcast": [], "app": [], "t1": [], "t2": []}
    for r in records:
        if isinstance(r, BatteryEntry):
            by_kind["battery"].append(r)
        elif isinstance(r, ScreenEvent):
            by_kind["screen"].append(r)
        elif isinstance(r, AppSample):
            by_kind["app"].append(r)
        elif isinstance(r, SensorSample):
            by_kind[r.group.value].append(r)
        else:
            by_kind["broadcast"].append(r)
    for kind, rows in by_kind.items():
        with open(tmp_path / f"{kind}.csv", "w", encoding="utf-8", newline="") as fh:
            if kind == "battery":
                write_battery_log(rows, fh)
            elif kind in ("screen", "broadcast"):
                write_event_log(rows, fh, kind)
            else:
                write_sample_log(rows, fh, kind, 3 if kind in ("t1", "t2") else None)
    traces, _ = load_directory(tmp_path, t1_width=3, t2_width=3)
    return traces


values = st.one_of(st.none(), st.floats(-1e6, 1e6, allow_nan=False))
times = st.integers(1, 10_000)
users = st.sampled_from(["u1", "u2", "x"])
record = st.one_of(
    st.builds(BatteryEntry, users, times, st.sampled_from(list(ChargeState)), st.integers(0, 100)),
    st.builds(ScreenEvent, users, times, st.sampled_from(list(ScreenAction))),
    st.builds(AppSample, users, times, st.sampled_from(["a.b", "c", "d.e.f"]), st.sampled_from(list(AppState))),
    st.builds(SensorSample, users, times, st.sampled_from(list(SensorGroup)), st.tuples(values, values, values)),
)


@settings(max_examples=30, deadline=None)
@given(st.lists(record, max_size=40))
def test_write_parse_round_trip(tmp_path_factory, records):
    tmp = tmp_path_factory.mktemp("rt")
    expected = build_user_trace(records, 3, 3)
    got = _round_trip(records, tmp)
    assert sorted(got) == sorted(expected)
    for uid in expected:
        assert got[uid] == expected[uid]


@settings(max_examples=30, deadline=None)
@given(st.lists(record, max_size=40))
def test_trace_build_idempotent(records):
    traces = build_user_trace(records, 3, 3)
    again = build_user_trace([r for tr in traces.values() for r in tr.records()], 3, 3)
    assert sorted(again) == sorted(traces)
    for uid in traces:
        assert again[uid] == traces[uid]
        assert np.all(np.diff(traces[uid].battery_t) >= 0)
