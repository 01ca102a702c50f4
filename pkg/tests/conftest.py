import numpy as np
import pytest

from batterylife.ingest import (AppSample, AppState, BatteryEntry, BroadcastEvent, ChargeState,
                                ScreenAction, ScreenEvent, SensorGroup, SensorSample, build_user_trace)
from batterylife.queries import QueryInstance
from batterylife.sessions import Session, label_session


def make_trace(user="u", battery=(), screen=(), broadcast=(), apps=(), t1=(), t2=(), t1_width=9,
               t2_width=150):
    """Build a UserTrace from compact tuples.

    battery: (t, level) discharge entries; screen: (t, on); broadcast: (t, type);
    apps: (t, app, foreground); t1/t2: (t, values).
    """
    recs = [BatteryEntry(user, t, ChargeState.DISCHARGE, lv) for t, lv in battery]
    recs += [ScreenEvent(user, t, ScreenAction.ON if on else ScreenAction.OFF) for t, on in screen]
    recs += [BroadcastEvent(user, t, b) for t, b in broadcast]
    recs += [AppSample(user, t, a, AppState.FOREGROUND if fg else AppState.BACKGROUND) for t, a, fg in apps]
    recs += [SensorSample(user, t, SensorGroup.T1, tuple(v)) for t, v in t1]
    recs += [SensorSample(user, t, SensorGroup.T2, tuple(v)) for t, v in t2]
    return build_user_trace(recs, t1_width, t2_width)[user]


def make_query(trace, t_query, minutes=10.0):
    s = Session(trace.user_id, trace.battery_t.copy(), trace.battery_level.copy())
    lab = label_session(s)
    return QueryInstance(s, lab, int(t_query), lab.observed, minutes)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def criterion(request):
    """Record one PASS/FAIL line for an acceptance criterion, printed in the terminal summary."""
    lines = request.config.stash.setdefault(ACCEPTANCE_KEY, [])

    def record(number, ok, detail):
        lines.append((number, f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"))
        return ok
    return record


ACCEPTANCE_KEY = pytest.StashKey[list]()


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines, key=lambda x: x[0]):
            terminalreporter.write_line(line)
