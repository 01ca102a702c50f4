import filecmp

import numpy as np
import pytest

from batterylife.evaluation import session_stability_variance
from batterylife.ingest import load_directory
from batterylife.sessions import filter_sessions, segment_sessions
from batterylife.synth import (CensoredByCharge, ConfigInvalid, OutsideDischarge, Regime, RegimeModel,
                               SynthConfig, commuter, generate_world, load_manifest,
                               single_regime, true_remaining_life, two_regime)

SMALL = dict(n_users=2, days=3, battery_period=30, app_period=300, t1_period=600, t2_period=900)


def test_constant_rate_crossings(tmp_path):
    cfg = SynthConfig(user_rate_sd=0.0, charge_below=(5.0, 10.0), **SMALL)
    generate_world(cfg, single_regime(0.5), tmp_path)
    man = load_manifest(tmp_path / "manifest.csv")
    t0 = man.discharge_intervals("user00")[0][0]
    cross = dict((lv, t) for t, lv in man.crossings["user00"] if t < t0 + 200 * 60)
    for k in range(99, 19, -1):
        assert cross[k] == pytest.approx(t0 + (100 - k) / 0.5 * 60)
    t60 = cross[60]
    assert true_remaining_life(man, "user00", t60, L=20) == pytest.approx(80.0)
    assert true_remaining_life(man, "user00", cross[20], L=20) == 0.0
    with pytest.raises(OutsideDischarge):
        true_remaining_life(man, "user00", cross[20] + 1, L=20)


def test_censored_by_charge(tmp_path):
    cfg = SynthConfig(user_rate_sd=0.0, charge_below=(50.0, 50.0), **SMALL)
    generate_world(cfg, single_regime(0.5), tmp_path)
    man = load_manifest(tmp_path / "manifest.csv")
    a, b = man.discharge_intervals("user00")[0]
    res = true_remaining_life(man, "user00", a + 60, L=20)
    assert isinstance(res, CensoredByCharge)
    assert res.minutes_until_charge == pytest.approx((b - a - 60) / 60)
    with pytest.raises(OutsideDischarge):
        true_remaining_life(man, "user00", a - 1)


def test_same_seed_identical_files(tmp_path):
    cfg = SynthConfig(seed=4, **SMALL)
    generate_world(cfg, two_regime(), tmp_path / "a")
    generate_world(cfg, two_regime(), tmp_path / "b")
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert "battery.csv" in names and "manifest.csv" in names
    match, mismatch, errors = filecmp.cmpfiles(tmp_path / "a", tmp_path / "b", names, shallow=False)
    assert mismatch == [] and errors == []
    generate_world(SynthConfig(seed=5, **SMALL), two_regime(), tmp_path / "c")
    assert not filecmp.cmp(tmp_path / "a" / "battery.csv", tmp_path / "c" / "battery.csv", shallow=False)


def test_sessions_match_discharge_intervals(tmp_path):
    cfg = SynthConfig(seed=2, **SMALL)
    generate_world(cfg, commuter(), tmp_path)
    traces, _ = load_directory(tmp_path)
    man = load_manifest(tmp_path / "manifest.csv")
    for uid, tr in traces.items():
        sessions = segment_sessions(tr)
        intervals = man.discharge_intervals(uid)
        assert len(sessions) == len(intervals)
        for s, (a, b) in zip(sessions, intervals):
            assert abs(s.t_start - a) <= cfg.battery_period
            assert s.t_end <= b


def test_commuter_weekday_sessions_are_unsteady(tmp_path):
    cfg = SynthConfig(seed=1, n_users=2, days=7, battery_period=30, app_period=600,
                      t1_period=600, t2_period=900, emit_sensors=False)
    generate_world(cfg, commuter(leave_hours=(18,)), tmp_path)
    traces, _ = load_directory(tmp_path)
    weekday, weekend = [], []
    for tr in traces.values():
        for s in filter_sessions(segment_sessions(tr), by_start_battery=False):
            if s.b_start - s.b_end < 10:
                continue
            wd = (s.t_start // 86400 + 3) % 7
            crosses = wd < 5 and s.t_start % 86400 < 18 * 3600 < s.t_end % 86400
            (weekday if crosses else weekend if wd >= 5 else []).append(session_stability_variance(s))
    assert weekday and weekend
    assert np.median(weekday) > 10 * np.median(weekend)


def test_config_validation():
    with pytest.raises(ConfigInvalid):
        SynthConfig(days=0)
    with pytest.raises(ConfigInvalid):
        SynthConfig(step=60, battery_period=7)
    with pytest.raises(ConfigInvalid):
        RegimeModel((Regime("a", 0.1), Regime("b", 0.2)))
    with pytest.raises(ConfigInvalid):
        RegimeModel((Regime("a", 0.1), Regime("b", 0.2)), transition=((0.5, 0.4), (0.5, 0.5)))
    with pytest.raises(ConfigInvalid):
        commuter(leave_hours=(8,))


def test_dropouts_create_gaps(tmp_path):
    cfg = SynthConfig(seed=3, dropout_prob=1.0, **SMALL)
    generate_world(cfg, single_regime(), tmp_path)
    traces, _ = load_directory(tmp_path)
    gaps = np.diff(traces["user00"].battery_t)
    assert gaps.max() >= 15 * 60
