"""Acceptance criteria, one test each, each printing a PASS/FAIL line in the summary."""
import filecmp
import os
import shutil
import time
import warnings

import numpy as np

from batterylife.cli import main as cli_main
from batterylife.evaluation import (InsufficientConsumption, PredictionSet, bootstrap_shift_test,
                                    concordance_index, concordance_oracle, kendall_tau, rmse,
                                    session_stability_variance, stability_experiment)
from batterylife.experiment import build_dataset, sessions_from_traces
from batterylife.features import (QUERY_TIME_GROUPS, SESSION_GROUPS, FeatureConfig, build_history,
                                  extract_features)
from batterylife.ingest import (AppSample, AppState, BatteryEntry, BroadcastEvent, ScreenAction,
                                ScreenEvent, SensorSample, build_user_trace, load_directory)
from batterylife.models import ModelConfig, fit, predict
from batterylife.queries import make_query_instance
from batterylife.sessions import label_session, segment_sessions
from batterylife.synth import (CensoredByCharge, SynthConfig, commuter, generate_world, load_manifest,
                               single_regime, true_remaining_life, two_regime)

from test_sessions import golden_rows, sessionize_fixture

# sample periods shared by the model-level worlds
PERIODS = dict(battery_period=30, app_period=120, t1_period=300, t2_period=600)


def world(tmp_path, model, **kw):
    cfg = SynthConfig(**{**dict(n_users=20, days=21, seed=1, **PERIODS), **kw})
    generate_world(cfg, model, tmp_path)
    traces, _ = load_directory(tmp_path)
    return cfg, traces


def test_c01_oracle_equivalence(criterion):
    r = np.random.default_rng(101)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(1000):
        n = int(r.integers(1, 201))
        p = r.integers(0, 30, size=n).astype(float)
        m = r.integers(1, 60, size=n).astype(float)
        o = r.random(n) < r.uniform(0.2, 1.0)
        worst = max(worst, abs(concordance_index(p, m, o, "paper") - concordance_oracle(p, m, o, "paper")))
    elapsed = time.perf_counter() - t0
    ok = criterion(1, worst <= 1e-12 and elapsed < 60, f"max |delta| {worst:.1e}, {elapsed:.1f} s")
    assert ok


def test_c02_tau_cindex_relation(criterion):
    r = np.random.default_rng(102)
    worst = 0.0
    for _ in range(500):
        n = int(r.integers(2, 200))
        p = r.permutation(n).astype(float)
        m = r.permutation(n).astype(float) + 1
        o = np.ones(n, dtype=bool)
        tau = kendall_tau(p, m, o)
        for variant in ("paper", "harrell"):
            worst = max(worst, abs(concordance_index(p, m, o, variant) - (tau + 1) / 2))
    ok = criterion(2, worst <= 1e-12, f"max |c - (tau+1)/2| {worst:.1e}")
    assert ok


def test_c03_sessionizer_golden(criterion):
    got, want = sessionize_fixture(), golden_rows()
    ok = criterion(3, got == want, f"{len(got)} sessions against {len(want)} golden rows")
    assert ok


def _perturb_after(trace, t_query, r):
    """Records of ``trace`` with everything after ``t_query`` scrambled, dropped or added."""
    uid = trace.user_id
    out = []
    prev_orig = prev_new = None
    for rec in trace.records():
        if rec.timestamp <= t_query:
            out.append(rec)
            if isinstance(rec, BatteryEntry):
                prev_orig = prev_new = rec.level
            continue
        if isinstance(rec, BatteryEntry):
            # keep timestamps and charge state so t_query stays inside its session
            lv = max(0, rec.level - int(r.integers(0, 4)))
            if rec.charge_state.value == "discharge" and prev_orig is not None and rec.level <= prev_orig:
                lv = min(lv, prev_new)
            prev_orig, prev_new = rec.level, lv
            out.append(rec._replace(level=lv))
            continue
        if r.random() < 0.3:
            continue
        if isinstance(rec, ScreenEvent):
            out.append(rec._replace(action=ScreenAction.ON if r.random() < 0.5 else ScreenAction.OFF))
        elif isinstance(rec, BroadcastEvent):
            out.append(rec._replace(broadcast_type=int(r.integers(0, 86))))
        elif isinstance(rec, AppSample):
            app = str(r.choice(list(trace.app_names) + ["com.injected.app"]))
            out.append(rec._replace(app_id=app, state=AppState.FOREGROUND if r.random() < 0.5
                                    else AppState.BACKGROUND))
        elif isinstance(rec, SensorSample):
            out.append(rec._replace(values=tuple(float(v) for v in r.normal(size=len(rec.values)))))
    t = t_query + 1 + int(r.integers(0, 600))
    out += [ScreenEvent(uid, t, ScreenAction.ON), BroadcastEvent(uid, t + 1, 7),
            AppSample(uid, t + 2, "com.injected.app", AppState.FOREGROUND)]
    return out


def test_c04_no_future_peeking(tmp_path, criterion):
    cfg, traces = world(tmp_path, two_regime(), n_users=3, days=7, battery_period=60, app_period=300,
                        t1_period=600, t2_period=900)
    ds = build_dataset(traces, seed=4)
    long_, _ = sessions_from_traces(traces)
    history = build_history(long_, traces)
    queries = ds.split.train + ds.split.test
    r = np.random.default_rng(104)
    picks = r.choice(len(queries), size=100, replace=len(queries) < 100)
    identical = 0
    for i in picks:
        q = queries[i]
        uid = q.session.user_id
        base = extract_features(q, traces[uid], history, ds.schema)
        recs = _perturb_after(traces[uid], q.t_query, r)
        pert = dict(traces)
        pert[uid] = build_user_trace(recs, cfg.t1_width, cfg.t2_width)[uid]
        s = next(s for s in segment_sessions(pert[uid]) if s.t_start <= q.t_query <= s.t_end)
        assert s.t_start == q.session.t_start
        pq = make_query_instance(s, label_session(s), q.t_query)
        plong, _ = sessions_from_traces(pert)
        row = extract_features(pq, pert[uid], build_history(plong, pert), ds.schema)
        identical += np.array_equal(base.view(np.uint64), row.view(np.uint64))
    ok = criterion(4, identical == len(picks), f"{identical}/{len(picks)} queries bit-identical")
    assert ok


def test_c05_constant_rate_oracle(tmp_path, criterion):
    t0 = time.perf_counter()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        _, traces = world(tmp_path, single_regime(0.25), app_period=300, emit_sensors=False, emit_apps=False)
        ds = build_dataset(traces, seed=1)
    man = load_manifest(tmp_path / "manifest.csv")
    f11 = ds.schema.group_slice("F11").start
    err = []
    for q, row in zip(ds.split.train + ds.split.test, np.vstack([ds.X_train, ds.X_test])):
        life = true_remaining_life(man, q.session.user_id, q.t_query, 20)
        if isinstance(life, CensoredByCharge) or np.isnan(row[f11]):
            continue
        err.append(row[f11] - life)
    f11_rmse = float(np.sqrt(np.mean(np.square(err))))
    cols = ds.columns("F1,F10-F12")
    ytr, otr = ds.labels("train")
    yte, ote = ds.labels("test")
    model = fit(ds.Z_train[otr][:, cols], ytr[otr], ModelConfig(kind="boost"))
    tau = kendall_tau(predict(model, ds.Z_test[:, cols]), yte, ote)
    elapsed = time.perf_counter() - t0
    ok = criterion(5, f11_rmse <= 2 and tau >= 0.95 and elapsed < 120,
                   f"F11 RMSE {f11_rmse:.2f} min over {len(err)} queries (need <= 2); "
                   f"boost F1+F10-F12 tau {tau:.4f} (need >= 0.95); {elapsed:.0f} s")
    assert ok


def test_c06_trees_beat_linear(tmp_path, criterion):
    _, traces = world(tmp_path, two_regime())
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        ds = build_dataset(traces, seed=1)
    cols = ds.columns("F1-F18")
    ytr, otr = ds.labels("train")
    yte, ote = ds.labels("test")
    scores = {}
    for kind in ("linear", "boost"):
        m = fit(ds.Z_train[otr][:, cols], ytr[otr], ModelConfig(kind=kind))
        scores[kind] = rmse(predict(m, ds.Z_test[:, cols]), yte, ote)
    drop = 1 - scores["boost"] / scores["linear"]
    ok = criterion(6, drop >= 0.2, f"boost RMSE {scores['boost']:.1f} vs linear {scores['linear']:.1f} "
                   f"({drop:.0%} lower, need >= 20%)")
    assert ok


def test_c07_stability_gain_shape(tmp_path, criterion):
    _, traces = world(tmp_path, commuter())
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        ds = build_dataset(traces, seed=1)
    rows, sessions = [], []
    for i, q in enumerate(ds.split.train):
        if not q.observed:
            continue
        try:
            session_stability_variance(q.session)
        except InsufficientConsumption:
            continue
        rows.append(i)
        sessions.append(q.session)
    y = np.array([ds.split.train[i].minutes for i in rows])
    sc = ds.schema
    sets = {"session": sc.columns_for(QUERY_TIME_GROUPS + SESSION_GROUPS),
            "all": sc.columns_for(list(sc.group_widths()))}
    mc = ModelConfig(kind="boost")
    rep = stability_experiment(sessions, ds.Z_train[rows], y, sets, lambda a, b, c: predict(fit(a, b, mc), c))
    gain = rep.gain(1, 0)
    high, low = gain[3:].mean(), gain[:2].mean()
    ok = criterion(7, high > low, f"mean tau gain top two quintiles {high:.4f} vs bottom two {low:.4f}")
    assert ok


def test_c08_bootstrap_sanity(criterion):
    r = np.random.default_rng(108)
    n = 300
    m = r.uniform(10, 300, size=n)
    o = r.random(n) < 0.7
    ids = [f"q{i}" for i in range(n)]
    err = r.normal(0, 40, size=n)
    base = PredictionSet(ids, m + err, m, o)
    good = PredictionSet(ids, m + err / 3, m, o)
    p_same = bootstrap_shift_test(base, base, "rmse", iterations=10_000, seed=8).p_value
    dominant = {met: bootstrap_shift_test(good, base, met, iterations=10_000, seed=8).p_value
                for met in ("rmse", "tau", "c_index")}
    again = bootstrap_shift_test(good, base, "tau", iterations=10_000, seed=8).p_value
    ok = p_same >= 0.5 and max(dominant.values()) < 0.01 and again == dominant["tau"]
    detail = ", ".join(f"{k} {v:.4g}" for k, v in dominant.items())
    criterion(8, ok, f"identical p {p_same:.3f}; dominant p {detail}; reseeded p equal {again == dominant['tau']}")
    assert ok


PIPELINE_INI = """\
[run]
seed = 9

[synth]
world = two_regime
synth_users = 6
days = 14
battery_period = 60
app_period = 300
t1_period = 600
t2_period = 900

[train]
models = linear,forest,boost,boost2
feature_sets = F1,F10-F12;F1-F21
n_estimators = 20
"""


def test_c09_pipeline_determinism(tmp_path, criterion):
    ini = tmp_path / "run.ini"
    ini.write_text(PIPELINE_INI)
    work = tmp_path / "work"
    stages = ("synth", "ingest", "sessionize", "stats", "simulate", "featurize", "train", "predict", "evaluate")
    runs = []
    for k in range(2):
        codes = [cli_main([s, "--config", str(ini), "--workdir", str(work)]) for s in stages]
        assert codes == [0] * len(stages)
        shutil.move(str(work), str(tmp_path / f"run{k}"))
        runs.append(tmp_path / f"run{k}")
    files = sorted(os.path.relpath(os.path.join(d, f), runs[0])
                   for d, _, fs in os.walk(runs[0]) for f in fs)
    other = sorted(os.path.relpath(os.path.join(d, f), runs[1])
                   for d, _, fs in os.walk(runs[1]) for f in fs)
    _, mismatch, errors = filecmp.cmpfiles(runs[0], runs[1], files, shallow=False)
    ok = criterion(9, files == other and not mismatch and not errors,
                   f"{len(files)} artifacts compared, {len(mismatch) + len(errors)} differ")
    assert ok


def test_c10_preprocessor_contract(tmp_path, criterion):
    _, traces = world(tmp_path, two_regime(), n_users=4, days=10, battery_period=60, app_period=300,
                      t1_period=600, t2_period=900)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        ds = build_dataset(traces, fcfg=FeatureConfig(), seed=2)
    live = ~ds.preprocessor.passthrough
    Z = ds.Z_train[:, live]
    mean_err = float(np.abs(Z.mean(axis=0)).max())
    std_err = float(np.abs(Z.std(axis=0) - 1).max())
    ok = criterion(10, mean_err < 1e-9 and std_err < 1e-9 and ds.schema.width == 1079,
                   f"width {ds.schema.width}; max |mean| {mean_err:.1e}, max |std-1| {std_err:.1e} "
                   f"over {int(live.sum())} columns")
    assert ok


def test_c11_throughput(tmp_path, criterion):
    n_users, per = 10, 100_000
    i = np.arange(per)
    t = ((i + 1) * 60).tolist()
    lv = (100 - (i % 500) // 6).tolist()
    ch = np.where(i % 500 >= 480, "charge", "discharge").tolist()
    with open(tmp_path / "battery.csv", "w", encoding="utf-8") as fh:
        fh.write("user_id,timestamp,charge_state,level\n")
        for u in range(n_users):
            fh.write("".join(f"user{u},{a},{c},{b}\n" for a, b, c in zip(t, lv, ch)))
    t0 = time.perf_counter()
    traces, _ = load_directory(tmp_path)
    n_sessions = sum(len(segment_sessions(tr)) for tr in traces.values())
    elapsed = time.perf_counter() - t0
    n = sum(tr.battery_t.size for tr in traces.values())
    ok = criterion(11, n == 1_000_000 and elapsed < 30,
                   f"{n} entries, {n_sessions} sessions in {elapsed:.1f} s (need < 30 s)")
    assert ok
