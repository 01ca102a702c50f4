"""Feature groups F1-F21 and the median-impute / standardize preprocessor.

Every extractor looks only at records with ``timestamp <= t_query`` and, for
user history, at sessions that ended before the current session started.
Unavailable values are NaN until :class:`Preprocessor` imputes them.
"""

from __future__ import annotations

import hashlib
import json
import math
import re
import warnings
from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .ingest import N_BROADCAST_TYPES, T1_WIDTH, T2_WIDTH, UserTrace
from .queries import QueryInstance
from .sessions import Session, battery_at

SCHEMA_VERSION = 1
GROUP_IDS = tuple(f"F{i}" for i in range(1, 22))
QUERY_TIME_GROUPS = GROUP_IDS[:4]
SESSION_GROUPS = GROUP_IDS[4:18]
USER_GROUPS = GROUP_IDS[18:]

T1_WINDOWS = (1, 5, 10, 30, 60)
APP_WINDOWS = (5, 10, 30, 60)
RECENT_PERCENTS = 10
HISTORY_FILTERS = ("anytime", "hour", "weekday", "hour_weekday")


class SchemaMismatch(ValueError):
    pass


class TooFewRows(ValueError):
    pass


class InsufficientApps(UserWarning):
    pass


@dataclass(frozen=True)
class FeatureConfig:
    top_k_apps: int = 50
    n_broadcast_types: int = N_BROADCAST_TYPES
    t1_width: int = T1_WIDTH
    t2_width: int = T2_WIDTH
    n_users: int = 51
    utc_offset_hours: float = 0.0


def local_hour(t, offset_hours: float = 0.0) -> int:
    return int((int(t) + int(round(offset_hours * 3600))) // 3600 % 24)


def local_weekday(t, offset_hours: float = 0.0) -> int:
    """Monday is 0; 1970-01-01 was a Thursday."""
    return int(((int(t) + int(round(offset_hours * 3600))) // 86400 + 3) % 7)


@dataclass(frozen=True)
class FeatureSchema:
    config: FeatureConfig
    top_apps: tuple
    users: tuple
    groups: tuple = field(init=False)

    def __post_init__(self):
        cfg = self.config
        k = cfg.top_k_apps
        states = ("fg", "bg")
        groups = [
            ("F1", ["current_battery"]),
            ("F2", [f"current_hour_{h:02d}" for h in range(24)]),
            ("F3", [f"current_weekday_{d}" for d in range(7)]),
            ("F4", [f"sensor_T2_last_s{i}" for i in range(1, cfg.t2_width + 1)]),
            ("F5", ["start_battery"]),
            ("F6", [f"start_hour_{h:02d}" for h in range(24)]),
            ("F7", [f"start_weekday_{d}" for d in range(7)]),
            ("F8", ["age"]),
            ("F9", ["consumption"]),
            ("F10", ["history_rate"]),
            ("F11", ["naive_surv"]),
            ("F12", [f"past_rate_{p}pct" for p in range(1, RECENT_PERCENTS + 1)] + ["dwell_time"]),
            ("F13", [f"sensor_T1_s{i}_{w}min" for w in T1_WINDOWS for i in range(1, cfg.t1_width + 1)]),
            ("F14", [f"sensor_T2_5min_s{i}" for i in range(1, cfg.t2_width + 1)]),
            ("F15", [f"app_occurrence_{r:02d}_{s}_{w}min"
                     for w in APP_WINDOWS for r in range(k) for s in states]),
            ("F16", [f"app_usage_{r:02d}_{s}" for r in range(k) for s in states]),
            ("F17", ["screen_on_count", "screen_on_fraction"]),
            ("F18", [f"broadcast_{b:02d}" for b in range(cfg.n_broadcast_types)]),
            ("F19", [f"user_{u:02d}" for u in range(cfg.n_users)]),
            ("F20", [f"session_rate_{f}_{s}" for f in HISTORY_FILTERS for s in ("mean", "median")]),
            ("F21", [f"screen_history_{f}_{s}" for f in HISTORY_FILTERS for s in ("mean", "median")]),
        ]
        object.__setattr__(self, "groups", tuple((g, tuple(names)) for g, names in groups))

    @property
    def columns(self) -> list[str]:
        return [name for _, names in self.groups for name in names]

    @property
    def width(self) -> int:
        return sum(len(names) for _, names in self.groups)

    def group_widths(self) -> dict[str, int]:
        return {g: len(names) for g, names in self.groups}

    def group_slice(self, gid: str) -> slice:
        start = 0
        for g, names in self.groups:
            if g == gid:
                return slice(start, start + len(names))
            start += len(names)
        raise KeyError(gid)

    def columns_for(self, group_ids: Iterable[str]) -> np.ndarray:
        idx = []
        for g in group_ids:
            sl = self.group_slice(g)
            idx.extend(range(sl.start, sl.stop))
        return np.asarray(idx, dtype=np.int64)

    def user_index(self, user_id: str) -> int:
        return self.users.index(user_id)

    @property
    def fingerprint(self) -> str:
        payload = json.dumps({"version": SCHEMA_VERSION, "columns": self.columns,
                              "top_apps": list(self.top_apps), "users": list(self.users)},
                             separators=(",", ":"))
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]

    def to_json(self) -> str:
        return json.dumps({
            "version": SCHEMA_VERSION,
            "config": asdict(self.config),
            "top_apps": list(self.top_apps),
            "users": list(self.users),
            "group_widths": self.group_widths(),
            "width": self.width,
            "fingerprint": self.fingerprint,
        }, indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "FeatureSchema":
        d = json.loads(text)
        if d.get("version") != SCHEMA_VERSION:
            raise SchemaMismatch(f"unsupported schema version {d.get('version')}")
        schema = cls(FeatureConfig(**d["config"]), tuple(d["top_apps"]), tuple(d["users"]))
        if schema.fingerprint != d["fingerprint"]:
            raise SchemaMismatch("schema manifest fingerprint does not match its contents")
        return schema


def build_schema(config: FeatureConfig, traces: Mapping[str, UserTrace],
                 windows: Sequence[tuple[str, int, int]] | None = None,
                 users: Sequence[str] | None = None) -> FeatureSchema:
    """Fix the top-K app vocabulary and user index from training data.

    Apps are ranked by sample count, counting only samples inside
    ``windows`` (``(user_id, t_start, t_end)`` of training sessions) when
    given; ties go to the lexicographically smaller app id.  Fewer than K
    apps leaves never-firing padding columns.
    """
    counts: dict[str, int] = {}
    spans: list[tuple[UserTrace, slice]] = []
    if windows is None:
        spans = [(tr, slice(None)) for tr in traces.values()]
    else:
        spans = [(traces[u], traces[u].span("app", a, b)) for u, a, b in windows if u in traces]
    for tr, sl in spans:
        codes = np.bincount(tr.app_code[sl], minlength=len(tr.app_names))
        for name, c in zip(tr.app_names, codes.tolist()):
            if c:
                counts[name] = counts.get(name, 0) + c
    ranked = sorted(counts, key=lambda a: (-counts[a], a))[:config.top_k_apps]
    if len(ranked) < config.top_k_apps:
        warnings.warn(f"only {len(ranked)} distinct apps for top-{config.top_k_apps}",
                      InsufficientApps)
    user_list = tuple(sorted(traces) if users is None else users)
    if len(user_list) > config.n_users:
        raise ValueError(f"{len(user_list)} users exceed the configured user count {config.n_users}")
    return FeatureSchema(config, tuple(ranked), user_list)


# -- user history ----------------------------------------------------------

@dataclass
class UserHistoryIndex:
    """Per-user summaries of sessions, ordered by end time."""

    t_end: dict = field(default_factory=dict)
    start_hour: dict = field(default_factory=dict)
    start_weekday: dict = field(default_factory=dict)
    rate: dict = field(default_factory=dict)
    screen_fraction: dict = field(default_factory=dict)

    def visible(self, user_id: str, before: int) -> slice:
        """Sessions of ``user_id`` that ended strictly before ``before``."""
        t = self.t_end.get(user_id)
        if t is None:
            return slice(0, 0)
        return slice(0, int(np.searchsorted(t, before, "left")))


def screen_on_seconds(trace: UserTrace, a: int, b: int) -> tuple[int, float]:
    """Count of On events in [a, b] and seconds with the screen on in [a, b]."""
    if b <= a:
        sl = trace.span("screen", a, b)
        return int(trace.screen_on[sl].sum()), 0.0
    i0 = int(np.searchsorted(trace.screen_t, a, "right"))
    state = bool(trace.screen_on[i0 - 1]) if i0 > 0 else False
    sl = trace.span_open("screen", a, b)
    ts = trace.screen_t[sl]
    ons = trace.screen_on[sl]
    # events exactly at a count as On actions of this interval
    at_a = trace.span("screen", a, a)
    n_on = int(ons.sum()) + int(trace.screen_on[at_a].sum())
    on_time = 0.0
    cursor = a
    for t, on in zip(ts.tolist(), ons.tolist()):
        if state:
            on_time += t - cursor
        cursor = t
        state = on
    if state:
        on_time += b - cursor
    return n_on, on_time


def build_history(sessions: Iterable[Session], traces: Mapping[str, UserTrace],
                  utc_offset_hours: float = 0.0) -> UserHistoryIndex:
    per_user: dict[str, list] = {}
    for s in sessions:
        per_user.setdefault(s.user_id, []).append(s)
    hist = UserHistoryIndex()
    for uid, ss in per_user.items():
        ss = sorted(ss, key=lambda s: (s.t_end, s.t_start))
        tr = traces.get(uid)
        rates, fracs = [], []
        for s in ss:
            minutes = s.duration / 60.0
            rates.append((s.b_start - s.b_end) / minutes if minutes > 0 else np.nan)
            if tr is not None and s.duration > 0:
                fracs.append(screen_on_seconds(tr, s.t_start, s.t_end)[1] / s.duration)
            else:
                fracs.append(np.nan)
        hist.t_end[uid] = np.array([s.t_end for s in ss], dtype=np.int64)
        hist.start_hour[uid] = np.array([local_hour(s.t_start, utc_offset_hours) for s in ss])
        hist.start_weekday[uid] = np.array([local_weekday(s.t_start, utc_offset_hours) for s in ss])
        hist.rate[uid] = np.array(rates, dtype=float)
        hist.screen_fraction[uid] = np.array(fracs, dtype=float)
    return hist


# -- extractors ------------------------------------------------------------

def _one_hot(k: int, n: int) -> np.ndarray:
    out = np.zeros(n)
    out[k] = 1.0
    return out


def _nanmean_rows(values: np.ndarray, width: int) -> np.ndarray:
    if values.shape[0] == 0:
        return np.full(width, np.nan)
    valid = ~np.isnan(values)
    n = valid.sum(axis=0)
    s = np.where(valid, values, 0.0).sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(n > 0, s / np.maximum(n, 1), np.nan)


def extract_query_time_features(query: QueryInstance, trace: UserTrace,
                                schema: FeatureSchema) -> np.ndarray:
    """F1-F4: battery level, hour, weekday and last T2 sample at query time."""
    cfg = schema.config
    t = query.t_query
    f1 = [float(battery_at(query.session, t))]
    f2 = _one_hot(local_hour(t, cfg.utc_offset_hours), 24)
    f3 = _one_hot(local_weekday(t, cfg.utc_offset_hours), 7)
    i = int(np.searchsorted(trace.t2_t, t, "right")) - 1
    f4 = trace.t2_values[i].copy() if i >= 0 else np.full(cfg.t2_width, np.nan)
    return np.concatenate([f1, f2, f3, f4])


def crossing_time(times: np.ndarray, levels: np.ndarray, level: int) -> int | None:
    """First entry time with battery level <= ``level``."""
    hit = np.flatnonzero(levels <= level)
    return int(times[hit[0]]) if hit.size else None


def recent_rates(session: Session, t_query: int) -> np.ndarray:
    """Minutes per percent over the last 1..10 percent, then the dwell time."""
    n = int(np.searchsorted(session.times, t_query, "right"))
    times, levels = session.times[:n], session.levels[:n]
    current = int(levels[-1])
    t_cur = crossing_time(times, levels, current)
    out = np.full(RECENT_PERCENTS + 1, np.nan)
    for p in range(1, RECENT_PERCENTS + 1):
        if int(levels[0]) < current + p:
            break
        t_p = crossing_time(times, levels, current + p)
        out[p - 1] = (t_cur - t_p) / 60.0 / p
    out[RECENT_PERCENTS] = (t_query - t_cur) / 60.0
    return out


def extract_session_features(query: QueryInstance, trace: UserTrace,
                             schema: FeatureSchema) -> np.ndarray:
    """F5-F18: battery history, sensors, apps, screen and broadcasts of the session so far."""
    cfg = schema.config
    s = query.session
    tq = query.t_query
    t0 = s.t_start
    f1 = float(battery_at(s, tq))
    f5 = float(s.b_start)
    f6 = _one_hot(local_hour(t0, cfg.utc_offset_hours), 24)
    f7 = _one_hot(local_weekday(t0, cfg.utc_offset_hours), 7)
    f8 = (tq - t0) / 60.0
    f9 = f5 - f1
    f10 = f9 / f8 if (f8 > 0 and f9 != 0) else 0.0
    f11 = f1 / f10 if f10 > 0 else np.nan
    f12 = recent_rates(s, tq)

    f13 = []
    for w in T1_WINDOWS:
        sl = trace.span("t1", max(tq - 60 * w, t0), tq)
        f13.append(_nanmean_rows(trace.t1_values[sl], cfg.t1_width))
    f13 = np.concatenate(f13)
    f14 = _nanmean_rows(trace.t2_values[trace.span("t2", tq - 300, tq)], cfg.t2_width)

    k = cfg.top_k_apps
    rank_of = np.full(len(trace.app_names), -1, dtype=np.int64)
    top_rank = {a: r for r, a in enumerate(schema.top_apps)}
    for c, name in enumerate(trace.app_names):
        rank_of[c] = top_rank.get(name, -1)

    f15 = np.zeros((len(APP_WINDOWS), k, 2))
    sl = trace.span("app", tq - 60 * max(APP_WINDOWS), tq)
    ranks = rank_of[trace.app_code[sl]] if rank_of.size else np.zeros(0, dtype=np.int64)
    ages = tq - trace.app_t[sl]
    st = np.where(trace.app_foreground[sl], 0, 1)
    top = ranks >= 0
    for wi, w in enumerate(APP_WINDOWS):
        m = top & (ages <= 60 * w)
        f15[wi, ranks[m], st[m]] = 1.0

    f16 = np.zeros((k, 2))
    sl = trace.span("app", t0, tq)
    ts = trace.app_t[sl]
    if ts.size and tq > t0:
        instants = np.unique(ts)
        nxt = np.append(instants[1:], tq)
        extent = (nxt - instants).astype(float)
        dur = extent[np.searchsorted(instants, ts)]
        ranks = rank_of[trace.app_code[sl]]
        st = np.where(trace.app_foreground[sl], 0, 1)
        top = ranks >= 0
        np.add.at(f16, (ranks[top], st[top]), dur[top])
        f16 /= float(tq - t0)

    n_on, on_secs = screen_on_seconds(trace, t0, tq)
    f17 = [float(n_on), on_secs / (tq - t0) if tq > t0 else 0.0]

    bt = trace.broadcast_type[trace.span("broadcast", t0, tq)]
    f18 = np.bincount(bt[bt >= 0], minlength=cfg.n_broadcast_types)[:cfg.n_broadcast_types]

    return np.concatenate([[f5], f6, f7, [f8, f9, f10, f11], f12, f13, f14,
                           f15.ravel(), f16.ravel(), f17, f18.astype(float)])


def _stats(values: np.ndarray) -> list[float]:
    values = values[~np.isnan(values)]
    if values.size == 0:
        return [np.nan, np.nan]
    return [math.fsum(values.tolist()) / values.size, float(np.median(values))]


def extract_user_features(query: QueryInstance, history: UserHistoryIndex,
                          schema: FeatureSchema) -> np.ndarray:
    """F19-F21: user one-hot and statistics over the user's earlier sessions."""
    cfg = schema.config
    s = query.session
    f19 = np.zeros(cfg.n_users)
    if s.user_id in schema.users:
        f19[schema.user_index(s.user_id)] = 1.0
    uid = s.user_id
    vis = history.visible(uid, s.t_start)
    hour = local_hour(s.t_start, cfg.utc_offset_hours)
    wday = local_weekday(s.t_start, cfg.utc_offset_hours)
    if vis.stop:
        hours = history.start_hour[uid][vis]
        wdays = history.start_weekday[uid][vis]
        masks = [np.ones(hours.size, dtype=bool), hours == hour, wdays == wday,
                 (hours == hour) & (wdays == wday)]
        rate = history.rate[uid][vis]
        frac = history.screen_fraction[uid][vis]
    else:
        masks, rate, frac = [np.zeros(0, dtype=bool)] * 4, np.zeros(0), np.zeros(0)
    f20, f21 = [], []
    for m in masks:
        f20 += _stats(rate[m])
        f21 += _stats(frac[m])
    return np.concatenate([f19, f20, f21])


def extract_features(query: QueryInstance, trace: UserTrace, history: UserHistoryIndex,
                     schema: FeatureSchema) -> np.ndarray:
    row = np.concatenate([
        extract_query_time_features(query, trace, schema),
        extract_session_features(query, trace, schema),
        extract_user_features(query, history, schema),
    ])
    assert row.size == schema.width
    return row


def feature_matrix(queries: Sequence[QueryInstance], traces: Mapping[str, UserTrace],
                   history: UserHistoryIndex, schema: FeatureSchema) -> np.ndarray:
    X = np.empty((len(queries), schema.width))
    for i, q in enumerate(queries):
        X[i] = extract_features(q, traces[q.session.user_id], history, schema)
    return X


# -- feature-set expressions ---------------------------------------------

class BadGroupId(ValueError):
    pass


_GROUP_RE = re.compile(r"^F(\d+)$")


def _group_number(token: str) -> int:
    m = _GROUP_RE.match(token.strip().upper())
    if not m or not 1 <= int(m.group(1)) <= len(GROUP_IDS):
        raise BadGroupId(f"not a feature group: {token.strip()!r}")
    return int(m.group(1))


def feature_set_parse(expr: str) -> list[str]:
    """Expand ``"F1,F10-F12"`` into ``["F1", "F10", "F11", "F12"]``."""
    out: list[str] = []
    for part in expr.split(","):
        part = part.strip()
        if not part:
            raise BadGroupId(f"empty item in {expr!r}")
        if "-" in part:
            lo, _, hi = part.partition("-")
            a, b = _group_number(lo), _group_number(hi)
            if b < a:
                raise BadGroupId(f"descending range {part!r}")
            ids = [f"F{i}" for i in range(a, b + 1)]
        else:
            ids = [f"F{_group_number(part)}"]
        for g in ids:
            if g not in out:
                out.append(g)
    return out


# -- preprocessing ---------------------------------------------------------

@dataclass
class Preprocessor:
    """Per-column median imputation followed by standardization.

    Columns with zero variance after imputation (including columns that were
    all missing) pass through unchanged.
    """

    medians: np.ndarray
    means: np.ndarray
    stds: np.ndarray
    passthrough: np.ndarray
    fingerprint: str | None = None

    @property
    def width(self) -> int:
        return self.medians.size

    def transform(self, X, fingerprint: str | None = None) -> np.ndarray:
        return apply_preprocessor(self, X, fingerprint)

    def to_json(self) -> str:
        return json.dumps({
            "fingerprint": self.fingerprint,
            "medians": [repr(float(v)) for v in self.medians],
            "means": [repr(float(v)) for v in self.means],
            "stds": [repr(float(v)) for v in self.stds],
            "passthrough": [bool(v) for v in self.passthrough],
        })

    @classmethod
    def from_json(cls, text: str) -> "Preprocessor":
        d = json.loads(text)
        arr = lambda key: np.array([float(v) for v in d[key]])  # noqa: E731
        return cls(arr("medians"), arr("means"), arr("stds"),
                   np.array(d["passthrough"], dtype=bool), d["fingerprint"])


def fit_preprocessor(X, fingerprint: str | None = None) -> Preprocessor:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] < 2:
        raise TooFewRows("need at least two training rows")
    n, d = X.shape
    all_missing = np.isnan(X).all(axis=0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        medians = np.nanmedian(X, axis=0)
    medians[all_missing] = 0.0
    filled = np.where(np.isnan(X), medians, X)
    means = np.empty(d)
    stds = np.empty(d)
    for j in range(d):
        col = filled[:, j].tolist()
        mu = math.fsum(col) / n
        means[j] = mu
        stds[j] = math.sqrt(math.fsum((v - mu) ** 2 for v in col) / n)
    scale = np.maximum(1.0, np.abs(means))
    passthrough = all_missing | (stds <= 1e-12 * scale)
    return Preprocessor(medians, means, stds, passthrough, fingerprint)


def apply_preprocessor(pre: Preprocessor, X, fingerprint: str | None = None) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    one = X.ndim == 1
    X2 = X[None, :] if one else X
    if X2.shape[1] != pre.width:
        raise SchemaMismatch(f"row width {X2.shape[1]} != preprocessor width {pre.width}")
    if fingerprint is not None and pre.fingerprint is not None and fingerprint != pre.fingerprint:
        raise SchemaMismatch("feature schema fingerprint differs from the fitted one")
    filled = np.where(np.isnan(X2), pre.medians, X2)
    std = np.where(pre.passthrough, 1.0, pre.stds)
    mean = np.where(pre.passthrough, 0.0, pre.means)
    out = (filled - mean) / std
    return out[0] if one else out


# -- export ----------------------------------------------------------------

def _cell(v: float) -> str:
    return "" if math.isnan(v) else repr(float(v))


def write_feature_matrix(fh, schema: FeatureSchema, X: np.ndarray, query_ids: Sequence[str]) -> None:
    fh.write("query_id," + ",".join(schema.columns) + "\n")
    for qid, row in zip(query_ids, X):
        fh.write(qid + "," + ",".join(_cell(v) for v in row.tolist()) + "\n")


def read_feature_matrix(fh, schema: FeatureSchema | None = None) -> tuple[list[str], np.ndarray]:
    header = fh.readline().rstrip("\r\n").split(",")
    if schema is not None and header[1:] != schema.columns:
        raise SchemaMismatch("feature matrix header does not match the schema")
    ids, rows = [], []
    for line in fh:
        parts = line.rstrip("\r\n").split(",")
        ids.append(parts[0])
        rows.append([float(p) if p else np.nan for p in parts[1:]])
    X = np.array(rows, dtype=float).reshape(len(rows), len(header) - 1)
    return ids, X


def write_labels(fh, queries: Sequence[QueryInstance]) -> None:
    fh.write("query_id,outcome_kind,outcome_minutes\n")
    for q in queries:
        fh.write(f"{q.query_id},{q.outcome_kind},{q.minutes!r}\n")


def read_labels(fh) -> tuple[list[str], np.ndarray, np.ndarray]:
    fh.readline()
    ids, observed, minutes = [], [], []
    for line in fh:
        qid, kind, m = line.rstrip("\r\n").split(",")
        ids.append(qid)
        observed.append(kind == "life")
        minutes.append(float(m))
    return ids, np.array(observed, dtype=bool), np.array(minutes, dtype=float)
