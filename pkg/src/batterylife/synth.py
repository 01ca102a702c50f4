"""Synthetic telemetry worlds with a known ground truth.

Each user is simulated on a fixed step grid (one minute by default).  The
active *regime* sets the discharge rate, screen-on probability, app usage,
broadcast rate and sensor means; regimes follow a Markov chain or an
hour-of-week schedule.  The battery is a continuous level drained at the
regime rate and reported as an integer percentage, so the exact time of
every 1% crossing is known and written to ``manifest.csv``.

Charging follows a simple routine: plug in at night (with some
probability) or when the level falls to a per-user threshold, unplug in the
morning or, for daytime top-ups, at a random target level.
"""

from __future__ import annotations

import bisect
import csv
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import ingest
from .ingest import (AppSample, AppState, BatteryEntry, BroadcastEvent, ChargeState,
                     ScreenAction, ScreenEvent, SensorGroup, SensorSample)
from .rng import make_rng

DAY = 86400
# 2015-03-09 00:00:00 UTC, a Monday
DEFAULT_START = 1425859200


class ConfigInvalid(ValueError):
    pass


class OutsideDischarge(ValueError):
    pass


@dataclass(frozen=True)
class CensoredByCharge:
    """The device was plugged in before reaching the threshold."""

    minutes_until_charge: float


@dataclass(frozen=True)
class Regime:
    name: str
    rate: float  # percent per minute
    screen_on_prob: float = 0.3
    app_intensity: float = 2.0
    broadcast_rate: float = 0.5  # events per minute
    sensor_level: float = 0.0
    user_sd: float | None = None  # per-user log-rate spread; None uses SynthConfig.user_rate_sd


@dataclass(frozen=True)
class RegimeModel:
    """Regimes plus either a per-step transition matrix or a weekly schedule.

    ``schedule`` is a 7 x 24 nested tuple (weekday, hour) of regime indices;
    entries of -1 fall back to the Markov chain.  A k x 7 x 24 stack gives
    per-user variants: user ``u`` follows variant ``u % k``.
    """

    regimes: tuple
    transition: tuple | None = None
    schedule: tuple | None = None

    def __post_init__(self):
        n = len(self.regimes)
        if n == 0:
            raise ConfigInvalid("at least one regime is required")
        if any(r.rate <= 0 for r in self.regimes):
            raise ConfigInvalid("regime rates must be positive")
        if self.transition is not None:
            P = np.asarray(self.transition, dtype=float)
            if P.shape != (n, n) or (P < 0).any() or not np.allclose(P.sum(axis=1), 1.0):
                raise ConfigInvalid("transition rows must be probability vectors")
        elif n > 1 and (self.schedule is None or (np.asarray(self.schedule) == -1).any()):
            raise ConfigInvalid("several regimes need a transition matrix or a full schedule")
        if self.schedule is not None:
            S = np.asarray(self.schedule)
            if S.shape[-2:] != (7, 24) or S.ndim not in (2, 3) or S.max() >= n or S.min() < -1:
                raise ConfigInvalid("schedule must be 7 x 24 (or k x 7 x 24) regime indices")

    def schedule_for(self, uidx: int) -> np.ndarray | None:
        if self.schedule is None:
            return None
        S = np.asarray(self.schedule)
        return S if S.ndim == 2 else S[uidx % S.shape[0]]

    @property
    def names(self) -> list[str]:
        return [r.name for r in self.regimes]


@dataclass(frozen=True)
class SynthConfig:
    n_users: int = 5
    days: int = 14
    start: int = DEFAULT_START
    seed: int = 0
    step: int = 60
    battery_period: int = 5
    t1_period: int = 60
    t2_period: int = 15
    app_period: int = 5
    t1_width: int = ingest.T1_WIDTH
    t2_width: int = ingest.T2_WIDTH
    n_apps: int = 60
    n_broadcast_types: int = ingest.N_BROADCAST_TYPES
    sensor_missing_prob: float = 0.02
    user_rate_sd: float = 0.25
    charge_rate: float = 1.0
    unplug_hour: float = 7.5
    night_hour: float = 22.5
    hour_sd: float = 0.5
    daily_jitter_min: float = 20.0
    night_charge_prob: float = 0.8
    charge_below: tuple = (5.0, 25.0)
    topup_target: tuple = (70.0, 100.0)
    dropout_prob: float = 0.0
    utc_offset_hours: float = 0.0
    emit_sensors: bool = True
    emit_apps: bool = True

    def __post_init__(self):
        if self.n_users < 1 or self.days < 1:
            raise ConfigInvalid("n_users and days must be positive")
        for name in ("step", "battery_period", "t1_period", "t2_period", "app_period"):
            if getattr(self, name) <= 0:
                raise ConfigInvalid(f"{name} must be positive")
        if self.step % self.battery_period:
            raise ConfigInvalid("step must be a multiple of battery_period")
        if self.charge_rate <= 0:
            raise ConfigInvalid("charge_rate must be positive")
        if not 1.0 <= self.charge_below[0] <= self.charge_below[1] < 100:
            raise ConfigInvalid("charge_below must be an increasing range within [1, 100)")

    @property
    def user_ids(self) -> list[str]:
        return [f"user{u:02d}" for u in range(self.n_users)]


# -- presets ---------------------------------------------------------------

def single_regime(rate: float = 0.25) -> RegimeModel:
    return RegimeModel((Regime("steady", rate),))


def two_regime(light: float = 0.08, heavy: float = 0.6, stay: float = 0.985) -> RegimeModel:
    """Light/heavy usage alternating as a persistent Markov chain."""
    return RegimeModel(
        (Regime("light", light, screen_on_prob=0.1, app_intensity=1.0, broadcast_rate=0.2,
                sensor_level=-1.0),
         Regime("heavy", heavy, screen_on_prob=0.9, app_intensity=4.0, broadcast_rate=1.5,
                sensor_level=1.0)),
        transition=((stay, 1 - stay), (1 - stay, stay)))


def commuter(leave_hours=(14, 16, 18, 20), evening_sd: float | None = 0.5,
             steady_sd: float | None = 0.0) -> RegimeModel:
    """Office hours are light, evenings heavy; weekends stay at home.

    Weekdays run home until 9, office until the leave hour, heavy evening
    use until 23.  Several ``leave_hours`` give users different schedules
    (user ``u`` gets ``leave_hours[u % k]``).  ``evening_sd`` and
    ``steady_sd`` set the per-user spread of the evening rate and of the
    home/office rates (None: use the config default).
    """
    home = Regime("home", 0.12, screen_on_prob=0.4, app_intensity=2.0, broadcast_rate=0.5,
                  user_sd=steady_sd)
    office = Regime("office", 0.05, screen_on_prob=0.1, app_intensity=1.0, broadcast_rate=0.3,
                    sensor_level=-1.0, user_sd=steady_sd)
    evening = Regime("evening", 0.45, screen_on_prob=0.9, app_intensity=4.0, broadcast_rate=1.2,
                     sensor_level=1.0, user_sd=evening_sd)
    weekend = (0,) * 24
    variants = []
    for leave in leave_hours:
        if not 9 < leave < 23:
            raise ConfigInvalid("leave hours must lie strictly between 9 and 23")
        weekday = (0,) * 9 + (1,) * (leave - 9) + (2,) * (23 - leave) + (0,)
        variants.append(tuple(weekday if d < 5 else weekend for d in range(7)))
    schedule = variants[0] if len(variants) == 1 else tuple(variants)
    return RegimeModel((home, office, evening), schedule=schedule)


# -- simulation ------------------------------------------------------------

@dataclass
class _UserWorld:
    user_id: str
    step_t: np.ndarray
    x_start: np.ndarray
    slope: np.ndarray  # percent per second, signed
    charging: np.ndarray
    regime: np.ndarray
    screen: np.ndarray
    events: list = field(default_factory=list)  # (t, kind, detail)
    dropouts: list = field(default_factory=list)


def _regime_path(model: RegimeModel, step_t: np.ndarray, cfg: SynthConfig, rng,
                 uidx: int = 0) -> np.ndarray:
    n = step_t.size
    off = int(round(cfg.utc_offset_hours * 3600))
    hours = (step_t + off) // 3600 % 24
    wdays = ((step_t + off) // DAY + 3) % 7
    schedule = model.schedule_for(uidx)
    if schedule is not None:
        sched = schedule[wdays, hours]
    else:
        sched = np.full(n, -1)
    if len(model.regimes) == 1:
        return np.zeros(n, dtype=np.int64)
    out = np.empty(n, dtype=np.int64)
    if model.transition is None:
        return sched.astype(np.int64)
    cum = np.cumsum(np.asarray(model.transition, dtype=float), axis=1)
    u = rng.random(n)
    cur = 0
    for i in range(n):
        if sched[i] >= 0:
            cur = int(sched[i])
        else:
            cur = min(int(np.searchsorted(cum[cur], u[i], "right")), len(model.regimes) - 1)
        out[i] = cur
    return out


def _simulate_user(uidx: int, cfg: SynthConfig, model: RegimeModel) -> _UserWorld:
    rng = make_rng(cfg.seed, "synth-user", uidx)
    uid = cfg.user_ids[uidx]
    dt = cfg.step
    n_steps = cfg.days * DAY // dt
    step_t = cfg.start + np.arange(n_steps, dtype=np.int64) * dt
    regime = _regime_path(model, step_t, cfg, rng, uidx)
    sd = np.array([cfg.user_rate_sd if r.user_sd is None else r.user_sd for r in model.regimes])
    mult = np.exp(rng.normal(0.0, 1.0, len(model.regimes)) * sd)
    rates = np.array([r.rate for r in model.regimes]) * mult
    screen_p = np.array([r.screen_on_prob for r in model.regimes])
    screen = rng.random(n_steps) < screen_p[regime]

    off = int(round(cfg.utc_offset_hours * 3600))
    unplug_h = cfg.unplug_hour + rng.normal(0, cfg.hour_sd)
    night_h = cfg.night_hour + rng.normal(0, cfg.hour_sd)
    below = rng.uniform(*cfg.charge_below)
    days = cfg.days + 1
    day0 = (cfg.start + off) // DAY * DAY - off

    def align(t):
        return cfg.start + int(round((t - cfg.start) / dt)) * dt

    unplug_at = [align(day0 + d * DAY + unplug_h * 3600 + rng.normal(0, cfg.daily_jitter_min) * 60)
                 for d in range(days)]
    night_at = {align(day0 + d * DAY + night_h * 3600 + rng.normal(0, cfg.daily_jitter_min) * 60)
                for d in range(days) if rng.random() < cfg.night_charge_prob}
    unplug_set = set(unplug_at)
    topups = rng.uniform(*cfg.topup_target, size=n_steps)

    dropouts = []
    if cfg.dropout_prob > 0:
        for d in range(cfg.days):
            if rng.random() < cfg.dropout_prob:
                a = cfg.start + d * DAY + int(rng.integers(0, DAY))
                dropouts.append((a, a + int(rng.integers(15 * 60, 60 * 60))))

    x_start = np.empty(n_steps)
    slope = np.empty(n_steps)
    charging = np.empty(n_steps, dtype=bool)
    events = []
    x = 100.0
    is_charging = True
    target = None  # None: unplug at the next morning time
    events.append((float(step_t[0]), "charge_on", repr(x)))
    prev_regime = -1
    for i in range(n_steps):
        t = int(step_t[i])
        if regime[i] != prev_regime:
            events.append((float(t), "regime", model.regimes[regime[i]].name))
            prev_regime = regime[i]
        if is_charging:
            morning = target is None and t in unplug_set
            if morning or (target is not None and x >= target):
                is_charging = False
                events.append((float(t), "charge_off", repr(x)))
        else:
            hour = (t + off) % DAY / 3600.0
            if x <= below or t in night_at:
                is_charging = True
                daytime = unplug_h <= hour < night_h - 1.0 and t not in night_at
                target = float(topups[i]) if daytime else None
                events.append((float(t), "charge_on", repr(x)))
        x_start[i] = x
        charging[i] = is_charging
        if is_charging:
            slope[i] = cfg.charge_rate / 60.0 if x < 100.0 else 0.0
            # reaching full mid-step is handled by clipping in _level_at
            x = min(100.0, x + cfg.charge_rate * dt / 60.0)
        else:
            r = float(rates[regime[i]])
            slope[i] = -r / 60.0
            x_new = max(0.0, x - r * dt / 60.0)
            k = math.ceil(x) - 1
            while k >= x_new and k >= 0:
                events.append((t + (x - k) / r * 60.0, "crossing", str(k)))
                k -= 1
            x = x_new
    return _UserWorld(uid, step_t, x_start, slope, charging, regime, screen, events, dropouts)


def _level_at(world: _UserWorld, t: np.ndarray, cfg: SynthConfig) -> tuple[np.ndarray, np.ndarray]:
    i = (t - world.step_t[0]) // cfg.step
    x = world.x_start[i] + world.slope[i] * (t - world.step_t[i])
    x = np.clip(x, 0.0, 100.0)
    ch = world.charging[i]
    level = np.where(ch, np.floor(x + 1e-9), np.ceil(x - 1e-9))
    return np.clip(level, 0, 100).astype(np.int64), ch


def _battery_records(world: _UserWorld, cfg: SynthConfig) -> list:
    end = int(world.step_t[-1]) + cfg.step
    t = np.arange(int(world.step_t[0]), end, cfg.battery_period, dtype=np.int64)
    for a, b in world.dropouts:
        t = t[(t < a) | (t > b)]
    level, ch = _level_at(world, t, cfg)
    uid = world.user_id
    return [BatteryEntry(uid, ti, ChargeState.CHARGE if c else ChargeState.DISCHARGE, lv)
            for ti, lv, c in zip(t.tolist(), level.tolist(), ch.tolist())]


def _screen_records(world: _UserWorld) -> list:
    out = []
    prev = None
    for t, on in zip(world.step_t.tolist(), world.screen.tolist()):
        if on != prev:
            out.append(ScreenEvent(world.user_id, t, ScreenAction.ON if on else ScreenAction.OFF))
            prev = on
    return out


def _regime_weights(model: RegimeModel, n: int, cfg: SynthConfig, salt: str) -> np.ndarray:
    rng = make_rng(cfg.seed, "synth-vocab", salt)
    w = rng.gamma(0.5, 1.0, size=(len(model.regimes), n))
    return w / w.sum(axis=1, keepdims=True)


def _broadcast_records(world: _UserWorld, model: RegimeModel, cfg: SynthConfig, rng) -> list:
    rate = np.array([r.broadcast_rate for r in model.regimes])[world.regime] * cfg.step / 60.0
    counts = rng.poisson(rate)
    idx = np.repeat(np.arange(counts.size), counts)
    t = world.step_t[idx] + rng.integers(0, cfg.step, size=idx.size)
    cum = np.cumsum(_regime_weights(model, cfg.n_broadcast_types, cfg, "broadcast"), axis=1)
    u = rng.random(idx.size)
    types = np.empty(idx.size, dtype=np.int64)
    for g in range(len(model.regimes)):
        m = world.regime[idx] == g
        types[m] = np.minimum(np.searchsorted(cum[g], u[m], "right"), cfg.n_broadcast_types - 1)
    order = np.argsort(t, kind="stable")
    return [BroadcastEvent(world.user_id, ti, bi)
            for ti, bi in zip(t[order].tolist(), types[order].tolist())]


def _app_records(world: _UserWorld, model: RegimeModel, cfg: SynthConfig, rng) -> list:
    end = int(world.step_t[-1]) + cfg.step
    t = np.arange(int(world.step_t[0]), end, cfg.app_period, dtype=np.int64)
    i = (t - world.step_t[0]) // cfg.step
    reg = world.regime[i]
    intensity = np.array([r.app_intensity for r in model.regimes])[reg]
    n_run = np.minimum(rng.poisson(intensity), 8)
    cum = np.cumsum(_regime_weights(model, cfg.n_apps, cfg, "apps"), axis=1)
    u = rng.random((t.size, 8))
    cand = np.empty((t.size, 8), dtype=np.int64)
    for g in range(len(model.regimes)):
        m = reg == g
        cand[m] = np.minimum(np.searchsorted(cum[g], u[m], "right"), cfg.n_apps - 1)
    screen = world.screen[i]
    uid = world.user_id
    out = []
    for ti, k, row, on in zip(t.tolist(), n_run.tolist(), cand.tolist(), screen.tolist()):
        seen = []
        for a in row[:k]:
            if a not in seen:
                seen.append(a)
        for j, a in enumerate(seen):
            state = AppState.FOREGROUND if (on and j == 0) else AppState.BACKGROUND
            out.append(AppSample(uid, ti, f"com.synth.app{a:03d}", state))
    return out


def _sensor_records(world: _UserWorld, model: RegimeModel, cfg: SynthConfig, rng,
                    group: SensorGroup) -> list:
    width = cfg.t1_width if group is SensorGroup.T1 else cfg.t2_width
    period = cfg.t1_period if group is SensorGroup.T1 else cfg.t2_period
    end = int(world.step_t[-1]) + cfg.step
    t = np.arange(int(world.step_t[0]), end, period, dtype=np.int64)
    reg = world.regime[(t - world.step_t[0]) // cfg.step]
    base = make_rng(cfg.seed, "synth-sensor", group.value).normal(0.0, 1.0, size=(len(model.regimes), width))
    level = np.array([r.sensor_level for r in model.regimes])
    mean = base + level[:, None]
    vals = np.round(mean[reg] + rng.normal(0.0, 0.5, size=(t.size, width)), 3)
    missing = rng.random(vals.shape) < cfg.sensor_missing_prob
    uid = world.user_id
    out = []
    for ti, row, miss in zip(t.tolist(), vals.tolist(), missing.tolist()):
        out.append(SensorSample(uid, ti, group,
                                tuple(None if m else v for v, m in zip(row, miss))))
    return out


MANIFEST_HEADER = ["user_id", "t", "event", "detail"]


def generate_world(cfg: SynthConfig, model: RegimeModel, out_dir) -> dict:
    """Write all ingestion logs plus ``manifest.csv`` into ``out_dir``.

    Returns a dict of file paths.  Users are simulated with their own
    derived generators and written in id order, so the output bytes depend
    only on ``cfg`` and ``model``.
    """
    if cfg.n_apps < 1:
        raise ConfigInvalid("n_apps must be positive")
    os.makedirs(out_dir, exist_ok=True)
    paths = {kind: os.path.join(out_dir, name) for kind, name in ingest.LOG_FILES.items()}
    paths["manifest"] = os.path.join(out_dir, "manifest.csv")
    worlds = [_simulate_user(u, cfg, model) for u in range(cfg.n_users)]
    kinds = ["battery", "screen", "broadcast"]
    if cfg.emit_apps:
        kinds.append("app")
    if cfg.emit_sensors:
        kinds += ["t1", "t2"]
    for kind in ["app", "t1", "t2"]:
        if kind not in kinds and os.path.exists(paths[kind]):
            os.remove(paths[kind])
    handles = {k: open(paths[k], "w", encoding="utf-8", newline="") for k in kinds}
    try:
        write_header = {k: True for k in kinds}
        for u, world in enumerate(worlds):
            rng = make_rng(cfg.seed, "synth-emit", u)
            recs = {
                "battery": _battery_records(world, cfg),
                "screen": _screen_records(world),
                "broadcast": _broadcast_records(world, model, cfg, rng),
            }
            if cfg.emit_apps:
                recs["app"] = _app_records(world, model, cfg, rng)
            if cfg.emit_sensors:
                recs["t1"] = _sensor_records(world, model, cfg, rng, SensorGroup.T1)
                recs["t2"] = _sensor_records(world, model, cfg, rng, SensorGroup.T2)
            for kind, rows in recs.items():
                _write(handles[kind], kind, rows, cfg, write_header[kind])
                write_header[kind] = False
    finally:
        for fh in handles.values():
            fh.close()
    with open(paths["manifest"], "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MANIFEST_HEADER)
        for world in worlds:
            for t, kind, detail in sorted(world.events, key=lambda e: e[0]):
                w.writerow([world.user_id, repr(float(t)), kind, detail])
    return {k: v for k, v in paths.items() if k in kinds or k == "manifest"}


def _write(fh, kind: str, rows: list, cfg: SynthConfig, header: bool) -> None:
    buf = _HeaderlessWriter(fh, skip=not header)
    if kind == "battery":
        ingest.write_battery_log(rows, buf)
    elif kind in ("screen", "broadcast"):
        ingest.write_event_log(rows, buf, kind)
    elif kind == "app":
        ingest.write_sample_log(rows, buf, "app")
    else:
        ingest.write_sample_log(rows, buf, kind, cfg.t1_width if kind == "t1" else cfg.t2_width)


class _HeaderlessWriter:
    """Forwards writes, optionally dropping the first one (the header)."""

    def __init__(self, fh, skip: bool):
        self.fh = fh
        self.skip = skip

    def write(self, text: str) -> None:
        if self.skip:
            self.skip = False
            return
        self.fh.write(text)


# -- ground truth ----------------------------------------------------------

@dataclass
class Manifest:
    """Per-user discharge intervals and crossing times read from ``manifest.csv``."""

    intervals: dict  # user -> list of (charge_off, charge_on or inf)
    crossings: dict  # user -> list of (t, level)
    regimes: dict  # user -> list of (t, name)

    def discharge_intervals(self, user_id: str) -> list[tuple[float, float]]:
        return self.intervals.get(user_id, [])


def load_manifest(path) -> Manifest:
    intervals: dict = {}
    crossings: dict = {}
    regimes: dict = {}
    open_at: dict = {}
    with open(path, encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            uid, t, kind = row["user_id"], float(row["t"]), row["event"]
            if kind == "charge_off":
                open_at[uid] = t
            elif kind == "charge_on":
                if uid in open_at:
                    intervals.setdefault(uid, []).append((open_at.pop(uid), t))
            elif kind == "crossing":
                crossings.setdefault(uid, []).append((t, int(row["detail"])))
            elif kind == "regime":
                regimes.setdefault(uid, []).append((t, row["detail"]))
    for uid, t in open_at.items():
        intervals.setdefault(uid, []).append((t, math.inf))
    return Manifest(intervals, crossings, regimes)


def true_remaining_life(manifest: Manifest, user_id: str, t: float, L: int = 20):
    """Minutes from ``t`` until the level first reaches ``L``.

    Returns :class:`CensoredByCharge` when the device is plugged in first.
    Raises :class:`OutsideDischarge` if ``t`` is not inside a discharge
    interval or comes after that interval's threshold crossing.
    """
    for a, b in manifest.discharge_intervals(user_id):
        if a <= t < b:
            break
    else:
        raise OutsideDischarge(f"t={t} is not inside a discharge interval of {user_id}")
    cross = manifest.crossings.get(user_id, [])
    times = [c[0] for c in cross]
    i = bisect.bisect_left(times, a)
    hit = None
    while i < len(cross) and cross[i][0] < b:
        if cross[i][1] <= L:
            hit = cross[i][0]
            break
        i += 1
    if hit is None:
        return CensoredByCharge((b - t) / 60.0)
    if t > hit:
        raise OutsideDischarge(f"t={t} is after the threshold crossing at {hit}")
    return (hit - t) / 60.0
