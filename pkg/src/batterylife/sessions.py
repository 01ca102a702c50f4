"""Discharge sessions: segmentation, filtering, labelling and descriptive CDFs."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .ingest import BatteryEntry, ChargeState, UserTrace


class OutOfRange(ValueError):
    pass


class EmptyInput(ValueError):
    pass


@dataclass(frozen=True)
class SegmentationConfig:
    gap_threshold: int = 600
    min_duration: int = 3600
    min_start_battery: int = 30
    threshold_L: int = 20

    def __post_init__(self):
        for name in ("gap_threshold", "min_duration", "min_start_battery", "threshold_L"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.min_start_battery <= self.threshold_L:
            raise ValueError("min_start_battery must exceed threshold_L")


@dataclass(frozen=True, eq=False)
class Session:
    """One discharge interval; ``times`` and ``levels`` are its battery entries."""

    user_id: str
    times: np.ndarray
    levels: np.ndarray

    @property
    def t_start(self) -> int:
        return int(self.times[0])

    @property
    def t_end(self) -> int:
        return int(self.times[-1])

    @property
    def b_start(self) -> int:
        return int(self.levels[0])

    @property
    def b_end(self) -> int:
        return int(self.levels[-1])

    @property
    def duration(self) -> int:
        return self.t_end - self.t_start

    @property
    def session_id(self) -> str:
        return f"{self.user_id}:{self.t_start}"

    @property
    def entries(self) -> list[BatteryEntry]:
        return [BatteryEntry(self.user_id, t, ChargeState.DISCHARGE, lv)
                for t, lv in zip(self.times.tolist(), self.levels.tolist())]

    def __eq__(self, other):
        if not isinstance(other, Session):
            return NotImplemented
        return (self.user_id == other.user_id and np.array_equal(self.times, other.times)
                and np.array_equal(self.levels, other.levels))

    __hash__ = None

    def __repr__(self):
        return (f"Session({self.user_id!r}, t={self.t_start}..{self.t_end}, "
                f"b={self.b_start}->{self.b_end}, n={len(self.times)})")


@dataclass(frozen=True)
class SessionLabel:
    observed: bool
    t_event: int | None
    threshold_L: int

    @property
    def kind(self) -> str:
        return "observed" if self.observed else "censored"


def segment_arrays(user_id: str, times, levels, charging, cfg: SegmentationConfig) -> list[Session]:
    times = np.asarray(times, dtype=np.int64)
    levels = np.asarray(levels, dtype=np.int64)
    keep = ~np.asarray(charging, dtype=bool)
    t, lv = times[keep], levels[keep]
    if t.size == 0:
        return []
    cut = (np.diff(t) > cfg.gap_threshold) | (np.diff(lv) > 0)
    starts = np.concatenate(([0], np.flatnonzero(cut) + 1))
    ends = np.concatenate((starts[1:], [t.size]))
    return [Session(user_id, t[a:b], lv[a:b]) for a, b in zip(starts.tolist(), ends.tolist())]


def segment_sessions(trace: UserTrace, cfg: SegmentationConfig = SegmentationConfig()) -> list[Session]:
    """Cut the discharge entries of ``trace`` into sessions.

    Charging entries are dropped first.  A new session starts when the gap
    to the previous discharge entry exceeds ``cfg.gap_threshold`` or when the
    level rises (battery swap).  Equal consecutive levels never split.
    """
    return segment_arrays(trace.user_id, trace.battery_t, trace.battery_level,
                          trace.battery_charging, cfg)


def filter_sessions(sessions: Iterable[Session], cfg: SegmentationConfig = SegmentationConfig(),
                    by_duration: bool = True, by_start_battery: bool = True) -> list[Session]:
    out = []
    for s in sessions:
        if by_duration and s.duration < cfg.min_duration:
            continue
        if by_start_battery and s.b_start < cfg.min_start_battery:
            continue
        out.append(s)
    return out


def label_session(session: Session, cfg: SegmentationConfig = SegmentationConfig()) -> SessionLabel:
    """Observed at the first entry with level <= L, censored otherwise."""
    hit = np.flatnonzero(session.levels <= cfg.threshold_L)
    if hit.size:
        return SessionLabel(True, int(session.times[hit[0]]), cfg.threshold_L)
    return SessionLabel(False, None, cfg.threshold_L)


def battery_at(session: Session, t) -> int:
    """Right-continuous step function b(t) over the session's entries."""
    if not session.t_start <= t <= session.t_end:
        raise OutOfRange(f"t={t} outside [{session.t_start}, {session.t_end}]")
    i = int(np.searchsorted(session.times, t, "right")) - 1
    return int(session.levels[i])


@dataclass(frozen=True)
class CdfTable:
    values: np.ndarray
    fractions: np.ndarray

    def __call__(self, x) -> float:
        i = int(np.searchsorted(self.values, x, "right"))
        return 0.0 if i == 0 else float(self.fractions[i - 1])

    def rows(self) -> list[tuple[float, float]]:
        return list(zip(self.values.tolist(), self.fractions.tolist()))

    def write_csv(self, fh, value_name: str = "value") -> None:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([value_name, "cdf"])
        for v, f in self.rows():
            w.writerow([repr(v), repr(f)])


def empirical_cdf(values) -> CdfTable:
    values = np.sort(np.asarray(values, dtype=float))
    if values.size == 0:
        raise EmptyInput("no values")
    uniq, idx = np.unique(values, return_index=True)
    counts = np.diff(np.append(idx, values.size))
    return CdfTable(uniq, np.cumsum(counts) / values.size)


def empirical_cdfs(sessions: Sequence[Session]) -> dict[str, CdfTable]:
    """CDFs of duration (hours), begin level, end level and consumption."""
    if not sessions:
        raise EmptyInput("no sessions")
    return {
        "duration": empirical_cdf([s.duration / 3600.0 for s in sessions]),
        "begin_level": empirical_cdf([s.b_start for s in sessions]),
        "end_level": empirical_cdf([s.b_end for s in sessions]),
        "consumption": empirical_cdf([s.b_start - s.b_end for s in sessions]),
    }


SESSION_HEADER = ["user_id", "t_start", "t_end", "b_start", "b_end", "label", "t_event"]


def write_sessions_csv(sessions: Sequence[Session], labels: Sequence[SessionLabel], fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(SESSION_HEADER)
    for s, lab in zip(sessions, labels):
        w.writerow([s.user_id, s.t_start, s.t_end, s.b_start, s.b_end, lab.kind,
                    "" if lab.t_event is None else lab.t_event])


def read_sessions_csv(fh) -> list[dict]:
    rows = []
    for row in csv.DictReader(fh):
        rows.append({
            "user_id": row["user_id"],
            "t_start": int(row["t_start"]),
            "t_end": int(row["t_end"]),
            "b_start": int(row["b_start"]),
            "b_end": int(row["b_end"]),
            "label": row["label"],
            "t_event": int(row["t_event"]) if row["t_event"] else None,
        })
    return rows
