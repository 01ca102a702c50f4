"""Parsing of raw telemetry logs into per-user traces.

Five line-oriented, comma-separated formats are understood, each with a
mandatory header line::

    battery    user_id,timestamp,charge_state,level
    screen     user_id,timestamp,action
    broadcast  user_id,timestamp,broadcast_type
    app        user_id,timestamp,app_id,state
    t1 / t2    user_id,timestamp,s1,...,sK

Lines starting with ``#`` and blank lines are ignored, CRLF endings are
accepted and files ending in ``.gz`` are decompressed on the fly.  Malformed
lines are skipped and recorded in a :class:`ParseReport`; the parse only
fails when the share of bad lines exceeds ``max_error_rate``.
"""

from __future__ import annotations

import enum
import gzip
import io
import math
import os
from dataclasses import dataclass, field
from typing import Iterable, Iterator, NamedTuple

import numpy as np

N_BROADCAST_TYPES = 86
T1_WIDTH = 9
T2_WIDTH = 150
OTHER_BROADCAST = -1
MAX_STORED_ERRORS = 1000


class ChargeState(enum.Enum):
    CHARGE = "charge"
    DISCHARGE = "discharge"


class ScreenAction(enum.Enum):
    ON = "on"
    OFF = "off"


class AppState(enum.Enum):
    FOREGROUND = "foreground"
    BACKGROUND = "background"


class SensorGroup(enum.Enum):
    T1 = "t1"
    T2 = "t2"


class BatteryEntry(NamedTuple):
    user_id: str
    timestamp: int
    charge_state: ChargeState
    level: int


class ScreenEvent(NamedTuple):
    user_id: str
    timestamp: int
    action: ScreenAction


class BroadcastEvent(NamedTuple):
    user_id: str
    timestamp: int
    broadcast_type: int


class AppSample(NamedTuple):
    user_id: str
    timestamp: int
    app_id: str
    state: AppState


class SensorSample(NamedTuple):
    user_id: str
    timestamp: int
    group: SensorGroup
    values: tuple  # float or None per slot


class ParseError(Exception):
    pass


class MissingHeader(ParseError):
    pass


class WidthMismatch(ParseError):
    pass


class TooManyErrors(ParseError):
    pass


class _LineError(Exception):
    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


@dataclass
class ParseReport:
    """Outcome of one parse: counts plus the first few line errors."""

    kind: str
    n_records: int = 0
    n_errors: int = 0
    n_unknown_broadcast: int = 0
    errors: list = field(default_factory=list)

    def add_error(self, lineno: int, code: str, message: str) -> None:
        self.n_errors += 1
        if len(self.errors) < MAX_STORED_ERRORS:
            self.errors.append((lineno, code, message))

    @property
    def error_rate(self) -> float:
        total = self.n_records + self.n_errors
        return self.n_errors / total if total else 0.0

    def as_dict(self) -> dict:
        return {
            "kind": self.kind,
            "n_records": self.n_records,
            "n_errors": self.n_errors,
            "n_unknown_broadcast": self.n_unknown_broadcast,
            "errors": [list(e) for e in self.errors],
        }


def open_log(path, mode: str = "rt"):
    """Open a log for reading or writing, gzip-compressed if it ends in .gz."""
    path = os.fspath(path)
    if path.endswith(".gz"):
        return gzip.open(path, mode, encoding="utf-8", newline="")
    return open(path, mode, encoding="utf-8", newline="")


def _lines(stream) -> Iterator[tuple[int, str]]:
    if isinstance(stream, (str, os.PathLike)):
        with open_log(stream) as fh:
            yield from _lines(fh)
        return
    if isinstance(stream, (bytes, bytearray)):
        stream = io.BytesIO(stream)
    for lineno, raw in enumerate(stream, start=1):
        if isinstance(raw, (bytes, bytearray)):
            raw = raw.decode("utf-8")
        line = raw.rstrip("\r\n")
        if not line.strip() or line.startswith("#"):
            continue
        yield lineno, line


def _parse_records(stream, header: list[str] | None, parse_fields, report: ParseReport,
                   max_error_rate: float, header_check=None):
    lines = _lines(stream)
    first = next(lines, None)
    if first is None:
        raise MissingHeader(f"{report.kind}: empty input, header expected")
    cols = [c.strip() for c in first[1].split(",")]
    if header_check is not None:
        header_check(cols)
    elif cols != header:
        raise MissingHeader(f"{report.kind}: expected header {','.join(header)!r}, got {first[1]!r}")
    n_fields = len(cols)
    for lineno, line in lines:
        parts = line.split(",")
        if len(parts) != n_fields:
            report.add_error(lineno, "FieldCount", f"expected {n_fields} fields, got {len(parts)}")
            continue
        try:
            record = parse_fields(parts)
        except _LineError as err:
            report.add_error(lineno, err.code, str(err))
            continue
        report.n_records += 1
        yield record
    if report.error_rate > max_error_rate:
        raise TooManyErrors(
            f"{report.kind}: {report.n_errors} bad lines out of "
            f"{report.n_records + report.n_errors} exceeds rate {max_error_rate}")


def _user(text: str) -> str:
    text = text.strip()
    if not text:
        raise _LineError("BadUser", "empty user_id")
    return text


def _timestamp(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise _LineError("BadTimestamp", f"not an integer timestamp: {text!r}") from None
    if value <= 0:
        raise _LineError("BadTimestamp", f"timestamp must be positive: {value}")
    return value


_DISCHARGE_TOKENS = {"discharge", "discharging"}


def _charge_state(text: str) -> ChargeState:
    token = text.strip().lower()
    if token in _DISCHARGE_TOKENS:
        return ChargeState.DISCHARGE
    # "full", "usb", "ac", ... all count as not discharging
    if token and token.replace("_", "").replace(" ", "").isalpha():
        return ChargeState.CHARGE
    raise _LineError("BadState", f"unknown charge state {text!r}")


def parse_battery_log(stream, report: ParseReport | None = None,
                      max_error_rate: float = 0.01) -> Iterator[BatteryEntry]:
    """Yield :class:`BatteryEntry` records in file order.

    ``stream`` is a path, a bytes object or any iterable of lines.  Pass a
    :class:`ParseReport` to collect line errors.
    """
    report = report if report is not None else ParseReport("battery")

    def parse(parts):
        try:
            level = int(parts[3])
        except ValueError:
            raise _LineError("BadLevel", f"level not an integer: {parts[3]!r}") from None
        if not 0 <= level <= 100:
            raise _LineError("BadLevel", f"level out of [0,100]: {level}")
        return BatteryEntry(_user(parts[0]), _timestamp(parts[1]), _charge_state(parts[2]), level)

    return _parse_records(stream, ["user_id", "timestamp", "charge_state", "level"],
                          parse, report, max_error_rate)


def parse_event_log(stream, kind: str, report: ParseReport | None = None,
                    max_error_rate: float = 0.01,
                    n_broadcast_types: int = N_BROADCAST_TYPES) -> Iterator:
    """Yield screen or broadcast events; ``kind`` is ``"screen"`` or ``"broadcast"``.

    Broadcast ids outside ``[0, n_broadcast_types)`` are mapped to
    :data:`OTHER_BROADCAST` and counted in the report.
    """
    report = report if report is not None else ParseReport(kind)
    if kind == "screen":
        def parse(parts):
            token = parts[2].strip().lower()
            try:
                action = ScreenAction(token)
            except ValueError:
                raise _LineError("BadState", f"unknown screen action {parts[2]!r}") from None
            return ScreenEvent(_user(parts[0]), _timestamp(parts[1]), action)
        header = ["user_id", "timestamp", "action"]
    elif kind == "broadcast":
        def parse(parts):
            try:
                btype = int(parts[2])
            except ValueError:
                raise _LineError("BadState", f"broadcast type not an integer: {parts[2]!r}") from None
            user, ts = _user(parts[0]), _timestamp(parts[1])
            if not 0 <= btype < n_broadcast_types:
                report.n_unknown_broadcast += 1
                btype = OTHER_BROADCAST
            return BroadcastEvent(user, ts, btype)
        header = ["user_id", "timestamp", "broadcast_type"]
    else:
        raise ValueError(f"unknown event log kind {kind!r}")
    return _parse_records(stream, header, parse, report, max_error_rate)


def _sensor_value(text: str):
    text = text.strip()
    if not text:
        return None
    try:
        value = float(text)
    except ValueError:
        raise _LineError("BadValue", f"not a number: {text!r}") from None
    return None if math.isnan(value) else value


def parse_sample_log(stream, kind: str, report: ParseReport | None = None,
                     max_error_rate: float = 0.01, width: int | None = None) -> Iterator:
    """Yield app samples (``kind="app"``) or sensor samples (``"t1"``/``"t2"``).

    Sensor cells left empty are kept as ``None``; nothing is imputed here.
    ``width`` overrides the configured channel count (9 for T1, 150 for T2).
    """
    report = report if report is not None else ParseReport(kind)
    if kind == "app":
        def parse(parts):
            app_id = parts[2].strip()
            if not app_id:
                raise _LineError("BadValue", "empty app_id")
            token = parts[3].strip().lower()
            try:
                state = AppState(token)
            except ValueError:
                raise _LineError("BadState", f"unknown app state {parts[3]!r}") from None
            return AppSample(_user(parts[0]), _timestamp(parts[1]), app_id, state)
        return _parse_records(stream, ["user_id", "timestamp", "app_id", "state"],
                              parse, report, max_error_rate)
    if kind not in ("t1", "t2"):
        raise ValueError(f"unknown sample log kind {kind!r}")
    group = SensorGroup(kind)
    if width is None:
        width = T1_WIDTH if group is SensorGroup.T1 else T2_WIDTH
    expected = ["user_id", "timestamp"] + [f"s{i}" for i in range(1, width + 1)]

    def check(cols):
        if cols[:2] != ["user_id", "timestamp"] or any(
                c != f"s{i}" for i, c in enumerate(cols[2:], start=1)):
            raise MissingHeader(f"{kind}: expected header user_id,timestamp,s1..sK")
        if cols != expected:
            raise WidthMismatch(f"{kind}: header has {len(cols) - 2} channels, configured {width}")

    def parse(parts):
        values = tuple(_sensor_value(p) for p in parts[2:])
        return SensorSample(_user(parts[0]), _timestamp(parts[1]), group, values)

    return _parse_records(stream, None, parse, report, max_error_rate, header_check=check)


# -- writers ---------------------------------------------------------------

def _fmt_value(v) -> str:
    return "" if v is None else repr(float(v))


def write_battery_log(records: Iterable[BatteryEntry], fh) -> None:
    fh.write("user_id,timestamp,charge_state,level\n")
    for r in records:
        fh.write(f"{r.user_id},{r.timestamp},{r.charge_state.value},{r.level}\n")


def write_event_log(records: Iterable, fh, kind: str) -> None:
    if kind == "screen":
        fh.write("user_id,timestamp,action\n")
        for r in records:
            fh.write(f"{r.user_id},{r.timestamp},{r.action.value}\n")
    elif kind == "broadcast":
        fh.write("user_id,timestamp,broadcast_type\n")
        for r in records:
            fh.write(f"{r.user_id},{r.timestamp},{r.broadcast_type}\n")
    else:
        raise ValueError(f"unknown event log kind {kind!r}")


def write_sample_log(records: Iterable, fh, kind: str, width: int | None = None) -> None:
    if kind == "app":
        fh.write("user_id,timestamp,app_id,state\n")
        for r in records:
            fh.write(f"{r.user_id},{r.timestamp},{r.app_id},{r.state.value}\n")
        return
    if width is None:
        width = T1_WIDTH if kind == "t1" else T2_WIDTH
    fh.write("user_id,timestamp," + ",".join(f"s{i}" for i in range(1, width + 1)) + "\n")
    for r in records:
        fh.write(f"{r.user_id},{r.timestamp}," + ",".join(_fmt_value(v) for v in r.values) + "\n")


# -- traces ----------------------------------------------------------------

def _sorted_unique(records: list) -> list:
    records = list(dict.fromkeys(records))
    records.sort(key=lambda r: r.timestamp)
    return records


def _times(records) -> np.ndarray:
    return np.fromiter((r.timestamp for r in records), dtype=np.int64, count=len(records))


@dataclass(frozen=True, eq=False)
class UserTrace:
    """All streams of one user, columnar and sorted by timestamp.

    Sensor matrices hold NaN for missing slots.  ``app_code`` indexes into
    ``app_names``.
    """

    user_id: str
    battery_t: np.ndarray
    battery_level: np.ndarray
    battery_charging: np.ndarray
    screen_t: np.ndarray
    screen_on: np.ndarray
    broadcast_t: np.ndarray
    broadcast_type: np.ndarray
    app_t: np.ndarray
    app_code: np.ndarray
    app_foreground: np.ndarray
    app_names: tuple
    t1_t: np.ndarray
    t1_values: np.ndarray
    t2_t: np.ndarray
    t2_values: np.ndarray

    _STREAMS = ("battery", "screen", "broadcast", "app", "t1", "t2")

    def span(self, stream: str, a, b) -> slice:
        """Index range of ``stream`` records with ``a <= timestamp <= b``."""
        t = getattr(self, f"{stream}_t")
        return slice(int(np.searchsorted(t, a, "left")), int(np.searchsorted(t, b, "right")))

    def span_open(self, stream: str, a, b) -> slice:
        """Index range with ``a < timestamp <= b``."""
        t = getattr(self, f"{stream}_t")
        return slice(int(np.searchsorted(t, a, "right")), int(np.searchsorted(t, b, "right")))

    def records_between(self, stream: str, a, b) -> list:
        sl = self.span(stream, a, b)
        return list(self._stream_records(stream, sl))

    def _stream_records(self, stream: str, sl: slice = slice(None)):
        uid = self.user_id
        if stream == "battery":
            for t, lv, ch in zip(self.battery_t[sl].tolist(), self.battery_level[sl].tolist(),
                                 self.battery_charging[sl].tolist()):
                yield BatteryEntry(uid, t, ChargeState.CHARGE if ch else ChargeState.DISCHARGE, lv)
        elif stream == "screen":
            for t, on in zip(self.screen_t[sl].tolist(), self.screen_on[sl].tolist()):
                yield ScreenEvent(uid, t, ScreenAction.ON if on else ScreenAction.OFF)
        elif stream == "broadcast":
            for t, b in zip(self.broadcast_t[sl].tolist(), self.broadcast_type[sl].tolist()):
                yield BroadcastEvent(uid, t, b)
        elif stream == "app":
            for t, c, fg in zip(self.app_t[sl].tolist(), self.app_code[sl].tolist(),
                                self.app_foreground[sl].tolist()):
                yield AppSample(uid, t, self.app_names[c],
                                AppState.FOREGROUND if fg else AppState.BACKGROUND)
        elif stream in ("t1", "t2"):
            group = SensorGroup(stream)
            ts = getattr(self, f"{stream}_t")[sl].tolist()
            vals = getattr(self, f"{stream}_values")[sl]
            for t, row in zip(ts, vals):
                yield SensorSample(uid, t, group,
                                   tuple(None if math.isnan(v) else v for v in row.tolist()))
        else:
            raise ValueError(f"unknown stream {stream!r}")

    def records(self) -> Iterator:
        for stream in self._STREAMS:
            yield from self._stream_records(stream)

    def __eq__(self, other) -> bool:
        if not isinstance(other, UserTrace):
            return NotImplemented
        if self.user_id != other.user_id:
            return False
        if list(self.records()) != list(other.records()):
            return False
        return self.t1_values.shape[1] == other.t1_values.shape[1] and \
            self.t2_values.shape[1] == other.t2_values.shape[1]

    __hash__ = None


def _sensor_matrix(records: list, width: int) -> np.ndarray:
    out = np.full((len(records), width), np.nan)
    for i, r in enumerate(records):
        if len(r.values) != width:
            raise WidthMismatch(f"sensor sample of width {len(r.values)}, expected {width}")
        out[i] = [np.nan if v is None else v for v in r.values]
    return out


def _make_trace(user_id: str, streams: dict, t1_width: int, t2_width: int) -> UserTrace:
    battery = _sorted_unique(streams["battery"])
    screen = _sorted_unique(streams["screen"])
    collapsed = []
    for ev in screen:
        if not collapsed or collapsed[-1].action is not ev.action:
            collapsed.append(ev)
    broadcast = _sorted_unique(streams["broadcast"])
    app = _sorted_unique(streams["app"])
    names = tuple(sorted({r.app_id for r in app}))
    code_of = {n: i for i, n in enumerate(names)}
    t1 = _sorted_unique(streams["t1"])
    t2 = _sorted_unique(streams["t2"])
    return UserTrace(
        user_id=user_id,
        battery_t=_times(battery),
        battery_level=np.array([r.level for r in battery], dtype=np.int64),
        battery_charging=np.array([r.charge_state is ChargeState.CHARGE for r in battery], dtype=bool),
        screen_t=_times(collapsed),
        screen_on=np.array([r.action is ScreenAction.ON for r in collapsed], dtype=bool),
        broadcast_t=_times(broadcast),
        broadcast_type=np.array([r.broadcast_type for r in broadcast], dtype=np.int64),
        app_t=_times(app),
        app_code=np.array([code_of[r.app_id] for r in app], dtype=np.int64),
        app_foreground=np.array([r.state is AppState.FOREGROUND for r in app], dtype=bool),
        app_names=names,
        t1_t=_times(t1),
        t1_values=_sensor_matrix(t1, t1_width),
        t2_t=_times(t2),
        t2_values=_sensor_matrix(t2, t2_width),
    )


_STREAM_OF = {
    BatteryEntry: "battery",
    ScreenEvent: "screen",
    BroadcastEvent: "broadcast",
    AppSample: "app",
}


def build_user_trace(records: Iterable, t1_width: int = T1_WIDTH,
                     t2_width: int = T2_WIDTH) -> dict[str, UserTrace]:
    """Group parsed records by user into sorted, de-duplicated traces.

    Records may come from any parser, in any order.  Within each stream the
    sort is stable, exact duplicate records are dropped and runs of identical
    screen actions are collapsed to their first event.
    """
    by_user: dict[str, dict[str, list]] = {}
    for r in records:
        stream = _STREAM_OF.get(type(r))
        if stream is None:
            stream = r.group.value
        streams = by_user.get(r.user_id)
        if streams is None:
            streams = by_user[r.user_id] = {s: [] for s in UserTrace._STREAMS}
        streams[stream].append(r)
    return {uid: _make_trace(uid, by_user[uid], t1_width, t2_width) for uid in sorted(by_user)}


LOG_FILES = {
    "battery": "battery.csv",
    "screen": "screen.csv",
    "broadcast": "broadcast.csv",
    "app": "app.csv",
    "t1": "t1.csv",
    "t2": "t2.csv",
}


def _find_log(directory, name: str):
    plain = os.path.join(directory, name)
    if os.path.exists(plain):
        return plain
    if os.path.exists(plain + ".gz"):
        return plain + ".gz"
    return None


def load_directory(directory, t1_width: int = T1_WIDTH, t2_width: int = T2_WIDTH,
                   n_broadcast_types: int = N_BROADCAST_TYPES,
                   max_error_rate: float = 0.01) -> tuple[dict[str, UserTrace], dict[str, ParseReport]]:
    """Parse every log present in ``directory`` and build the user traces.

    The battery log is mandatory; the others are optional.
    """
    reports: dict[str, ParseReport] = {}
    records: list = []
    for kind, name in LOG_FILES.items():
        path = _find_log(directory, name)
        if path is None:
            if kind == "battery":
                raise FileNotFoundError(os.path.join(directory, name))
            continue
        report = reports[kind] = ParseReport(kind)
        if kind == "battery":
            it = parse_battery_log(path, report, max_error_rate)
        elif kind in ("screen", "broadcast"):
            it = parse_event_log(path, kind, report, max_error_rate, n_broadcast_types)
        else:
            width = t1_width if kind == "t1" else t2_width if kind == "t2" else None
            it = parse_sample_log(path, kind, report, max_error_rate, width)
        records.extend(it)
    return build_user_trace(records, t1_width, t2_width), reports
