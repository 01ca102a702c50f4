"""Query simulation and the stratified train/test split."""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .rng import make_rng
from .sessions import Session, SessionLabel

BORDER = 120  # seconds kept clear at both ends of the query window


class WindowViolation(ValueError):
    pass


class EmptyStratum(UserWarning):
    pass


@dataclass(frozen=True, eq=False)
class QueryInstance:
    session: Session
    label: SessionLabel
    t_query: int
    observed: bool
    minutes: float  # life if observed, else a lower bound

    @property
    def session_id(self) -> str:
        return self.session.session_id

    @property
    def outcome_kind(self) -> str:
        return "life" if self.observed else "censored_at_least"

    @property
    def query_id(self) -> str:
        return f"{self.session.session_id}@{self.t_query}"


def query_window(session: Session, label: SessionLabel) -> tuple[int, int]:
    upper = label.t_event if label.observed else session.t_end
    return session.t_start + BORDER, upper - BORDER


def sample_query_time(session: Session, label: SessionLabel, rng: np.random.Generator) -> int | None:
    """Uniform integer query time inside the bordered window, or None to skip."""
    lo, hi = query_window(session, label)
    if hi < lo:
        return None
    return int(rng.integers(lo, hi + 1))


def make_query_instance(session: Session, label: SessionLabel, t_query: int) -> QueryInstance:
    lo, hi = query_window(session, label)
    if not lo <= t_query <= hi:
        raise WindowViolation(f"t_query={t_query} outside [{lo}, {hi}]")
    if label.observed:
        return QueryInstance(session, label, int(t_query), True, (label.t_event - t_query) / 60.0)
    return QueryInstance(session, label, int(t_query), False, (session.t_end - t_query) / 60.0)


def simulate_queries(sessions: Sequence[Session], labels: Sequence[SessionLabel], seed: int,
                     per_session: int = 1) -> list[QueryInstance]:
    """Draw ``per_session`` queries in every session that has a non-empty window.

    Each session gets its own generator derived from ``seed`` and its id, so
    the result does not depend on session order.
    """
    out = []
    for s, lab in zip(sessions, labels):
        rng = make_rng(seed, "query", s.session_id)
        for _ in range(per_session):
            t = sample_query_time(s, lab, rng)
            if t is None:
                break
            out.append(make_query_instance(s, lab, t))
    return out


@dataclass
class DatasetSplit:
    train: list
    test: list
    seed: int


def _n_test(n: int, fraction: float) -> int:
    # round half up
    return int(np.floor(n * fraction + 0.5))


def stratified_session_split(queries: Sequence[QueryInstance], test_fraction: float = 1 / 6,
                             seed: int = 0) -> DatasetSplit:
    """Draw ``round(n * test_fraction)`` sessions per stratum into the test set.

    Strata are observed and censored sessions; all queries of a session land
    on the same side.
    """
    by_session: dict[str, list] = {}
    stratum_of: dict[str, bool] = {}
    for q in queries:
        by_session.setdefault(q.session_id, []).append(q)
        stratum_of[q.session_id] = q.observed
    test_ids: set[str] = set()
    for stratum in (True, False):
        ids = sorted(sid for sid, obs in stratum_of.items() if obs is stratum)
        name = "observed" if stratum else "censored"
        if len(ids) < 6:
            warnings.warn(f"stratum {name} has only {len(ids)} sessions", EmptyStratum)
        k = _n_test(len(ids), test_fraction)
        if k:
            rng = make_rng(seed, "split", name)
            picked = rng.choice(len(ids), size=k, replace=False)
            test_ids.update(ids[i] for i in picked.tolist())
    train = [q for q in queries if q.session_id not in test_ids]
    test = [q for q in queries if q.session_id in test_ids]
    return DatasetSplit(train, test, seed)


SPLIT_HEADER = ["session_id", "stratum", "assignment", "t_query", "outcome_kind", "outcome_minutes"]


def write_split_manifest(split: DatasetSplit, fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(SPLIT_HEADER)
    for assignment, qs in (("train", split.train), ("test", split.test)):
        for q in qs:
            w.writerow([q.session_id, "observed" if q.observed else "censored", assignment,
                        q.t_query, q.outcome_kind, repr(q.minutes)])


def read_split_manifest(fh) -> list[dict]:
    rows = []
    for row in csv.DictReader(fh):
        rows.append({
            "session_id": row["session_id"],
            "stratum": row["stratum"],
            "assignment": row["assignment"],
            "t_query": int(row["t_query"]),
            "outcome_kind": row["outcome_kind"],
            "outcome_minutes": float(row["outcome_minutes"]),
        })
    return rows
