"""In-memory glue: traces -> sessions -> queries -> preprocessed feature matrices.

The CLI runs the same steps stage by stage through files; this module keeps
everything in memory for scripts and tests.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .features import (FeatureConfig, FeatureSchema, Preprocessor, apply_preprocessor, build_history,
                       build_schema, feature_matrix, feature_set_parse, fit_preprocessor)
from .queries import DatasetSplit, simulate_queries, stratified_session_split
from .sessions import SegmentationConfig, filter_sessions, label_session, segment_sessions


@dataclass
class Dataset:
    schema: FeatureSchema
    split: DatasetSplit
    preprocessor: Preprocessor
    X_train: np.ndarray  # raw features
    X_test: np.ndarray
    Z_train: np.ndarray  # imputed and standardized
    Z_test: np.ndarray

    def columns(self, expr: str) -> np.ndarray:
        return self.schema.columns_for(feature_set_parse(expr))

    def labels(self, part: str) -> tuple[np.ndarray, np.ndarray]:
        qs = self.split.train if part == "train" else self.split.test
        return (np.array([q.minutes for q in qs], dtype=float),
                np.array([q.observed for q in qs], dtype=bool))


def sessions_from_traces(traces, seg: SegmentationConfig = SegmentationConfig()):
    """Return (duration-filtered sessions, fully filtered sessions)."""
    raw = [s for uid in sorted(traces) for s in segment_sessions(traces[uid], seg)]
    long_ = filter_sessions(raw, seg, by_duration=True, by_start_battery=False)
    kept = filter_sessions(long_, seg, by_duration=False, by_start_battery=True)
    return long_, kept


def build_dataset(traces, seg: SegmentationConfig = SegmentationConfig(),
                  fcfg: FeatureConfig | None = None, seed: int = 0,
                  test_fraction: float = 1 / 6) -> Dataset:
    if fcfg is None:
        fcfg = FeatureConfig(n_users=len(traces))
    long_, kept = sessions_from_traces(traces, seg)
    queries = simulate_queries(kept, [label_session(s, seg) for s in kept], seed)
    split = stratified_session_split(queries, test_fraction, seed)
    windows = sorted({(q.session.user_id, q.session.t_start, q.session.t_end) for q in split.train})
    schema = build_schema(fcfg, traces, windows)
    history = build_history(long_, traces, fcfg.utc_offset_hours)
    X_train = feature_matrix(split.train, traces, history, schema)
    X_test = feature_matrix(split.test, traces, history, schema)
    pre = fit_preprocessor(X_train, schema.fingerprint)
    return Dataset(schema, split, pre, X_train, X_test,
                   apply_preprocessor(pre, X_train, schema.fingerprint),
                   apply_preprocessor(pre, X_test, schema.fingerprint))
