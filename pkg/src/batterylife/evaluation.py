"""Metrics, the paired bootstrap test and the discharge-stability experiment.

RMSE and Kendall's tau are computed on observed rows only; the concordance
index uses every row, treating a censored outcome as a lower bound.

Pair counting for tau and the concordance index goes through one
O(n log n) kernel (a Fenwick tree over prediction ranks) that accepts
integer row weights, which is how bootstrap replicates are scored without
materialising the resampled rows.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .rng import make_rng
from .sessions import Session

try:
    from numba import njit
except ImportError:  # pragma: no cover
    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f


class NoObservedRows(ValueError):
    pass


class AllPairsTied(ValueError):
    pass


class NoDeterminablePairs(ValueError):
    pass


class MismatchedIds(ValueError):
    pass


class InsufficientConsumption(ValueError):
    pass


class TooFewSessions(ValueError):
    pass


@njit(cache=True)
def _rank_counts(group_start, rank, query, weight, n_ranks):
    """Weighted counts of (earlier-group, queried) pairs by prediction order.

    Rows are pre-sorted so that each group ``[group_start[g], group_start[g+1])``
    shares one key.  For every queried row, rows of strictly earlier groups
    are split into lower, equal and higher prediction rank.
    """
    tree = np.zeros(n_ranks + 1, dtype=np.int64)
    inserted = 0
    lower = 0
    equal = 0
    higher = 0
    for g in range(group_start.size - 1):
        a = group_start[g]
        b = group_start[g + 1]
        for i in range(a, b):
            if not query[i] or weight[i] == 0:
                continue
            r = rank[i]
            below = 0
            k = r - 1
            while k > 0:
                below += tree[k]
                k -= k & (-k)
            upto = 0
            k = r
            while k > 0:
                upto += tree[k]
                k -= k & (-k)
            w = weight[i]
            lower += w * below
            equal += w * (upto - below)
            higher += w * (inserted - upto)
        for i in range(a, b):
            w = weight[i]
            if w == 0:
                continue
            k = rank[i]
            while k <= n_ranks:
                tree[k] += w
                k += k & (-k)
            inserted += w
    return lower, equal, higher


def _dense_rank(x: np.ndarray) -> tuple[np.ndarray, int]:
    uniq, inv = np.unique(x, return_inverse=True)
    return inv.astype(np.int64) + 1, uniq.size


def _grouped(key: np.ndarray, descending: bool):
    order = np.argsort(-key if descending else key, kind="stable")
    k = key[order]
    starts = np.flatnonzero(np.concatenate(([True], k[1:] != k[:-1])))
    return order, np.append(starts, k.size).astype(np.int64)


def _weights(n: int, weights) -> np.ndarray:
    if weights is None:
        return np.ones(n, dtype=np.int64)
    return np.asarray(weights, dtype=np.int64)


def _arrays(predicted, minutes, observed):
    p = np.asarray(predicted, dtype=float)
    m = np.asarray(minutes, dtype=float)
    o = np.asarray(observed, dtype=bool)
    if not (p.shape == m.shape == o.shape) or p.ndim != 1:
        raise ValueError("predicted, minutes and observed must be 1-D of equal length")
    if not np.isfinite(p).all():
        raise ValueError("predictions must be finite")
    return p, m, o


def rmse(predicted, minutes, observed, weights=None) -> float:
    """Root mean squared error over observed rows."""
    p, m, o = _arrays(predicted, minutes, observed)
    w = _weights(p.size, weights) * o
    total = w.sum()
    if total == 0:
        raise NoObservedRows("rmse needs at least one observed row")
    return float(np.sqrt((w * (p - m) ** 2).sum() / total))


def tau_counts(predicted, actual, weights=None) -> tuple[int, int]:
    """Concordant and discordant pair counts; pairs tied on either side are dropped."""
    x = np.asarray(predicted, dtype=float)
    y = np.asarray(actual, dtype=float)
    order, starts = _grouped(y, descending=False)
    rank, n_ranks = _dense_rank(x[order])
    w = _weights(x.size, weights)[order]
    lower, _, higher = _rank_counts(starts, rank, np.ones(x.size, dtype=np.bool_), w, n_ranks)
    return int(lower), int(higher)


def kendall_tau(predicted, minutes, observed, weights=None) -> float:
    """(C - D) / (C + D) over pairs of observed rows."""
    p, m, o = _arrays(predicted, minutes, observed)
    w = _weights(p.size, weights)
    if w[o].sum() < 2:
        raise NoObservedRows("kendall_tau needs at least two observed rows")
    c, d = tau_counts(p[o], m[o], w[o])
    if c + d == 0:
        raise AllPairsTied("every observed pair is tied")
    return (c - d) / (c + d)


def cindex_counts(predicted, minutes, observed, weights=None) -> tuple[int, int, int, int]:
    """(concordant, discordant, prediction-tied, total) pair counts.

    A pair is determinable when the shorter outcome is observed and strictly
    shorter than the other one; concordant means the shorter outcome also
    has the smaller prediction.
    """
    p, m, o = _arrays(predicted, minutes, observed)
    w = _weights(p.size, weights)
    order, starts = _grouped(m, descending=True)
    rank, n_ranks = _dense_rank(p[order])
    lower, equal, higher = _rank_counts(starts, rank, o[order], w[order], n_ranks)
    total_w = int(w.sum())
    return int(higher), int(lower), int(equal), total_w * (total_w - 1) // 2


def concordance_index(predicted, minutes, observed, variant: str = "paper", weights=None) -> float:
    """Concordance index.

    ``variant="paper"`` averages over all pairs, scoring 0.5 for pairs whose
    order the outcomes cannot decide; ``variant="harrell"`` averages over
    determinable pairs only.  Prediction ties score 0.5 in both.
    """
    conc, disc, tied, total = cindex_counts(predicted, minutes, observed, weights)
    determinable = conc + disc + tied
    if variant == "paper":
        if total == 0:
            return 0.5
        return (conc + 0.5 * tied + 0.5 * (total - determinable)) / total
    if variant == "harrell":
        if determinable == 0:
            raise NoDeterminablePairs("no pair has an observed, strictly shorter outcome")
        return (conc + 0.5 * tied) / determinable
    raise ValueError(f"unknown concordance variant {variant!r}")


def concordance_oracle(predicted, minutes, observed, variant: str = "paper") -> float:
    """Direct double loop over all pairs; reference for :func:`concordance_index`."""
    p = [float(v) for v in predicted]
    m = [float(v) for v in minutes]
    o = [bool(v) for v in observed]
    n = len(p)
    if n > 10_000:
        raise ValueError("oracle limited to 10,000 rows")
    score_all = 0.0
    score_det = 0.0
    n_pairs = 0
    n_det = 0
    for i in range(n):
        for j in range(i + 1, n):
            n_pairs += 1
            if m[i] < m[j] and o[i]:
                short, long_ = i, j
            elif m[j] < m[i] and o[j]:
                short, long_ = j, i
            else:
                score_all += 0.5
                continue
            n_det += 1
            if p[short] < p[long_]:
                s = 1.0
            elif p[short] > p[long_]:
                s = 0.0
            else:
                s = 0.5
            score_all += s
            score_det += s
    if variant == "paper":
        return score_all / n_pairs if n_pairs else 0.5
    if variant == "harrell":
        if n_det == 0:
            raise NoDeterminablePairs("no determinable pairs")
        return score_det / n_det
    raise ValueError(f"unknown concordance variant {variant!r}")


@dataclass
class PredictionSet:
    """Predictions for a list of queries with their (possibly censored) outcomes."""

    query_ids: list
    predicted: np.ndarray
    minutes: np.ndarray
    observed: np.ndarray

    def __post_init__(self):
        self.predicted = np.asarray(self.predicted, dtype=float)
        self.minutes = np.asarray(self.minutes, dtype=float)
        self.observed = np.asarray(self.observed, dtype=bool)
        if not len(self.query_ids) == self.predicted.size == self.minutes.size == self.observed.size:
            raise ValueError("prediction set columns differ in length")
        if (self.minutes <= 0).any():
            raise ValueError("outcome minutes must be positive")

    def __len__(self):
        return len(self.query_ids)

    def write_csv(self, fh) -> None:
        fh.write("query_id,predicted,outcome_kind,outcome_minutes\n")
        for qid, p, m, o in zip(self.query_ids, self.predicted.tolist(), self.minutes.tolist(),
                                self.observed.tolist()):
            fh.write(f"{qid},{p!r},{'life' if o else 'censored_at_least'},{m!r}\n")

    @classmethod
    def read_csv(cls, fh) -> "PredictionSet":
        fh.readline()
        ids, p, m, o = [], [], [], []
        for line in fh:
            qid, pred, kind, mins = line.rstrip("\r\n").split(",")
            ids.append(qid)
            p.append(float(pred))
            o.append(kind == "life")
            m.append(float(mins))
        return cls(ids, np.array(p), np.array(m), np.array(o, dtype=bool))


@dataclass
class MetricReport:
    rmse: float
    tau: float
    c_index: float
    n_observed: int
    n_censored: int
    variant: str = "paper"

    def as_dict(self) -> dict:
        return {"rmse": self.rmse, "tau": self.tau, "c_index": self.c_index,
                "n_observed": self.n_observed, "n_censored": self.n_censored,
                "c_index_variant": self.variant}


def evaluate(preds: PredictionSet, variant: str = "paper") -> MetricReport:
    p, m, o = preds.predicted, preds.minutes, preds.observed
    return MetricReport(rmse(p, m, o), kendall_tau(p, m, o), concordance_index(p, m, o, variant),
                        int(o.sum()), int((~o).sum()), variant)


MetricFn = Callable[..., float]


def metric_function(name: str, variant: str = "paper") -> MetricFn:
    if name == "rmse":
        return rmse
    if name == "tau":
        return kendall_tau
    if name in ("c_index", "cindex"):
        return lambda p, m, o, weights=None: concordance_index(p, m, o, variant, weights)
    raise ValueError(f"unknown metric {name!r}")


@dataclass
class BootstrapResult:
    metric: str
    observed_delta: float
    deltas: np.ndarray
    p_value: float
    seed: int

    @property
    def n_iterations(self) -> int:
        return self.deltas.size

    def as_dict(self) -> dict:
        return {"metric": self.metric, "observed_delta": self.observed_delta,
                "p_value": self.p_value, "iterations": self.n_iterations, "seed": self.seed,
                "replicate_mean": float(self.deltas.mean()),
                "replicate_std": float(self.deltas.std())}


def bootstrap_shift_test(a: PredictionSet, b: PredictionSet, metric: str | MetricFn = "rmse",
                         iterations: int = 10_000, seed: int = 0, variant: str = "paper") -> BootstrapResult:
    """Paired bootstrap test of ``metric(a) - metric(b)`` with the shift method.

    Queries are resampled with replacement to the original size; the null
    distribution is the replicate deltas recentred on their mean, and the
    two-sided p-value is ``(1 + #{|shifted| >= |observed|}) / (B + 1)``.
    Rows are resampled by position in ``a``; ``b`` is aligned to ``a`` by id.
    """
    if sorted(a.query_ids) != sorted(b.query_ids) or len(set(a.query_ids)) != len(a.query_ids):
        raise MismatchedIds("both prediction sets must score the same unique query ids")
    pos = {q: i for i, q in enumerate(b.query_ids)}
    idx = np.array([pos[q] for q in a.query_ids], dtype=np.int64)
    pb = b.predicted[idx]
    if not (np.array_equal(b.minutes[idx], a.minutes) and np.array_equal(b.observed[idx], a.observed)):
        raise MismatchedIds("outcomes differ between the two prediction sets")
    fn = metric_function(metric, variant) if isinstance(metric, str) else metric
    name = metric if isinstance(metric, str) else getattr(metric, "__name__", "metric")
    m, o = a.minutes, a.observed
    observed_delta = fn(a.predicted, m, o) - fn(pb, m, o)
    n = len(a)
    deltas = np.empty(iterations)
    for r in range(iterations):
        rng = make_rng(seed, "bootstrap", r)
        w = np.bincount(rng.integers(0, n, size=n), minlength=n)
        deltas[r] = fn(a.predicted, m, o, weights=w) - fn(pb, m, o, weights=w)
    shifted = deltas - deltas.mean()
    extreme = int((np.abs(shifted) >= abs(observed_delta) - 1e-12).sum())
    return BootstrapResult(name, float(observed_delta), deltas, (1 + extreme) / (iterations + 1), seed)


def consumption_durations(session: Session) -> np.ndarray:
    """Minutes taken by each successive 1% drop from the starting level."""
    times, levels = session.times, session.levels
    drops = session.b_start - session.b_end
    out = np.empty(drops)
    prev = session.t_start
    for k in range(1, drops + 1):
        hit = np.flatnonzero(levels <= session.b_start - k)
        t = int(times[hit[0]])
        out[k - 1] = (t - prev) / 60.0
        prev = t
    return out


def session_stability_variance(session: Session) -> float:
    """Population variance of the per-percent consumption durations."""
    if session.b_start - session.b_end < 2:
        raise InsufficientConsumption("session consumed fewer than 2 percent")
    return float(np.var(consumption_durations(session)))


def quintile_groups(variances: Sequence[float], ids: Sequence[str], n_groups: int = 5) -> np.ndarray:
    """Group index per item by nearest-rank quantiles; ties ordered by id."""
    n = len(variances)
    order = sorted(range(n), key=lambda i: (variances[i], ids[i]))
    groups = np.empty(n, dtype=np.int64)
    for pos, i in enumerate(order):
        groups[i] = n_groups * pos // n
    return groups


@dataclass
class StabilityReport:
    feature_sets: list
    taus: np.ndarray  # (5 groups, n feature sets)
    group_sizes: list
    variance_bounds: list = field(default_factory=list)

    def gain(self, new: int, old: int) -> np.ndarray:
        return self.taus[:, new] - self.taus[:, old]

    def write_csv(self, fh) -> None:
        fh.write("group,n_sessions,min_variance,max_variance," + ",".join(
            f"tau[{name}]" for name in self.feature_sets) + "\n")
        for g in range(self.taus.shape[0]):
            lo, hi = self.variance_bounds[g]
            fh.write(f"{g},{self.group_sizes[g]},{lo!r},{hi!r}," +
                     ",".join(repr(float(v)) for v in self.taus[g]) + "\n")


def stability_experiment(sessions: Sequence[Session], X: np.ndarray, y: np.ndarray,
                         feature_sets: dict, fit_predict: Callable, n_groups: int = 5) -> StabilityReport:
    """Cross-validate over discharge-stability quintiles.

    ``sessions[i]`` owns row ``X[i]`` with observed life ``y[i]``.  Sessions
    are ranked by :func:`session_stability_variance` into ``n_groups``
    groups (0 = steadiest); each group is held out in turn while a model is
    trained on the rest, once per entry of ``feature_sets`` (name -> column
    indices).  ``fit_predict(X_train, y_train, X_valid)`` returns predictions.
    """
    if len(sessions) < 5 * n_groups:
        raise TooFewSessions(f"need at least {5 * n_groups} sessions, got {len(sessions)}")
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    var = [session_stability_variance(s) for s in sessions]
    groups = quintile_groups(var, [s.session_id for s in sessions], n_groups)
    names = list(feature_sets)
    taus = np.full((n_groups, len(names)), np.nan)
    ones = np.ones(y.size, dtype=bool)
    for g in range(n_groups):
        valid = groups == g
        for k, name in enumerate(names):
            cols = np.asarray(feature_sets[name])
            pred = fit_predict(X[~valid][:, cols], y[~valid], X[valid][:, cols])
            taus[g, k] = kendall_tau(pred, y[valid], ones[valid])
    var = np.asarray(var)
    bounds = [(float(var[groups == g].min()), float(var[groups == g].max())) for g in range(n_groups)]
    sizes = [int((groups == g).sum()) for g in range(n_groups)]
    return StabilityReport(names, taus, sizes, bounds)
