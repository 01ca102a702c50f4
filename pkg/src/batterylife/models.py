"""Regressors behind one fit/predict contract.

``linear``  ridge-stabilised least squares with an unpenalised intercept
``tree``    a single CART regression tree
``forest``  bootstrap-aggregated CART trees
``boost``   gradient boosting of shallow CART trees on squared error
``boost2``  Newton boosting with an L2 penalty on leaf weights

All trees come from :func:`build_tree`, which scans every midpoint between
consecutive distinct values of every candidate column.  Leaf values are
``sum(target) / (count + l2)``, so ``l2 = 0`` gives the CART mean and the
gain reduces to variance reduction.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .features import SchemaMismatch
from .rng import make_rng

MODEL_FORMAT_VERSION = 1
MODEL_KINDS = ("linear", "tree", "forest", "boost", "boost2")


class SingularSystem(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    kind: str = "boost"
    n_estimators: int = 100
    learning_rate: float = 0.1
    max_depth: int | None = None  # None: 3 for boosting, unlimited otherwise
    min_samples_leaf: int = 5
    subsample: float = 1.0
    feature_fraction: float = 1.0
    l2_reg: float = 1.0
    ridge: float = 1e-8
    bootstrap: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        for name in ("learning_rate", "subsample", "feature_fraction"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ValueError(f"{name} must lie in (0, 1], got {v}")
        if self.n_estimators < 1 or self.min_samples_leaf < 1:
            raise ValueError("n_estimators and min_samples_leaf must be >= 1")
        if self.max_depth is not None and self.max_depth < 0:
            raise ValueError("max_depth must be >= 0")
        if self.l2_reg < 0 or self.ridge < 0:
            raise ValueError("penalties must be >= 0")

    @property
    def depth(self) -> int | None:
        if self.max_depth is not None:
            return self.max_depth
        return 3 if self.kind in ("boost", "boost2") else None


@dataclass
class Tree:
    """Array-encoded binary tree; ``feature == -1`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def n_leaves(self) -> int:
        return int((self.feature < 0).sum())

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf index of every row."""
        node = np.zeros(X.shape[0], dtype=np.int64)
        rows = np.arange(X.shape[0])
        while True:
            f = self.feature[node]
            inner = f >= 0
            if not inner.any():
                return node
            r, n, f = rows[inner], node[inner], f[inner]
            go_left = X[r, f] <= self.threshold[n]
            node[inner] = np.where(go_left, self.left[n], self.right[n])

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("feature", "threshold", "left", "right", "value")}

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        return cls(np.array(d["feature"], dtype=np.int64), np.array(d["threshold"], dtype=float),
                   np.array(d["left"], dtype=np.int64), np.array(d["right"], dtype=np.int64),
                   np.array(d["value"], dtype=float))


def _best_split(XT, target, sub, min_leaf, l2):
    """Best (gain, column row in sub, position) for one node, or None."""
    d, m = sub.shape
    if m < 2 * min_leaf:
        return None
    xs = np.take_along_axis(XT, sub, axis=1)
    ys = target[sub]
    left = np.cumsum(ys[:, :-1], axis=1)
    total = ys.sum(axis=1, keepdims=True)
    n_left = np.arange(1, m, dtype=float)
    gain = left ** 2 / (n_left + l2) + (total - left) ** 2 / (m - n_left + l2)
    ok = xs[:, :-1] < xs[:, 1:]
    ok[:, :min_leaf - 1] = False
    ok[:, m - min_leaf:] = False
    if not ok.any():
        return None
    gain = np.where(ok, gain, -np.inf)
    flat = int(np.argmax(gain))  # row-major: lowest column, then lowest threshold
    j, i = divmod(flat, m - 1)
    parent = float(total[j, 0]) ** 2 / (m + l2)
    g = float(gain[j, i]) - parent
    a, b = float(xs[j, i]), float(xs[j, i + 1])
    thr = 0.5 * (a + b)
    if not a <= thr < b:
        thr = a
    return g, j, i, thr


def build_tree(X: np.ndarray, target: np.ndarray, max_depth: int | None = None,
               min_samples_leaf: int = 1, l2: float = 0.0, columns=None,
               presorted: np.ndarray | None = None) -> Tree:
    """Grow a regression tree greedily on squared error.

    ``columns`` restricts the candidate columns; ``presorted`` is an optional
    ``(len(columns), n)`` matrix of row indices sorted per column, reused
    across calls on the same ``X``.
    """
    X = np.asarray(X, dtype=float)
    target = np.asarray(target, dtype=float)
    n, d = X.shape
    cols = np.arange(d) if columns is None else np.asarray(columns, dtype=np.int64)
    XT = np.ascontiguousarray(X[:, cols].T)
    if presorted is None:
        presorted = np.argsort(XT, axis=1, kind="stable")

    feature, threshold, left, right, value = [], [], [], [], []

    def new_node(rows):
        t = target[rows]
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(float(t.sum()) / (t.size + l2))
        return len(feature) - 1

    stack = [(new_node(presorted[0] if len(cols) else np.arange(n)), presorted, 0)]
    in_left = np.zeros(n, dtype=bool)
    while stack:
        node, sub, depth = stack.pop()
        if len(cols) == 0 or (max_depth is not None and depth >= max_depth):
            continue
        rows = sub[0]
        t = target[rows]
        if t.size < 2 * min_samples_leaf or np.ptp(t) == 0.0:
            continue
        shift = float(t.mean()) if l2 == 0.0 else 0.0
        centered = target - shift if shift else target
        found = _best_split(XT, centered, sub, min_samples_leaf, l2)
        if found is None:
            continue
        gain, j, i, thr = found
        scale = float((centered[rows] ** 2).sum())
        if not gain > 1e-12 * scale:
            continue
        left_rows = sub[j, :i + 1]
        in_left[left_rows] = True
        mask = in_left[sub]
        m_left = i + 1
        sub_l = sub[mask].reshape(len(cols), m_left)
        sub_r = sub[~mask].reshape(len(cols), sub.shape[1] - m_left)
        in_left[left_rows] = False
        feature[node] = int(cols[j])
        threshold[node] = thr
        li = new_node(sub_l[0])
        ri = new_node(sub_r[0])
        left[node], right[node] = li, ri
        stack.append((ri, sub_r, depth + 1))
        stack.append((li, sub_l, depth + 1))
    return Tree(np.array(feature, dtype=np.int64), np.array(threshold, dtype=float),
                np.array(left, dtype=np.int64), np.array(right, dtype=np.int64),
                np.array(value, dtype=float))


@dataclass
class TrainedModel:
    kind: str
    config: ModelConfig
    n_features: int
    fingerprint: str | None = None
    coef: np.ndarray | None = None
    intercept: float = 0.0
    trees: list = field(default_factory=list)
    init: float = 0.0
    tree_weight: float = 1.0
    aggregate: str = "sum"  # "sum" (boosting) or "mean" (forest)

    def predict(self, X, fingerprint: str | None = None) -> np.ndarray:
        return predict(self, X, fingerprint)


def _check_xy(X, y):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or X.shape[0] < 1 or X.shape[0] != y.shape[0]:
        raise ValueError("X must be 2-D with one row per target")
    if not (np.isfinite(X).all() and np.isfinite(y).all()):
        raise ValueError("X and y must be finite")
    return X, y


def fit_linear(X, y, cfg: ModelConfig = ModelConfig(kind="linear"), fingerprint=None) -> TrainedModel:
    X, y = _check_xy(X, y)
    d = X.shape[1]
    x_mean = X.mean(axis=0)
    y_mean = float(y.mean())
    Xc = X - x_mean
    A = Xc.T @ Xc + cfg.ridge * np.eye(d)
    b = Xc.T @ (y - y_mean)
    if cfg.ridge == 0.0 and d and np.linalg.matrix_rank(A) < d:
        raise SingularSystem("normal equations are singular; use a positive ridge")
    coef = np.linalg.solve(A, b) if d else np.zeros(0)
    return TrainedModel("linear", cfg, d, fingerprint, coef=coef,
                        intercept=y_mean - float(x_mean @ coef))


def fit_regression_tree(X, y, cfg: ModelConfig = ModelConfig(kind="tree"), fingerprint=None) -> TrainedModel:
    X, y = _check_xy(X, y)
    tree = build_tree(X, y, cfg.depth, cfg.min_samples_leaf)
    return TrainedModel("tree", cfg, X.shape[1], fingerprint, trees=[tree], aggregate="mean")


def fit_random_forest(X, y, cfg: ModelConfig = ModelConfig(kind="forest"), fingerprint=None) -> TrainedModel:
    """Average of CART trees grown on bootstrap samples.

    Each tree uses its own generator derived from ``cfg.seed`` and its index.
    With ``bootstrap=False`` every tree sees the rows as given.
    """
    X, y = _check_xy(X, y)
    n, d = X.shape
    k = max(1, int(round(cfg.feature_fraction * d)))
    trees = []
    for t in range(cfg.n_estimators):
        rng = make_rng(cfg.seed, "forest", t)
        rows = rng.integers(0, n, size=n) if cfg.bootstrap else np.arange(n)
        cols = np.sort(rng.choice(d, size=k, replace=False)) if k < d else None
        trees.append(build_tree(X[rows], y[rows], cfg.depth, cfg.min_samples_leaf, columns=cols))
    return TrainedModel("forest", cfg, d, fingerprint, trees=trees, aggregate="mean")


def fit_gradient_boosting(X, y, cfg: ModelConfig = ModelConfig(kind="boost"), fingerprint=None) -> TrainedModel:
    """Stagewise fitting of residuals, starting from the mean of ``y``.

    ``boost`` grows CART trees on the residuals; ``boost2`` uses Newton leaf
    values ``sum(residual) / (count + l2_reg)`` and the matching gain.  For
    squared error the hessian is one per row, so both share the tree builder.
    """
    X, y = _check_xy(X, y)
    n, d = X.shape
    l2 = cfg.l2_reg if cfg.kind == "boost2" else 0.0
    init = float(y.mean())
    pred = np.full(n, init)
    XT = np.ascontiguousarray(X.T)
    order = np.argsort(XT, axis=1, kind="stable")
    n_sub = max(1, int(round(cfg.subsample * n)))
    in_sample = np.zeros(n, dtype=bool)
    trees = []
    for stage in range(cfg.n_estimators):
        residual = y - pred
        if n_sub < n:
            rng = make_rng(cfg.seed, "boost", stage)
            rows = np.sort(rng.choice(n, size=n_sub, replace=False))
            in_sample[:] = False
            in_sample[rows] = True
            local = np.cumsum(in_sample) - 1
            sub = local[order[in_sample[order]].reshape(d, n_sub)] if d else None
            tree = build_tree(X[rows], residual[rows], cfg.depth, cfg.min_samples_leaf, l2,
                              presorted=sub)
        else:
            tree = build_tree(X, residual, cfg.depth, cfg.min_samples_leaf, l2, presorted=order)
        trees.append(tree)
        pred = pred + cfg.learning_rate * tree.predict(X)
    return TrainedModel(cfg.kind, cfg, d, fingerprint, trees=trees, init=init,
                        tree_weight=cfg.learning_rate, aggregate="sum")


_FITTERS = {
    "linear": fit_linear,
    "tree": fit_regression_tree,
    "forest": fit_random_forest,
    "boost": fit_gradient_boosting,
    "boost2": fit_gradient_boosting,
}


def fit(X, y, cfg: ModelConfig, fingerprint: str | None = None) -> TrainedModel:
    return _FITTERS[cfg.kind](X, y, cfg, fingerprint)


def predict(model: TrainedModel, X, fingerprint: str | None = None) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.size == 0 and (X.ndim < 2 or X.shape[0] == 0):
        return np.zeros(0)
    if X.ndim != 2 or X.shape[1] != model.n_features:
        raise SchemaMismatch(f"expected {model.n_features} columns, got shape {X.shape}")
    if fingerprint is not None and model.fingerprint is not None and fingerprint != model.fingerprint:
        raise SchemaMismatch("feature schema fingerprint differs from the training one")
    if model.kind == "linear":
        return X @ model.coef + model.intercept
    if model.aggregate == "mean":
        out = np.zeros(X.shape[0])
        for t in model.trees:
            out += t.predict(X)
        return out / len(model.trees)
    out = np.full(X.shape[0], model.init)
    for t in model.trees:
        out += model.tree_weight * t.predict(X)
    return out


def model_to_json(model: TrainedModel) -> str:
    return json.dumps({
        "format_version": MODEL_FORMAT_VERSION,
        "kind": model.kind,
        "config": asdict(model.config),
        "n_features": model.n_features,
        "fingerprint": model.fingerprint,
        "coef": None if model.coef is None else model.coef.tolist(),
        "intercept": model.intercept,
        "trees": [t.to_dict() for t in model.trees],
        "init": model.init,
        "tree_weight": model.tree_weight,
        "aggregate": model.aggregate,
    }, separators=(",", ":"))


def model_from_json(text: str) -> TrainedModel:
    d = json.loads(text)
    if d.get("format_version") != MODEL_FORMAT_VERSION:
        raise ValueError(f"unsupported model format {d.get('format_version')}")
    return TrainedModel(
        kind=d["kind"], config=ModelConfig(**d["config"]), n_features=d["n_features"],
        fingerprint=d["fingerprint"],
        coef=None if d["coef"] is None else np.array(d["coef"], dtype=float),
        intercept=d["intercept"], trees=[Tree.from_dict(t) for t in d["trees"]],
        init=d["init"], tree_weight=d["tree_weight"], aggregate=d["aggregate"])


def save_model(model: TrainedModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(model_to_json(model))


def load_model(path) -> TrainedModel:
    with open(path, encoding="utf-8") as fh:
        return model_from_json(fh.read())


def with_kind(cfg: ModelConfig, kind: str) -> ModelConfig:
    return replace(cfg, kind=kind)
